use std::fmt::Write;

use ispinv::eval::{EvalSummary, Scores};

fn row(out: &mut String, name: &str, s: &Scores) {
    let _ = writeln!(
        out,
        "{name:<18} {:>10} {:>10}",
        s.psnr_l.to_string(),
        s.psnr_srgb.to_string()
    );
}

/// Plain-text summary: one row per method, then ΔL percentiles and the sweep.
pub fn render(s: &EvalSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "items={} pixels={}", s.n_items, s.n_pixels);
    let _ = writeln!(out, "{:<18} {:>10} {:>10}", "method", "PSNR-L", "PSNR-sRGB");
    row(&mut out, "naive", &s.naive);
    row(&mut out, "first-order-only", &s.first_order_only);
    row(&mut out, "two-stage", &s.robust);
    let _ = writeln!(
        out,
        "gap two-stage vs first-order-only: {:+.4} dB",
        s.gap_robust_vs_first_order_db
    );
    let _ = writeln!(
        out,
        "gap first-order-only vs naive: {:+.4} dB",
        s.gap_first_order_vs_naive_db
    );
    let p = &s.delta_l_percentiles;
    let _ = writeln!(
        out,
        "|dL| p50={:.3e} p95={:.3e} p99={:.3e}",
        p.p50, p.p95, p.p99
    );
    let _ = writeln!(
        out,
        "tsvd_pixels={} zero_jacobian_pixels={}",
        s.n_tsvd, s.n_zero_jacobian
    );
    if !s.sweep.is_empty() {
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10}",
            "lambda_r", "PSNR-L", "PSNR-sRGB"
        );
        for pt in &s.sweep {
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>10}",
                pt.lambda_r,
                pt.psnr_l.to_string(),
                pt.psnr_srgb.to_string()
            );
        }
    }
    out
}
