//! Naive vs first-order-only vs two-stage comparison over a corpus, with an
//! optional λ_r sweep.
//!
//! The reference for each item is its `L_b` (and the render `F(L_b)` in sRGB).
//! `S_d` is `F(L_b)` plus a perturbation, so a method scores well when it
//! absorbs the perturbation without leaving the neighbourhood of `L_b`.

use serde::{Deserialize, Serialize};

use crate::error::{IspError, Result};
use crate::image::{LinearImage, SrgbImage};
use crate::isp::{forward_isp, IspParams};
use crate::metrics::{percentiles, psnr_from_mse, sse, Decibels, Percentiles};
use crate::naive::naive_invert_image;
use crate::robust::{blend_lambda_r, solve_residual, InversionConfig, InversionReport, Stages};

/// The λ_r grid used by default for the sweep.
pub const DEFAULT_LAMBDA_SWEEP: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EvalConfig {
    pub inversion: InversionConfig,
    /// Empty disables the sweep.
    pub lambda_sweep: Vec<f64>,
}

/// One corpus item as seen by the evaluator.
#[derive(Debug, Clone, Copy)]
pub struct EvalInput<'a> {
    pub index: usize,
    pub params: &'a IspParams,
    pub l_b: &'a LinearImage,
    pub s_d: &'a SrgbImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub psnr_l: Decibels,
    pub psnr_srgb: Decibels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub index: usize,
    pub naive: Scores,
    pub first_order_only: Scores,
    pub robust: Scores,
    pub robust_report: InversionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda_r: f64,
    pub psnr_l: Decibels,
    pub psnr_srgb: Decibels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_items: usize,
    pub n_pixels: usize,
    /// Corpus-level PSNR from the pooled squared error of all items.
    pub naive: Scores,
    pub first_order_only: Scores,
    pub robust: Scores,
    /// `robust − first_order_only` in PSNR-L.
    pub gap_robust_vs_first_order_db: f64,
    /// `first_order_only − naive` in PSNR-L.
    pub gap_first_order_vs_naive_db: f64,
    /// Pooled per-pixel `‖ΔL‖₂` of the two-stage solve.
    pub delta_l_percentiles: Percentiles,
    pub n_tsvd: usize,
    pub n_zero_jacobian: usize,
    pub sweep: Vec<SweepPoint>,
    pub items: Vec<ItemScores>,
}

#[derive(Default, Clone, Copy)]
struct Pool {
    sse_l: f64,
    sse_s: f64,
}

impl Pool {
    fn add(&mut self, other: Pool) {
        self.sse_l += other.sse_l;
        self.sse_s += other.sse_s;
    }

    fn scores(self, values: usize) -> Scores {
        Scores {
            psnr_l: psnr_from_mse(self.sse_l / values as f64, 1.0),
            psnr_srgb: psnr_from_mse(self.sse_s / values as f64, 1.0),
        }
    }
}

fn pool_for(
    out: &LinearImage,
    l_b: &LinearImage,
    s_ref: &SrgbImage,
    params: &IspParams,
) -> Result<Pool> {
    Ok(Pool {
        sse_l: sse(out, l_b)?,
        sse_s: sse(&forward_isp(out, params)?, s_ref)?,
    })
}

fn gap(a: Decibels, b: Decibels) -> f64 {
    a.0 - b.0
}

/// Runs all three methods on every item. Items are processed in order and
/// pixels in parallel; every reduction has a fixed order, so the summary is
/// identical for any thread count.
pub fn evaluate(inputs: &[EvalInput<'_>], cfg: &EvalConfig) -> Result<EvalSummary> {
    if inputs.is_empty() {
        return Err(IspError::Empty("evaluation corpus"));
    }
    cfg.inversion.validate()?;
    for &lambda in &cfg.lambda_sweep {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(IspError::InvalidConfig(format!("sweep lambda_r {lambda} outside [0, 1]")));
        }
    }
    let fo_cfg = InversionConfig {
        stages: Stages::FirstOrderOnly,
        ..cfg.inversion.clone()
    };

    let mut naive_pool = Pool::default();
    let mut fo_pool = Pool::default();
    let mut robust_pool = Pool::default();
    let mut sweep_pools = vec![Pool::default(); cfg.lambda_sweep.len()];
    let mut norms = Vec::new();
    let mut values = 0;
    let mut n_tsvd = 0;
    let mut n_zero = 0;
    let mut items = Vec::with_capacity(inputs.len());

    for input in inputs {
        let (params, l_b, s_d) = (input.params, input.l_b, input.s_d);
        let n = 3 * l_b.len();
        let s_ref = forward_isp(l_b, params)?;

        let naive = pool_for(&naive_invert_image(s_d, params)?, l_b, &s_ref, params)?;

        let fo_solve = solve_residual(s_d, None, l_b, params, &fo_cfg)?;
        let fo_out = blend_lambda_r(l_b, &fo_solve.delta_l, fo_cfg.lambda_r)?;
        let fo = pool_for(&fo_out, l_b, &s_ref, params)?;

        let solve = solve_residual(s_d, None, l_b, params, &cfg.inversion)?;
        let robust_out = blend_lambda_r(l_b, &solve.delta_l, cfg.inversion.lambda_r)?;
        let robust = pool_for(&robust_out, l_b, &s_ref, params)?;

        for (pool, &lambda) in sweep_pools.iter_mut().zip(&cfg.lambda_sweep) {
            let out = blend_lambda_r(l_b, &solve.delta_l, lambda)?;
            pool.add(pool_for(&out, l_b, &s_ref, params)?);
        }

        naive_pool.add(naive);
        fo_pool.add(fo);
        robust_pool.add(robust);
        values += n;
        n_tsvd += solve.report.n_tsvd;
        n_zero += solve.report.n_zero_jacobian;
        norms.extend(solve.delta_l.pixels().iter().map(crate::linalg::norm2));
        items.push(ItemScores {
            index: input.index,
            naive: naive.scores(n),
            first_order_only: fo.scores(n),
            robust: robust.scores(n),
            robust_report: solve.report,
        });
    }

    let naive = naive_pool.scores(values);
    let first_order_only = fo_pool.scores(values);
    let robust = robust_pool.scores(values);
    let sweep = cfg
        .lambda_sweep
        .iter()
        .zip(sweep_pools)
        .map(|(&lambda_r, pool)| {
            let s = pool.scores(values);
            SweepPoint {
                lambda_r,
                psnr_l: s.psnr_l,
                psnr_srgb: s.psnr_srgb,
            }
        })
        .collect();
    Ok(EvalSummary {
        n_items: inputs.len(),
        n_pixels: values / 3,
        naive,
        first_order_only,
        robust,
        gap_robust_vs_first_order_db: gap(robust.psnr_l, first_order_only.psnr_l),
        gap_first_order_vs_naive_db: gap(first_order_only.psnr_l, naive.psnr_l),
        delta_l_percentiles: percentiles(&norms)?,
        n_tsvd,
        n_zero_jacobian: n_zero,
        sweep,
        items,
    })
}
