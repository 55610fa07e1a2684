//! Runtime self-checks: Jacobian against finite differences, remainder
//! scaling, and the SVD contract, on randomly generated inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::ResidualImage;
use crate::isp::{forward_pixel, trace_pixel};
use crate::jacobian::jacobian_from_trace;
use crate::linalg::{mat_mul, mat_sub, max_abs, transpose, Mat3, Vec3, IDENTITY, ZERO3};
use crate::metrics::{remainder_scaling_check, INTERIOR_MARGIN};
use crate::svd::svd3;
use crate::synth::{item_rng, random_isp_params, StreamPurpose, SynthConfig};

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_FLOOR: f64 = 1e-8;
pub const SVD_TOL: f64 = 1e-10;
pub const EXPONENT_RANGE: (f64, f64) = (1.9, 2.1);
pub const REMAINDER_SCALES: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub seed: u64,
    /// Interior pixels compared against finite differences.
    pub jacobian_pixels: usize,
    /// Matrices pushed through the SVD.
    pub svd_matrices: usize,
    /// Side of the square image used for the remainder fit.
    pub remainder_size: usize,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            jacobian_pixels: 10_000,
            svd_matrices: 10_000,
            remainder_size: 64,
        }
    }
}

fn fd_column(l: &Vec3, k: usize, params: &crate::isp::IspParams) -> Vec3 {
    let mut lp = *l;
    let mut lm = *l;
    lp[k] += FD_STEP;
    lm[k] -= FD_STEP;
    let sp = forward_pixel(&lp, params);
    let sm = forward_pixel(&lm, params);
    [
        (sp[0] - sm[0]) / (2.0 * FD_STEP),
        (sp[1] - sm[1]) / (2.0 * FD_STEP),
        (sp[2] - sm[2]) / (2.0 * FD_STEP),
    ]
}

/// Worst `|a − fd| / max(rel·|fd|, floor)` over `n` interior pixels; the
/// check passes when it is at most 1.
pub fn jacobian_fd_check(n: usize, seed: u64) -> Result<CheckOutcome> {
    let cfg = SynthConfig::default();
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    let mut item = 0u64;
    while tested < n {
        let params = random_isp_params(&cfg, &mut item_rng(seed, item, StreamPurpose::Params))?;
        let mut rng = item_rng(seed, item, StreamPurpose::Image);
        item += 1;
        for _ in 0..1000.min(n - tested) {
            let l = loop {
                let l = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                if trace_pixel(&l, &params).clip_margin(params.epsilon) > INTERIOR_MARGIN + FD_STEP * 3.0 {
                    break l;
                }
            };
            let j = jacobian_from_trace(&trace_pixel(&l, &params), &params).j;
            for k in 0..3 {
                let fd = fd_column(&l, k, &params);
                for i in 0..3 {
                    let tol = (FD_REL_TOL * fd[i].abs()).max(FD_ABS_FLOOR);
                    worst = worst.max((j[i][k] - fd[i]).abs() / tol);
                }
            }
            tested += 1;
        }
    }
    Ok(CheckOutcome {
        name: "jacobian_finite_differences".into(),
        passed: worst <= 1.0,
        detail: format!("pixels={tested} worst_tolerance_ratio={worst:.3e}"),
    })
}

fn svd_violation(a: &Mat3) -> f64 {
    let d = svd3(a);
    let ortho_u = max_abs(&mat_sub(&mat_mul(&transpose(&d.u), &d.u), &IDENTITY));
    let ortho_v = max_abs(&mat_sub(&mat_mul(&transpose(&d.v), &d.v), &IDENTITY));
    let recon = max_abs(&mat_sub(&d.reconstruct(), a)) / d.sigma[0].max(1.0);
    let order = d.sigma[0] >= d.sigma[1] && d.sigma[1] >= d.sigma[2] && d.sigma[2] >= 0.0;
    if !order {
        return f64::INFINITY;
    }
    ortho_u.max(ortho_v).max(recon) / SVD_TOL
}

/// Random dense, rank-deficient and badly scaled matrices.
pub fn svd_contract_check(n: usize, seed: u64) -> CheckOutcome {
    let mut rng = item_rng(seed, 0, StreamPurpose::Image);
    let mut worst: f64 = svd_violation(&ZERO3).max(svd_violation(&IDENTITY));
    for i in 0..n {
        let mut a = ZERO3;
        for row in a.iter_mut() {
            for x in row.iter_mut() {
                *x = rng.gen_range(-2.0..2.0);
            }
        }
        match i % 3 {
            1 => a[2] = [a[0][0] + a[1][0], a[0][1] + a[1][1], a[0][2] + a[1][2]],
            2 => {
                let e = rng.gen_range(-9..3);
                for x in a[rng.gen_range(0..3)].iter_mut() {
                    *x *= 10f64.powi(e);
                }
            }
            _ => {}
        }
        worst = worst.max(svd_violation(&a));
    }
    CheckOutcome {
        name: "svd_contract".into(),
        passed: worst <= 1.0,
        detail: format!("matrices={} worst_tolerance_ratio={worst:.3e}", n + 2),
    }
}

/// Fits the remainder exponent on an interior image with random steps of
/// size up to 5e-3 per channel.
pub fn remainder_check(size: usize, seed: u64) -> Result<CheckOutcome> {
    let cfg = SynthConfig {
        height: size,
        width: size,
        saturation_fraction: 0.0,
        seed,
        ..Default::default()
    };
    let params = random_isp_params(&cfg, &mut item_rng(seed, 0, StreamPurpose::Params))?;
    let (l_b, _) = crate::synth::make_stress_image(&cfg, &params, &mut item_rng(seed, 0, StreamPurpose::Image))?;
    let mut rng = item_rng(seed, 0, StreamPurpose::Perturb);
    let delta = ResidualImage::from_fn(size, size, |_, _| {
        [
            rng.gen_range(-5e-3..5e-3),
            rng.gen_range(-5e-3..5e-3),
            rng.gen_range(-5e-3..5e-3),
        ]
    })?;
    let fit = remainder_scaling_check(&l_b, &delta, &params, &REMAINDER_SCALES)?;
    Ok(CheckOutcome {
        name: "remainder_scaling".into(),
        passed: (EXPONENT_RANGE.0..=EXPONENT_RANGE.1).contains(&fit.exponent),
        detail: format!(
            "exponent={:.4} pixels={} excluded={}",
            fit.exponent, fit.pixels_used, fit.pixels_near_boundary
        ),
    })
}

pub fn run_all(settings: &CheckSettings) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        jacobian_fd_check(settings.jacobian_pixels, settings.seed)?,
        remainder_check(settings.remainder_size, settings.seed)?,
        svd_contract_check(settings.svd_matrices, settings.seed),
    ])
}
