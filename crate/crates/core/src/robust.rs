//! Two-stage robust residual inversion.
//!
//! Rather than inverting `S_d` globally, each pixel solves for an update `ΔL`
//! around the known linear image `L_b`, using the Jacobian `J` at `L_b` and
//! `ΔS = S_d − S_b`:
//!
//! * well-conditioned pixels (`σ₃(J) ≥ cond_sigma_min`) take the ridge
//!   solution `ΔL_fo = (JᵀJ + βI)⁻¹ JᵀΔS`;
//! * the rest take the truncated-SVD solution
//!   `ΔL_tsvd = Σ_{i<k} v_i · σ_i / (σ_i² + β) · (u_iᵀ ΔS)`, which has no
//!   component along the discarded right singular vectors.
//!
//! The output is `L_d = clip(L_b + λ_r · ΔL, 0, 1)`. Pixels never interact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IspError, Result};
use crate::image::{LinearImage, ResidualImage, SrgbImage};
use crate::isp::{trace_pixel, IspParams, PixelTrace};
use crate::jacobian::jacobian_from_trace;
use crate::linalg::{
    add, cholesky_solve, gram, mat_t_vec, mat_vec, norm_inf, scale, sub, Mat3, Vec3,
};
use crate::metrics::{delta_l_percentiles, Percentiles};
use crate::svd::{svd3, Svd3};

/// Which solvers the inversion may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stages {
    /// First-order update on well-conditioned pixels, TSVD on the rest.
    #[default]
    TwoStage,
    /// Ridge update everywhere (ablation baseline).
    FirstOrderOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    /// Ridge weight β.
    pub beta: f64,
    /// Residual blend factor λ_r.
    pub lambda_r: f64,
    /// σ_i is kept iff `σ_i > sigma_rel_threshold · max(σ₁, sigma_abs_floor)`.
    pub sigma_rel_threshold: f64,
    /// Also the zero-Jacobian cutoff: pixels with `σ₁ < sigma_abs_floor` get `ΔL = 0`.
    pub sigma_abs_floor: f64,
    /// Well-conditioned iff `σ₃ ≥ cond_sigma_min`.
    pub cond_sigma_min: f64,
    pub stages: Stages,
    /// Fail instead of warn when a supplied `S_b` disagrees with the render of `L_b`.
    pub strict: bool,
    /// Max per-channel deviation tolerated between supplied `S_b` and `F(L_b)`.
    pub base_render_tolerance: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            beta: 1e-6,
            lambda_r: 1.0,
            sigma_rel_threshold: 1e-3,
            sigma_abs_floor: 1e-8,
            cond_sigma_min: 1e-3,
            stages: Stages::TwoStage,
            strict: false,
            base_render_tolerance: 1e-9,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(IspError::InvalidConfig(msg));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.lambda_r) {
            return bad(format!("lambda_r must lie in [0, 1], got {}", self.lambda_r));
        }
        for (name, v) in [
            ("sigma_rel_threshold", self.sigma_rel_threshold),
            ("sigma_abs_floor", self.sigma_abs_floor),
            ("cond_sigma_min", self.cond_sigma_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.base_render_tolerance >= 0.0) {
            return bad("base_render_tolerance must be >= 0".into());
        }
        Ok(())
    }
}

/// `(JᵀJ + βI)⁻¹ JᵀΔS` by Cholesky. `None` if the normal matrix is not
/// positive definite, which can only happen with `β = 0`.
pub fn first_order_update(j: &Mat3, delta_s: &Vec3, beta: f64) -> Option<Vec3> {
    let mut normal = gram(j);
    for (i, row) in normal.iter_mut().enumerate() {
        row[i] += beta;
    }
    let rhs = mat_t_vec(j, delta_s);
    cholesky_solve(&normal, &rhs)
}

/// Number of leading singular values kept by the truncation rule.
pub fn retained_count(sigma: &Vec3, cfg: &InversionConfig) -> usize {
    let cutoff = cfg.sigma_rel_threshold * sigma[0].max(cfg.sigma_abs_floor);
    sigma.iter().take_while(|&&s| s > cutoff).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsvdUpdate {
    pub delta_l: Vec3,
    /// Coordinates of `delta_l` in the right-singular basis. Entries at
    /// index `>= retained` are exactly zero.
    pub coefficients: Vec3,
    pub retained: usize,
}

pub fn tsvd_update(svd: &Svd3, delta_s: &Vec3, cfg: &InversionConfig) -> TsvdUpdate {
    let retained = retained_count(&svd.sigma, cfg);
    let mut coefficients = [0.0; 3];
    let mut delta_l = [0.0; 3];
    for i in 0..retained {
        let s = svd.sigma[i];
        let proj = crate::linalg::dot(&svd.left(i), delta_s);
        coefficients[i] = s / (s * s + cfg.beta) * proj;
        delta_l = add(&delta_l, &scale(&svd.right(i), coefficients[i]));
    }
    TsvdUpdate {
        delta_l,
        coefficients,
        retained,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelRoute {
    FirstOrder,
    Tsvd,
    ZeroJacobian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSolution {
    pub delta_l: Vec3,
    pub delta_s: Vec3,
    pub route: PixelRoute,
    pub jacobian: Mat3,
    pub svd: Svd3,
    /// Present when `route == Tsvd`.
    pub tsvd: Option<TsvdUpdate>,
}

impl PixelSolution {
    /// `‖J·ΔL − ΔS‖_∞`
    pub fn srgb_residual(&self) -> f64 {
        norm_inf(&sub(&mat_vec(&self.jacobian, &self.delta_l), &self.delta_s))
    }
}

/// Solves one pixel given the forward trace at `L_b` and the sRGB target.
/// `s_b` is the render the residual is measured against. `None` if the ridge
/// system is singular.
pub fn solve_pixel(
    trace: &PixelTrace,
    s_b: &Vec3,
    s_d: &Vec3,
    params: &IspParams,
    cfg: &InversionConfig,
) -> Option<PixelSolution> {
    let jac = jacobian_from_trace(trace, params);
    let svd = svd3(&jac.j);
    let delta_s = sub(s_d, s_b);

    let (route, delta_l, tsvd) = if svd.sigma[0] < cfg.sigma_abs_floor {
        (PixelRoute::ZeroJacobian, [0.0; 3], None)
    } else if cfg.stages == Stages::FirstOrderOnly || svd.sigma[2] >= cfg.cond_sigma_min {
        let dl = first_order_update(&jac.j, &delta_s, cfg.beta)?;
        (PixelRoute::FirstOrder, dl, None)
    } else {
        let t = tsvd_update(&svd, &delta_s, cfg);
        (PixelRoute::Tsvd, t.delta_l, Some(t))
    };

    Some(PixelSolution {
        delta_l,
        delta_s,
        route,
        jacobian: jac.j,
        svd,
        tsvd,
    })
}

/// Convenience form that renders `S_b` from `L_b`.
pub fn solve_pixel_at(
    l_b: &Vec3,
    s_d: &Vec3,
    params: &IspParams,
    cfg: &InversionConfig,
) -> Option<PixelSolution> {
    let trace = trace_pixel(l_b, params);
    solve_pixel(&trace, &trace.s, s_d, params, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub n_pixels: usize,
    pub n_well_conditioned: usize,
    pub n_tsvd: usize,
    pub n_zero_jacobian: usize,
    /// Nearest-rank percentiles of per-pixel `‖ΔL‖₂`.
    pub delta_l_percentiles: Percentiles,
    /// `max ‖J·ΔL − ΔS‖_∞` over pixels.
    pub max_abs_residual_srgb: f64,
    pub base_render_mismatches: usize,
    pub max_base_render_deviation: f64,
    /// Channel values moved by the final `[0, 1]` clamp.
    pub output_clamped: usize,
}

/// Result of the per-pixel solve before λ_r blending.
#[derive(Debug, Clone)]
pub struct ResidualSolve {
    pub delta_l: ResidualImage,
    pub routes: Vec<PixelRoute>,
    pub report: InversionReport,
}

struct PixelOutcome {
    delta_l: Vec3,
    route: PixelRoute,
    residual: f64,
    base_dev: f64,
    base_mismatch: bool,
}

/// Computes `ΔL` for every pixel. If `s_b` is given it is checked against the
/// render of `L_b`; pixels off by more than the tolerance are counted (or
/// rejected in strict mode) and measured against the true render instead.
pub fn solve_residual(
    s_d: &SrgbImage,
    s_b: Option<&SrgbImage>,
    l_b: &LinearImage,
    params: &IspParams,
    cfg: &InversionConfig,
) -> Result<ResidualSolve> {
    cfg.validate()?;
    params.validate()?;
    l_b.require_shape(s_d, "S_d")?;
    if let Some(sb) = s_b {
        l_b.require_shape(sb, "S_b")?;
        sb.check_finite()?;
    }
    l_b.check_finite()?;
    s_d.check_finite()?;

    let outcomes: Vec<Option<PixelOutcome>> = (0..l_b.len())
        .into_par_iter()
        .map(|i| {
            let trace = trace_pixel(&l_b.pixels()[i], params);
            let (base, base_dev, base_mismatch) = match s_b {
                Some(sb) => {
                    let given = sb.pixels()[i];
                    let dev = norm_inf(&sub(&given, &trace.s));
                    if dev > cfg.base_render_tolerance {
                        (trace.s, dev, true)
                    } else {
                        (given, dev, false)
                    }
                }
                None => (trace.s, 0.0, false),
            };
            let sol = solve_pixel(&trace, &base, &s_d.pixels()[i], params, cfg)?;
            Some(PixelOutcome {
                delta_l: sol.delta_l,
                route: sol.route,
                residual: sol.srgb_residual(),
                base_dev,
                base_mismatch,
            })
        })
        .collect();

    let mut delta_l = Vec::with_capacity(outcomes.len());
    let mut routes = Vec::with_capacity(outcomes.len());
    let mut report = InversionReport {
        n_pixels: outcomes.len(),
        n_well_conditioned: 0,
        n_tsvd: 0,
        n_zero_jacobian: 0,
        delta_l_percentiles: Percentiles::default(),
        max_abs_residual_srgb: 0.0,
        base_render_mismatches: 0,
        max_base_render_deviation: 0.0,
        output_clamped: 0,
    };
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let Some(o) = outcome else {
            let (row, col) = l_b.coords(i);
            return Err(IspError::SingularNormalEquations { row, col });
        };
        match o.route {
            PixelRoute::FirstOrder => report.n_well_conditioned += 1,
            PixelRoute::Tsvd => report.n_tsvd += 1,
            PixelRoute::ZeroJacobian => report.n_zero_jacobian += 1,
        }
        report.max_abs_residual_srgb = report.max_abs_residual_srgb.max(o.residual);
        report.max_base_render_deviation = report.max_base_render_deviation.max(o.base_dev);
        if o.base_mismatch {
            report.base_render_mismatches += 1;
        }
        delta_l.push(o.delta_l);
        routes.push(o.route);
    }

    if report.base_render_mismatches > 0 {
        if cfg.strict {
            return Err(IspError::InconsistentBaseRender {
                count: report.base_render_mismatches,
                max_dev: report.max_base_render_deviation,
            });
        }
        log::warn!(
            "event=base_render_mismatch count={} max_dev={:e}",
            report.base_render_mismatches,
            report.max_base_render_deviation
        );
    }

    report.delta_l_percentiles = delta_l_percentiles(&delta_l)?;
    let delta_l = ResidualImage::new(l_b.height(), l_b.width(), delta_l)?;
    Ok(ResidualSolve {
        delta_l,
        routes,
        report,
    })
}

fn blend_pixel(l_b: &Vec3, dl: &Vec3, lambda_r: f64, clamped: &mut usize) -> Vec3 {
    let mut out = [0.0; 3];
    for c in 0..3 {
        let x = l_b[c] + lambda_r * dl[c];
        out[c] = x.clamp(0.0, 1.0);
        if out[c] != x {
            *clamped += 1;
        }
    }
    out
}

/// `clip(L_b + λ_r·ΔL, 0, 1)`, also returning how many channel values were clamped.
pub fn blend_with_count(
    l_b: &LinearImage,
    delta_l: &ResidualImage,
    lambda_r: f64,
) -> Result<(LinearImage, usize)> {
    if !(0.0..=1.0).contains(&lambda_r) {
        return Err(IspError::InvalidConfig(format!(
            "lambda_r must lie in [0, 1], got {lambda_r}"
        )));
    }
    l_b.require_shape(delta_l, "delta_l")?;
    let mut clamped = 0;
    let out: Vec<Vec3> = l_b
        .pixels()
        .iter()
        .zip(delta_l.pixels())
        .map(|(l, d)| blend_pixel(l, d, lambda_r, &mut clamped))
        .collect();
    Ok((LinearImage::new(l_b.height(), l_b.width(), out)?, clamped))
}

pub fn blend_lambda_r(
    l_b: &LinearImage,
    delta_l: &ResidualImage,
    lambda_r: f64,
) -> Result<LinearImage> {
    blend_with_count(l_b, delta_l, lambda_r).map(|(img, _)| img)
}

/// Full robust inverse: residual solve, then λ_r blend and clamp.
pub fn invert_image(
    s_d: &SrgbImage,
    s_b: Option<&SrgbImage>,
    l_b: &LinearImage,
    params: &IspParams,
    cfg: &InversionConfig,
) -> Result<(LinearImage, InversionReport)> {
    let solve = solve_residual(s_d, s_b, l_b, params, cfg)?;
    let (l_d, clamped) = blend_with_count(l_b, &solve.delta_l, cfg.lambda_r)?;
    let mut report = solve.report;
    report.output_clamped = clamped;
    Ok((l_d, report))
}
