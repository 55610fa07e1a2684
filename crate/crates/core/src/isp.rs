//! Forward camera ISP: linear RGB to sRGB in four per-pixel steps.
//!
//! ```text
//! u_pre = W·l          u = clip(u_pre, 0, 1)      white balance
//! v     = C·u                                     color correction
//! g     = max(v, ε)^(1/γ)                         gamma compression
//! s_pre = 3g² − 2g³    s = clip(s_pre, 0, 1)      tone mapping
//! ```
//!
//! All arithmetic is `f64`, evaluated in exactly this order. The Jacobian
//! module replays the same evaluators, so its clip masks always agree with the
//! forward render.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IspError, Result};
use crate::image::{LinearImage, SrgbImage};
use crate::linalg::{is_finite_mat, mat_vec, Mat3, Vec3, IDENTITY};

pub const DEFAULT_GAMMA: f64 = 2.2;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Rows of a library-generated CCM must sum to one within this tolerance.
pub const CCM_ROW_SUM_TOL: f64 = 1e-9;

/// Where a color-correction matrix came from. Generated matrices are checked
/// for unit row sums; external ones are accepted as-is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CcmOrigin {
    Generated,
    #[default]
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IspParams {
    /// Diagonal of `W`, one gain per R, G, B.
    pub wb_gains: Vec3,
    /// Row-major `C`.
    pub ccm: Mat3,
    pub gamma: f64,
    /// Lower clamp applied before the gamma curve.
    pub epsilon: f64,
    pub ccm_origin: CcmOrigin,
}

impl Default for IspParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl IspParams {
    /// Parameters with an externally supplied CCM (row sums not enforced).
    pub fn new(wb_gains: Vec3, ccm: Mat3, gamma: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            wb_gains,
            ccm,
            gamma,
            epsilon,
            ccm_origin: CcmOrigin::External,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters whose CCM was produced by this library; rows must sum to 1.
    pub fn generated(wb_gains: Vec3, ccm: Mat3, gamma: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            wb_gains,
            ccm,
            gamma,
            epsilon,
            ccm_origin: CcmOrigin::Generated,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unit gains, identity CCM, default γ and ε.
    pub fn identity() -> Self {
        Self {
            wb_gains: [1.0; 3],
            ccm: IDENTITY,
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
            ccm_origin: CcmOrigin::Generated,
        }
    }

    /// Forward exponent `α = 1/γ`.
    #[inline]
    pub fn alpha(&self) -> f64 {
        1.0 / self.gamma
    }

    pub fn ccm_row_sums(&self) -> Vec3 {
        [
            self.ccm[0].iter().sum(),
            self.ccm[1].iter().sum(),
            self.ccm[2].iter().sum(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (c, &w) in self.wb_gains.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(IspError::InvalidParams(format!(
                    "white-balance gain {c} must be positive and finite, got {w}"
                )));
            }
        }
        if !is_finite_mat(&self.ccm) {
            return Err(IspError::InvalidParams("CCM has non-finite entries".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(IspError::InvalidParams(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(IspError::InvalidParams(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.ccm_origin == CcmOrigin::Generated {
            for (r, sum) in self.ccm_row_sums().iter().enumerate() {
                if (sum - 1.0).abs() > CCM_ROW_SUM_TOL {
                    return Err(IspError::InvalidParams(format!(
                        "generated CCM row {r} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Step 1. Returns `(u_pre, u)`; the unclipped value feeds the clip mask.
#[inline]
pub fn white_balance(l: &Vec3, params: &IspParams) -> (Vec3, Vec3) {
    let w = &params.wb_gains;
    let u_pre = [w[0] * l[0], w[1] * l[1], w[2] * l[2]];
    let u = [clip01(u_pre[0]), clip01(u_pre[1]), clip01(u_pre[2])];
    (u_pre, u)
}

/// Step 2. No clipping: the result may be negative or exceed one.
#[inline]
pub fn color_correct(u: &Vec3, params: &IspParams) -> Vec3 {
    mat_vec(&params.ccm, u)
}

/// Step 3. Total on finite input; negative values hit the ε clamp.
#[inline]
pub fn gamma_compress(v: &Vec3, params: &IspParams) -> Vec3 {
    let alpha = params.alpha();
    let eps = params.epsilon;
    [
        v[0].max(eps).powf(alpha),
        v[1].max(eps).powf(alpha),
        v[2].max(eps).powf(alpha),
    ]
}

#[inline]
pub fn tone_curve(g: f64) -> f64 {
    3.0 * g * g - 2.0 * g * g * g
}

/// Step 4. Returns `(s_pre, s)`.
#[inline]
pub fn tone_map(g: &Vec3) -> (Vec3, Vec3) {
    let s_pre = [tone_curve(g[0]), tone_curve(g[1]), tone_curve(g[2])];
    let s = [clip01(s_pre[0]), clip01(s_pre[1]), clip01(s_pre[2])];
    (s_pre, s)
}

/// Every intermediate of one forward evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelTrace {
    pub l: Vec3,
    pub u_pre: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub g: Vec3,
    pub s_pre: Vec3,
    pub s: Vec3,
}

impl PixelTrace {
    /// Smallest distance of any intermediate to a clip or clamp boundary:
    /// `u_pre` to {0, 1}, `v` to ε, `s_pre` to {0, 1}.
    pub fn clip_margin(&self, epsilon: f64) -> f64 {
        let mut m = f64::INFINITY;
        for c in 0..3 {
            m = m
                .min(self.u_pre[c].abs())
                .min((self.u_pre[c] - 1.0).abs())
                .min((self.v[c] - epsilon).abs())
                .min(self.s_pre[c].abs())
                .min((self.s_pre[c] - 1.0).abs());
        }
        m
    }

    /// True when some channel is clipped by white balance (`u_pre ≥ 1`) or
    /// clamped before gamma (`v ≤ ε`).
    pub fn is_clipped(&self, epsilon: f64) -> bool {
        (0..3).any(|c| self.u_pre[c] >= 1.0 || self.v[c] <= epsilon)
    }
}

pub fn trace_pixel(l: &Vec3, params: &IspParams) -> PixelTrace {
    let (u_pre, u) = white_balance(l, params);
    let v = color_correct(&u, params);
    let g = gamma_compress(&v, params);
    let (s_pre, s) = tone_map(&g);
    PixelTrace {
        l: *l,
        u_pre,
        u,
        v,
        g,
        s_pre,
        s,
    }
}

#[inline]
pub fn forward_pixel(l: &Vec3, params: &IspParams) -> Vec3 {
    trace_pixel(l, params).s
}

/// Renders a whole image, pixel-parallel.
pub fn forward_isp(img: &LinearImage, params: &IspParams) -> Result<SrgbImage> {
    params.validate()?;
    img.check_finite()?;
    let out: Vec<Vec3> = img
        .pixels()
        .par_iter()
        .map(|l| forward_pixel(l, params))
        .collect();
    SrgbImage::new(img.height(), img.width(), out)
}
