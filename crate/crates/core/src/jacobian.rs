//! Analytic per-pixel Jacobian of the forward ISP.
//!
//! By the chain rule the 3×3 derivative factors into six terms,
//!
//! ```text
//! J = D_s · D_t · D_γ · C · D_w · W
//! ```
//!
//! where `D_s = diag(m^s)` and `D_w = diag(m^w)` are the tone and
//! white-balance clip masks (1 inside the closed interval `[0, 1]`),
//! `D_t = diag(6g(1 − g))` is the tone-curve slope, and
//! `D_γ = diag(m^γ · α · max(v, ε)^(α − 1))` with `m^γ = 1` iff `v ≥ ε`.
//!
//! Because every factor except `C` is diagonal, entry `(i, j)` is
//! `row_i · C[i][j] · col_j`. A masked row or column is therefore exactly zero.

use rayon::prelude::*;

use crate::error::Result;
use crate::image::LinearImage;
use crate::isp::{trace_pixel, IspParams, PixelTrace};
use crate::linalg::{is_finite_vec, Mat3, Vec3, ZERO3};
use crate::svd::{svd3, Svd3};
use crate::IspError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelJacobian {
    pub j: Mat3,
    /// Tone clip mask `m^s`.
    pub mask_s: [bool; 3],
    /// White-balance clip mask `m^w`.
    pub mask_w: [bool; 3],
    /// Gamma clamp mask `m^γ`.
    pub mask_gamma: [bool; 3],
}

impl PixelJacobian {
    pub fn svd(&self) -> Svd3 {
        svd3(&self.j)
    }

    /// `σ₁ ≥ σ₂ ≥ σ₃ ≥ 0`, computed on demand.
    pub fn singular_values(&self) -> Vec3 {
        self.svd().sigma
    }
}

#[inline]
fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Jacobian at a pixel whose forward trace is already known.
pub fn jacobian_from_trace(trace: &PixelTrace, params: &IspParams) -> PixelJacobian {
    let alpha = params.alpha();
    let eps = params.epsilon;

    let mut mask_s = [false; 3];
    let mut mask_w = [false; 3];
    let mut mask_gamma = [false; 3];
    let mut row = [0.0; 3];
    let mut col = [0.0; 3];
    for c in 0..3 {
        mask_s[c] = in_unit(trace.s_pre[c]);
        mask_w[c] = in_unit(trace.u_pre[c]);
        mask_gamma[c] = trace.v[c] >= eps;

        let g = trace.g[c];
        let d_tone = 6.0 * g * (1.0 - g);
        let d_gamma = if mask_gamma[c] {
            alpha * trace.v[c].max(eps).powf(alpha - 1.0)
        } else {
            0.0
        };
        row[c] = if mask_s[c] { d_tone * d_gamma } else { 0.0 };
        col[c] = if mask_w[c] { params.wb_gains[c] } else { 0.0 };
    }

    let mut j = ZERO3;
    for (i, j_row) in j.iter_mut().enumerate() {
        for (k, entry) in j_row.iter_mut().enumerate() {
            *entry = row[i] * params.ccm[i][k] * col[k];
        }
    }

    PixelJacobian {
        j,
        mask_s,
        mask_w,
        mask_gamma,
    }
}

pub fn jacobian_at(l: &Vec3, params: &IspParams) -> Result<PixelJacobian> {
    if !is_finite_vec(l) {
        return Err(IspError::NonFinite("linear pixel"));
    }
    Ok(jacobian_from_trace(&trace_pixel(l, params), params))
}

/// Row-major field of per-pixel Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<PixelJacobian>,
}

impl JacobianField {
    pub fn get(&self, row: usize, col: usize) -> &PixelJacobian {
        &self.data[row * self.width + col]
    }
}

pub fn jacobian_image(img: &LinearImage, params: &IspParams) -> Result<JacobianField> {
    img.check_finite()?;
    let data = img
        .pixels()
        .par_iter()
        .map(|l| jacobian_from_trace(&trace_pixel(l, params), params))
        .collect();
    Ok(JacobianField {
        height: img.height(),
        width: img.width(),
        data,
    })
}
