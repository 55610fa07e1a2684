//! Direct inversion baseline: undo tone mapping, gamma, color correction and
//! white balance in sequence, as if the ISP were a bijection.
//!
//! Clipped information cannot be recovered this way; the baseline exists to
//! show where that assumption breaks.

use rayon::prelude::*;

use crate::error::{IspError, Result};
use crate::image::{LinearImage, SrgbImage};
use crate::isp::IspParams;
use crate::linalg::{lu_solve, Mat3, Vec3};
use crate::svd::svd3;

/// CCMs with a 2-norm condition number above this are rejected.
pub const MAX_CCM_CONDITION: f64 = 1e12;

/// Inverse of `3g² − 2g³` on `[0, 1]`: `g = ½ − sin(asin(1 − 2s) / 3)`.
#[inline]
pub fn inverse_tone_curve(s: f64) -> f64 {
    // the closed form is off by an ulp at the end points
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let arg = (1.0 - 2.0 * s).clamp(-1.0, 1.0);
    (0.5 - (arg.asin() / 3.0).sin()).clamp(0.0, 1.0)
}

pub fn inverse_tone_map(s: &Vec3) -> Vec3 {
    [
        inverse_tone_curve(s[0]),
        inverse_tone_curve(s[1]),
        inverse_tone_curve(s[2]),
    ]
}

pub fn inverse_gamma(g: &Vec3, params: &IspParams) -> Vec3 {
    let gamma = params.gamma;
    [g[0].powf(gamma), g[1].powf(gamma), g[2].powf(gamma)]
}

/// 2-norm condition number of `m` (infinite when singular).
pub fn condition_number(m: &Mat3) -> f64 {
    let sigma = svd3(m).sigma;
    if sigma[2] == 0.0 {
        f64::INFINITY
    } else {
        sigma[0] / sigma[2]
    }
}

fn check_ccm(params: &IspParams) -> Result<()> {
    let condition = condition_number(&params.ccm);
    if !(condition <= MAX_CCM_CONDITION) {
        return Err(IspError::SingularCcm { condition });
    }
    Ok(())
}

fn check_gains(params: &IspParams) -> Result<()> {
    for (channel, &gain) in params.wb_gains.iter().enumerate() {
        if !(gain > 0.0) {
            return Err(IspError::ZeroGain { channel, gain });
        }
    }
    Ok(())
}

pub fn inverse_color_correct(v: &Vec3, params: &IspParams) -> Result<Vec3> {
    check_ccm(params)?;
    lu_solve(&params.ccm, v).ok_or(IspError::SingularCcm {
        condition: f64::INFINITY,
    })
}

pub fn inverse_white_balance(u: &Vec3, params: &IspParams) -> Result<Vec3> {
    check_gains(params)?;
    let w = &params.wb_gains;
    Ok([u[0] / w[0], u[1] / w[1], u[2] / w[2]])
}

fn naive_pixel(s: &Vec3, params: &IspParams) -> Vec3 {
    let g = inverse_tone_map(s);
    let v = inverse_gamma(&g, params);
    // the CCM was checked once by the caller
    let u = lu_solve(&params.ccm, &v).unwrap_or([0.0; 3]);
    let w = &params.wb_gains;
    [
        (u[0] / w[0]).clamp(0.0, 1.0),
        (u[1] / w[1]).clamp(0.0, 1.0),
        (u[2] / w[2]).clamp(0.0, 1.0),
    ]
}

/// The four inverses composed per pixel, followed by a `[0, 1]` clamp.
pub fn naive_invert_image(s_d: &SrgbImage, params: &IspParams) -> Result<LinearImage> {
    s_d.check_finite()?;
    check_gains(params)?;
    check_ccm(params)?;
    let out: Vec<Vec3> = s_d
        .pixels()
        .par_iter()
        .map(|s| naive_pixel(s, params))
        .collect();
    LinearImage::new(s_d.height(), s_d.width(), out)
}
