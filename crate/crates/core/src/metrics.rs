//! PSNR, residual percentiles, and the Taylor-remainder harness.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{IspError, Result};
use crate::image::{Domain, LinearImage, ResidualImage, RgbImage};
use crate::isp::{forward_pixel, trace_pixel, IspParams};
use crate::jacobian::jacobian_from_trace;
use crate::linalg::{add, mat_sub, mat_vec, norm2, scale, sub, Vec3};
use crate::svd::svd3;

/// Fixed reduction block. Partial sums are formed per block and then added in
/// block order, so the result does not depend on the thread count.
const REDUCE_CHUNK: usize = 4096;

/// A PSNR value. Identical images give `+inf`, which serializes as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Decibels(pub f64);

impl Decibels {
    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Decibels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str(if self.0 > 0.0 { "inf" } else { "-inf" })
        } else {
            write!(f, "{:.4}", self.0)
        }
    }
}

impl Serialize for Decibels {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0.is_nan() {
            s.serialize_str("nan")
        } else if self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Decibels {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Decibels(v)),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(Decibels(f64::INFINITY)),
                "-inf" => Ok(Decibels(f64::NEG_INFINITY)),
                "nan" => Ok(Decibels(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("bad decibel value {other:?}"))),
            },
        }
    }
}

/// Sum of squared differences, reduced in fixed blocks.
fn squared_error_sum(a: &[Vec3], b: &[Vec3]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(ca, cb)| {
            let mut acc = 0.0;
            for (p, q) in ca.iter().zip(cb) {
                for c in 0..3 {
                    let d = p[c] - q[c];
                    acc += d * d;
                }
            }
            acc
        })
        .collect();
    partial.iter().sum()
}

/// Sum of squared channel differences.
pub fn sse<D: Domain>(a: &RgbImage<D>, b: &RgbImage<D>) -> Result<f64> {
    a.require_shape(b, "second image")?;
    Ok(squared_error_sum(a.pixels(), b.pixels()))
}

pub fn mse<D: Domain>(a: &RgbImage<D>, b: &RgbImage<D>) -> Result<f64> {
    Ok(sse(a, b)? / (3 * a.len()) as f64)
}

/// `10·log10(peak² / MSE)`; `+inf` when the images are identical.
pub fn psnr<D: Domain>(a: &RgbImage<D>, b: &RgbImage<D>, peak: f64) -> Result<Decibels> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Decibels {
    if mse == 0.0 {
        Decibels(f64::INFINITY)
    } else {
        Decibels(10.0 * (peak * peak / mse).log10())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `⌈p/100 · n⌉` (1-based).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn percentiles(values: &[f64]) -> Result<Percentiles> {
    if values.is_empty() {
        return Err(IspError::Empty("percentile input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Percentiles {
        p50: nearest_rank(&sorted, 50.0),
        p95: nearest_rank(&sorted, 95.0),
        p99: nearest_rank(&sorted, 99.0),
    })
}

/// Percentiles of per-pixel `‖ΔL‖₂`.
pub fn delta_l_percentiles(delta_l: &[Vec3]) -> Result<Percentiles> {
    let norms: Vec<f64> = delta_l.iter().map(norm2).collect();
    percentiles(&norms)
}

/// `F(l + Δ) − F(l) − J(l)·Δ`
pub fn taylor_remainder_pixel(l: &Vec3, delta: &Vec3, params: &IspParams) -> Vec3 {
    let trace = trace_pixel(l, params);
    let jac = jacobian_from_trace(&trace, params);
    let moved = forward_pixel(&add(l, delta), params);
    sub(&sub(&moved, &trace.s), &mat_vec(&jac.j, delta))
}

pub fn taylor_remainder(
    l_b: &LinearImage,
    delta_l: &ResidualImage,
    params: &IspParams,
) -> Result<ResidualImage> {
    l_b.require_shape(delta_l, "delta_l")?;
    l_b.check_finite()?;
    delta_l.check_finite()?;
    let data = l_b
        .pixels()
        .par_iter()
        .zip(delta_l.pixels())
        .map(|(l, d)| taylor_remainder_pixel(l, d, params))
        .collect();
    ResidualImage::new(l_b.height(), l_b.width(), data)
}

/// Remainders below this are treated as rounding noise by the slope fit.
pub const REMAINDER_FLOOR: f64 = 1e-14;
/// Minimum distance to every clip boundary for a pixel to enter the fit.
pub const INTERIOR_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Fitted exponent `p` in `‖r(tΔ)‖ ∝ t^p`.
    pub exponent: f64,
    pub pixels_used: usize,
    /// Pixels dropped because some tested point was within the margin of a boundary.
    pub pixels_near_boundary: usize,
    pub samples: usize,
}

/// True when `l + t·Δ` stays clear of every clip boundary for all `t` in
/// `scales` and at `t = 0`.
pub fn interior_along(l: &Vec3, delta: &Vec3, params: &IspParams, scales: &[f64]) -> bool {
    std::iter::once(0.0).chain(scales.iter().copied()).all(|t| {
        trace_pixel(&add(l, &scale(delta, t)), params).clip_margin(params.epsilon) > INTERIOR_MARGIN
    })
}

fn validate_scales(scales: &[f64]) -> Result<()> {
    if scales.len() < 2 {
        return Err(IspError::InvalidConfig("need at least two scales".into()));
    }
    if scales.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(IspError::InvalidConfig("scales must lie in (0, 1]".into()));
    }
    if scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(IspError::InvalidConfig("scales must be strictly decreasing".into()));
    }
    Ok(())
}

/// Least-squares slope of `log ‖r(tΔ)‖₂` against `log t`, pooled over pixels
/// after centering each pixel's samples (so per-pixel constants drop out).
pub fn remainder_scaling_check(
    l_b: &LinearImage,
    delta_l: &ResidualImage,
    params: &IspParams,
    scales: &[f64],
) -> Result<ScalingFit> {
    validate_scales(scales)?;
    l_b.require_shape(delta_l, "delta_l")?;
    l_b.check_finite()?;
    delta_l.check_finite()?;

    // per pixel: None if near a boundary, else (Sxy, Sxx, samples)
    let per_pixel: Vec<Option<(f64, f64, usize)>> = l_b
        .pixels()
        .par_iter()
        .zip(delta_l.pixels())
        .map(|(l, d)| {
            if !interior_along(l, d, params, scales) {
                return None;
            }
            let pts: Vec<(f64, f64)> = scales
                .iter()
                .filter_map(|&t| {
                    let r = norm2(&taylor_remainder_pixel(l, &scale(d, t), params));
                    (r > REMAINDER_FLOOR).then(|| (t.ln(), r.ln()))
                })
                .collect();
            if pts.len() < 2 {
                return Some((0.0, 0.0, 0));
            }
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            Some((sxy, sxx, pts.len()))
        })
        .collect();

    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut fit = ScalingFit {
        exponent: f64::NAN,
        pixels_used: 0,
        pixels_near_boundary: 0,
        samples: 0,
    };
    for entry in per_pixel {
        match entry {
            None => fit.pixels_near_boundary += 1,
            Some((_, _, 0)) => {}
            Some((a, b, n)) => {
                sxy += a;
                sxx += b;
                fit.pixels_used += 1;
                fit.samples += n;
            }
        }
    }
    if fit.pixels_used == 0 || sxx == 0.0 {
        return Err(IspError::InsufficientSamples(format!(
            "no interior pixel has two remainders above {REMAINDER_FLOOR:e} ({} near a boundary)",
            fit.pixels_near_boundary
        )));
    }
    fit.exponent = sxy / sxx;
    Ok(fit)
}

/// Empirical Lipschitz constant of `J` along the segment `l → l + Δ`:
/// the largest `‖J(l + sΔ) − J(l)‖₂ / (s‖Δ‖₂)` over `s = k/samples`.
pub fn lipschitz_along(l: &Vec3, delta: &Vec3, params: &IspParams, samples: usize) -> f64 {
    let len = norm2(delta);
    if len == 0.0 || samples == 0 {
        return 0.0;
    }
    let j0 = jacobian_from_trace(&trace_pixel(l, params), params).j;
    (1..=samples)
        .map(|k| {
            let s = k as f64 / samples as f64;
            let js = jacobian_from_trace(&trace_pixel(&add(l, &scale(delta, s)), params), params).j;
            svd3(&mat_sub(&js, &j0)).sigma[0] / (s * len)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderBound {
    pub pixels_checked: usize,
    /// Largest `‖r‖ / (Û/2 · ‖ΔL‖²)` seen; the bound holds with slack `k` iff this is `≤ k`.
    pub worst_ratio: f64,
    /// Largest per-pixel Û.
    pub max_lipschitz: f64,
}

/// Compares `‖r(tΔ)‖` with `Û/2 · ‖tΔ‖²` on interior pixels, where Û is
/// estimated per pixel along the full segment (`samples` points).
pub fn remainder_bound_check(
    l_b: &LinearImage,
    delta_l: &ResidualImage,
    params: &IspParams,
    scales: &[f64],
    samples: usize,
) -> Result<RemainderBound> {
    validate_scales(scales)?;
    l_b.require_shape(delta_l, "delta_l")?;
    let per_pixel: Vec<Option<(f64, f64)>> = l_b
        .pixels()
        .par_iter()
        .zip(delta_l.pixels())
        .map(|(l, d)| {
            if norm2(d) == 0.0 || !interior_along(l, d, params, scales) {
                return None;
            }
            let u_hat = lipschitz_along(l, d, params, samples);
            let worst = scales
                .iter()
                .map(|&t| {
                    let step = scale(d, t);
                    let r = norm2(&taylor_remainder_pixel(l, &step, params));
                    let bound = 0.5 * u_hat * norm2(&step).powi(2);
                    if bound > 0.0 {
                        r / bound
                    } else if r == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0, f64::max);
            Some((worst, u_hat))
        })
        .collect();
    let mut out = RemainderBound {
        pixels_checked: 0,
        worst_ratio: 0.0,
        max_lipschitz: 0.0,
    };
    for (ratio, u_hat) in per_pixel.into_iter().flatten() {
        out.pixels_checked += 1;
        out.worst_ratio = out.worst_ratio.max(ratio);
        out.max_lipschitz = out.max_lipschitz.max(u_hat);
    }
    if out.pixels_checked == 0 {
        return Err(IspError::InsufficientSamples("no interior pixels to check".into()));
    }
    Ok(out)
}
