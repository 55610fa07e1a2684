//! Raw-domain degradation map `M = L_lr − Mos(Down(L_b))`.

use serde::{Deserialize, Serialize};

use crate::error::{IspError, Result};
use crate::image::{BayerPattern, DegradationMap, LinearImage, RawImage};
use crate::linalg::Vec3;

/// Kernel used to bring the reconstruction back to LR resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DownsampleKernel {
    /// Mean over each `factor × factor` block.
    #[default]
    Area,
    /// Bilinear sample at the block centre.
    Bilinear,
}

impl std::str::FromStr for DownsampleKernel {
    type Err = IspError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "area" => Ok(Self::Area),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(IspError::InvalidConfig(format!("unknown kernel {other:?}"))),
        }
    }
}

pub const DEFAULT_SR_FACTOR: usize = 4;

pub fn downsample(img: &LinearImage, factor: usize) -> Result<LinearImage> {
    downsample_with(img, factor, DownsampleKernel::Area)
}

pub fn downsample_with(
    img: &LinearImage,
    factor: usize,
    kernel: DownsampleKernel,
) -> Result<LinearImage> {
    let (h, w) = (img.height(), img.width());
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(IspError::BadDimensions {
            height: h,
            width: w,
            reason: format!("not divisible by downsampling factor {factor}"),
        });
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    match kernel {
        DownsampleKernel::Area => {
            let n = (factor * factor) as f64;
            LinearImage::from_fn(oh, ow, |y, x| {
                let mut acc = [0.0; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = img.get(y * factor + dy, x * factor + dx);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                [acc[0] / n, acc[1] / n, acc[2] / n]
            })
        }
        DownsampleKernel::Bilinear => {
            let f = factor as f64;
            LinearImage::from_fn(oh, ow, |y, x| {
                let sy = (y as f64 + 0.5) * f - 0.5;
                let sx = (x as f64 + 0.5) * f - 0.5;
                bilinear(img, sy, sx)
            })
        }
    }
}

fn bilinear(img: &LinearImage, sy: f64, sx: f64) -> Vec3 {
    let y0 = sy.floor().max(0.0) as usize;
    let x0 = sx.floor().max(0.0) as usize;
    let y1 = (y0 + 1).min(img.height() - 1);
    let x1 = (x0 + 1).min(img.width() - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    let (a, b, c, d) = (img.get(y0, x0), img.get(y0, x1), img.get(y1, x0), img.get(y1, x1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fx;
        let bottom = c[k] + (d[k] - c[k]) * fx;
        out[k] = top + (bottom - top) * fy;
    }
    out
}

pub fn mosaic(img: &LinearImage, pattern: BayerPattern) -> Result<RawImage> {
    let (h, w) = (img.height(), img.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(IspError::BadDimensions {
            height: h,
            width: w,
            reason: "mosaicking needs even dimensions".into(),
        });
    }
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            data.push(img.get(y, x)[pattern.channel_at(y, x)]);
        }
    }
    RawImage::new(h, w, data, pattern)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationOptions {
    pub factor: usize,
    pub kernel: DownsampleKernel,
    pub pattern: BayerPattern,
}

impl Default for DegradationOptions {
    fn default() -> Self {
        Self {
            factor: DEFAULT_SR_FACTOR,
            kernel: DownsampleKernel::Area,
            pattern: BayerPattern::Rggb,
        }
    }
}

/// `L_lr − Mos(Down(L_b))`, elementwise.
pub fn degradation_map(
    l_lr: &RawImage,
    l_b: &LinearImage,
    opts: &DegradationOptions,
) -> Result<DegradationMap> {
    if l_lr.pattern() != opts.pattern {
        return Err(IspError::PatternMismatch {
            raw: l_lr.pattern().to_string(),
            requested: opts.pattern.to_string(),
        });
    }
    let down = downsample_with(l_b, opts.factor, opts.kernel)?;
    if down.height() != l_lr.height() || down.width() != l_lr.width() {
        return Err(IspError::ShapeMismatch {
            what: "Down(L_b)",
            got_h: down.height(),
            got_w: down.width(),
            want_h: l_lr.height(),
            want_w: l_lr.width(),
        });
    }
    let mosaicked = mosaic(&down, opts.pattern)?;
    let data = l_lr
        .values()
        .iter()
        .zip(mosaicked.values())
        .map(|(a, b)| a - b)
        .collect();
    DegradationMap::new(l_lr.height(), l_lr.width(), data, opts.pattern)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSummary {
    pub mean: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
    /// Mean of `M` over the R, G and B sites of the mosaic.
    pub channel_means: Vec3,
}

pub fn degradation_summary(m: &DegradationMap) -> DegradationSummary {
    let mut sum = 0.0;
    let mut sum_abs = 0.0;
    let mut max_abs = 0.0f64;
    let mut ch_sum = [0.0; 3];
    let mut ch_n = [0usize; 3];
    for y in 0..m.height() {
        for x in 0..m.width() {
            let v = m.get(y, x);
            sum += v;
            sum_abs += v.abs();
            max_abs = max_abs.max(v.abs());
            let c = m.pattern().channel_at(y, x);
            ch_sum[c] += v;
            ch_n[c] += 1;
        }
    }
    let n = m.values().len() as f64;
    let mut channel_means = [0.0; 3];
    for c in 0..3 {
        channel_means[c] = if ch_n[c] > 0 { ch_sum[c] / ch_n[c] as f64 } else { 0.0 };
    }
    DegradationSummary {
        mean: sum / n,
        mean_abs: sum_abs / n,
        max_abs,
        channel_means,
    }
}
