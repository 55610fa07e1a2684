//! Image containers.
//!
//! RGB images carry a zero-sized domain tag so a linear image cannot be passed
//! where an sRGB render is expected. Pixels are stored row-major as `[f64; 3]`.

use std::fmt;
use std::marker::PhantomData;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IspError, Result};
use crate::linalg::Vec3;

pub trait Domain: Send + Sync + 'static {
    const NAME: &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear;
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Srgb;
/// Signed per-pixel linear-domain update `ΔL`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Residual;

impl Domain for Linear {
    const NAME: &'static str = "linear";
}
impl Domain for Srgb {
    const NAME: &'static str = "srgb";
}
impl Domain for Residual {
    const NAME: &'static str = "residual";
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage<D: Domain> {
    height: usize,
    width: usize,
    data: Vec<Vec3>,
    _domain: PhantomData<D>,
}

pub type LinearImage = RgbImage<Linear>;
pub type SrgbImage = RgbImage<Srgb>;
pub type ResidualImage = RgbImage<Residual>;

impl<D: Domain> RgbImage<D> {
    pub fn new(height: usize, width: usize, data: Vec<Vec3>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(IspError::BadDimensions {
                height,
                width,
                reason: "dimensions must be positive".into(),
            });
        }
        if data.len() != height * width {
            return Err(IspError::BadDimensions {
                height,
                width,
                reason: format!("expected {} pixels, got {}", height * width, data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            data,
            _domain: PhantomData,
        })
    }

    pub fn filled(height: usize, width: usize, value: Vec3) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> Vec3,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[Vec3] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Vec3] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<Vec3> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Vec3 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Vec3) {
        self.data[row * self.width + col] = value;
    }

    /// `(row, col)` of a flat pixel index.
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn same_shape<E: Domain>(&self, other: &RgbImage<E>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn require_shape<E: Domain>(
        &self,
        other: &RgbImage<E>,
        what: &'static str,
    ) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(IspError::ShapeMismatch {
                what,
                got_h: other.height,
                got_w: other.width,
                want_h: self.height,
                want_w: self.width,
            })
        }
    }

    /// Error naming the first pixel (row-major) with a non-finite channel.
    pub fn check_finite(&self) -> Result<()> {
        match self
            .data
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            None => Ok(()),
            Some(i) => {
                let (row, col) = self.coords(i);
                Err(IspError::NonFinitePixel { row, col })
            }
        }
    }

    /// Flattened channel values in pixel order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().flat_map(|p| p.iter().copied())
    }
}

impl RgbImage<Linear> {
    /// Builds a linear image from untrusted values: non-finite values are an
    /// error, values outside `[0, 1]` are clamped and counted.
    pub fn ingest(height: usize, width: usize, data: Vec<Vec3>) -> Result<(Self, usize)> {
        ingest_unit(height, width, data)
    }
}

impl RgbImage<Srgb> {
    /// As [`LinearImage::ingest`], for display-referred values.
    pub fn ingest(height: usize, width: usize, data: Vec<Vec3>) -> Result<(Self, usize)> {
        ingest_unit(height, width, data)
    }
}

fn ingest_unit<D: Domain>(height: usize, width: usize, data: Vec<Vec3>) -> Result<(RgbImage<D>, usize)> {
    let mut img = RgbImage::<D>::new(height, width, data)?;
    img.check_finite()?;
    let clamped = clamp_unit(&mut img.data);
    if clamped > 0 {
        log::warn!("event=ingest_clamp domain={} clamped_values={clamped}", D::NAME);
    }
    Ok((img, clamped))
}

fn clamp_unit(data: &mut [Vec3]) -> usize {
    let mut clamped = 0;
    for p in data.iter_mut() {
        for c in p.iter_mut() {
            if *c < 0.0 || *c > 1.0 {
                *c = c.clamp(0.0, 1.0);
                clamped += 1;
            }
        }
    }
    clamped
}

/// 2×2 color filter arrangement, named by its top-left, top-right,
/// bottom-left, bottom-right sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum BayerPattern {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    pub const ALL: [BayerPattern; 4] = [Self::Rggb, Self::Bggr, Self::Grbg, Self::Gbrg];

    /// Channel index (0 = R, 1 = G, 2 = B) sampled at `(row, col)`.
    pub fn channel_at(self, row: usize, col: usize) -> usize {
        let tile = match self {
            BayerPattern::Rggb => [[0, 1], [1, 2]],
            BayerPattern::Bggr => [[2, 1], [1, 0]],
            BayerPattern::Grbg => [[1, 0], [2, 1]],
            BayerPattern::Gbrg => [[1, 2], [0, 1]],
        };
        tile[row & 1][col & 1]
    }

    pub fn code(self) -> u32 {
        match self {
            BayerPattern::Rggb => 1,
            BayerPattern::Bggr => 2,
            BayerPattern::Grbg => 3,
            BayerPattern::Gbrg => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.code() == code)
    }
}

impl fmt::Display for BayerPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BayerPattern::Rggb => "RGGB",
            BayerPattern::Bggr => "BGGR",
            BayerPattern::Grbg => "GRBG",
            BayerPattern::Gbrg => "GBRG",
        })
    }
}

impl FromStr for BayerPattern {
    type Err = IspError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(Self::Rggb),
            "BGGR" => Ok(Self::Bggr),
            "GRBG" => Ok(Self::Grbg),
            "GBRG" => Ok(Self::Gbrg),
            other => Err(IspError::InvalidConfig(format!(
                "unknown Bayer pattern {other:?}"
            ))),
        }
    }
}

/// Single-plane mosaicked sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
    pattern: BayerPattern,
}

impl RawImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>, pattern: BayerPattern) -> Result<Self> {
        check_plane(height, width, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(IspError::NonFinitePixel {
                row: i / width,
                col: i % width,
            });
        }
        Ok(Self {
            height,
            width,
            data,
            pattern,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pattern(&self) -> BayerPattern {
        self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Signed raw-domain residual between a reference frame and a mosaicked
/// reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
    pattern: BayerPattern,
}

impl DegradationMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>, pattern: BayerPattern) -> Result<Self> {
        check_plane(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
            pattern,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pattern(&self) -> BayerPattern {
        self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

fn check_plane(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 || len != height * width {
        return Err(IspError::BadDimensions {
            height,
            width,
            reason: format!("plane of {len} values"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_clamps_and_counts() {
        let (img, n) =
            LinearImage::ingest(1, 2, vec![[-0.1, 0.5, 1.2], [0.0, 1.0, 0.3]]).unwrap();
        assert_eq!(n, 2);
        assert_eq!(img.get(0, 0), [0.0, 0.5, 1.0]);
        assert_eq!(img.get(0, 1), [0.0, 1.0, 0.3]);
    }

    #[test]
    fn ingest_rejects_non_finite_with_coordinates() {
        let err = LinearImage::ingest(2, 2, vec![[0.0; 3], [0.0; 3], [0.0, f64::NAN, 0.0], [0.0; 3]])
            .unwrap_err();
        assert!(matches!(err, IspError::NonFinitePixel { row: 1, col: 0 }));
    }

    #[test]
    fn bad_dimensions() {
        assert!(LinearImage::new(0, 3, vec![]).is_err());
        assert!(LinearImage::new(2, 2, vec![[0.0; 3]; 3]).is_err());
    }

    #[test]
    fn bayer_tiles() {
        assert_eq!(BayerPattern::Rggb.channel_at(0, 0), 0);
        assert_eq!(BayerPattern::Rggb.channel_at(1, 1), 2);
        assert_eq!(BayerPattern::Bggr.channel_at(0, 0), 2);
        assert_eq!(BayerPattern::Grbg.channel_at(0, 1), 0);
        assert_eq!(BayerPattern::Gbrg.channel_at(1, 0), 0);
        for p in BayerPattern::ALL {
            assert_eq!(BayerPattern::from_code(p.code()), Some(p));
            assert_eq!(p.to_string().parse::<BayerPattern>().unwrap(), p);
            // two green sites per tile
            let greens = (0..2)
                .flat_map(|r| (0..2).map(move |c| (r, c)))
                .filter(|&(r, c)| p.channel_at(r, c) == 1)
                .count();
            assert_eq!(greens, 2);
        }
    }
}
