//! File formats: the float image container, 8-bit sRGB PNG, ISP parameter
//! files (TOML), and JSON manifests and reports.
//!
//! # Float container
//!
//! ```text
//! offset  size  field
//! 0       8     magic "ISPIMG01"
//! 8       4     height    (u32 LE)
//! 12      4     width     (u32 LE)
//! 16      4     channels  (u32 LE, 3 for RGB, 1 for raw planes)
//! 20      4     kind      (u32 LE, see ImageKind)
//! 24      4     pattern   (u32 LE, 0 = none, 1..4 = RGGB, BGGR, GRBG, GBRG)
//! 28      ...   samples   (f32 LE, planar: all of channel 0, then 1, then 2)
//! ```
//!
//! Values are rounded from `f64` to the nearest `f32` (ties to even) on write
//! and widened exactly on read.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{IspError, Result};
use crate::image::{
    BayerPattern, DegradationMap, Domain, LinearImage, RawImage, RgbImage, SrgbImage,
};
use crate::isp::{CcmOrigin, IspParams, DEFAULT_EPSILON, DEFAULT_GAMMA};
use crate::linalg::{Mat3, Vec3};
use crate::synth::{CorpusItem, PixelKind, SynthConfig, RNG_NAME};

pub const MAGIC: &[u8; 8] = b"ISPIMG01";
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ImageKind {
    Linear = 1,
    Srgb = 2,
    Residual = 3,
    Raw = 4,
    Degradation = 5,
}

impl ImageKind {
    fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            1 => Self::Linear,
            2 => Self::Srgb,
            3 => Self::Residual,
            4 => Self::Raw,
            5 => Self::Degradation,
            _ => return None,
        })
    }

    fn of_domain(name: &str) -> Self {
        match name {
            "linear" => Self::Linear,
            "srgb" => Self::Srgb,
            _ => Self::Residual,
        }
    }
}

/// Decoded container contents, channel planes widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatPlanes {
    pub height: usize,
    pub width: usize,
    pub kind: ImageKind,
    pub pattern: Option<BayerPattern>,
    pub planes: Vec<Vec<f64>>,
}

pub fn encode_planes(
    height: usize,
    width: usize,
    kind: ImageKind,
    pattern: Option<BayerPattern>,
    planes: &[Vec<f64>],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * height * width * planes.len());
    out.extend_from_slice(MAGIC);
    for field in [
        height as u32,
        width as u32,
        planes.len() as u32,
        kind as u32,
        pattern.map_or(0, BayerPattern::code),
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    for plane in planes {
        for &v in plane {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_planes(bytes: &[u8], path: &Path) -> Result<FloatPlanes> {
    if bytes.len() < HEADER_LEN {
        return Err(IspError::format(path, "file too short for header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(IspError::format(path, "bad magic, not an ISPIMG01 container"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (height, width, channels) = (field(0) as usize, field(1) as usize, field(2) as usize);
    let kind = ImageKind::from_code(field(3))
        .ok_or_else(|| IspError::format(path, format!("unknown image kind {}", field(3))))?;
    let pattern = match field(4) {
        0 => None,
        code => Some(
            BayerPattern::from_code(code)
                .ok_or_else(|| IspError::format(path, format!("unknown Bayer code {code}")))?,
        ),
    };
    if channels == 0 || channels > 4 {
        return Err(IspError::format(path, format!("unsupported channel count {channels}")));
    }
    let n = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| IspError::format(path, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * n {
        return Err(IspError::format(
            path,
            format!("expected {} payload bytes, found {}", 4 * n, payload.len()),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let planes = values.chunks(height * width.max(1)).map(<[f64]>::to_vec).collect();
    Ok(FloatPlanes {
        height,
        width,
        kind,
        pattern,
        planes,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| IspError::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| IspError::io(path, e))
}

fn split_rgb<D: Domain>(img: &RgbImage<D>) -> Vec<Vec<f64>> {
    (0..3).map(|c| img.pixels().iter().map(|p| p[c]).collect()).collect()
}

fn join_rgb(planes: &[Vec<f64>]) -> Vec<Vec3> {
    (0..planes[0].len())
        .map(|i| [planes[0][i], planes[1][i], planes[2][i]])
        .collect()
}

pub fn encode_rgb<D: Domain>(img: &RgbImage<D>) -> Vec<u8> {
    let kind = ImageKind::of_domain(D::NAME);
    encode_planes(img.height(), img.width(), kind, None, &split_rgb(img))
}

pub fn write_rgb<D: Domain>(path: impl AsRef<Path>, img: &RgbImage<D>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_rgb(img))
}

fn expect_kind(planes: &FloatPlanes, want: ImageKind, channels: usize, path: &Path) -> Result<()> {
    if planes.kind != want {
        return Err(IspError::format(
            path,
            format!("holds a {:?} image, expected {:?}", planes.kind, want),
        ));
    }
    if planes.planes.len() != channels {
        return Err(IspError::format(
            path,
            format!("has {} channels, expected {channels}", planes.planes.len()),
        ));
    }
    Ok(())
}

/// Reads an RGB container of the given domain without altering values.
pub fn read_rgb<D: Domain>(path: impl AsRef<Path>) -> Result<RgbImage<D>> {
    let path = path.as_ref();
    let planes = decode_planes(&read_bytes(path)?, path)?;
    expect_kind(&planes, ImageKind::of_domain(D::NAME), 3, path)?;
    let img = RgbImage::<D>::new(planes.height, planes.width, join_rgb(&planes.planes))?;
    img.check_finite()?;
    Ok(img)
}

/// Reads a linear image, clamping out-of-range values. Returns the number of
/// clamped channel values.
pub fn read_linear(path: impl AsRef<Path>) -> Result<(LinearImage, usize)> {
    let img: LinearImage = read_rgb(path)?;
    let (h, w) = (img.height(), img.width());
    LinearImage::ingest(h, w, img.into_pixels())
}

/// Reads an sRGB image from a float container or, by extension, a PNG.
pub fn read_srgb(path: impl AsRef<Path>) -> Result<(SrgbImage, usize)> {
    let path = path.as_ref();
    if is_png(path) {
        return Ok((read_srgb_png(path)?, 0));
    }
    let img: SrgbImage = read_rgb(path)?;
    let (h, w) = (img.height(), img.width());
    SrgbImage::ingest(h, w, img.into_pixels())
}

pub fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn write_raw(path: impl AsRef<Path>, raw: &RawImage) -> Result<()> {
    let bytes = encode_planes(
        raw.height(),
        raw.width(),
        ImageKind::Raw,
        Some(raw.pattern()),
        &[raw.values().to_vec()],
    );
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let planes = decode_planes(&read_bytes(path)?, path)?;
    expect_kind(&planes, ImageKind::Raw, 1, path)?;
    let pattern = planes
        .pattern
        .ok_or_else(|| IspError::format(path, "raw image without a Bayer pattern"))?;
    let FloatPlanes {
        height,
        width,
        mut planes,
        ..
    } = planes;
    RawImage::new(height, width, planes.remove(0), pattern)
}

pub fn write_degradation(path: impl AsRef<Path>, m: &DegradationMap) -> Result<()> {
    let bytes = encode_planes(
        m.height(),
        m.width(),
        ImageKind::Degradation,
        Some(m.pattern()),
        &[m.values().to_vec()],
    );
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_degradation(path: impl AsRef<Path>) -> Result<DegradationMap> {
    let path = path.as_ref();
    let planes = decode_planes(&read_bytes(path)?, path)?;
    expect_kind(&planes, ImageKind::Degradation, 1, path)?;
    let pattern = planes.pattern.unwrap_or_default();
    let FloatPlanes {
        height,
        width,
        mut planes,
        ..
    } = planes;
    DegradationMap::new(height, width, planes.remove(0), pattern)
}

/// `q = round(s · 255)` after clamping to `[0, 1]`.
pub fn quantize_u8(s: f64) -> u8 {
    (s.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_srgb_png(img: &SrgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| IspError::format("<png>", e.to_string()))?;
        let data: Vec<u8> = img.values().map(quantize_u8).collect();
        writer
            .write_image_data(&data)
            .map_err(|e| IspError::format("<png>", e.to_string()))?;
    }
    Ok(out)
}

pub fn write_srgb_png(path: impl AsRef<Path>, img: &SrgbImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_srgb_png(img).map_err(|e| match e {
        IspError::Format { reason, .. } => IspError::format(path, reason),
        other => other,
    })?;
    write_bytes(path, &bytes)
}

/// Reads an 8-bit RGB or RGBA PNG as `q / 255`.
pub fn read_srgb_png(path: impl AsRef<Path>) -> Result<SrgbImage> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| IspError::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| IspError::format(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(IspError::format(path, "only 8-bit PNGs are supported"));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(IspError::format(path, format!("unsupported PNG colour type {other:?}")))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let data = buf[..info.buffer_size()]
        .chunks_exact(info.line_size)
        .flat_map(|row| {
            row[..w * stride]
                .chunks_exact(stride)
                .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
                .collect::<Vec<_>>()
        })
        .collect();
    SrgbImage::new(h, w, data)
}

/// On-disk form of [`IspParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub wb_gains: Vec3,
    pub ccm: Mat3,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub ccm_origin: CcmOrigin,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

const PARAM_KEYS: [&str; 5] = ["wb_gains", "ccm", "gamma", "epsilon", "ccm_origin"];

impl From<&IspParams> for ParamsFile {
    fn from(p: &IspParams) -> Self {
        Self {
            wb_gains: p.wb_gains,
            ccm: p.ccm,
            gamma: p.gamma,
            epsilon: p.epsilon,
            ccm_origin: p.ccm_origin,
        }
    }
}

impl ParamsFile {
    pub fn into_params(self) -> Result<IspParams> {
        match self.ccm_origin {
            CcmOrigin::Generated => {
                IspParams::generated(self.wb_gains, self.ccm, self.gamma, self.epsilon)
            }
            CcmOrigin::External => IspParams::new(self.wb_gains, self.ccm, self.gamma, self.epsilon),
        }
    }
}

pub fn params_to_toml(p: &IspParams) -> String {
    toml::to_string(&ParamsFile::from(p)).expect("parameters serialize")
}

/// Parses a parameter file. Unknown keys are an error when `strict`, and
/// otherwise ignored with a warning.
pub fn params_from_toml(text: &str, strict: bool, path: &Path) -> Result<IspParams> {
    let table: toml::Table = toml::from_str(text).map_err(|e| IspError::format(path, e.to_string()))?;
    let unknown: Vec<&str> = table
        .keys()
        .map(String::as_str)
        .filter(|k| !PARAM_KEYS.contains(k))
        .collect();
    if !unknown.is_empty() {
        if strict {
            return Err(IspError::format(path, format!("unknown keys: {}", unknown.join(", "))));
        }
        log::warn!("event=params_unknown_keys path={} keys={}", path.display(), unknown.join(","));
    }
    let file: ParamsFile = table
        .try_into()
        .map_err(|e: toml::de::Error| IspError::format(path, e.to_string()))?;
    file.into_params()
}

pub fn write_params(path: impl AsRef<Path>, p: &IspParams) -> Result<()> {
    write_bytes(path.as_ref(), params_to_toml(p).as_bytes())
}

pub fn read_params(path: impl AsRef<Path>, strict: bool) -> Result<IspParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IspError::io(path, e))?;
    params_from_toml(&text, strict, path)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| IspError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(to_json(value).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| IspError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IspError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IspError::format(path, e.to_string()))
}

/// Identification embedded in every manifest and report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub library: String,
    pub version: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            library: "ispinv".into(),
            version: crate::VERSION.into(),
        }
    }
}

/// Any result document: library identity, the seed and configuration used,
/// and the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<C, T> {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub seed: Option<u64>,
    pub config: C,
    pub result: T,
}

impl<C, T> Report<C, T> {
    pub fn new(seed: Option<u64>, config: C, result: T) -> Self {
        Self {
            provenance: Provenance::default(),
            seed,
            config,
            result,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub index: usize,
    pub params: String,
    pub l_b: String,
    pub s_b: String,
    pub s_d: String,
    pub clipped_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub rng: String,
    pub seed: u64,
    pub count: usize,
    pub config: SynthConfig,
    pub items: Vec<ManifestItem>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn item_file(index: usize, what: &str, ext: &str) -> String {
    format!("item{index:04}_{what}.{ext}")
}

/// Writes every item and a manifest into `dir` (created if missing).
pub fn write_corpus(dir: impl AsRef<Path>, cfg: &SynthConfig, items: &[CorpusItem]) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| IspError::io(dir, e))?;
    let mut entries = Vec::with_capacity(items.len());
    for item in items {
        let entry = ManifestItem {
            index: item.index,
            params: item_file(item.index, "params", "toml"),
            l_b: item_file(item.index, "lb", "ispimg"),
            s_b: item_file(item.index, "sb", "ispimg"),
            s_d: item_file(item.index, "sd", "ispimg"),
            clipped_pixels: item.kinds.iter().filter(|k| **k != PixelKind::Interior).count(),
        };
        write_params(dir.join(&entry.params), &item.params)?;
        write_rgb(dir.join(&entry.l_b), &item.l_b)?;
        write_rgb(dir.join(&entry.s_b), &item.s_b)?;
        write_rgb(dir.join(&entry.s_d), &item.s_d)?;
        entries.push(entry);
    }
    let manifest = CorpusManifest {
        provenance: Provenance::default(),
        rng: RNG_NAME.into(),
        seed: cfg.seed,
        count: items.len(),
        config: cfg.clone(),
        items: entries,
    };
    write_json(dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

/// A corpus item loaded from disk. `S_b` is the stored render, rounded to `f32`.
#[derive(Debug, Clone)]
pub struct LoadedItem {
    pub index: usize,
    pub params: IspParams,
    pub l_b: LinearImage,
    pub s_b: SrgbImage,
    pub s_d: SrgbImage,
}

pub fn read_corpus(dir: impl AsRef<Path>) -> Result<(CorpusManifest, Vec<LoadedItem>)> {
    let dir = dir.as_ref();
    let manifest: CorpusManifest = read_json(dir.join(MANIFEST_NAME))?;
    let path = |name: &str| -> PathBuf { dir.join(name) };
    let items = manifest
        .items
        .iter()
        .map(|e| {
            Ok(LoadedItem {
                index: e.index,
                params: read_params(path(&e.params), true)?,
                l_b: read_linear(path(&e.l_b))?.0,
                s_b: read_srgb(path(&e.s_b))?.0,
                s_d: read_srgb(path(&e.s_d))?.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, items))
}
