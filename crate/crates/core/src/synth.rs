//! Synthetic ISP parameters, linear images with controlled clipping, and
//! smooth sRGB perturbations.
//!
//! Randomness comes from ChaCha8 with one stream per (item, purpose) pair, so
//! any item of a corpus can be regenerated on its own and the output does not
//! depend on thread scheduling.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IspError, Result};
use crate::image::{LinearImage, SrgbImage};
use crate::isp::{forward_isp, trace_pixel, IspParams, CCM_ROW_SUM_TOL, DEFAULT_EPSILON, DEFAULT_GAMMA};
use crate::linalg::{Mat3, Vec3};

/// Name of the generator; recorded in manifests next to the seed.
pub const RNG_NAME: &str = "chacha8";

const PRESETS_TOML: &str = include_str!("../data/ccm_presets.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcmPreset {
    pub name: String,
    pub ccm: Mat3,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    preset: Vec<CcmPreset>,
}

/// Parses a preset file: a list of `[[preset]]` tables with `name` and `ccm`.
pub fn parse_presets(text: &str) -> Result<Vec<CcmPreset>> {
    let file: PresetFile =
        toml::from_str(text).map_err(|e| IspError::InvalidConfig(format!("CCM presets: {e}")))?;
    for p in &file.preset {
        check_row_sums(&p.ccm, &p.name)?;
    }
    Ok(file.preset)
}

/// The presets bundled with the library.
pub fn builtin_presets() -> Vec<CcmPreset> {
    parse_presets(PRESETS_TOML).expect("bundled presets are valid")
}

fn check_row_sums(ccm: &Mat3, what: &str) -> Result<()> {
    for (i, row) in ccm.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if !row.iter().all(|x| x.is_finite()) || (s - 1.0).abs() > CCM_ROW_SUM_TOL {
            return Err(IspError::InvalidConfig(format!(
                "{what}: row {i} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Fraction of pixels made to clip in white balance or clamp before gamma.
    pub saturation_fraction: f64,
    /// Peak amplitude of the sRGB perturbation.
    pub perturbation_scale: f64,
    pub ccm_presets: Vec<Mat3>,
    /// Per-channel `[lo, hi]` for the white-balance gains.
    pub wb_gain_ranges: [[f64; 2]; 3],
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 64,
            saturation_fraction: 0.3,
            perturbation_scale: 0.02,
            ccm_presets: builtin_presets().into_iter().map(|p| p.ccm).collect(),
            wb_gain_ranges: [[1.5, 2.5], [1.0, 1.0], [1.3, 2.0]],
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IspError::InvalidConfig(m));
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.saturation_fraction) {
            return bad(format!(
                "saturation_fraction must lie in [0, 1], got {}",
                self.saturation_fraction
            ));
        }
        if !(self.perturbation_scale >= 0.0 && self.perturbation_scale.is_finite()) {
            return bad(format!(
                "perturbation_scale must be >= 0, got {}",
                self.perturbation_scale
            ));
        }
        for (c, [lo, hi]) in self.wb_gain_ranges.iter().enumerate() {
            if !(*lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("gain range for channel {c} is invalid: [{lo}, {hi}]"));
            }
        }
        for (i, ccm) in self.ccm_presets.iter().enumerate() {
            check_row_sums(ccm, &format!("preset {i}"))?;
        }
        Ok(())
    }
}

/// What a random stream is used for within one corpus item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Params = 0,
    Image = 1,
    Perturb = 2,
}

/// Generator for one (item, purpose) pair under a base seed.
pub fn item_rng(seed: u64, item: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((item << 2) | purpose as u64);
    rng
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Gains drawn uniformly from the configured ranges; `C` is a random convex
/// combination of the presets with each row renormalized to sum to one.
pub fn random_isp_params(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<IspParams> {
    if cfg.ccm_presets.is_empty() {
        return Err(IspError::InvalidConfig("no CCM presets to sample from".into()));
    }
    let mut gains = [0.0; 3];
    for (g, [lo, hi]) in gains.iter_mut().zip(cfg.wb_gain_ranges) {
        *g = uniform(rng, lo, hi);
    }

    let weights: Vec<f64> = cfg.ccm_presets.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut ccm = [[0.0; 3]; 3];
    for (w, preset) in weights.iter().zip(&cfg.ccm_presets) {
        for i in 0..3 {
            for k in 0..3 {
                ccm[i][k] += w / total * preset[i][k];
            }
        }
    }
    for row in ccm.iter_mut() {
        let s: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x /= s;
        }
    }
    IspParams::generated(gains, ccm, cfg.gamma, cfg.epsilon)
}

/// Kind of a stress pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelKind {
    Interior,
    /// One channel clipped by white balance and one colour-corrected channel
    /// just below 1, where the tone curve is nearly flat.
    Highlight,
    /// Every channel at 1 before white balance.
    Saturated,
    /// One channel clipped by white balance.
    PartialClip,
    /// Some channel clamped before gamma (`v ≤ ε`).
    Dark,
}

const MAX_ATTEMPTS: usize = 64;

fn from_u(u: &Vec3, params: &IspParams) -> Option<Vec3> {
    let mut l = [0.0; 3];
    for c in 0..3 {
        l[c] = u[c] / params.wb_gains[c];
        if !(0.0..=1.0).contains(&l[c]) {
            return None;
        }
    }
    Some(l)
}

fn interior_pixel(params: &IspParams, rng: &mut impl Rng) -> Vec3 {
    for _ in 0..MAX_ATTEMPTS {
        let u = [
            rng.gen_range(0.05..0.9),
            rng.gen_range(0.05..0.9),
            rng.gen_range(0.05..0.9),
        ];
        if let Some(l) = from_u(&u, params) {
            let t = trace_pixel(&l, params);
            // v ≥ 1 puts g past the top of the tone curve, where it folds back
            if !t.is_clipped(params.epsilon) && t.v.iter().all(|&v| v < 1.0) {
                return l;
            }
        }
    }
    from_u(&[0.5; 3], params).unwrap_or([0.0; 3])
}

/// Channels whose gain can push `u_pre` strictly above 1 with `l ≤ 1`.
fn clippable_channel(params: &IspParams, rng: &mut impl Rng) -> Option<usize> {
    let strict: Vec<usize> = (0..3).filter(|&c| params.wb_gains[c] > 1.02).collect();
    if !strict.is_empty() {
        return Some(strict[rng.gen_range(0..strict.len())]);
    }
    let weak: Vec<usize> = (0..3).filter(|&c| params.wb_gains[c] >= 1.0).collect();
    (!weak.is_empty()).then(|| weak[rng.gen_range(0..weak.len())])
}

fn clipped_level(gain: f64, rng: &mut impl Rng) -> f64 {
    let lo = (1.02 / gain).min(1.0);
    uniform(rng, lo, 1.0)
}

fn highlight_pixel(params: &IspParams, rng: &mut impl Rng) -> Option<Vec3> {
    let c = &params.ccm;
    for _ in 0..MAX_ATTEMPTS {
        let j1 = clippable_channel(params, rng)?;
        let k = rng.gen_range(0..3);
        let (mut j2, mut j3) = ((j1 + 1) % 3, (j1 + 2) % 3);
        if rng.gen_bool(0.5) {
            std::mem::swap(&mut j2, &mut j3);
        }
        let delta = 10f64.powf(rng.gen_range(-6.0..-3.0));
        let u3 = rng.gen_range(0.05..0.9);
        if c[k][j2].abs() < 1e-3 {
            continue;
        }
        let u2 = (1.0 - delta - c[k][j1] - c[k][j3] * u3) / c[k][j2];
        if !(0.02..=0.95).contains(&u2) {
            continue;
        }
        let mut l = [0.0; 3];
        l[j1] = clipped_level(params.wb_gains[j1], rng);
        l[j2] = u2 / params.wb_gains[j2];
        l[j3] = u3 / params.wb_gains[j3];
        if l.iter().any(|x| !(0.0..=1.0).contains(x)) {
            continue;
        }
        let t = trace_pixel(&l, params);
        if t.is_clipped(params.epsilon)
            && t.v.iter().all(|&v| v > params.epsilon)
            && t.v[k] < 1.0
        {
            return Some(l);
        }
    }
    None
}

fn partial_clip_pixel(params: &IspParams, rng: &mut impl Rng) -> Option<Vec3> {
    let j1 = clippable_channel(params, rng)?;
    let mut l = interior_pixel(params, rng);
    l[j1] = clipped_level(params.wb_gains[j1], rng);
    Some(l)
}

fn dark_pixel(params: &IspParams, rng: &mut impl Rng) -> Vec3 {
    for _ in 0..MAX_ATTEMPTS {
        let j = rng.gen_range(0..3);
        let mut u = [0.0; 3];
        for (c, x) in u.iter_mut().enumerate() {
            *x = if c == j { rng.gen_range(0.3..0.9) } else { rng.gen_range(0.0..0.02) };
        }
        if let Some(l) = from_u(&u, params) {
            if trace_pixel(&l, params).is_clipped(params.epsilon) {
                return l;
            }
        }
    }
    [0.0; 3]
}

fn stress_pixel(params: &IspParams, rng: &mut impl Rng) -> (Vec3, PixelKind) {
    let roll: f64 = rng.gen();
    let wanted = if roll < 0.4 {
        PixelKind::Highlight
    } else if roll < 0.6 {
        PixelKind::PartialClip
    } else if roll < 0.8 {
        PixelKind::Saturated
    } else {
        PixelKind::Dark
    };
    let attempt = match wanted {
        PixelKind::Highlight => highlight_pixel(params, rng),
        PixelKind::PartialClip => partial_clip_pixel(params, rng),
        PixelKind::Saturated => Some([1.0; 3]),
        _ => None,
    };
    match attempt {
        Some(l) if trace_pixel(&l, params).is_clipped(params.epsilon) => (l, wanted),
        _ => (dark_pixel(params, rng), PixelKind::Dark),
    }
}

/// Rounds values to the nearest `f32` so that images survive the float
/// container unchanged.
pub fn round_to_f32(data: &mut [Vec3]) {
    for p in data.iter_mut() {
        for c in p.iter_mut() {
            *c = *c as f32 as f64;
        }
    }
}

/// A stress image with exactly `round(saturation_fraction · N)` clipped pixels
/// at random positions; the rest are unclipped interior pixels. Values are
/// `f32`-representable.
pub fn make_stress_image(
    cfg: &SynthConfig,
    params: &IspParams,
    rng: &mut impl Rng,
) -> Result<(LinearImage, Vec<PixelKind>)> {
    cfg.validate()?;
    params.validate()?;
    let n = cfg.height * cfg.width;
    let n_stress = (cfg.saturation_fraction * n as f64).round() as usize;
    let mut kinds = vec![PixelKind::Interior; n];
    let mut data = vec![[0.0; 3]; n];
    let mut stressed = vec![false; n];
    for i in sample(rng, n, n_stress).into_vec() {
        stressed[i] = true;
    }
    for i in 0..n {
        if stressed[i] {
            let (l, kind) = stress_pixel(params, rng);
            data[i] = l;
            kinds[i] = kind;
        } else {
            data[i] = interior_pixel(params, rng);
        }
    }
    round_to_f32(&mut data);
    Ok((LinearImage::new(cfg.height, cfg.width, data)?, kinds))
}

/// Adds a smooth field of summed sinusoids with peak amplitude below `scale`,
/// then clamps to `[0, 1]`. Since `S_b` already lies in `[0, 1]` the clamp
/// can only shrink the difference, so `‖S_d − S_b‖_∞ ≤ scale`.
pub fn perturb_srgb(s_b: &SrgbImage, scale: f64, rng: &mut impl Rng) -> Result<SrgbImage> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(IspError::InvalidConfig(format!("perturbation scale must be >= 0, got {scale}")));
    }
    if scale == 0.0 {
        return Ok(s_b.clone());
    }
    const WAVES: usize = 4;
    let amp = scale * (1.0 - 1e-9);
    let (h, w) = (s_b.height() as f64, s_b.width() as f64);
    // (weight, fy, fx, phase) per channel and wave
    let mut waves = [[(0.0, 0.0, 0.0, 0.0); WAVES]; 3];
    for ch in waves.iter_mut() {
        let mut total = 0.0;
        for wave in ch.iter_mut() {
            let weight: f64 = rng.gen_range(0.2..1.0);
            total += weight;
            *wave = (
                weight,
                rng.gen_range(0.5..4.0),
                rng.gen_range(0.5..4.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            );
        }
        for wave in ch.iter_mut() {
            wave.0 /= total;
        }
    }
    SrgbImage::from_fn(s_b.height(), s_b.width(), |y, x| {
        let s = s_b.get(y, x);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let field: f64 = waves[c]
                .iter()
                .map(|&(wt, fy, fx, ph)| {
                    wt * (std::f64::consts::TAU * (fy * y as f64 / h + fx * x as f64 / w) + ph).sin()
                })
                .sum();
            out[c] = (s[c] + amp * field).clamp(0.0, 1.0);
        }
        out
    })
}

/// One generated sample: `L_b`, its `f64` render `S_b`, and the perturbed `S_d`.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub index: usize,
    pub params: IspParams,
    pub l_b: LinearImage,
    pub kinds: Vec<PixelKind>,
    pub s_b: SrgbImage,
    pub s_d: SrgbImage,
}

pub fn generate_item(cfg: &SynthConfig, index: usize) -> Result<CorpusItem> {
    let item = index as u64;
    let params = random_isp_params(cfg, &mut item_rng(cfg.seed, item, StreamPurpose::Params))?;
    let (l_b, kinds) =
        make_stress_image(cfg, &params, &mut item_rng(cfg.seed, item, StreamPurpose::Image))?;
    let s_b = forward_isp(&l_b, &params)?;
    let s_d = perturb_srgb(
        &s_b,
        cfg.perturbation_scale,
        &mut item_rng(cfg.seed, item, StreamPurpose::Perturb),
    )?;
    // stored at f32 precision so that a corpus read back from disk is identical
    let mut s_d = s_d.into_pixels();
    round_to_f32(&mut s_d);
    let s_d = SrgbImage::new(l_b.height(), l_b.width(), s_d)?;
    Ok(CorpusItem {
        index,
        params,
        l_b,
        kinds,
        s_b,
        s_d,
    })
}

pub fn generate_corpus(cfg: &SynthConfig, count: usize) -> Result<Vec<CorpusItem>> {
    cfg.validate()?;
    (0..count).into_par_iter().map(|i| generate_item(cfg, i)).collect()
}
