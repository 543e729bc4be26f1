//! Synthetic rain data.
//!
//! Two dataset flavours are produced:
//!
//! * `blend`: a veil of vapor is laid over a clean image, then a rendered
//!   streak layer is added with the screen blend mode. Only the clean image is
//!   ground truth.
//! * `scenes`: fully specified [`RainScene`]s whose transmission maps satisfy
//!   the formation model exactly, used as oracles.
//!
//! Every entry draws its randomness from a stream derived from the global
//! seed and the entry index, so datasets are reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::image::{self, ensure_same_dims, AtmosphereLight, Field, Image, Mask};
use crate::rain_model::RainScene;

/// Smallest image side accepted by the renderers.
pub const MIN_RENDER_SIZE: usize = 16;

/// Streak layer values above this are part of the streak mask.
pub const MASK_THRESHOLD: f64 = 0.1;

/// Smallest lattice spacing of the vapor noise, in pixels.
const MIN_NOISE_CELL: f64 = 8.0;

/// Gaussian smoothing applied to the vapor noise.
const VAPOR_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreakParams {
    /// Expected streaks per 1000 pixels.
    pub density: f64,
    pub length_range: [f64; 2],
    pub width_range: [f64; 2],
    /// Degrees from vertical.
    pub angle_range: [f64; 2],
    pub intensity_range: [f64; 2],
    pub seed: u64,
}

impl Default for StreakParams {
    fn default() -> Self {
        Self {
            density: 3.0,
            length_range: [8.0, 24.0],
            width_range: [1.0, 2.0],
            angle_range: [-15.0, 15.0],
            intensity_range: [0.5, 0.9],
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi) {
        return Err(Error::InvalidParams(format!("{name} {r:?} must be ordered within [{lo}, {hi}]")));
    }
    Ok(())
}

impl StreakParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.density.is_finite() && self.density >= 0.0) {
            return Err(Error::InvalidParams(format!("streak density {} must be >= 0", self.density)));
        }
        check_range("streak length", self.length_range, 1.0, 1e4)?;
        check_range("streak width", self.width_range, 0.5, 1e3)?;
        check_range("streak angle", self.angle_range, -90.0, 90.0)?;
        check_range("streak intensity", self.intensity_range, 0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaporParams {
    pub octaves: u32,
    /// Lattice spacing of the coarsest octave, in pixels.
    pub base_scale: f64,
    pub strength_range: [f64; 2],
    pub seed: u64,
}

impl Default for VaporParams {
    fn default() -> Self {
        Self { octaves: 2, base_scale: 32.0, strength_range: [0.2, 0.6], seed: 0 }
    }
}

impl VaporParams {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.octaves) {
            return Err(Error::InvalidParams(format!("vapor octaves {} must be in 1..=8", self.octaves)));
        }
        if !(self.base_scale.is_finite() && self.base_scale >= MIN_NOISE_CELL) {
            return Err(Error::InvalidParams(format!(
                "vapor base scale {} must be at least {MIN_NOISE_CELL}",
                self.base_scale
            )));
        }
        check_range("vapor strength", self.strength_range, 0.0, 1.0)
    }
}

fn check_render_size(h: usize, w: usize) -> Result<()> {
    if h < MIN_RENDER_SIZE || w < MIN_RENDER_SIZE {
        return Err(Error::InvalidParams(format!("render size {h}x{w} below {MIN_RENDER_SIZE}")));
    }
    Ok(())
}

fn sample(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Renders oriented streaks: sparse seed points, each stamped with an
/// anti-aliased line kernel of sampled length, width, angle and intensity.
/// Overlapping streaks combine by maximum.
pub fn render_streak_layer(h: usize, w: usize, p: &StreakParams) -> Result<(Field, Mask)> {
    check_render_size(h, w)?;
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let lambda = p.density * (h * w) as f64 / 1000.0;
    let count = if lambda > 0.0 {
        let poisson = Poisson::new(lambda).map_err(|e| Error::InvalidParams(e.to_string()))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };
    let mut layer = vec![0.0f64; h * w];
    for _ in 0..count {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let length = sample(&mut rng, p.length_range);
        let width = sample(&mut rng, p.width_range);
        let angle = sample(&mut rng, p.angle_range).to_radians();
        let intensity = sample(&mut rng, p.intensity_range);
        stamp_streak(&mut layer, h, w, (cx, cy), length, width, angle, intensity);
    }
    let mask = layer.iter().map(|&v| v > MASK_THRESHOLD).collect();
    Ok((Field::new(h, w, layer)?, Mask::new(h, w, mask)?))
}

#[allow(clippy::too_many_arguments)]
fn stamp_streak(layer: &mut [f64], h: usize, w: usize, center: (f64, f64), length: f64, width: f64, angle: f64, intensity: f64) {
    let (sin, cos) = angle.sin_cos();
    let half_len = length / 2.0 + 0.5;
    let half_wid = width / 2.0 + 0.5;
    let ext_x = half_len * sin.abs() + half_wid * cos.abs();
    let ext_y = half_len * cos.abs() + half_wid * sin.abs();
    let (cx, cy) = center;
    let c0 = (cx - ext_x).floor().max(0.0) as usize;
    let c1 = ((cx + ext_x).ceil() as usize).min(w);
    let r0 = (cy - ext_y).floor().max(0.0) as usize;
    let r1 = ((cy + ext_y).ceil() as usize).min(h);
    for r in r0..r1 {
        let dy = r as f64 + 0.5 - cy;
        for c in c0..c1 {
            let dx = c as f64 + 0.5 - cx;
            let along = dx * sin + dy * cos;
            let across = dx * cos - dy * sin;
            let profile = (half_len - along.abs()).clamp(0.0, 1.0) * (half_wid - across.abs()).clamp(0.0, 1.0);
            let v = intensity * profile;
            let slot = &mut layer[r * w + c];
            if v > *slot {
                *slot = v;
            }
        }
    }
}

/// Screen blend of a single-channel layer over every channel of `j`:
/// `1 - (1 - j)(1 - layer)`, evaluated as `j + layer (1 - j)`.
pub fn screen_blend(j: &Image, layer: &Field) -> Result<Image> {
    ensure_same_dims("screen blend", j.dims(), layer.dims())?;
    let data = j
        .data()
        .chunks_exact(3)
        .zip(layer.data())
        .flat_map(|(px, &l)| px.iter().map(move |&v| v + l * (1.0 - v)))
        .collect();
    Image::from_clamped(j.height(), j.width(), data)
}

/// Veil of vapor density `v` toward the atmosphere light: `(1 - v) j + v a`.
pub fn veil(j: &Image, v: &Field, a: AtmosphereLight) -> Result<Image> {
    ensure_same_dims("veil", j.dims(), v.dims())?;
    let a = a.rgb();
    let data = j
        .data()
        .chunks_exact(3)
        .zip(v.data())
        .flat_map(|(px, &d)| (0..3).map(move |c| (1.0 - d) * px[c] + d * a[c]))
        .collect();
    Image::from_clamped(j.height(), j.width(), data)
}

/// Bilinearly interpolated lattice noise in `[0, 1]` with lattice spacing `cell`.
fn value_noise(h: usize, w: usize, cell: f64, rng: &mut impl Rng) -> Vec<f64> {
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = r as f64 / cell;
        let (y0, fy) = (y.floor() as usize, y.fract());
        for c in 0..w {
            let x = c as f64 / cell;
            let (x0, fx) = (x.floor() as usize, x.fract());
            let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

pub(crate) fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with edge clamping; preserves constants exactly up to rounding.
fn gaussian_blur(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let k = gaussian_kernel(sigma, radius);
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * data[r * w + (c + i).saturating_sub(radius).min(w - 1)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[(r + i).saturating_sub(radius).min(h - 1) * w + c])
                .sum();
        }
    }
    out
}

/// Smooth vapor density: octaves of value noise (halving lattice spacing and
/// amplitude per octave, spacing floored at 8 px), Gaussian smoothed, scaled
/// by a strength drawn from `strength_range`.
pub fn render_vapor_map(h: usize, w: usize, p: &VaporParams) -> Result<Field> {
    check_render_size(h, w)?;
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let strength = sample(&mut rng, p.strength_range);
    let mut acc = vec![0.0; h * w];
    let mut total = 0.0;
    for o in 0..p.octaves {
        let amp = 0.5f64.powi(o as i32);
        let cell = (p.base_scale / 2f64.powi(o as i32)).max(MIN_NOISE_CELL);
        let n = value_noise(h, w, cell, &mut rng);
        acc.iter_mut().zip(&n).for_each(|(a, v)| *a += amp * v);
        total += amp;
    }
    let smooth = gaussian_blur(&acc, h, w, VAPOR_SIGMA);
    Field::from_clamped(h, w, smooth.into_iter().map(|v| strength * v / total).collect())
}

/// Default split of transmission between streaks and vapor.
pub const DEFAULT_ALPHA: f64 = 0.4;

/// Builds a scene that satisfies the formation model exactly, with
/// `Ts = (1 - alpha)(1 - s)` and `Tv = alpha (1 - v)` for streak layer `s`
/// and vapor density `v`.
pub fn make_model_scene(j: &Image, sp: &StreakParams, vp: &VaporParams, a: AtmosphereLight, alpha: f64) -> Result<RainScene> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParams(format!("alpha {alpha} must be in (0, 1)")));
    }
    let (h, w) = j.dims();
    let (s, mask) = render_streak_layer(h, w, sp)?;
    let v = render_vapor_map(h, w, vp)?;
    scene_from_layers(j.clone(), &s, &v, mask, a, alpha)
}

/// [`make_model_scene`] with the streak layer and vapor density given.
pub fn scene_from_layers(j: Image, s: &Field, v: &Field, mask: Mask, a: AtmosphereLight, alpha: f64) -> Result<RainScene> {
    ensure_same_dims("streak layer", j.dims(), s.dims())?;
    ensure_same_dims("vapor map", j.dims(), v.dims())?;
    let ts = s.map(|x| (1.0 - alpha) * (1.0 - x));
    let tv = v.map(|x| alpha * (1.0 - x));
    RainScene::build(j, ts, tv, a, mask)
}

/// A procedural clean background: a two-colour gradient with a few flat
/// rectangles and discs and a little texture, all in `[0.05, 0.85]`.
pub fn procedural_background(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| -> [f64; 3] { [0; 3].map(|_| rng.random_range(0.05..0.85)) };
    let top = color(&mut rng);
    let bottom = color(&mut rng);
    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        let t = r as f64 / (h.max(2) - 1) as f64;
        for _ in 0..w {
            data.extend((0..3).map(|c| top[c] * (1.0 - t) + bottom[c] * t));
        }
    }
    let shapes = rng.random_range(3..8);
    for _ in 0..shapes {
        let fill = color(&mut rng);
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let ry = rng.random_range(0.1..0.35) * h as f64;
        let rx = rng.random_range(0.1..0.35) * w as f64;
        let disc = rng.random::<bool>();
        for r in 0..h {
            for c in 0..w {
                let dy = (r as f64 + 0.5 - cy) / ry;
                let dx = (c as f64 + 0.5 - cx) / rx;
                let inside = if disc { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    data[(r * w + c) * 3..(r * w + c) * 3 + 3].copy_from_slice(&fill);
                }
            }
        }
    }
    let cell = (h.min(w) as f64 / 8.0).max(2.0);
    let texture = value_noise(h, w, cell, &mut rng);
    for (px, t) in data.chunks_exact_mut(3).zip(texture) {
        px.iter_mut().for_each(|v| *v = (*v + 0.1 * (t - 0.5)).clamp(0.05, 0.85));
    }
    Image::new(h, w, data).expect("procedural background is in range")
}

/// Where clean backgrounds come from.
#[derive(Debug, Clone)]
pub enum Backgrounds {
    Procedural,
    Corpus(Vec<PathBuf>),
}

impl Backgrounds {
    /// Every `.png` file directly inside `dir`, sorted by name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        if files.is_empty() {
            return Err(Error::EmptyCorpus(dir.to_path_buf()));
        }
        files.sort();
        Ok(Self::Corpus(files))
    }

    /// A `size x size` background for entry `index`. Corpus images are
    /// cycled, upscaled if needed so the short side covers `size`, and
    /// randomly cropped.
    fn pick(&self, index: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
        match self {
            Self::Procedural => Ok(procedural_background(size, size, rng.next_u64())),
            Self::Corpus(files) => {
                let mut img = image::read_rgb(&files[index % files.len()])?;
                let short = img.height().min(img.width());
                if short < size {
                    let scale = size as f64 / short as f64;
                    let nh = ((img.height() as f64 * scale).ceil() as usize).max(size);
                    let nw = ((img.width() as f64 * scale).ceil() as usize).max(size);
                    img = img.resize(nh, nw);
                }
                let top = rng.random_range(0..=img.height() - size);
                let left = rng.random_range(0..=img.width() - size);
                img.crop(top, left, size, size)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blend,
    Scenes,
}

/// Everything that determines a generated dataset besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub kind: DatasetKind,
    pub size: usize,
    pub streak: StreakParams,
    pub vapor: VaporParams,
    /// Per-image atmosphere light gray level range; each channel gets a
    /// small independent jitter.
    pub atmosphere_range: [f64; 2],
    /// Transmission split; used by `scenes` only.
    pub alpha: f64,
    /// Clean image directory, or `None` for procedural backgrounds.
    pub clean_dir: Option<String>,
}

impl GeneratorParams {
    pub fn new(kind: DatasetKind, size: usize) -> Self {
        Self {
            kind,
            size,
            streak: StreakParams::default(),
            vapor: VaporParams::default(),
            atmosphere_range: [0.75, 0.95],
            alpha: DEFAULT_ALPHA,
            clean_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_render_size(self.size, self.size)?;
        self.streak.validate()?;
        self.vapor.validate()?;
        check_range("atmosphere range", self.atmosphere_range, 0.0, 1.0)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParams(format!("alpha {} must be in (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// One dataset entry; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rainy_path: String,
    pub clean_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atmosphere: Option<AtmosphereLight>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub global_seed: u64,
    pub generator_params: GeneratorParams,
    pub entries: Vec<ManifestEntry>,
}

/// File name of the manifest inside a dataset directory.
pub const MANIFEST_NAME: &str = "manifest.json";

/// A loaded dataset entry.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub rainy: Image,
    pub clean: Image,
    pub t_streak: Option<Field>,
    pub t_vapor: Option<Field>,
    pub mask: Option<Mask>,
    pub atmosphere: Option<AtmosphereLight>,
}

impl DatasetManifest {
    /// Writes `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_NAME);
        let json = serde_json::to_vec_pretty(self)?;
        fsutil::write_file(&path, &json)?;
        Ok(path)
    }

    /// Reads a manifest; `path` may be the file or its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(MANIFEST_NAME);
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Self = serde_json::from_slice(&bytes)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    /// Reads every entry, checking that per-entry dimensions agree.
    pub fn load_samples(&self, base: &Path) -> Result<Vec<Sample>> {
        self.entries.iter().map(|e| load_entry(base, e)).collect()
    }
}

fn load_entry(base: &Path, e: &ManifestEntry) -> Result<Sample> {
    let rainy = image::read_rgb(base.join(&e.rainy_path))?;
    let clean = image::read_rgb(base.join(&e.clean_path))?;
    ensure_same_dims(&e.rainy_path, rainy.dims(), clean.dims())?;
    let field = |p: &Option<String>| -> Result<Option<Field>> {
        p.as_ref()
            .map(|p| {
                let f = image::read_field(base.join(p))?;
                ensure_same_dims(p, rainy.dims(), f.dims())?;
                Ok(f)
            })
            .transpose()
    };
    let t_streak = field(&e.ts_path)?;
    let t_vapor = field(&e.tv_path)?;
    let mask = e
        .mask_path
        .as_ref()
        .map(|p| {
            let m = image::read_mask(base.join(p))?;
            ensure_same_dims(p, rainy.dims(), m.dims())?;
            Ok::<_, Error>(m)
        })
        .transpose()?;
    let name = Path::new(&e.rainy_path)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| e.rainy_path.clone());
    Ok(Sample { name, rainy, clean, t_streak, t_vapor, mask, atmosphere: e.atmosphere })
}

/// Seed of entry `index`: the first word of the ChaCha stream `index` keyed by `global_seed`.
pub fn entry_seed(global_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(global_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

fn sample_atmosphere(rng: &mut ChaCha8Rng, range: [f64; 2]) -> Result<AtmosphereLight> {
    let base = sample(rng, range);
    let jitter = [0; 3].map(|_| rng.random_range(-0.03..=0.03));
    AtmosphereLight::new([0, 1, 2].map(|c| (base + jitter[c]).clamp(0.0, 1.0)))
}

/// What one entry renders to, before it is written.
struct Rendered {
    rainy: Image,
    clean: Image,
    mask: Mask,
    atmosphere: AtmosphereLight,
    maps: Option<(Field, Field)>,
}

fn render_entry(bg: &Backgrounds, params: &GeneratorParams, index: usize, seed: u64) -> Result<Rendered> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = bg.pick(index, params.size, &mut rng)?;
    let sp = StreakParams { seed: rng.next_u64(), ..params.streak.clone() };
    let vp = VaporParams { seed: rng.next_u64(), ..params.vapor.clone() };
    let atmosphere = sample_atmosphere(&mut rng, params.atmosphere_range)?;
    let (h, w) = clean.dims();
    match params.kind {
        DatasetKind::Blend => {
            let (layer, mask) = render_streak_layer(h, w, &sp)?;
            let v = render_vapor_map(h, w, &vp)?;
            let rainy = screen_blend(&veil(&clean, &v, atmosphere)?, &layer)?;
            Ok(Rendered { rainy, clean, mask, atmosphere, maps: None })
        }
        DatasetKind::Scenes => {
            let scene = make_model_scene(&clean, &sp, &vp, atmosphere, params.alpha)?;
            Ok(Rendered {
                rainy: scene.rainy,
                clean: scene.background,
                mask: scene.streak_mask,
                atmosphere,
                maps: Some((scene.t_streak, scene.t_vapor)),
            })
        }
    }
}

/// Renders `count` entries into `out_dir` and writes the manifest last, so a
/// directory without `manifest.json` is an incomplete dataset.
pub fn make_dataset(
    bg: &Backgrounds,
    params: &GeneratorParams,
    count: usize,
    out_dir: impl AsRef<Path>,
    global_seed: u64,
) -> Result<DatasetManifest> {
    params.validate()?;
    let out = out_dir.as_ref();
    let mut subdirs = vec!["rainy", "clean", "mask"];
    if params.kind == DatasetKind::Scenes {
        subdirs.extend(["ts", "tv"]);
    }
    for d in &subdirs {
        fsutil::create_dir_all(out.join(d))?;
    }
    let mut entries = Vec::with_capacity(count);
    for index in 0..count {
        let seed = entry_seed(global_seed, index);
        let r = render_entry(bg, params, index, seed)?;
        let file = format!("{index:05}.png");
        let rel = |d: &str| format!("{d}/{file}");
        image::write_rgb8(out.join(rel("rainy")), &r.rainy)?;
        image::write_rgb8(out.join(rel("clean")), &r.clean)?;
        image::write_mask(out.join(rel("mask")), &r.mask)?;
        let (ts_path, tv_path) = match &r.maps {
            Some((ts, tv)) => {
                image::write_gray16(out.join(rel("ts")), ts)?;
                image::write_gray16(out.join(rel("tv")), tv)?;
                (Some(rel("ts")), Some(rel("tv")))
            }
            None => (None, None),
        };
        entries.push(ManifestEntry {
            rainy_path: rel("rainy"),
            clean_path: rel("clean"),
            ts_path,
            tv_path,
            mask_path: Some(rel("mask")),
            atmosphere: Some(r.atmosphere),
            seed,
        });
        log::debug!("entry {index} written (seed {seed})");
    }
    let manifest = DatasetManifest { global_seed, generator_params: params.clone(), entries };
    manifest.save(out)?;
    Ok(manifest)
}

/// Screen-blend training pairs: `rainy = screen_blend(veil(J, v, A), streaks)`.
pub fn make_blend_dataset(
    bg: &Backgrounds,
    count: usize,
    size: usize,
    sp: &StreakParams,
    vp: &VaporParams,
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<DatasetManifest> {
    let params = GeneratorParams { streak: sp.clone(), vapor: vp.clone(), ..GeneratorParams::new(DatasetKind::Blend, size) };
    make_dataset(bg, &params, count, out_dir, seed)
}

/// The scene an entry of a `scenes` dataset was rendered from, recomputed in
/// full precision (the files on disk are quantized).
pub fn regenerate_scene(params: &GeneratorParams, bg: &Backgrounds, index: usize, seed: u64) -> Result<RainScene> {
    let r = render_entry(bg, &GeneratorParams { kind: DatasetKind::Scenes, ..params.clone() }, index, seed)?;
    let (ts, tv) = r.maps.expect("scenes entries carry maps");
    RainScene::build(r.clean, ts, tv, r.atmosphere, r.mask)
}
