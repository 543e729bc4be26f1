//! Inference: estimate the transmission maps and atmosphere light of a rainy
//! image, recover the background, and evaluate restorations.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{self, AtmosphereLight, Field, Image, Mask};
use crate::metrics::{evaluate_pair, EvalResult};
use crate::nn::{anet_forward, checkpoint, snet_forward, vnet_forward, Arch, ParamSet, Tensor};
use crate::rain_model::{recover_background, RainScene};
use crate::synth::{regenerate_scene, Backgrounds, DatasetKind, DatasetManifest, Sample};
use crate::training::{detect_rain_pixels, extract_atmosphere_label, Trained};

/// Spatial sizes fed to SNet must be multiples of this.
pub const SIZE_MULTIPLE: usize = 4;

/// Checkpoint file name of each network inside a model directory.
pub fn checkpoint_name(arch: Arch) -> &'static str {
    match arch {
        Arch::Snet => "snet.ckpt",
        Arch::Vnet => "vnet.ckpt",
        Arch::Anet => "anet.ckpt",
    }
}

/// A trained network trio. Without VNet the vapor map is zero; without ANet
/// the atmosphere light is taken from the brightest detected rain pixel.
#[derive(Debug, Clone)]
pub struct Model {
    pub snet: ParamSet,
    pub vnet: Option<ParamSet>,
    pub anet: Option<ParamSet>,
    pub eps: f64,
}

impl Model {
    pub fn new(snet: ParamSet, vnet: Option<ParamSet>, anet: Option<ParamSet>, eps: f64) -> Result<Self> {
        snet.expect_arch(Arch::Snet)?;
        if let Some(v) = &vnet {
            v.expect_arch(Arch::Vnet)?;
        }
        if let Some(a) = &anet {
            a.expect_arch(Arch::Anet)?;
        }
        Ok(Self { snet, vnet, anet, eps })
    }

    pub fn from_trained(t: &Trained) -> Result<Self> {
        Self::new(t.snet.clone(), t.vnet.clone(), t.anet.clone(), t.report.train_config.eps)
    }

    /// Loads `snet.ckpt` and, when present, `vnet.ckpt` and `anet.ckpt`.
    pub fn load(dir: impl AsRef<Path>, eps: f64) -> Result<Self> {
        let dir = dir.as_ref();
        let optional = |arch: Arch| -> Result<Option<ParamSet>> {
            let path = dir.join(checkpoint_name(arch));
            if path.exists() {
                Ok(Some(checkpoint::load(&path)?))
            } else {
                log::info!("{} not found; running without it", path.display());
                Ok(None)
            }
        };
        let snet = checkpoint::load(dir.join(checkpoint_name(Arch::Snet)))?;
        Self::new(snet, optional(Arch::Vnet)?, optional(Arch::Anet)?, eps)
    }

    /// Writes each present network to `dir`; returns the written file names.
    pub fn save(&self, dir: impl AsRef<Path>, train_seed: Option<u64>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        crate::fsutil::create_dir_all(dir)?;
        let mut names = Vec::new();
        for p in [Some(&self.snet), self.vnet.as_ref(), self.anet.as_ref()].into_iter().flatten() {
            let name = checkpoint_name(p.arch());
            checkpoint::save(dir.join(name), p, train_seed)?;
            names.push(name.to_string());
        }
        Ok(names)
    }
}

/// A restored background together with the maps that produced it.
#[derive(Debug, Clone)]
pub struct Restoration {
    pub background: Image,
    pub t_streak: Field,
    pub t_vapor: Field,
    pub atmosphere: AtmosphereLight,
    /// Recovery with the streak map alone (vapor map zero).
    pub streak_only: Image,
}

impl Restoration {
    /// `|I - J_streak_only|`: what removing the streaks took away.
    pub fn removed_streak(&self, rainy: &Image) -> Image {
        abs_diff(rainy, &self.streak_only)
    }

    /// `|J_streak_only - J|`: what additionally removing the vapor took away.
    pub fn removed_vapor(&self) -> Image {
        abs_diff(&self.streak_only, &self.background)
    }
}

fn abs_diff(a: &Image, b: &Image) -> Image {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
    Image::from_clamped(a.height(), a.width(), data).expect("dimensions come from a valid image")
}

fn padded_len(n: usize) -> usize {
    n.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE
}

/// Mirror index about the edge pixel, as in the network's reflect padding.
fn mirror(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let j = i % period;
    if j < len {
        j
    } else {
        period - j
    }
}

/// Extends `img` at the bottom and right by reflection to multiples of
/// [`SIZE_MULTIPLE`].
pub fn pad_reflect(img: &Image) -> Image {
    let (h, w) = img.dims();
    let (ph, pw) = (padded_len(h), padded_len(w));
    if (ph, pw) == (h, w) {
        return img.clone();
    }
    let mut data = Vec::with_capacity(ph * pw * 3);
    for r in 0..ph {
        for c in 0..pw {
            data.extend_from_slice(&img.pixel(mirror(r, h), mirror(c, w)));
        }
    }
    Image::new(ph, pw, data).expect("values copied from a valid image")
}

/// Atmosphere light from the brightest rain pixel, falling back to the
/// brightest pixel of the image when no rain pixel is detected.
pub fn label_atmosphere(img: &Image, mask: Option<&Mask>) -> Result<AtmosphereLight> {
    let rain = detect_rain_pixels(img, mask);
    match extract_atmosphere_label(img, &rain) {
        Err(Error::NoRainPixels) => {
            let (h, w) = img.dims();
            extract_atmosphere_label(img, &Mask::new(h, w, vec![true; h * w])?)
        }
        other => other,
    }
}

/// Recovers the background from given maps, also computing the
/// streak-only restoration used for the removed-layer visualizations.
pub fn restore_with_maps(rainy: &Image, t_streak: Field, t_vapor: Field, atmosphere: AtmosphereLight, eps: f64) -> Result<Restoration> {
    let background = recover_background(rainy, &t_streak, &t_vapor, atmosphere, eps)?;
    let zero = Field::filled(rainy.height(), rainy.width(), 0.0);
    let streak_only = recover_background(rainy, &t_streak, &zero, atmosphere, eps)?;
    Ok(Restoration { background, t_streak, t_vapor, atmosphere, streak_only })
}

/// Derains one image of any size. `mask` is only consulted by models without
/// ANet, to locate rain pixels for the atmosphere label.
pub fn derain(model: &Model, rainy: &Image, mask: Option<&Mask>) -> Result<Restoration> {
    let (h, w) = rainy.dims();
    let padded = pad_reflect(rainy);
    let x = Tensor::from_images(&[&padded])?;
    let ts = snet_forward(&x, &model.snet)?;
    let tv = match &model.vnet {
        Some(v) => Some(vnet_forward(&x, &ts, v)?),
        None => None,
    };
    let atmosphere = match &model.anet {
        Some(a) => AtmosphereLight::new(anet_forward(&x, a)?.data().try_into().expect("ANet emits 3 values"))?,
        None => label_atmosphere(rainy, mask)?,
    };
    let t_streak = ts.to_field(0)?.crop(0, 0, h, w)?;
    let t_vapor = match tv {
        Some(tv) => tv.to_field(0)?.crop(0, 0, h, w)?,
        None => Field::filled(h, w, 0.0),
    };
    restore_with_maps(rainy, t_streak, t_vapor, atmosphere, model.eps)
}

/// Restores every sample and scores it against its clean image.
pub fn evaluate_model(model: &Model, samples: &[Sample]) -> Result<EvalResult> {
    let rows = samples
        .iter()
        .map(|s| {
            let r = derain(model, &s.rainy, s.mask.as_ref())?;
            evaluate_pair(&s.name, &r.background, &s.clean)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_rows(rows))
}

/// The full-precision scenes of a `scenes` manifest, with entry file names.
pub fn manifest_scenes(manifest: &DatasetManifest, base: &Path) -> Result<Vec<(String, RainScene)>> {
    let params = &manifest.generator_params;
    if params.kind != DatasetKind::Scenes {
        return Err(Error::InvalidParams("oracle maps need a `scenes` manifest".into()));
    }
    let bg = match &params.clean_dir {
        Some(d) => Backgrounds::from_dir(base.join(d))?,
        None => Backgrounds::Procedural,
    };
    manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let name = Path::new(&e.rainy_path).file_name().map_or_else(|| e.rainy_path.clone(), |n| n.to_string_lossy().into_owned());
            Ok((name, regenerate_scene(params, &bg, i, e.seed)?))
        })
        .collect()
}

/// File stem for outputs derived from `name`.
pub fn stem(name: &str) -> String {
    Path::new(name).file_stem().map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned())
}

/// Writes `out/<stem>.png` and, with `dump_maps`, the maps and removed
/// layers under `out/maps/`. Returns the restored image path.
pub fn write_restoration(out: &Path, name: &str, rainy: &Image, r: &Restoration, dump_maps: bool) -> Result<PathBuf> {
    let stem = stem(name);
    let path = out.join(format!("{stem}.png"));
    image::write_rgb8(&path, &r.background)?;
    if dump_maps {
        let maps = out.join("maps");
        crate::fsutil::create_dir_all(&maps)?;
        image::write_gray16(maps.join(format!("{stem}_ts.png")), &r.t_streak)?;
        image::write_gray16(maps.join(format!("{stem}_tv.png")), &r.t_vapor)?;
        let [a0, a1, a2] = r.atmosphere.rgb();
        crate::fsutil::write_file(maps.join(format!("{stem}_a.txt")), format!("{a0} {a1} {a2}\n").as_bytes())?;
        image::write_rgb8(maps.join(format!("{stem}_removed_streak.png")), &r.removed_streak(rainy))?;
        image::write_rgb8(maps.join(format!("{stem}_removed_vapor.png")), &r.removed_vapor())?;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, ArchConfig};

    #[test]
    fn pad_reflect_mirrors_edges() {
        let data: Vec<f64> = (0..5 * 3).map(|i| i as f64 / 20.0).collect();
        let img = Image::new(1, 5, data).unwrap();
        let p = pad_reflect(&img);
        assert_eq!(p.dims(), (4, 8));
        assert_eq!(p.pixel(0, 5), img.pixel(0, 3));
        assert_eq!(p.pixel(0, 7), img.pixel(0, 1));
        assert_eq!(p.pixel(3, 2), img.pixel(0, 2));
        let even = Image::filled(8, 4, [0.2; 3]);
        assert_eq!(pad_reflect(&even), even);
    }

    #[test]
    fn derain_keeps_odd_dimensions() {
        let cfg = ArchConfig::reduced();
        let model = Model::new(
            init_params("snet", &cfg, 1).unwrap(),
            Some(init_params("vnet", &cfg, 1).unwrap()),
            Some(init_params("anet", &cfg, 1).unwrap()),
            0.05,
        )
        .unwrap();
        let img = Image::filled(21, 13, [0.4, 0.5, 0.6]);
        let r = derain(&model, &img, None).unwrap();
        assert_eq!(r.background.dims(), (21, 13));
        assert_eq!(r.t_streak.dims(), (21, 13));
        for (s, v) in r.t_streak.data().iter().zip(r.t_vapor.data()) {
            assert!(*s > 0.0 && s + v <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn model_rejects_swapped_networks() {
        let cfg = ArchConfig::reduced();
        let a = init_params("anet", &cfg, 0).unwrap();
        assert!(matches!(Model::new(a.clone(), None, None, 0.05), Err(Error::ArchMismatch { .. })));
        let s = init_params("snet", &cfg, 0).unwrap();
        assert!(matches!(Model::new(s, Some(a), None, 0.05), Err(Error::ArchMismatch { .. })));
    }

    #[test]
    fn label_fallback_uses_whole_image() {
        let mut img = Image::filled(12, 12, [0.3; 3]);
        img.set_pixel(4, 4, [0.5, 0.6, 0.7]);
        let a = label_atmosphere(&img, Some(&Mask::empty(12, 12))).unwrap();
        assert_eq!(a.rgb(), [0.5, 0.6, 0.7]);
    }
}
