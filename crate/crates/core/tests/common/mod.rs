//! Independent reference implementations and fixtures shared by the
//! integration tests.
#![allow(dead_code)]

use derain::synth::*;
use derain::{AtmosphereLight, Field, Image, RainScene};
use rand::Rng;

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
    Image::new(h, w, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Transmission pair with `ts + tv <= 1` everywhere.
pub fn random_maps(rng: &mut impl Rng, h: usize, w: usize) -> (Field, Field) {
    let (mut ts, mut tv) = (Vec::with_capacity(h * w), Vec::with_capacity(h * w));
    for _ in 0..h * w {
        let t: f64 = rng.random();
        let split: f64 = rng.random();
        ts.push(t * split);
        tv.push(t * (1.0 - split));
    }
    (Field::new(h, w, ts).unwrap(), Field::new(h, w, tv).unwrap())
}

pub fn random_atmosphere(rng: &mut impl Rng) -> AtmosphereLight {
    AtmosphereLight::new([rng.random(), rng.random(), rng.random()]).unwrap()
}

/// The formation model written out per scalar.
pub fn compose_scalar(j: f64, ts: f64, tv: f64, a: f64) -> f64 {
    (ts + tv) * j + (1.0 - ts - tv) * a
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// PSNR straight from its definition, with the 100 dB cap.
pub fn psnr_oracle(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    let mut sq = 0.0;
    for i in 0..a.data().len() {
        let d = a.data()[i] - b.data()[i];
        sq += d * d;
    }
    let mse = sq / n;
    if mse < 1e-10 {
        100.0
    } else {
        -10.0 * mse.log10()
    }
}

/// SSIM by direct evaluation of every 11x11 window with a 2-D Gaussian
/// weight (sigma 1.5) normalized over the window, averaged over valid
/// positions and channels.
pub fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    const N: usize = 11;
    let (h, w) = a.dims();
    let mut weights = [[0.0f64; N]; N];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        for top in 0..=h - N {
            for left in 0..=w - N {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..N {
                    for j in 0..N {
                        let wt = weights[i][j] / total;
                        mx += wt * a.pixel(top + i, left + j)[ch];
                        my += wt * b.pixel(top + i, left + j)[ch];
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..N {
                    for j in 0..N {
                        let wt = weights[i][j] / total;
                        let dx = a.pixel(top + i, left + j)[ch] - mx;
                        let dy = b.pixel(top + i, left + j)[ch] - my;
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cov += wt * dx * dy;
                    }
                }
                acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

/// Writes a procedural dataset to a temporary directory and loads it back.
pub fn dataset(params: &GeneratorParams, count: usize, seed: u64) -> Vec<Sample> {
    let dir = tempfile::tempdir().unwrap();
    let m = make_dataset(&Backgrounds::Procedural, params, count, dir.path(), seed).unwrap();
    m.load_samples(dir.path()).unwrap()
}

pub fn scenes(size: usize, count: usize, seed: u64) -> Vec<Sample> {
    dataset(&GeneratorParams::new(DatasetKind::Scenes, size), count, seed)
}

/// A scene whose streaks are fully opaque (`Ts + Tv = 0` on the streak
/// mask), so every streak pixel shows the atmosphere light exactly.
pub fn opaque_streak_scene(size: usize, seed: u64, a: AtmosphereLight) -> RainScene {
    let alpha = DEFAULT_ALPHA;
    let (layer, mask) = (0..)
        .map(|k| render_streak_layer(size, size, &StreakParams { seed: seed + 1000 * k, ..StreakParams::default() }).unwrap())
        .find(|(_, m)| !m.is_empty())
        .unwrap();
    let v = render_vapor_map(size, size, &VaporParams { seed: seed ^ 0x5a5a, ..VaporParams::default() }).unwrap();
    let opaque = |i: usize, t: f64| if mask.data()[i] { 0.0 } else { t };
    let n = size * size;
    let ts = Field::new(size, size, (0..n).map(|i| opaque(i, (1.0 - alpha) * (1.0 - layer.data()[i]))).collect()).unwrap();
    let tv = Field::new(size, size, (0..n).map(|i| opaque(i, alpha * (1.0 - v.data()[i]))).collect()).unwrap();
    RainScene::build(procedural_background(size, size, seed), ts, tv, a, mask).unwrap()
}

pub fn to_sample(name: String, s: RainScene) -> Sample {
    Sample {
        name,
        rainy: s.rainy,
        clean: s.background,
        t_streak: Some(s.t_streak),
        t_vapor: Some(s.t_vapor),
        mask: Some(s.streak_mask),
        atmosphere: Some(s.atmosphere),
    }
}
