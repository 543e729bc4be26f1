mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::*;
use derain::synth::*;
use derain::training::detect_rain_pixels;
use derain::{recover_background, AtmosphereLight, Field, Image, Mask};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

/// Bounding boxes `(rows, cols, touches_border)` of the 8-connected
/// components of `mask`.
fn components(mask: &Mask) -> Vec<(usize, usize, bool)> {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !mask.data()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let (mut r0, mut r1, mut c0, mut c1) = (h, 0, w, 0);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            (r0, r1, c0, c1) = (r0.min(r), r1.max(r), c0.min(c), c1.max(c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask.data()[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        let border = r0 == 0 || c0 == 0 || r1 == h - 1 || c1 == w - 1;
        out.push((r1 - r0 + 1, c1 - c0 + 1, border));
    }
    out
}

#[test]
fn vertical_streaks_have_expected_extent() {
    let mut checked = 0;
    for seed in 0..20 {
        let p = StreakParams {
            density: 0.5,
            length_range: [9.0, 9.0],
            width_range: [1.0, 1.0],
            angle_range: [0.0, 0.0],
            intensity_range: [0.8, 0.8],
            seed,
        };
        let (_, mask) = render_streak_layer(64, 64, &p).unwrap();
        for (rows, cols, border) in components(&mask) {
            // streaks cut by the frame or merged with a neighbour are not single streaks
            if border || cols > 3 {
                assert!(border || rows > 9, "wide component of {rows}x{cols} is not two streaks");
                continue;
            }
            assert!(rows >= 9, "streak only {rows} rows tall");
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn layer_values_and_mask_threshold() {
    let p = StreakParams { seed: 4, ..StreakParams::default() };
    let (layer, mask) = render_streak_layer(48, 40, &p).unwrap();
    for (v, m) in layer.data().iter().zip(mask.data()) {
        assert!((0.0..=1.0).contains(v));
        assert_eq!(*m, *v > MASK_THRESHOLD);
    }
    assert!(!mask.is_empty());
}

fn mean_adjacent_difference(f: &Field) -> f64 {
    let (h, w) = f.dims();
    let (mut sum, mut n) = (0.0, 0usize);
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                sum += (f.get(r, c) - f.get(r, c + 1)).abs();
                n += 1;
            }
            if r + 1 < h {
                sum += (f.get(r, c) - f.get(r + 1, c)).abs();
                n += 1;
            }
        }
    }
    sum / n as f64
}

#[test]
fn single_octave_vapor_is_bounded_and_smooth() {
    let p = VaporParams { octaves: 1, base_scale: 48.0, strength_range: [0.7, 0.7], seed: 2 };
    let v = render_vapor_map(48, 48, &p).unwrap();
    let (lo, hi) = v.min_max();
    assert!(lo >= 0.0 && hi <= 0.7, "range {lo}..{hi}");
    assert!(mean_adjacent_difference(&v) < 0.05);
    let zero = VaporParams { strength_range: [0.0, 0.0], ..p };
    assert!(render_vapor_map(48, 48, &zero).unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn transparent_scene_and_opaque_streak_examples() {
    let j = procedural_background(20, 20, 1);
    let a = AtmosphereLight::new([0.9, 0.8, 0.7]).unwrap();
    let ones = Field::filled(20, 20, 1.0);
    let zeros = Field::filled(20, 20, 0.0);
    let s = scene_from_layers(j.clone(), &ones, &zeros, Mask::empty(20, 20), a, 0.4).unwrap();
    assert!(s.t_streak.data().iter().all(|&t| t == 0.0));
    assert!(s.t_vapor.data().iter().all(|&t| (t - 0.4).abs() < 1e-15));
    for r in 0..20 {
        for c in 0..20 {
            for ch in 0..3 {
                let want = 0.4 * j.pixel(r, c)[ch] + 0.6 * a.rgb()[ch];
                assert!((s.rainy.pixel(r, c)[ch] - want).abs() < 1e-12);
            }
        }
    }
    let clear = scene_from_layers(j.clone(), &zeros, &zeros, Mask::empty(20, 20), a, 0.4).unwrap();
    assert!(max_abs_diff(clear.rainy.data(), j.data()) < 1e-12);
}

#[test]
fn generated_scenes_round_trip() {
    let params = GeneratorParams::new(DatasetKind::Scenes, 40);
    let bg = Backgrounds::Procedural;
    for index in 0..8 {
        let s = regenerate_scene(&params, &bg, index, entry_seed(17, index)).unwrap();
        assert!(s.consistency_error().unwrap() <= 1e-6);
        let back = recover_background(&s.rainy, &s.t_streak, &s.t_vapor, s.atmosphere, 0.05).unwrap();
        assert!(max_abs_diff(back.data(), s.background.data()) < 1e-5);
        let floor = params.alpha * (1.0 - params.vapor.strength_range[1]);
        for (a, b) in s.t_streak.data().iter().zip(s.t_vapor.data()) {
            assert!(a + b <= 1.0 + 1e-12 && a + b >= floor - 1e-12);
        }
    }
}

#[test]
fn detector_finds_bright_streaks_on_dark_background() {
    // sparse streaks, since the detector keeps at most the top 0.5% of pixels
    let (h, w) = (128, 128);
    let j = Image::filled(h, w, [0.1, 0.12, 0.15]);
    let (mut hits, mut total) = (0, 0);
    for seed in 0..10 {
        let sp = StreakParams { density: 0.15, intensity_range: [0.9, 0.9], seed, ..StreakParams::default() };
        let (layer, truth) = render_streak_layer(h, w, &sp).unwrap();
        let found = detect_rain_pixels(&screen_blend(&j, &layer).unwrap(), None);
        hits += found.data().iter().zip(truth.data()).filter(|(f, t)| **f && **t).count();
        total += truth.count();
    }
    assert!(total > 0);
    let recall = hits as f64 / total as f64;
    assert!(recall >= 0.5, "recall {recall} over {total} streak pixels");
}

fn hashes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "rainy", "clean", "mask", "ts", "tv"] {
        let Ok(entries) = fs::read_dir(dir.join(sub)) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_file() {
                out.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), Sha256::digest(fs::read(&p).unwrap()).to_vec());
            }
        }
    }
    out
}

#[test]
fn datasets_are_pure_functions_of_their_inputs() {
    let params = GeneratorParams::new(DatasetKind::Blend, 32);
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let bg = Backgrounds::Procedural;
    make_dataset(&bg, &params, 4, dirs[0].path(), 7).unwrap();
    make_dataset(&bg, &params, 4, dirs[1].path(), 7).unwrap();
    let m = make_dataset(&bg, &params, 6, dirs[2].path(), 7).unwrap();
    let (a, b, c) = (hashes(dirs[0].path()), hashes(dirs[1].path()), hashes(dirs[2].path()));
    assert_eq!(a, b);
    // each entry depends only on its own index, not on the dataset size
    assert_eq!(a["rainy/00003.png"], c["rainy/00003.png"]);
    assert_eq!(m.entries.len(), 6);

    let empty = tempfile::tempdir().unwrap();
    let m = make_dataset(&bg, &params, 0, empty.path(), 7).unwrap();
    assert!(m.entries.is_empty());
    let (loaded, _) = DatasetManifest::load(empty.path()).unwrap();
    assert_eq!(loaded, m);
}

#[test]
fn manifest_entries_reference_matching_files() {
    let dir = tempfile::tempdir().unwrap();
    let params = GeneratorParams::new(DatasetKind::Scenes, 24);
    let m = make_dataset(&Backgrounds::Procedural, &params, 3, dir.path(), 1).unwrap();
    let samples = m.load_samples(dir.path()).unwrap();
    for (e, s) in m.entries.iter().zip(&samples) {
        for p in [&e.rainy_path, &e.clean_path, e.ts_path.as_ref().unwrap(), e.tv_path.as_ref().unwrap(), e.mask_path.as_ref().unwrap()] {
            assert!(!Path::new(p).is_absolute());
            assert!(dir.path().join(p).is_file());
        }
        assert_eq!(s.t_streak.as_ref().unwrap().dims(), s.rainy.dims());
        assert_eq!(s.clean.dims(), (24, 24));
    }
}

#[test]
fn corpus_backgrounds_are_cropped_from_files() {
    let corpus = tempfile::tempdir().unwrap();
    derain::image::write_rgb8(corpus.path().join("a.png"), &procedural_background(20, 30, 1)).unwrap();
    let bg = Backgrounds::from_dir(corpus.path()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = make_blend_dataset(&bg, 2, 32, &StreakParams::default(), &VaporParams::default(), dir.path(), 3).unwrap();
    assert_eq!(m.entries.len(), 2);
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(Backgrounds::from_dir(empty.path()), Err(derain::Error::EmptyCorpus(_))));
}

#[test]
fn clear_weather_blend_is_the_identity() {
    let corpus = tempfile::tempdir().unwrap();
    derain::image::write_rgb8(corpus.path().join("a.png"), &procedural_background(32, 32, 5)).unwrap();
    let bg = Backgrounds::from_dir(corpus.path()).unwrap();
    let sp = StreakParams { density: 0.0, ..StreakParams::default() };
    let vp = VaporParams { strength_range: [0.0, 0.0], ..VaporParams::default() };
    let dir = tempfile::tempdir().unwrap();
    let m = make_blend_dataset(&bg, 3, 32, &sp, &vp, dir.path(), 1).unwrap();
    for s in m.load_samples(dir.path()).unwrap() {
        assert_eq!(s.rainy.data(), s.clean.data());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn screen_blend_is_commutative_and_monotone(j in 0.0f64..=1.0, l in 0.0f64..=1.0) {
        let blend = |x: f64, y: f64| screen_blend(&Image::filled(1, 1, [x; 3]), &Field::filled(1, 1, y)).unwrap().pixel(0, 0)[0];
        let (xy, yx) = (blend(j, l), blend(l, j));
        prop_assert!((xy - yx).abs() < 1e-15);
        prop_assert!(xy >= j.max(l) - 1e-15 && xy <= 1.0);
        prop_assert!((xy - (1.0 - (1.0 - j) * (1.0 - l))).abs() < 1e-15);
    }

    #[test]
    fn vapor_is_locally_homogeneous(seed in any::<u64>(), octaves in 1u32..=3, scale in 16.0f64..64.0, size in 16usize..64) {
        let p = VaporParams { octaves, base_scale: scale, strength_range: [0.0, 1.0], seed };
        let v = render_vapor_map(size, size + 3, &p).unwrap();
        prop_assert!(v.data().iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(mean_adjacent_difference(&v) < 0.05);
    }

    #[test]
    fn model_scenes_satisfy_the_formation_model(seed in any::<u64>(), alpha in 0.05f64..0.95) {
        let j = procedural_background(24, 24, seed);
        let sp = StreakParams { seed, ..StreakParams::default() };
        let vp = VaporParams { seed: seed ^ 1, ..VaporParams::default() };
        let s = make_model_scene(&j, &sp, &vp, AtmosphereLight::gray(0.85).unwrap(), alpha).unwrap();
        prop_assert!(s.consistency_error().unwrap() <= 1e-6);
        for (a, b) in s.t_streak.data().iter().zip(s.t_vapor.data()) {
            prop_assert!(a + b <= 1.0 + 1e-12);
            prop_assert!(a + b >= alpha * (1.0 - vp.strength_range[1]) - 1e-12);
        }
    }
}
