//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! The desk training criteria read `configs/desk.conf` and take about half an
//! hour on one core.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::*;
use derain::config::RunConfig;
use derain::metrics::{evaluate_pair, psnr, ssim, EvalResult};
use derain::nn::gradcheck::{check, generic_point, LeafCheck};
use derain::nn::layers::spp;
use derain::nn::nets::{anet, snet, vnet};
use derain::nn::{channel_shuffle, init_params, sdw_conv, ArchConfig, Bound, Graph, ParamSet, Tensor};
use derain::pipeline::{self, evaluate_model, Model};
use derain::synth::{DatasetKind, Sample};
use derain::training::{anet_objective, detect_rain_pixels, extract_atmosphere_label, joint_train, pretrain_anet, pretrain_snet, snet_objective, total_objective, AtmosphereSource};
use derain::{image, recover_background, AtmosphereLight, Image, RainScene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn round_trip() -> Outcome {
    let started = Instant::now();
    let eps = derain::DEFAULT_EPS;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(16..=64), rng.random_range(16..=64));
        let j = random_image(&mut rng, h, w);
        let (ts, tv) = random_maps(&mut rng, h, w);
        let a = random_atmosphere(&mut rng);
        let s = RainScene::build(j, ts, tv, a, derain::Mask::empty(h, w)).unwrap();
        let back = recover_background(&s.rainy, &s.t_streak, &s.t_vapor, a, eps).unwrap();
        for p in 0..h * w {
            if s.t_streak.data()[p] + s.t_vapor.data()[p] >= eps {
                for c in 0..3 {
                    worst = worst.max((back.data()[3 * p + c] - s.background.data()[3 * p + c]).abs());
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(worst < 1e-5 && secs < 10.0, format!("max error {worst:.2e} (< 1e-5), {secs:.2} s (< 10 s)"))
}

fn atmosphere_labels() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dir = tempfile::tempdir().unwrap();
    let (mut exact, mut worst_png) = (true, 0.0f64);
    for i in 0..50 {
        let a = AtmosphereLight::new([rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)]).unwrap();
        let s = opaque_streak_scene(48, i, a);
        let rain = detect_rain_pixels(&s.rainy, Some(&s.streak_mask));
        exact &= extract_atmosphere_label(&s.rainy, &rain).unwrap() == a;
        let path = dir.path().join(format!("{i}.png"));
        image::write_rgb8(&path, &s.rainy).unwrap();
        let stored = image::read_rgb(&path).unwrap();
        let label = extract_atmosphere_label(&stored, &rain).unwrap();
        for (x, y) in label.rgb().iter().zip(a.rgb()) {
            worst_png = worst_png.max((x - y).abs());
        }
    }
    outcome(exact && worst_png <= 1.0 / 255.0, format!("exact in float: {exact}; after PNG max error {worst_png:.2e} (<= 1/255)"))
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Largest relative error and skipped elements over the leaves, where the
/// leaves are the parameters of `nets` in order.
fn gradient_check(nets: &[&ParamSet], build: impl Fn(&mut Graph, &[Bound]) -> derain::Result<derain::nn::Var>) -> (f64, usize, usize) {
    let leaves: Vec<Tensor> = nets.iter().flat_map(|p| p.tensors().iter().cloned()).collect();
    let reports: Vec<LeafCheck> = check(
        &leaves,
        |g, vars| {
            let mut bound = Vec::new();
            let mut rest = vars;
            for p in nets {
                let (mine, tail) = rest.split_at(p.len());
                bound.push(Bound::from_vars(p, mine.to_vec())?);
                rest = tail;
            }
            build(g, &bound)
        },
        1e-3,
        None,
        1e-6,
    )
    .unwrap();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let skipped_ok = reports.iter().filter(|r| r.skipped <= (r.checked + r.skipped) / 10).count();
    let skipped: usize = reports.iter().map(|r| r.skipped).sum();
    (worst, skipped, reports.len() - skipped_ok)
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let cfg = ArchConfig::reduced();
    let net = |id: &str, seed| generic_point(&init_params(id, &cfg, seed).unwrap(), 0.05, seed + 100).unwrap();
    let (s, v, a) = (net("snet", 1), net("vnet", 2), net("anet", 3));
    let sizes = [s.num_scalars(), v.num_scalars(), a.num_scalars()];
    let x = random_tensor(&[1, 3, 16, 16], 0.0, 1.0, 4);
    let j = random_tensor(&[1, 3, 16, 16], 0.0, 1.0, 5);
    let label = random_tensor(&[1, 3], 0.5, 1.0, 6);
    let (lambda1, lambda2, eps) = (0.01, 1.0, derain::DEFAULT_EPS);

    let la = gradient_check(&[&a], |g, b| {
        let xi = g.input(x.clone());
        let pred = anet(g, &b[0], xi)?;
        let l = g.input(label.clone());
        anet_objective(g, pred, l)
    });
    let ls = gradient_check(&[&s, &a], |g, b| {
        let xi = g.input(x.clone());
        let ts = snet(g, &b[0], xi)?;
        let light = anet(g, &b[1], xi)?;
        let map = g.broadcast_spatial(light, 16, 16)?;
        let j_hat = g.recover(xi, ts, None, map, eps)?;
        let target = g.input(j.clone());
        snet_objective(g, j_hat, target)
    });
    let lt = gradient_check(&[&s, &v, &a], |g, b| {
        let xi = g.input(x.clone());
        let ts = snet(g, &b[0], xi)?;
        let tv = vnet(g, &b[1], xi, ts)?;
        let light = anet(g, &b[2], xi)?;
        let map = g.broadcast_spatial(light, 16, 16)?;
        let j_hat = g.recover(xi, ts, Some(tv), map, eps)?;
        let target = g.input(j.clone());
        total_objective(g, j_hat, target, lambda1, lambda2)
    });
    let secs = started.elapsed().as_secs_f64();
    let worst = la.0.max(ls.0).max(lt.0);
    let skipped = la.1 + ls.1 + lt.1;
    let bad_leaves = la.2 + ls.2 + lt.2;
    let pass = sizes.iter().all(|&n| n <= 5000) && worst < 1e-3 && bad_leaves == 0 && secs < 300.0;
    outcome(
        pass,
        format!(
            "params snet/vnet/anet {sizes:?} (<= 5000); max rel error anet {:.1e}, snet {:.1e}, total {:.1e} (< 1e-3); {skipped} kink elements skipped; {secs:.0} s (< 300 s)",
            la.0, ls.0, lt.0
        ),
    )
}

fn permutations() -> Outcome {
    let mut ok = true;
    let mut cases = 0;
    for c in [4usize, 6, 12, 48] {
        let x = random_tensor(&[2, c, 3, 5], -1.0, 1.0, c as u64);
        for g in (1..=c).filter(|g| c % g == 0) {
            let y = channel_shuffle(&x, g).unwrap();
            let mut a: Vec<f64> = x.data().to_vec();
            let mut b: Vec<f64> = y.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            ok &= a == b;
            ok &= channel_shuffle(&y, c / g).unwrap() == x;
            cases += 1;
        }
    }
    let mut identity = Tensor::zeros(&[5, 1, 3, 3]);
    for ch in 0..5 {
        identity.data_mut()[ch * 9 + 4] = 1.0;
    }
    let x = random_tensor(&[2, 5, 9, 7], -2.0, 2.0, 3);
    let sdw_ok = sdw_conv(&x, &identity, 1).unwrap() == x;
    outcome(ok && sdw_ok, format!("{cases} shuffle cases bijective and inverted by C/g: {ok}; identity-kernel SDW exact: {sdw_ok}"))
}

fn spp_contract() -> Outcome {
    let cfg = ArchConfig::default();
    let p = init_params("vnet", &cfg, 7).unwrap();
    let c = cfg.vnet_channels;
    let want_c = c + cfg.spp_levels.len() * cfg.spp_channels;
    let mut ok = true;
    let mut shapes = Vec::new();
    for size in [32usize, 48] {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let x = g.input(random_tensor(&[1, c, size, size], 0.0, 1.0, size as u64));
        let y = spp(&mut g, &b, "spp", x, &cfg.spp_levels).unwrap();
        let shape = g.value(y).shape().to_vec();
        ok &= shape == [1, want_c, size, size];
        shapes.push(shape);
    }
    outcome(ok, format!("levels {:?}, C={c}, C'={}: output shapes {shapes:?} (expect {want_c} channels)", cfg.spp_levels, cfg.spp_channels))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let (h, w) = (rng.random_range(11..40), rng.random_range(11..40));
        let a = random_image(&mut rng, h, w);
        let noise = rng.random_range(0.01..0.6);
        let data = a.data().iter().map(|v| (v + noise * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect();
        let b = Image::new(h, w, data).unwrap();
        dp = dp.max((psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs());
        ds = ds.max((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs());
    }
    let a = random_image(&mut rng, 16, 16);
    let same = psnr(&a, &a).unwrap() == 100.0 && ssim(&a, &a).unwrap() == 1.0;
    outcome(dp < 1e-6 && ds < 1e-4 && same, format!("max |dPSNR| {dp:.1e} dB (< 1e-6), max |dSSIM| {ds:.1e} (< 1e-4); identical images 100 dB / 1.0: {same}"))
}

fn digest_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt" || x == "json") && !p.ends_with("timing.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let conf = "train.patch = 32\ntrain.batch = 4\ntrain.epochs_anet = 2\ntrain.epochs_snet = 2\ntrain.epochs_joint = 2\ntrain.flips = true\n";
    fs::write(p.join("toy.conf"), conf).unwrap();
    let run = |args: &[&str]| {
        let st = Command::new(env!("CARGO_BIN_EXE_derain")).args(args).current_dir(p).output().unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    };
    run(&["synth", "scenes", "--count", "20", "--size", "48", "--seed", "3", "--out", "data"]);
    for out in ["a", "b"] {
        run(&["train", "--stage", "all", "--data", "data", "--config", "toy.conf", "--out", out, "--seed", "5"]);
    }
    let (a, b) = (digest_files(&p.join("a")), digest_files(&p.join("b")));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    outcome(a == b && a.len() == 4, format!("files {names:?} byte-identical across two runs: {}", a == b))
}

fn latency() -> Outcome {
    let cfg = ArchConfig::default();
    let p = |id| init_params(id, &cfg, 0).unwrap();
    let model = Model::new(p("snet"), Some(p("vnet")), Some(p("anet")), derain::DEFAULT_EPS).unwrap();
    let img = derain::synth::procedural_background(512, 512, 1);
    pipeline::derain(&model, &img, None).unwrap();
    let runs = 3;
    let started = Instant::now();
    for _ in 0..runs {
        pipeline::derain(&model, &img, None).unwrap();
    }
    let secs = started.elapsed().as_secs_f64() / runs as f64;
    outcome(secs < 1.0, format!("512x512 with all three networks: {secs:.3} s per image (< 1 s)"))
}

fn desk_config() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.conf");
    RunConfig::load(path).unwrap()
}

fn input_quality(samples: &[Sample]) -> EvalResult {
    EvalResult::from_rows(samples.iter().map(|s| evaluate_pair(&s.name, &s.rainy, &s.clean).unwrap()).collect())
}

/// Held-out scores of one seed's c1, c3 and full models, plus the full
/// model's networks with VNet still at initialization.
struct SeedScores {
    c1: EvalResult,
    c3: EvalResult,
    vnet_init: EvalResult,
    full: EvalResult,
}

/// Runs the stages by hand so that c3 is the full protocol before its joint
/// stage, as `train_protocol` would produce it.
fn train_seed(train: &[Sample], test: &[Sample], base: &RunConfig, seed: u64) -> SeedScores {
    let (arch, cfg) = (&base.arch, derain::training::TrainConfig { seed, ..base.train.clone() });
    let init = |id| init_params(id, arch, seed).unwrap();
    let started = Instant::now();
    let (s1, _, _) = pretrain_snet(train, init("snet"), AtmosphereSource::Labels, &cfg).unwrap();
    let c1 = evaluate_model(&Model::new(s1, None, None, cfg.eps).unwrap(), test).unwrap();
    let (a, _) = pretrain_anet(train, init("anet"), &cfg).unwrap();
    let (s3, a3, _) = pretrain_snet(train, init("snet"), AtmosphereSource::Finetune(a), &cfg).unwrap();
    let a3 = a3.unwrap();
    let c3 = evaluate_model(&Model::new(s3.clone(), None, Some(a3.clone()), cfg.eps).unwrap(), test).unwrap();
    let v0 = init("vnet");
    let vnet_init = evaluate_model(&Model::new(s3.clone(), Some(v0.clone()), Some(a3.clone()), cfg.eps).unwrap(), test).unwrap();
    let (s, v, a, _) = joint_train(train, s3, v0, a3, &cfg).unwrap();
    let full = evaluate_model(&Model::new(s, Some(v), Some(a), cfg.eps).unwrap(), test).unwrap();
    eprintln!(
        "  seed {seed}: c1 {:.2} dB, c3 {:.2} dB, full {:.2} dB / {:.4} SSIM ({:.0} s)",
        c1.mean_psnr,
        c3.mean_psnr,
        full.mean_psnr,
        full.mean_ssim,
        started.elapsed().as_secs_f64()
    );
    SeedScores { c1, c3, vnet_init, full }
}

fn desk_training() -> (Outcome, Outcome, Outcome) {
    let cfg = desk_config();
    let gen = cfg.generator(DatasetKind::Scenes, 64);
    let train = dataset(&gen, 200, 1);
    let test = dataset(&gen, 40, 2);
    let rainy = input_quality(&test);
    let runs: Vec<SeedScores> = (0..3).map(|seed| train_seed(&train, &test, &cfg, seed)).collect();

    let full0 = &runs[0].full;
    let (dp, ds) = (full0.mean_psnr - rainy.mean_psnr, full0.mean_ssim - rainy.mean_ssim);
    let trend = outcome(
        dp >= 3.0 && ds >= 0.05,
        format!(
            "rainy {:.2} dB / {:.4} -> full {:.2} dB / {:.4}: +{dp:.2} dB (>= 3), +{ds:.4} SSIM (>= 0.05)",
            rainy.mean_psnr, rainy.mean_ssim, full0.mean_psnr, full0.mean_ssim
        ),
    );

    let mean = |f: fn(&SeedScores) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (c1, c3, full, v0) = (mean(|r| r.c1.mean_psnr), mean(|r| r.c3.mean_psnr), mean(|r| r.full.mean_psnr), mean(|r| r.vnet_init.mean_psnr));
    let ordering = outcome(
        full >= c3 - 0.1 && c3 > c1 + 0.5,
        format!("3-seed mean PSNR c1 {c1:.2}, c3 {c3:.2}, full {full:.2} dB: full >= c3 - 0.1 and c3 > c1 + 0.5"),
    );
    let joint = outcome(
        full >= v0 && full >= c1,
        format!("3-seed mean PSNR with VNet at init {v0:.2} dB -> after joint stage {full:.2} dB; full >= c1"),
    );
    (trend, ordering, joint)
}

fn main() {
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut report = |label: &str, o: Outcome| {
        println!("{label} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((label.to_string(), o));
    };
    report("criterion 1 (round trip)", round_trip());
    report("criterion 2 (atmosphere labels)", atmosphere_labels());
    report("criterion 3 (gradient suite)", gradients());
    report("criterion 4 (permutations)", permutations());
    report("criterion 5 (pyramid pooling)", spp_contract());
    report("criterion 8 (metrics oracle)", metrics_oracle());
    report("criterion 9 (determinism)", determinism());
    report("criterion 10 (latency)", latency());
    let (trend, ordering, joint) = desk_training();
    report("criterion 6 (desk training)", trend);
    report("criterion 7 (ablation ordering)", ordering);
    report("joint stage check", joint);
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(l, _)| l.as_str()).collect();
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
