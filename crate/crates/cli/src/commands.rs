use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use derain::config::RunConfig;
use derain::metrics::{evaluate_dirs, evaluate_pair, EvalResult, EvalRow};
use derain::nn::{checkpoint, init_params, Arch, ParamSet};
use derain::pipeline::{self, checkpoint_name, manifest_scenes, restore_with_maps, write_restoration, Model};
use derain::synth::{make_dataset, Backgrounds, DatasetKind, DatasetManifest, Sample};
use derain::training::{joint_train, pretrain_anet, pretrain_snet, train_protocol, Ablation, AtmosphereSource, TrainReport};
use derain::{fsutil, image, Error};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::{AblateArgs, DerainArgs, EvalArgs, Kind, Stage, SynthArgs, TrainArgs};

pub const REPORT_NAME: &str = "train_report.json";
pub const TIMING_NAME: &str = "timing.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("missing checkpoint {0}; train the earlier stage first or pass --ablation to start from a fresh network")]
    MissingPrerequisite(PathBuf),
}

impl CliError {
    /// 1: configuration or usage, 2: I/O, 3: numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(Error::Json(_) | Error::Checkpoint(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value.ok_or_else(|| CliError::Usage(format!("{flag} is required (or set it in the config file)")))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn seed_or_default(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        log::info!("no --seed given; using 0");
        0
    })
}

fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let (manifest, base) = DatasetManifest::load(path)?;
    let samples = manifest.load_samples(&base)?;
    log::info!("loaded {} samples from {}", samples.len(), path.display());
    Ok(samples)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    fsutil::write_file(path, &bytes)?;
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = seed_or_default(a.seed);
    let out = required(a.out.or(cfg.paths.out.clone()), "--out")?;
    let kind = match a.kind {
        Kind::Blend => DatasetKind::Blend,
        Kind::Scenes => DatasetKind::Scenes,
    };
    let mut params = cfg.generator(kind, a.size);
    params.validate()?;
    let bg = match a.clean_dir.or(cfg.paths.clean_dir.clone()) {
        Some(dir) => {
            let bg = Backgrounds::from_dir(&dir)?;
            let abs = fs::canonicalize(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            params.clean_dir = Some(abs.to_string_lossy().into_owned());
            bg
        }
        None => Backgrounds::Procedural,
    };
    let manifest = make_dataset(&bg, &params, a.count, &out, seed)?;
    let name = format!("{kind:?}").to_lowercase();
    println!("wrote {} {name} entries of {}x{} to {}", manifest.entries.len(), a.size, a.size, out.display());
    Ok(())
}

/// The stored report of an earlier stage run into the same directory, if it
/// was produced with the same settings.
fn existing_report(out: &Path, fresh: &TrainReport) -> TrainReport {
    let stored = fs::read(out.join(REPORT_NAME)).ok().and_then(|b| serde_json::from_slice::<TrainReport>(&b).ok());
    match stored {
        Some(r) if r.seed == fresh.seed && r.train_config == fresh.train_config && r.arch_config == fresh.arch_config && r.ablation == fresh.ablation => r,
        _ => fresh.clone(),
    }
}

fn record_timing(out: &Path, stage: &str, seconds: f64) -> Result<()> {
    let path = out.join(TIMING_NAME);
    let mut map: Map<String, Value> = fs::read(&path).ok().and_then(|b| serde_json::from_slice(&b).ok()).unwrap_or_default();
    map.insert(stage.to_string(), Value::from(seconds));
    write_json(&path, &map)
}

/// A prerequisite network from `dir`. When absent it is freshly initialized
/// under an ablation run (and noted in the report), and an error otherwise.
fn prerequisite(dir: &Path, arch: Arch, cfg: &RunConfig, seed: u64, ablation: Option<Ablation>, report: &mut TrainReport) -> Result<ParamSet> {
    let path = dir.join(checkpoint_name(arch));
    if path.exists() {
        let p = checkpoint::load(&path)?;
        p.expect_arch(arch)?;
        if p.config() != &cfg.arch {
            return Err(Error::ArchMismatch {
                expected: format!("{} with the configured widths", arch.id()),
                found: format!("{} with different widths in {}", arch.id(), path.display()),
            }
            .into());
        }
        return Ok(p);
    }
    if ablation.is_none() {
        return Err(CliError::MissingPrerequisite(path));
    }
    log::warn!("{} not found; starting {} from fresh initialization", path.display(), arch.id());
    let stage = if arch == Arch::Anet { "anet" } else { "snet" };
    if !report.skipped_pretraining.iter().any(|s| s == stage) {
        report.skipped_pretraining.push(stage.into());
    }
    Ok(init_params(arch.id(), &cfg.arch, seed)?)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let seed = seed_or_default(a.seed);
    cfg.train.seed = seed;
    let data = required(a.data.or(cfg.paths.data.clone()), "--data")?;
    let out = required(a.out.or(cfg.paths.out.clone()), "--out")?;
    let prior = a.checkpoint.or(cfg.paths.checkpoint.clone()).unwrap_or_else(|| out.clone());
    let ablation = a.ablation.as_deref().map(Ablation::parse).transpose()?;
    match (a.stage, ablation) {
        (Stage::Anet, Some(Ablation::C1)) => return Err(CliError::Usage("ablation c1 has no ANet stage".into())),
        (Stage::Joint, Some(m)) if !m.uses_vnet() => {
            return Err(CliError::Usage(format!("ablation {} has no joint stage", m.id())));
        }
        _ => {}
    }
    let samples = load_samples(&data)?;
    let tc = &cfg.train;
    let fresh = TrainReport::new(tc, &cfg.arch, if a.stage == Stage::All { Some(ablation.unwrap_or(Ablation::Full)) } else { ablation });
    let mut report = existing_report(&out, &fresh);
    let started = Instant::now();
    let mut nets: Vec<ParamSet> = Vec::new();
    let stage_name = match a.stage {
        Stage::Anet => {
            let (p, r) = pretrain_anet(&samples, init_params("anet", &cfg.arch, seed)?, tc)?;
            report.stages.insert("anet".into(), r);
            nets.push(p);
            "anet"
        }
        Stage::Snet => {
            let source = match ablation {
                Some(Ablation::C1) => AtmosphereSource::Labels,
                other => {
                    let anet = prerequisite(&prior, Arch::Anet, &cfg, seed, other, &mut report)?;
                    if other == Some(Ablation::C2) {
                        AtmosphereSource::Frozen(anet)
                    } else {
                        AtmosphereSource::Finetune(anet)
                    }
                }
            };
            let (s, an, r) = pretrain_snet(&samples, init_params("snet", &cfg.arch, seed)?, source, tc)?;
            report.stages.insert("snet".into(), r);
            nets.push(s);
            nets.extend(an);
            "snet"
        }
        Stage::Joint => {
            let snet = prerequisite(&prior, Arch::Snet, &cfg, seed, ablation, &mut report)?;
            let anet = prerequisite(&prior, Arch::Anet, &cfg, seed, ablation, &mut report)?;
            let (s, v, an, r) = joint_train(&samples, snet, init_params("vnet", &cfg.arch, seed)?, anet, tc)?;
            report.stages.insert("joint".into(), r);
            nets.extend([s, v, an]);
            "joint"
        }
        Stage::All => {
            let t = train_protocol(&samples, &cfg.arch, tc, ablation.unwrap_or(Ablation::Full))?;
            report.stages.extend(t.report.stages);
            nets.push(t.snet);
            nets.extend(t.vnet);
            nets.extend(t.anet);
            "all"
        }
    };
    let seconds = started.elapsed().as_secs_f64();
    fsutil::create_dir_all(&out)?;
    for p in &nets {
        let name = checkpoint_name(p.arch());
        checkpoint::save(out.join(name), p, Some(seed))?;
        report.checkpoints.insert(p.arch_id().into(), name.into());
    }
    write_json(&out.join(REPORT_NAME), &report)?;
    record_timing(&out, stage_name, seconds)?;
    for (name, stage) in &report.stages {
        if let Some(last) = stage.epoch_losses.last() {
            println!("{name}: {} epochs, final loss {last:.6}", stage.epoch_losses.len());
        }
    }
    println!("checkpoints written to {} ({seconds:.1} s)", out.display());
    Ok(())
}

fn parse_modes(modes: &[String]) -> Result<Vec<Ablation>> {
    let mut out = Vec::new();
    for m in modes {
        let add: Vec<Ablation> = if m == "all" { Ablation::ALL.to_vec() } else { vec![Ablation::parse(m)?] };
        for a in add {
            if !out.contains(&a) {
                out.push(a);
            }
        }
    }
    Ok(out)
}

fn input_row(samples: &[Sample]) -> Result<EvalResult> {
    let rows = samples.iter().map(|s| evaluate_pair(&s.name, &s.rainy, &s.clean)).collect::<derain::Result<Vec<EvalRow>>>()?;
    Ok(EvalResult::from_rows(rows))
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let seed = seed_or_default(a.seed);
    cfg.train.seed = seed;
    let modes = parse_modes(&a.mode)?;
    let data = required(a.data.or(cfg.paths.data.clone()), "--data")?;
    let test = required(a.test_data.or(cfg.paths.test_data.clone()), "--test-data")?;
    let out = required(a.out.or(cfg.paths.out.clone()), "--out")?;
    let train = load_samples(&data)?;
    let test = load_samples(&test)?;
    let mut table = vec![("input".to_string(), input_row(&test)?)];
    for mode in modes {
        log::info!("training {}", mode.id());
        let started = Instant::now();
        let t = train_protocol(&train, &cfg.arch, &cfg.train, mode)?;
        let seconds = started.elapsed().as_secs_f64();
        let model = Model::from_trained(&t)?;
        let dir = out.join(mode.id());
        let mut report = t.report.clone();
        for name in model.save(&dir, Some(seed))? {
            report.checkpoints.insert(name.trim_end_matches(".ckpt").into(), name);
        }
        write_json(&dir.join(REPORT_NAME), &report)?;
        record_timing(&dir, "all", seconds)?;
        let result = pipeline::evaluate_model(&model, &test)?;
        result.write_csv(dir.join("eval.csv"))?;
        table.push((mode.id().to_string(), result));
    }
    let mut csv = String::from("mode,psnr_db,ssim\n");
    println!("{:<6}  {:>9}  {:>7}", "mode", "PSNR(dB)", "SSIM");
    for (mode, r) in &table {
        println!("{mode:<6}  {:>9.3}  {:>7.4}", r.mean_psnr, r.mean_ssim);
        csv.push_str(&format!("{mode},{:.6},{:.6}\n", r.mean_psnr, r.mean_ssim));
    }
    fsutil::create_dir_all(&out)?;
    fsutil::write_file(out.join("ablation.csv"), csv.as_bytes())?;
    Ok(())
}

fn input_images(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::Io { path: input.to_path_buf(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyCorpus(input.to_path_buf()).into());
    }
    Ok(files)
}

pub fn derain(a: DerainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let eps = cfg.train.eps;
    if a.oracle_maps {
        let (manifest, base) = DatasetManifest::load(&a.input)?;
        let scenes = manifest_scenes(&manifest, &base)?;
        fsutil::create_dir_all(&a.output)?;
        let mut worst: f64 = 0.0;
        for (name, scene) in &scenes {
            let r = restore_with_maps(&scene.rainy, scene.t_streak.clone(), scene.t_vapor.clone(), scene.atmosphere, eps)?;
            let err = r.background.data().iter().zip(scene.background.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
            write_restoration(&a.output, name, &scene.rainy, &r, a.dump_maps)?;
        }
        println!("restored {} images with true maps; max |J_hat - J| = {worst:.3e}", scenes.len());
        return Ok(());
    }
    let dir = required(a.checkpoint.or(cfg.paths.checkpoint.clone()), "--checkpoint")?;
    let model = Model::load(&dir, eps)?;
    let files = input_images(&a.input)?;
    fsutil::create_dir_all(&a.output)?;
    let started = Instant::now();
    for f in &files {
        let t0 = Instant::now();
        let rainy = image::read_rgb(f)?;
        let r = pipeline::derain(&model, &rainy, None)?;
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let path = write_restoration(&a.output, &name, &rainy, &r, a.dump_maps)?;
        log::info!("{} -> {} ({:.3} s)", f.display(), path.display(), t0.elapsed().as_secs_f64());
    }
    let total = started.elapsed().as_secs_f64();
    println!("derained {} images in {total:.2} s ({:.3} s per image)", files.len(), total / files.len() as f64);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let result = evaluate_dirs(&a.pred_dir, &a.gt_dir)?;
    print!("{}", result.to_table());
    let csv = a.csv.unwrap_or_else(|| a.pred_dir.join("eval.csv"));
    result.write_csv(&csv)?;
    log::info!("wrote {}", csv.display());
    Ok(())
}
