mod common;

use common::*;
use derain::metrics::mse;
use derain::nn::{anet_forward, init_params, ArchConfig, ParamSet, Tensor};
use derain::pipeline::{derain, Model};
use derain::synth::Sample;
use derain::training::*;
use derain::{AtmosphereLight, Error, Mask};

fn cfg(epochs: [usize; 3]) -> TrainConfig {
    TrainConfig {
        patch: 32,
        batch: 4,
        epochs_anet: epochs[0],
        epochs_snet: epochs[1],
        epochs_joint: epochs[2],
        ..TrainConfig::default()
    }
}

fn init(arch_id: &str, seed: u64) -> ParamSet {
    init_params(arch_id, &ArchConfig::reduced(), seed).unwrap()
}

fn constant_light_scenes(count: usize, offset: u64) -> Vec<Sample> {
    let a = AtmosphereLight::new([0.85, 0.8, 0.75]).unwrap();
    (0..count as u64).map(|i| to_sample(format!("{i}"), opaque_streak_scene(32, offset + i, a))).collect()
}

#[test]
fn anet_learns_a_shared_atmosphere_light() {
    let train = constant_light_scenes(24, 0);
    let c = TrainConfig { lr_anet_pre: 1e-2, ..cfg([30, 0, 0]) };
    let (p, report) = pretrain_anet(&train, init("anet", 1), &c).unwrap();
    assert_eq!(report.epoch_losses.len(), 30);
    assert!(report.epoch_losses.last() <= report.epoch_losses.first());
    for s in constant_light_scenes(6, 500) {
        let pred = anet_forward(&Tensor::from_images(&[&s.rainy]).unwrap(), &p).unwrap();
        for (got, want) in pred.data().iter().zip([0.85, 0.8, 0.75]) {
            assert!((got - want).abs() < 0.05, "predicted {got}, light {want}");
        }
    }
}

#[test]
fn zero_epochs_pass_parameters_through() {
    let data = scenes(32, 4, 1);
    let c = cfg([0, 0, 0]);
    let (a0, s0, v0) = (init("anet", 2), init("snet", 2), init("vnet", 2));
    let (a, r) = pretrain_anet(&data, a0.clone(), &c).unwrap();
    assert_eq!(a, a0);
    assert!(r.epoch_losses.is_empty());
    let (s, a, _) = pretrain_snet(&data, s0.clone(), AtmosphereSource::Finetune(a0.clone()), &c).unwrap();
    assert_eq!((s, a.unwrap()), (s0.clone(), a0.clone()));
    let (s, v, a, r) = joint_train(&data, s0.clone(), v0.clone(), a0.clone(), &c).unwrap();
    assert_eq!((s, v, a), (s0, v0, a0));
    assert_eq!(r.steps, 0);
}

#[test]
fn zero_finetune_rate_freezes_snet_and_anet() {
    let data = scenes(32, 4, 2);
    let c = TrainConfig { lr_finetune: 0.0, ..cfg([0, 0, 1]) };
    let (s0, v0, a0) = (init("snet", 3), init("vnet", 3), init("anet", 3));
    let (s, v, a, report) = joint_train(&data, s0.clone(), v0.clone(), a0.clone(), &c).unwrap();
    assert_eq!(s, s0);
    assert_eq!(a, a0);
    assert!(v.distance(&v0) > 0.0);
    assert_eq!(report.steps, 1);

    let (_, a, _) = pretrain_snet(&data, s0, AtmosphereSource::Frozen(a0.clone()), &cfg([0, 1, 0])).unwrap();
    assert_eq!(a.unwrap(), a0);
}

fn held_out_loss(model: &Model, samples: &[Sample]) -> f64 {
    let total: f64 = samples.iter().map(|s| mse(&derain(model, &s.rainy, None).unwrap().background, &s.clean).unwrap()).sum();
    total / samples.len() as f64
}

#[test]
fn snet_training_lowers_held_out_loss_and_barely_moves_anet() {
    let train = scenes(32, 48, 3);
    let test = scenes(32, 12, 4);
    let c = cfg([4, 12, 0]);
    let (anet, _) = pretrain_anet(&train, init("anet", 4), &c).unwrap();
    let s0 = init("snet", 4);
    let before = held_out_loss(&Model::new(s0.clone(), None, Some(anet.clone()), c.eps).unwrap(), &test);
    let (s, a, report) = pretrain_snet(&train, s0, AtmosphereSource::Finetune(anet), &c).unwrap();
    let after = held_out_loss(&Model::new(s, None, a, c.eps).unwrap(), &test);
    assert!(after <= 0.8 * before, "held-out loss {before} -> {after}");
    assert!(report.epoch_losses.last() <= report.epoch_losses.first());

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (sn, an) = (mean(&report.update_norms["snet"]), mean(&report.update_norms["anet"]));
    assert!(an > 0.0);
    // both optimizers take steps of about their learning rate per scalar
    assert!(an <= 10.0 * (c.lr_finetune / c.lr_main) * sn, "anet {an} vs snet {sn}");
}

#[test]
fn stages_are_deterministic() {
    let data = scenes(32, 6, 5);
    let c = TrainConfig { seed: 11, flips: true, ..cfg([2, 2, 2]) };
    let run = || train_protocol(&data, &ArchConfig::reduced(), &c, Ablation::Full).unwrap();
    let (x, y) = (run(), run());
    assert_eq!(x.snet, y.snet);
    assert_eq!(x.vnet, y.vnet);
    assert_eq!(x.anet, y.anet);
    assert_eq!(x.report, y.report);
    for (stage, r) in &x.report.stages {
        let epochs = match stage.as_str() {
            "anet" => c.epochs_anet,
            "snet" => c.epochs_snet,
            _ => c.epochs_joint,
        };
        assert_eq!(r.epoch_losses.len(), epochs);
        assert!(r.epoch_losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }
    let other = train_protocol(&data, &ArchConfig::reduced(), &TrainConfig { seed: 12, ..c.clone() }, Ablation::Full).unwrap();
    assert_ne!(other.snet, x.snet);
}

#[test]
fn ablation_variants_train_the_right_networks() {
    let data = scenes(32, 4, 6);
    let c = cfg([1, 1, 1]);
    let arch = ArchConfig::reduced();
    let c1 = train_protocol(&data, &arch, &c, Ablation::C1).unwrap();
    assert!(c1.anet.is_none() && c1.vnet.is_none());
    assert_eq!(c1.report.stages.keys().collect::<Vec<_>>(), ["snet"]);
    let c2 = train_protocol(&data, &arch, &c, Ablation::C2).unwrap();
    assert_eq!(c2.anet.as_ref().unwrap(), &pretrain_anet(&data, init_params("anet", &arch, 0).unwrap(), &c).unwrap().0);
    let full = train_protocol(&data, &arch, &c, Ablation::Full).unwrap();
    assert_eq!(full.report.stages.len(), 3);
}

#[test]
fn samples_without_rain_pixels_are_skipped() {
    let mut data = scenes(32, 3, 7);
    data[1].mask = Some(Mask::empty(32, 32));
    let (_, r) = pretrain_anet(&data, init("anet", 1), &cfg([1, 0, 0])).unwrap();
    assert_eq!(r.skipped, 1);
    for s in &mut data {
        s.mask = Some(Mask::empty(32, 32));
    }
    assert!(matches!(pretrain_anet(&data, init("anet", 1), &cfg([1, 0, 0])), Err(Error::NoUsableSamples(_))));
}

#[test]
fn mismatched_networks_are_rejected() {
    let data = scenes(32, 2, 8);
    let c = cfg([1, 1, 1]);
    assert!(matches!(pretrain_anet(&data, init("snet", 1), &c), Err(Error::ArchMismatch { .. })));
    assert!(matches!(
        pretrain_snet(&data, init("snet", 1), AtmosphereSource::Frozen(init("vnet", 1)), &c),
        Err(Error::ArchMismatch { .. })
    ));
    assert!(matches!(joint_train(&data, init("snet", 1), init("anet", 1), init("anet", 1), &c), Err(Error::ArchMismatch { .. })));
    assert!(matches!(pretrain_anet(&data, init("anet", 1), &TrainConfig { patch: 30, ..c }), Err(Error::InvalidParams(_))));
}

#[test]
fn adam_with_zero_gradient_only_counts_the_step() {
    let mut p = init("anet", 5);
    let before = p.clone();
    let zeros: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut st = AdamState::new(&p);
    adam_step(&mut p, &zeros, &mut st, 0.1, AdamConfig::default()).unwrap();
    assert_eq!(p, before);
    assert_eq!(st.step(), 1);
    assert!(matches!(adam_step(&mut p, &zeros[1..], &mut st, 0.1, AdamConfig::default()), Err(Error::ShapeMismatch(_))));
}
