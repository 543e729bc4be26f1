use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Grads, Graph, Var};
use crate::nn::tensor::Tensor;

/// Architecture identifier of each network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Snet,
    Vnet,
    Anet,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Snet, Arch::Vnet, Arch::Anet];

    pub fn id(self) -> &'static str {
        match self {
            Arch::Snet => "snet",
            Arch::Vnet => "vnet",
            Arch::Anet => "anet",
        }
    }

    pub fn parse(id: &str) -> Result<Arch> {
        match id {
            "snet" => Ok(Arch::Snet),
            "vnet" => Ok(Arch::Vnet),
            "anet" => Ok(Arch::Anet),
            other => Err(Error::UnknownArch(other.to_string())),
        }
    }

    fn stream(self) -> u64 {
        match self {
            Arch::Snet => 1,
            Arch::Vnet => 2,
            Arch::Anet => 3,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Widths and structural choices for all three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Convolution groups in SNet; also the number of separate stem branches.
    pub groups: usize,
    /// SNet stem width; the encoder doubles it twice.
    pub base_channels: usize,
    /// Size-preserving shuffle units between SNet's encoder and decoder.
    pub middle_units: usize,
    /// Adaptive pooling grid sizes of VNet's pyramid, strictly increasing.
    pub spp_levels: Vec<usize>,
    /// Output channels of each pyramid level's 1x1 convolution.
    pub spp_channels: usize,
    /// Negative slope of the leaky rectifier.
    pub slope: f64,
    pub vnet_channels: usize,
    pub vnet_groups: usize,
    pub vnet_units: usize,
    pub vnet_fuse_channels: usize,
    /// ANet encoder widths; each stage is a stride-2 3x3 convolution.
    pub anet_channels: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            groups: 3,
            base_channels: 12,
            middle_units: 3,
            spp_levels: vec![1, 2, 4, 8],
            spp_channels: 8,
            slope: 0.1,
            vnet_channels: 16,
            vnet_groups: 2,
            vnet_units: 2,
            vnet_fuse_channels: 8,
            anet_channels: vec![16, 32, 64],
        }
    }
}

impl ArchConfig {
    /// Small configuration used for gradient checks and fast tests.
    pub fn reduced() -> Self {
        Self {
            groups: 3,
            base_channels: 3,
            middle_units: 1,
            spp_levels: vec![1, 2, 4],
            spp_channels: 2,
            slope: 0.1,
            vnet_channels: 4,
            vnet_groups: 2,
            vnet_units: 2,
            vnet_fuse_channels: 4,
            anet_channels: vec![4, 6, 8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.groups == 0 || self.base_channels == 0 || self.base_channels % self.groups != 0 {
            return Err(Error::IndivisibleChannels { channels: self.base_channels, groups: self.groups });
        }
        if self.vnet_groups == 0 || self.vnet_channels == 0 || self.vnet_channels % self.vnet_groups != 0 {
            return Err(Error::IndivisibleChannels { channels: self.vnet_channels, groups: self.vnet_groups });
        }
        if self.spp_levels.is_empty() || self.spp_levels[0] == 0 || self.spp_levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("spp_levels must be positive and strictly increasing, got {:?}", self.spp_levels));
        }
        if self.spp_channels == 0 || self.vnet_fuse_channels == 0 {
            return bad("spp_channels and vnet_fuse_channels must be positive".into());
        }
        if self.anet_channels.is_empty() || self.anet_channels.contains(&0) {
            return bad(format!("anet_channels must be non-empty and positive, got {:?}", self.anet_channels));
        }
        if !self.slope.is_finite() || !(0.0..1.0).contains(&self.slope) {
            return bad(format!("slope must lie in [0, 1), got {}", self.slope));
        }
        Ok(())
    }
}

/// Shape and initialization rule of one named tensor.
#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `Some(fan_in)` for fan-in scaled weights, `None` for zero
    /// initialization (biases and the last convolution of each shuffle unit).
    pub fan_in: Option<usize>,
}

fn conv_spec(out: &mut Vec<ParamSpec>, name: &str, cout: usize, cin_g: usize, k: usize, bias: bool) {
    out.push(ParamSpec { name: format!("{name}.weight"), shape: vec![cout, cin_g, k, k], fan_in: Some(cin_g * k * k) });
    if bias {
        out.push(ParamSpec { name: format!("{name}.bias"), shape: vec![cout], fan_in: None });
    }
}

/// Parameters of one revised shuffle unit (both variants share the layout).
pub(crate) fn shuffle_unit_specs(out: &mut Vec<ParamSpec>, prefix: &str, channels: usize, groups: usize) {
    let cg = channels / groups;
    conv_spec(out, &format!("{prefix}.pw1"), channels, cg, 1, true);
    conv_spec(out, &format!("{prefix}.dw1"), channels, 1, 3, false);
    conv_spec(out, &format!("{prefix}.pw2"), channels, cg, 1, true);
    conv_spec(out, &format!("{prefix}.dw2"), channels, 1, 3, false);
    conv_spec(out, &format!("{prefix}.pw3"), channels, cg, 1, true);
    // Units start as their shortcut; without normalization, random tails
    // compound the activation scale through the residual stacks.
    let tail = out.len() - 2;
    out[tail].fan_in = None;
}

pub(crate) fn spp_specs(out: &mut Vec<ParamSpec>, prefix: &str, channels: usize, levels: &[usize], level_channels: usize) {
    for l in levels {
        conv_spec(out, &format!("{prefix}.{l}"), level_channels, channels, 1, true);
    }
}

pub(crate) fn layout(arch: Arch, cfg: &ArchConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    match arch {
        Arch::Snet => {
            let base = cfg.base_channels;
            for i in 0..cfg.groups {
                conv_spec(&mut out, &format!("stem.{i}"), base / cfg.groups, 3, 5, true);
            }
            shuffle_unit_specs(&mut out, "enc.0", base, cfg.groups);
            shuffle_unit_specs(&mut out, "enc.1", 2 * base, cfg.groups);
            for i in 0..cfg.middle_units {
                shuffle_unit_specs(&mut out, &format!("mid.{i}"), 4 * base, cfg.groups);
            }
            conv_spec(&mut out, "dec.0", 2 * base, 4 * base, 3, true);
            conv_spec(&mut out, "dec.1", base, 2 * base, 3, true);
            conv_spec(&mut out, "head", 1, base, 3, true);
        }
        Arch::Vnet => {
            let c = cfg.vnet_channels;
            conv_spec(&mut out, "in", c, 4, 3, true);
            for i in 0..cfg.vnet_units {
                shuffle_unit_specs(&mut out, &format!("unit.{i}"), c, cfg.vnet_groups);
            }
            spp_specs(&mut out, "spp", c, &cfg.spp_levels, cfg.spp_channels);
            conv_spec(&mut out, "fuse.0", cfg.vnet_fuse_channels, c + cfg.spp_levels.len() * cfg.spp_channels, 3, true);
            conv_spec(&mut out, "fuse.1", 1, cfg.vnet_fuse_channels, 3, true);
        }
        Arch::Anet => {
            let mut cin = 3;
            for (i, &c) in cfg.anet_channels.iter().enumerate() {
                conv_spec(&mut out, &format!("enc.{i}"), c, cin, 3, true);
                cin = c;
            }
            conv_spec(&mut out, "out", 3, cin, 1, true);
        }
    }
    out
}

/// Named learnable tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    arch: Arch,
    config: ArchConfig,
    init_seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// Seeded fan-in scaled uniform initialization: weights `U(-b, b)` with
/// `b = sqrt(6 / fan_in)` (variance `2 / fan_in`). Biases and the final
/// 1x1 convolution of every shuffle unit start at zero.
pub fn init_params(arch_id: &str, cfg: &ArchConfig, seed: u64) -> Result<ParamSet> {
    let arch = Arch::parse(arch_id)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(arch.stream());
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for spec in layout(arch, cfg) {
        let n: usize = spec.shape.iter().product();
        let data = match spec.fan_in {
            Some(fan_in) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            None => vec![0.0; n],
        };
        names.push(spec.name);
        tensors.push(Tensor::new(spec.shape, data)?);
    }
    ParamSet::from_parts(arch, cfg.clone(), seed, names, tensors)
}

impl ParamSet {
    pub fn from_parts(arch: Arch, config: ArchConfig, init_seed: u64, names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = layout(arch, &config);
        if expected.len() != names.len() || names.len() != tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{arch} expects {} tensors, got {} names / {} tensors",
                expected.len(),
                names.len(),
                tensors.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, (name, t)) in names.iter().zip(&tensors).enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidParams(format!("duplicate parameter name `{name}`")));
            }
            if !t.is_finite() {
                return Err(Error::NonFiniteActivation(format!("parameter `{name}`")));
            }
        }
        for spec in &expected {
            let Some(&i) = index.get(&spec.name) else {
                return Err(Error::ShapeMismatch(format!("{arch} is missing parameter `{}`", spec.name)));
            };
            if tensors[i].shape() != spec.shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    spec.name,
                    tensors[i].shape(),
                    spec.shape
                )));
            }
        }
        Ok(Self { arch, config, init_seed, names, tensors, index })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn arch_id(&self) -> &'static str {
        self.arch.id()
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn expect_arch(&self, arch: Arch) -> Result<()> {
        if self.arch != arch {
            return Err(Error::ArchMismatch { expected: arch.id().into(), found: self.arch.id().into() });
        }
        Ok(())
    }

    /// Records every tensor in `g`; gradients are tracked only when `trainable`.
    pub fn bind<'a>(&'a self, g: &mut Graph, trainable: bool) -> Bound<'a> {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.leaf(t.clone()) } else { g.input(t.clone()) })
            .collect();
        Bound { set: self, vars }
    }

    /// Same layout with every tensor replaced by `f(name, tensor)`.
    pub fn map(&self, mut f: impl FnMut(&str, &Tensor) -> Tensor) -> Result<ParamSet> {
        let tensors = self.iter().map(|(n, t)| f(n, t)).collect();
        ParamSet::from_parts(self.arch, self.config.clone(), self.init_seed, self.names.clone(), tensors)
    }

    /// L2 distance between two parameter sets of the same layout.
    pub fn distance(&self, other: &ParamSet) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// A [`ParamSet`] recorded into a graph.
pub struct Bound<'a> {
    set: &'a ParamSet,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    /// Binds `set`'s names to existing graph values (one per tensor, in order).
    pub fn from_vars(set: &'a ParamSet, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != set.len() {
            return Err(Error::ShapeMismatch(format!("{} needs {} vars, got {}", set.arch, set.len(), vars.len())));
        }
        Ok(Bound { set, vars })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.set
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::ShapeMismatch(format!("{} has no parameter `{name}`", self.set.arch)))
    }

    pub fn config(&self) -> &ArchConfig {
        &self.set.config
    }

    pub fn set(&self) -> &ParamSet {
        self.set
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient for every tensor (zeros where none flowed).
    pub fn gradients(&self, grads: &mut Grads) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(&self.set.tensors)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}
