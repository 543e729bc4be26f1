//! SNet (rain-streak transmission), VNet (vapor transmission) and ANet
//! (atmosphere light).

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::kernels::{ConvSpec, Padding};
use crate::nn::layers::{shuffle_unit_add, shuffle_unit_cat, spp};
use crate::nn::params::{Arch, Bound, ParamSet};
use crate::nn::tensor::Tensor;

fn conv(g: &mut Graph, p: &Bound, name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    g.conv(x, w, Some(b), spec)
}

fn check_finite(g: &Graph, v: Var, what: &str) -> Result<()> {
    if !g.value(v).is_finite() {
        return Err(Error::NonFiniteActivation(what.into()));
    }
    Ok(())
}

fn expect_channels(g: &Graph, v: Var, channels: usize, what: &str) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = g.value(v).dims4()?;
    if c != channels {
        return Err(Error::ShapeMismatch(format!("{what} expects {channels} channels, got {c}")));
    }
    Ok((b, h, w))
}

/// Streak transmission `Ts = S(I)` in `(0, 1)`, shape `[B, 1, H, W]`.
///
/// Stem of parallel 5x5 convolutions, two downsampling shuffle units, a
/// stack of size-preserving units, then two bilinear-upsample + 3x3 conv
/// stages with additive skips from the matching encoder resolution.
pub fn snet(g: &mut Graph, p: &Bound, rainy: Var) -> Result<Var> {
    p.set().expect_arch(Arch::Snet)?;
    let cfg = p.config();
    let (_, h, w) = expect_channels(g, rainy, 3, "snet")?;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::ShapeMismatch(format!("snet input must be divisible by 4, got {h}x{w}")));
    }
    let stem_spec = ConvSpec::dense(1, Padding::Reflect);
    let mut branches = Vec::with_capacity(cfg.groups);
    for i in 0..cfg.groups {
        branches.push(conv(g, p, &format!("stem.{i}"), rainy, stem_spec)?);
    }
    let stem = g.concat(&branches)?;
    let stem = g.leaky_relu(stem, cfg.slope);

    let enc0 = shuffle_unit_cat(g, p, "enc.0", stem, cfg.groups, cfg.slope)?;
    let mut x = shuffle_unit_cat(g, p, "enc.1", enc0, cfg.groups, cfg.slope)?;
    for i in 0..cfg.middle_units {
        x = shuffle_unit_add(g, p, &format!("mid.{i}"), x, cfg.groups, cfg.slope)?;
    }

    let dec_spec = ConvSpec::dense(1, Padding::Reflect);
    let up = g.resize(x, h / 2, w / 2)?;
    let y = conv(g, p, "dec.0", up, dec_spec)?;
    let y = g.leaky_relu(y, cfg.slope);
    let y = g.add(y, enc0)?;
    let up = g.resize(y, h, w)?;
    let y = conv(g, p, "dec.1", up, dec_spec)?;
    let y = g.leaky_relu(y, cfg.slope);
    let y = g.add(y, stem)?;
    let logits = conv(g, p, "head", y, dec_spec)?;
    let out = g.sigmoid(logits);
    check_finite(g, out, "snet output")?;
    Ok(out)
}

/// Vapor transmission `Tv = V(cat(I, Ts))`, gated to `[0, 1 - Ts]`.
pub fn vnet(g: &mut Graph, p: &Bound, rainy: Var, ts: Var) -> Result<Var> {
    p.set().expect_arch(Arch::Vnet)?;
    let cfg = p.config();
    let (b, h, w) = expect_channels(g, rainy, 3, "vnet image input")?;
    if g.value(ts).shape() != [b, 1, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "vnet streak map {:?} does not match image [{b}, 3, {h}, {w}]",
            g.value(ts).shape()
        )));
    }
    let x = g.concat(&[rainy, ts])?;
    let x = conv(g, p, "in", x, ConvSpec::dense(1, Padding::Reflect))?;
    let mut x = g.leaky_relu(x, cfg.slope);
    for i in 0..cfg.vnet_units {
        x = shuffle_unit_add(g, p, &format!("unit.{i}"), x, cfg.vnet_groups, cfg.slope)?;
    }
    let x = spp(g, p, "spp", x, &cfg.spp_levels)?;
    let x = conv(g, p, "fuse.0", x, ConvSpec::dense(1, Padding::Reflect))?;
    let x = g.leaky_relu(x, cfg.slope);
    let logits = conv(g, p, "fuse.1", x, ConvSpec::dense(1, Padding::Reflect))?;
    let sigma = g.sigmoid(logits);
    let headroom = g.one_minus(ts);
    let out = g.mul(sigma, headroom)?;
    check_finite(g, out, "vnet output")?;
    Ok(out)
}

/// Atmosphere light `A = A(I)` as a `[B, 3]` tensor in `(0, 1)`.
pub fn anet(g: &mut Graph, p: &Bound, rainy: Var) -> Result<Var> {
    p.set().expect_arch(Arch::Anet)?;
    let cfg = p.config();
    let (b, _, _) = expect_channels(g, rainy, 3, "anet")?;
    let mut x = rainy;
    for i in 0..cfg.anet_channels.len() {
        x = conv(g, p, &format!("enc.{i}"), x, ConvSpec::dense(2, Padding::Zero))?;
        x = g.leaky_relu(x, cfg.slope);
    }
    let pooled = g.adaptive_avg_pool(x, 1)?;
    let y = conv(g, p, "out", pooled, ConvSpec::grouped(1))?;
    let y = g.reshape(y, &[b, 3])?;
    let out = g.sigmoid(y);
    check_finite(g, out, "anet output")?;
    Ok(out)
}

/// Runs SNet on a `[B, 3, H, W]` tensor.
pub fn snet_forward(rainy: &Tensor, p: &ParamSet) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let x = g.input(rainy.clone());
    let y = snet(&mut g, &bound, x)?;
    Ok(g.value(y).clone())
}

/// Runs VNet on an image batch and its streak transmission.
pub fn vnet_forward(rainy: &Tensor, ts: &Tensor, p: &ParamSet) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let x = g.input(rainy.clone());
    let t = g.input(ts.clone());
    let y = vnet(&mut g, &bound, x, t)?;
    Ok(g.value(y).clone())
}

/// Runs ANet on a `[B, 3, H, W]` tensor.
pub fn anet_forward(rainy: &Tensor, p: &ParamSet) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let x = g.input(rainy.clone());
    let y = anet(&mut g, &bound, x)?;
    Ok(g.value(y).clone())
}
