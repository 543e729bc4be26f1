//! Building blocks: revised shuffle units, symmetric depthwise convolution
//! and spatial pyramid pooling.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::kernels::{ConvSpec, Padding};
use crate::nn::params::Bound;
use crate::nn::tensor::Tensor;

/// Depthwise 3x3 convolution with reflective one-pixel padding.
pub fn sdw(g: &mut Graph, x: Var, weight: Var, stride: usize) -> Result<Var> {
    let (_, c, _, _) = g.value(x).dims4()?;
    if g.value(weight).shape() != [c, 1, 3, 3] {
        return Err(Error::ShapeMismatch(format!(
            "depthwise weight {:?} does not match {c} channels",
            g.value(weight).shape()
        )));
    }
    g.conv(x, weight, None, ConvSpec { stride, groups: c, padding: Padding::Reflect })
}

fn pointwise(g: &mut Graph, p: &Bound, name: &str, x: Var, groups: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    g.conv(x, w, Some(b), ConvSpec::grouped(groups))
}

/// Shared main branch; the first depthwise convolution uses `stride`.
fn unit_branch(g: &mut Graph, p: &Bound, prefix: &str, x: Var, groups: usize, stride: usize, slope: f64) -> Result<Var> {
    let (_, c, _, _) = g.value(x).dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::IndivisibleChannels { channels: c, groups });
    }
    let y = pointwise(g, p, &format!("{prefix}.pw1"), x, groups)?;
    let y = g.leaky_relu(y, slope);
    let y = g.channel_shuffle(y, groups)?;
    let y = sdw(g, y, p.var(&format!("{prefix}.dw1.weight"))?, stride)?;
    let y = pointwise(g, p, &format!("{prefix}.pw2"), y, groups)?;
    let y = g.leaky_relu(y, slope);
    let y = g.channel_shuffle(y, groups)?;
    let y = sdw(g, y, p.var(&format!("{prefix}.dw2.weight"))?, 1)?;
    pointwise(g, p, &format!("{prefix}.pw3"), y, groups)
}

/// Size-preserving residual unit: `x + branch(x)`.
pub fn shuffle_unit_add(g: &mut Graph, p: &Bound, prefix: &str, x: Var, groups: usize, slope: f64) -> Result<Var> {
    let branch = unit_branch(g, p, prefix, x, groups, 1, slope)?;
    g.add(x, branch)
}

/// Downsampling unit: `[branch(x) with stride 2, avgpool3x3s2(x)]` along channels.
pub fn shuffle_unit_cat(g: &mut Graph, p: &Bound, prefix: &str, x: Var, groups: usize, slope: f64) -> Result<Var> {
    let branch = unit_branch(g, p, prefix, x, groups, 2, slope)?;
    let shortcut = g.avg_pool3_s2(x)?;
    g.concat(&[branch, shortcut])
}

/// Spatial pyramid pooling: per level, adaptive average pool to `l x l`,
/// 1x1 convolution, bilinear upsample back; all concatenated after the input.
pub fn spp(g: &mut Graph, p: &Bound, prefix: &str, x: Var, levels: &[usize]) -> Result<Var> {
    let (_, _, h, w) = g.value(x).dims4()?;
    let mut parts = vec![x];
    for &l in levels {
        if l > h.min(w) {
            return Err(Error::LevelTooLarge { level: l, size: h.min(w) });
        }
        let pooled = g.adaptive_avg_pool(x, l)?;
        let wt = p.var(&format!("{prefix}.{l}.weight"))?;
        let b = p.var(&format!("{prefix}.{l}.bias"))?;
        let y = g.conv(pooled, wt, Some(b), ConvSpec::grouped(1))?;
        parts.push(g.resize(y, h, w)?);
    }
    g.concat(&parts)
}

/// Channel shuffle on a plain tensor.
pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let y = g.channel_shuffle(v, groups)?;
    Ok(g.value(y).clone())
}

/// Symmetric depthwise convolution on a plain tensor; `kernel` is `[C, 1, 3, 3]`.
pub fn sdw_conv(x: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    if stride != 1 && stride != 2 {
        return Err(Error::InvalidParams(format!("stride must be 1 or 2, got {stride}")));
    }
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let kv = g.input(kernel.clone());
    let y = sdw(&mut g, xv, kv, stride)?;
    Ok(g.value(y).clone())
}

/// Replicates a `[B, 3]` atmosphere light over `height x width`.
pub fn broadcast_atmosphere(a: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.input(a.clone());
    let y = g.broadcast_spatial(v, height, width)?;
    Ok(g.value(y).clone())
}
