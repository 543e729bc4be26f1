//! Forward and backward kernels on raw NCHW buffers.

use crate::image::bilinear_coord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Mirror about the edge pixel: index `-1` reads `1`.
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub const fn dense(stride: usize, padding: Padding) -> Self {
        Self { stride, groups: 1, padding }
    }

    pub const fn grouped(groups: usize) -> Self {
        Self { stride: 1, groups, padding: Padding::Zero }
    }
}

/// Geometry shared by a convolution's forward and backward passes.
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    pub k: usize,
    pub groups: usize,
    stride: usize,
    /// Input row for each `(ky, oy)`, or -1 for zero padding.
    rows: Vec<i32>,
    /// Input column for each `(kx, ox)`, or -1 for zero padding.
    cols: Vec<i32>,
}

impl ConvGeom {
    pub fn new(batch: usize, cin: usize, cout: usize, h: usize, w: usize, k: usize, spec: ConvSpec) -> Self {
        let pad = k / 2;
        let ho = (h + 2 * pad - k) / spec.stride + 1;
        let wo = (w + 2 * pad - k) / spec.stride + 1;
        let table = |len: usize, out: usize| -> Vec<i32> {
            (0..k)
                .flat_map(|kt| (0..out).map(move |o| (kt, o)))
                .map(|(kt, o)| resolve(o * spec.stride + kt, pad, len, spec.padding).map_or(-1, |i| i as i32))
                .collect()
        };
        let rows = table(h, ho);
        let cols = table(w, wo);
        Self { batch, cin, cout, h, w, ho, wo, k, groups: spec.groups, stride: spec.stride, rows, cols }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.ho == self.h && self.wo == self.w
    }

    /// Calls `f(j, iy, cols)` for each output row piece of tap `t` within
    /// output pixels `p0..p1`; `j` is the piece offset from `p0`.
    fn for_segments(&self, t: usize, (p0, p1): (usize, usize), mut f: impl FnMut(usize, i32, Cols)) {
        let (ky, kx) = (t / self.k, t % self.k);
        let pad = self.k / 2;
        // Stride-1 outputs whose column needs no padding lookup.
        let (lo, hi) = if self.stride == 1 { (pad.saturating_sub(kx), (self.w + pad).saturating_sub(kx).min(self.wo)) } else { (0, 0) };
        let table = &self.cols[kx * self.wo..(kx + 1) * self.wo];
        let mut pos = p0;
        while pos < p1 {
            let (oy, ox0) = (pos / self.wo, pos % self.wo);
            let ox1 = (ox0 + p1 - pos).min(self.wo);
            let iy = self.rows[ky * self.ho + oy];
            let j = pos - p0;
            let a = ox0.max(lo).min(ox1);
            let b = ox1.min(hi).max(a);
            if a > ox0 {
                f(j, iy, Cols::Table(&table[ox0..a]));
            }
            if b > a {
                f(j + a - ox0, iy, Cols::Run { first: a + kx - pad, len: b - a });
            }
            if ox1 > b {
                f(j + b - ox0, iy, Cols::Table(&table[b..ox1]));
            }
            pos += ox1 - ox0;
        }
    }

    /// `dst[j] = src[input of pixel p0 + j under tap t]`, zero where padded.
    fn gather(&self, t: usize, blk: (usize, usize), src: &[f64], dst: &mut [f64]) {
        self.for_segments(t, blk, |j, iy, cols| {
            let d = &mut dst[j..j + cols.len()];
            if iy < 0 {
                d.fill(0.0);
                return;
            }
            let srow = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
            match cols {
                Cols::Run { first, len } => d.copy_from_slice(&srow[first..first + len]),
                Cols::Table(cols) => {
                    for (d, &ix) in d.iter_mut().zip(cols) {
                        *d = if ix >= 0 { srow[ix as usize] } else { 0.0 };
                    }
                }
            }
        });
    }

    /// `dst[j] += scale * src[input of pixel p0 + j under tap t]`.
    fn gather_add(&self, t: usize, blk: (usize, usize), src: &[f64], scale: f64, dst: &mut [f64]) {
        self.for_segments(t, blk, |j, iy, cols| {
            if iy < 0 {
                return;
            }
            let srow = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
            let d = &mut dst[j..j + cols.len()];
            match cols {
                Cols::Run { first, len } => {
                    for (d, &s) in d.iter_mut().zip(&srow[first..first + len]) {
                        *d += scale * s;
                    }
                }
                Cols::Table(cols) => {
                    for (d, &ix) in d.iter_mut().zip(cols) {
                        if ix >= 0 {
                            *d += scale * srow[ix as usize];
                        }
                    }
                }
            }
        });
    }

    /// Adjoint of [`gather`](Self::gather), scaled: `dst[input] += scale * src[j]`.
    fn scatter_add(&self, t: usize, blk: (usize, usize), src: &[f64], scale: f64, dst: &mut [f64]) {
        self.for_segments(t, blk, |j, iy, cols| {
            if iy < 0 {
                return;
            }
            let drow = &mut dst[iy as usize * self.w..(iy as usize + 1) * self.w];
            let s = &src[j..j + cols.len()];
            match cols {
                Cols::Run { first, len } => {
                    for (d, &s) in drow[first..first + len].iter_mut().zip(s) {
                        *d += scale * s;
                    }
                }
                Cols::Table(cols) => {
                    for (&s, &ix) in s.iter().zip(cols) {
                        if ix >= 0 {
                            drow[ix as usize] += scale * s;
                        }
                    }
                }
            }
        });
    }

    /// `sum_j a[j] * src[input of pixel j under tap t]` over all output pixels.
    fn tap_dot(&self, t: usize, a: &[f64], src: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_segments(t, (0, self.ho * self.wo), |j, iy, cols| {
            if iy < 0 {
                return;
            }
            let srow = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
            let a = &a[j..j + cols.len()];
            match cols {
                Cols::Run { first, len } => {
                    acc += a.iter().zip(&srow[first..first + len]).map(|(x, y)| x * y).sum::<f64>();
                }
                Cols::Table(cols) => {
                    for (&d, &ix) in a.iter().zip(cols) {
                        if ix >= 0 {
                            acc += d * srow[ix as usize];
                        }
                    }
                }
            }
        });
        acc
    }
}

/// Input columns of one output row piece.
#[derive(Clone, Copy)]
enum Cols<'a> {
    /// Per-pixel lookup; -1 marks zero padding.
    Table(&'a [i32]),
    /// Consecutive in-bounds columns starting at `first`.
    Run { first: usize, len: usize },
}

impl Cols<'_> {
    fn len(&self) -> usize {
        match *self {
            Cols::Table(t) => t.len(),
            Cols::Run { len, .. } => len,
        }
    }
}

/// Maps a padded coordinate back into `[0, len)`.
fn resolve(padded: usize, pad: usize, len: usize, padding: Padding) -> Option<usize> {
    let i = padded as isize - pad as isize;
    if (0..len as isize).contains(&i) {
        return Some(i as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            if len == 1 {
                return Some(0);
            }
            let period = 2 * (len as isize - 1);
            let mut j = i.rem_euclid(period);
            if j >= len as isize {
                j = period - j;
            }
            Some(j as usize)
        }
    }
}

/// `c = a * b + beta * c` for row-major `c` with `n` columns.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64], beta: f64) {
    gemm_ld(m, k, n, a, rsa, csa, b, rsb, csb, c, n, beta)
}

/// [`gemm`] with an explicit row stride `ldc >= n` for `c`.
#[allow(clippy::too_many_arguments)]
fn gemm_ld(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64], ldc: usize, beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(ldc >= n && c.len() >= (m - 1) * ldc + n);
    if k > 0 {
        debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Budget in values for one im2col block; keeps the block cache resident.
const COL_BLOCK: usize = 1 << 16;

/// Output pixel ranges processed per im2col block.
fn col_blocks(rows: usize, p: usize) -> impl Iterator<Item = (usize, usize)> {
    let nb = (COL_BLOCK / rows.max(1)).clamp(64, p.max(64));
    (0..p).step_by(nb).map(move |p0| (p0, (p0 + nb).min(p)))
}

/// Columns `p0..p1` of the im2col matrix, stored `[rows, p1 - p0]`.
fn im2col(geom: &ConvGeom, plane_in: &[f64], cin_g: usize, blk: (usize, usize), col: &mut [f64]) {
    let kk = geom.k * geom.k;
    let hw = geom.h * geom.w;
    let nb = blk.1 - blk.0;
    for ci in 0..cin_g {
        let src = &plane_in[ci * hw..(ci + 1) * hw];
        for t in 0..kk {
            geom.gather(t, blk, src, &mut col[(ci * kk + t) * nb..(ci * kk + t + 1) * nb]);
        }
    }
}

fn col2im(geom: &ConvGeom, col: &[f64], cin_g: usize, blk: (usize, usize), plane_grad: &mut [f64]) {
    let kk = geom.k * geom.k;
    let hw = geom.h * geom.w;
    let nb = blk.1 - blk.0;
    for ci in 0..cin_g {
        let dst = &mut plane_grad[ci * hw..(ci + 1) * hw];
        for t in 0..kk {
            geom.scatter_add(t, blk, &col[(ci * kk + t) * nb..(ci * kk + t + 1) * nb], 1.0, dst);
        }
    }
}

pub(crate) fn conv_forward(geom: &ConvGeom, x: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let cin_g = geom.cin / geom.groups;
    let cout_g = geom.cout / geom.groups;
    let kk = geom.k * geom.k;
    let p = geom.ho * geom.wo;
    let hw = geom.h * geom.w;
    let rows = cin_g * kk;
    let mut out = vec![0.0; geom.batch * geom.cout * p];
    let mut col = Vec::new();
    for b in 0..geom.batch {
        for g in 0..geom.groups {
            let xin = &x[(b * geom.cin + g * cin_g) * hw..(b * geom.cin + (g + 1) * cin_g) * hw];
            let wg = &weight[g * cout_g * rows..(g + 1) * cout_g * rows];
            let dst = &mut out[(b * geom.cout + g * cout_g) * p..(b * geom.cout + (g + 1) * cout_g) * p];
            if cout_g == 1 {
                for ci in 0..cin_g {
                    for t in 0..kk {
                        geom.gather_add(t, (0, p), &xin[ci * hw..(ci + 1) * hw], wg[ci * kk + t], dst);
                    }
                }
            } else if geom.is_pointwise() {
                gemm(cout_g, rows, p, wg, rows, 1, xin, p, 1, dst, 0.0);
            } else {
                for blk in col_blocks(rows, p) {
                    let nb = blk.1 - blk.0;
                    col.resize(rows * nb, 0.0);
                    im2col(geom, xin, cin_g, blk, &mut col);
                    gemm_ld(cout_g, rows, nb, wg, rows, 1, &col, nb, 1, &mut dst[blk.0..], p, 0.0);
                }
            }
        }
        if let Some(bias) = bias {
            for co in 0..geom.cout {
                let bv = bias[co];
                out[(b * geom.cout + co) * p..(b * geom.cout + co + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn conv_backward(
    geom: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads {
    let cin_g = geom.cin / geom.groups;
    let cout_g = geom.cout / geom.groups;
    let kk = geom.k * geom.k;
    let p = geom.ho * geom.wo;
    let hw = geom.h * geom.w;
    let rows = cin_g * kk;
    let mut dx = want_dx.then(|| vec![0.0; x.len()]);
    let mut dw = want_dw.then(|| vec![0.0; weight.len()]);
    let db = want_db.then(|| {
        let mut db = vec![0.0; geom.cout];
        for b in 0..geom.batch {
            for (co, d) in db.iter_mut().enumerate() {
                *d += dout[(b * geom.cout + co) * p..(b * geom.cout + co + 1) * p].iter().sum::<f64>();
            }
        }
        db
    });
    if !want_dx && !want_dw {
        return ConvGrads { dx, dw, db };
    }
    let pointwise = geom.is_pointwise();
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for b in 0..geom.batch {
        for g in 0..geom.groups {
            let in_range = (b * geom.cin + g * cin_g) * hw..(b * geom.cin + (g + 1) * cin_g) * hw;
            let xin = &x[in_range.clone()];
            let wg = &weight[g * cout_g * rows..(g + 1) * cout_g * rows];
            let dg = &dout[(b * geom.cout + g * cout_g) * p..(b * geom.cout + (g + 1) * cout_g) * p];
            if cout_g == 1 {
                for ci in 0..cin_g {
                    let plane = in_range.start + ci * hw..in_range.start + (ci + 1) * hw;
                    for t in 0..kk {
                        if let Some(dw) = dw.as_mut() {
                            dw[g * rows + ci * kk + t] += geom.tap_dot(t, dg, &x[plane.clone()]);
                        }
                        if let Some(dx) = dx.as_mut() {
                            geom.scatter_add(t, (0, p), dg, wg[ci * kk + t], &mut dx[plane.clone()]);
                        }
                    }
                }
                continue;
            }
            if pointwise {
                if let Some(dw) = dw.as_mut() {
                    let dwg = &mut dw[g * cout_g * rows..(g + 1) * cout_g * rows];
                    gemm(cout_g, p, rows, dg, p, 1, xin, 1, p, dwg, 1.0);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(rows, cout_g, p, wg, 1, rows, dg, p, 1, &mut dx[in_range.clone()], 1.0);
                }
                continue;
            }
            for blk in col_blocks(rows, p) {
                let nb = blk.1 - blk.0;
                if let Some(dw) = dw.as_mut() {
                    col.resize(rows * nb, 0.0);
                    im2col(geom, xin, cin_g, blk, &mut col);
                    let dwg = &mut dw[g * cout_g * rows..(g + 1) * cout_g * rows];
                    gemm(cout_g, nb, rows, &dg[blk.0..], p, 1, &col, 1, nb, dwg, 1.0);
                }
                if let Some(dx) = dx.as_mut() {
                    dcol.resize(rows * nb, 0.0);
                    gemm(rows, cout_g, nb, wg, 1, rows, &dg[blk.0..], p, 1, &mut dcol, 0.0);
                    col2im(geom, &dcol, cin_g, blk, &mut dx[in_range.clone()]);
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Output channel `i` reads input channel `(i mod g) * (C / g) + i / g`.
pub(crate) fn shuffle_source(i: usize, channels: usize, groups: usize) -> usize {
    (i % groups) * (channels / groups) + i / groups
}

/// 3x3 stride-2 average pool, one-pixel zero padding excluded from the count.
pub(crate) fn avg_pool3_s2(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let ho = h.div_ceil(2);
    let wo = w.div_ceil(2);
    let mut out = vec![0.0; planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        for oy in 0..ho {
            let (y0, y1) = pool_span(oy, h);
            for ox in 0..wo {
                let (x0, x1) = pool_span(ox, w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[y * w + xx];
                    }
                }
                out[pl * ho * wo + oy * wo + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    (out, ho, wo)
}

fn pool_span(o: usize, len: usize) -> (usize, usize) {
    let start = (2 * o).saturating_sub(1);
    let end = (2 * o + 2).min(len);
    (start, end)
}

pub(crate) fn avg_pool3_s2_backward(dout: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let ho = h.div_ceil(2);
    let wo = w.div_ceil(2);
    let mut dx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for oy in 0..ho {
            let (y0, y1) = pool_span(oy, h);
            for ox in 0..wo {
                let (x0, x1) = pool_span(ox, w);
                let g = dout[pl * ho * wo + oy * wo + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        dst[y * w + xx] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Bin `[start, end)` of adaptive pooling cell `i` out of `cells` over `len`.
pub(crate) fn adaptive_bin(i: usize, cells: usize, len: usize) -> (usize, usize) {
    let start = i * len / cells;
    let end = ((i + 1) * len).div_ceil(cells);
    (start, end)
}

pub(crate) fn adaptive_avg_pool(x: &[f64], planes: usize, h: usize, w: usize, cells: usize) -> Vec<f64> {
    let mut out = vec![0.0; planes * cells * cells];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        for cy in 0..cells {
            let (y0, y1) = adaptive_bin(cy, cells, h);
            for cx in 0..cells {
                let (x0, x1) = adaptive_bin(cx, cells, w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += src[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                out[pl * cells * cells + cy * cells + cx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

pub(crate) fn adaptive_avg_pool_backward(dout: &[f64], planes: usize, h: usize, w: usize, cells: usize) -> Vec<f64> {
    let mut dx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for cy in 0..cells {
            let (y0, y1) = adaptive_bin(cy, cells, h);
            for cx in 0..cells {
                let (x0, x1) = adaptive_bin(cx, cells, w);
                let g = dout[pl * cells * cells + cy * cells + cx] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    dst[y * w + x0..y * w + x1].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    dx
}

type Taps = Vec<(usize, usize, f64)>;

fn resize_taps(len_in: usize, len_out: usize) -> Taps {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out).map(|o| bilinear_coord(o, scale, len_in)).collect()
}

/// Bilinear resize with half-pixel centers (no corner alignment).
pub(crate) fn resize_bilinear(x: &[f64], planes: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let ty = resize_taps(h, ho);
    let tx = resize_taps(w, wo);
    let mut out = vec![0.0; planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * ho * wo..(pl + 1) * ho * wo];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                let bottom = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                dst[oy * wo + ox] = top * (1.0 - ly) + bottom * ly;
            }
        }
    }
    out
}

pub(crate) fn resize_bilinear_backward(dout: &[f64], planes: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let ty = resize_taps(h, ho);
    let tx = resize_taps(w, wo);
    let mut dx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        let src = &dout[pl * ho * wo..(pl + 1) * ho * wo];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let g = src[oy * wo + ox];
                dst[y0 * w + x0] += g * (1.0 - ly) * (1.0 - lx);
                dst[y0 * w + x1] += g * (1.0 - ly) * lx;
                dst[y1 * w + x0] += g * ly * (1.0 - lx);
                dst[y1 * w + x1] += g * ly * lx;
            }
        }
    }
    dx
}
