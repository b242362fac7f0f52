//! Eager forward kernels and the matching backward kernels used by [`Tape`](super::Tape).
//!
//! All reductions run in a fixed loop order, so results are bit-reproducible.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [n, cin, h, w] = *input else {
            return Err(Error::shape("conv2d", format!("input must be 4-D, got {input:?}")));
        };
        let [cout, wcin, kh, kw] = *weight else {
            return Err(Error::shape("conv2d", format!("weight must be 4-D, got {weight:?}")));
        };
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel must be odd-sized, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            ));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }
}

/// Output index range `[lo, hi)` along one axis for which `o * stride + k - pad`
/// lands inside `[0, len_in)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, len_in: usize, len_out: usize) -> (usize, usize) {
    let off = k as isize - pad as isize;
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let max_num = len_in as isize - 1 - off;
    if max_num < 0 {
        return (0, 0);
    }
    let hi = len_out.min(max_num as usize / stride + 1);
    if lo >= hi {
        (0, 0)
    } else {
        (lo, hi)
    }
}

/// `c = a b + beta c` for row-major operands given by (rows, cols) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: every operand slice covers the strided extent addressed by dgemm.
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
            n as isize,
            1,
        );
    }
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one sample into `(cin * kh * kw) x (ho * wo)` columns.
fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    col.fill(0.0);
    for ci in 0..g.cin {
        let in_plane = &x[ci * plane_in..][..plane_in];
        for ky in 0..g.kh {
            let (ylo, yhi) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
            for kx in 0..g.kw {
                let (xlo, xhi) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                let row = &mut col[((ci * g.kh + ky) * g.kw + kx) * plane_out..][..plane_out];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let in_row = &in_plane[iy * g.w..][..g.w];
                    let out_row = &mut row[oy * g.wo..][..g.wo];
                    for ox in xlo..xhi {
                        out_row[ox] = in_row[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into one sample.
fn col2im(col: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    for ci in 0..g.cin {
        let in_plane = &mut x[ci * plane_in..][..plane_in];
        for ky in 0..g.kh {
            let (ylo, yhi) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
            for kx in 0..g.kw {
                let (xlo, xhi) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                let row = &col[((ci * g.kh + ky) * g.kw + kx) * plane_out..][..plane_out];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let in_row = &mut in_plane[iy * g.w..][..g.w];
                    let src = &row[oy * g.wo..][..g.wo];
                    for ox in xlo..xhi {
                        in_row[ox * g.stride + kx - g.pad] += src[ox];
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip).
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias must be [{}], got {:?}", g.cout, b.shape()),
            ));
        }
    }
    let x = input.data();
    let wt = weight.data();
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let kdim = g.cin * g.kh * g.kw;
    let mut out = vec![0.0; g.n * g.cout * plane_out];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; kdim * plane_out] };
    for n in 0..g.n {
        let xs = &x[n * g.cin * plane_in..][..g.cin * plane_in];
        let cols: &[f64] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut col);
            &col
        };
        let o = &mut out[n * g.cout * plane_out..][..g.cout * plane_out];
        let beta = match bias {
            Some(b) => {
                for (plane, &bv) in o.chunks_exact_mut(plane_out).zip(b.data()) {
                    plane.fill(bv);
                }
                1.0
            }
            None => 0.0,
        };
        gemm(g.cout, kdim, plane_out, wt, (kdim, 1), cols, (plane_out, 1), beta, o);
    }
    Tensor::new([g.n, g.cout, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    g: &ConvGeom,
    need_input: bool,
    need_weight: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let kdim = g.cin * g.kh * g.kw;
    let mut gin = need_input.then(|| vec![0.0; input.numel()]);
    let mut gw = need_weight.then(|| vec![0.0; weight.numel()]);
    let mut gb = vec![0.0; g.cout];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; kdim * plane_out] };

    for n in 0..g.n {
        let gos = &go[n * g.cout * plane_out..][..g.cout * plane_out];
        for (b, plane) in gb.iter_mut().zip(gos.chunks_exact(plane_out)) {
            *b += plane.iter().sum::<f64>();
        }
        let xs = &x[n * g.cin * plane_in..][..g.cin * plane_in];
        if let Some(gw) = gw.as_mut() {
            let cols: &[f64] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, g, &mut col);
                &col
            };
            // gW += gO colsᵀ
            gemm(g.cout, plane_out, kdim, gos, (plane_out, 1), cols, (1, plane_out), 1.0, gw);
        }
        if let Some(gi) = gin.as_mut() {
            let gis = &mut gi[n * g.cin * plane_in..][..g.cin * plane_in];
            // gcol = Wᵀ gO
            if g.is_pointwise() {
                gemm(kdim, g.cout, plane_out, wt, (1, kdim), gos, (plane_out, 1), 0.0, gis);
            } else {
                gemm(kdim, g.cout, plane_out, wt, (1, kdim), gos, (plane_out, 1), 0.0, &mut col);
                col2im(&col, g, gis);
            }
        }
    }
    (
        gin.map(|d| Tensor::new(input.shape(), d).expect("shape")),
        gw.map(|d| Tensor::new(weight.shape(), d).expect("shape")),
        Tensor::new([g.cout], gb).expect("shape"),
    )
}

/// `y = x W + b` along the trailing dimension of `x`; `w` is `Din x Dout`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (rows, din, dout) = linear_dims(x.shape(), w.shape(), b.map(|b| b.shape()))?;
    let mut out = vec![0.0; rows * dout];
    let beta = match b {
        Some(b) => {
            for y in out.chunks_exact_mut(dout) {
                y.copy_from_slice(b.data());
            }
            1.0
        }
        None => 0.0,
    };
    gemm(rows, din, dout, x.data(), (din, 1), w.data(), (dout, 1), beta, &mut out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::new(shape, out)
}

pub(crate) fn linear_dims(
    x: &[usize],
    w: &[usize],
    b: Option<&[usize]>,
) -> Result<(usize, usize, usize)> {
    let [din, dout] = *w else {
        return Err(Error::shape("linear", format!("weight must be 2-D, got {w:?}")));
    };
    let Some(&last) = x.last() else {
        return Err(Error::shape("linear", "input must have at least one dimension"));
    };
    if last != din {
        return Err(Error::shape(
            "linear",
            format!("input trailing dim {last} does not match weight rows {din}"),
        ));
    }
    if let Some(b) = b {
        if b != [dout] {
            return Err(Error::shape("linear", format!("bias must be [{dout}], got {b:?}")));
        }
    }
    Ok((x.iter().product::<usize>() / din, din, dout))
}

pub(crate) fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let [din, dout] = *w.shape() else { unreachable!() };
    let rows = x.numel() / din;
    let gy = grad_out.data();
    let mut gb = vec![0.0; dout];
    for gyr in gy.chunks_exact(dout) {
        for (b, &g) in gb.iter_mut().zip(gyr) {
            *b += g;
        }
    }
    let gx = need_x.then(|| {
        let mut d = vec![0.0; x.numel()];
        gemm(rows, dout, din, gy, (dout, 1), w.data(), (1, dout), 0.0, &mut d);
        Tensor::new(x.shape(), d).expect("shape")
    });
    let gw = need_w.then(|| {
        let mut d = vec![0.0; w.numel()];
        gemm(din, rows, dout, x.data(), (1, din), gy, (dout, 1), 0.0, &mut d);
        Tensor::new(w.shape(), d).expect("shape")
    });
    (gx, gw, Tensor::new([dout], gb).expect("shape"))
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis` (max subtraction).
pub fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.ndim() {
        return Err(Error::shape(
            "softmax_axis",
            format!("axis {axis} out of range for {:?}", x.shape()),
        ));
    }
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let idx = |k: usize| base + k * inner;
            let max = (0..len).map(|k| xd[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..len {
                let e = (xd[idx(k)] - max).exp();
                out[idx(k)] = e;
                sum += e;
            }
            for k in 0..len {
                out[idx(k)] /= sum;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_backward(y: &Tensor, grad_out: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let yd = y.data();
    let gd = grad_out.data();
    let mut gx = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len).map(|k| yd[base + k * inner] * gd[base + k * inner]).sum();
            for k in 0..len {
                let j = base + k * inner;
                gx[j] = yd[j] * (gd[j] - dot);
            }
        }
    }
    Tensor::new(y.shape(), gx).expect("shape")
}

/// Spatial mean: `N x C x H x W -> N x C`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = *x.shape() else {
        return Err(Error::shape(
            "global_avg_pool",
            format!("input must be 4-D, got {:?}", x.shape()),
        ));
    };
    let plane = h * w;
    let out = x
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new([n, c], out)
}

/// One bilinear tap: flat texel offset within a `H x W` plane, interpolation
/// weight, and the weight's derivatives with respect to `y` and `x`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub offset: usize,
    pub weight: f64,
    pub dy: f64,
    pub dx: f64,
}

/// The in-bounds taps of a bilinear sample at fractional `(y, x)`.
/// Out-of-bounds texels are dropped (border-zero policy).
#[inline]
pub(crate) fn bilinear_taps(y: f64, x: f64, h: usize, w: usize) -> ([Tap; 4], usize) {
    let empty = Tap {
        offset: 0,
        weight: 0.0,
        dy: 0.0,
        dx: 0.0,
    };
    let mut taps = [empty; 4];
    let mut count = 0;
    if !(y > -1.0 && x > -1.0 && y < h as f64 && x < w as f64) {
        return (taps, 0);
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let ly = y - y0;
    let lx = x - x0;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let corners = [
        (0, 0, (1.0 - ly) * (1.0 - lx), -(1.0 - lx), -(1.0 - ly)),
        (0, 1, (1.0 - ly) * lx, -lx, 1.0 - ly),
        (1, 0, ly * (1.0 - lx), 1.0 - lx, -ly),
        (1, 1, ly * lx, lx, ly),
    ];
    for (oy, ox, weight, dy, dx) in corners {
        let ty = y0 + oy;
        let tx = x0 + ox;
        if ty >= 0 && tx >= 0 && (ty as usize) < h && (tx as usize) < w {
            taps[count] = Tap {
                offset: ty as usize * w + tx as usize,
                weight,
                dy,
                dx,
            };
            count += 1;
        }
    }
    (taps, count)
}

/// Bilinear interpolation of a `C x H x W` map at `K` fractional `(y, x)` points.
/// Returns `K x C`.
pub fn bilinear_sample(map: &Tensor, points: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *map.shape() else {
        return Err(Error::shape(
            "bilinear_sample",
            format!("map must be C x H x W, got {:?}", map.shape()),
        ));
    };
    let [k, 2] = *points.shape() else {
        return Err(Error::shape(
            "bilinear_sample",
            format!("points must be K x 2, got {:?}", points.shape()),
        ));
    };
    let map4 = map.reshape([1, c, h, w])?;
    let pts = points.reshape([1, k, 2])?;
    let out = sample_grouped(&map4, &[0], &pts)?;
    out.reshape([k, c])
}

/// Grouped bilinear sampling: row `m` of `points` (`M x P x 2`) samples map
/// `groups[m]` of `maps` (`G x C x H x W`). Returns `M x P x C`.
pub(crate) fn sample_grouped(maps: &Tensor, groups: &[usize], points: &Tensor) -> Result<Tensor> {
    let (g, c, h, w, m, p) = sample_dims(maps.shape(), groups, points.shape())?;
    let md = maps.data();
    let pd = points.data();
    let plane = h * w;
    let mut out = vec![0.0; m * p * c];
    for (row, &grp) in groups.iter().enumerate() {
        debug_assert!(grp < g);
        let base = grp * c * plane;
        for q in 0..p {
            let pi = (row * p + q) * 2;
            let (taps, count) = bilinear_taps(pd[pi], pd[pi + 1], h, w);
            let o = &mut out[(row * p + q) * c..][..c];
            for tap in &taps[..count] {
                for (ch, oc) in o.iter_mut().enumerate() {
                    *oc += tap.weight * md[base + ch * plane + tap.offset];
                }
            }
        }
    }
    Tensor::new([m, p, c], out)
}

pub(crate) fn sample_dims(
    maps: &[usize],
    groups: &[usize],
    points: &[usize],
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let [g, c, h, w] = *maps else {
        return Err(Error::shape("sample_points", format!("maps must be 4-D, got {maps:?}")));
    };
    let [m, p, 2] = *points else {
        return Err(Error::shape(
            "sample_points",
            format!("points must be M x P x 2, got {points:?}"),
        ));
    };
    if groups.len() != m {
        return Err(Error::shape(
            "sample_points",
            format!("{} group indices for {m} point rows", groups.len()),
        ));
    }
    if let Some(&bad) = groups.iter().find(|&&gi| gi >= g) {
        return Err(Error::shape(
            "sample_points",
            format!("group index {bad} out of range for {g} maps"),
        ));
    }
    Ok((g, c, h, w, m, p))
}

pub(crate) fn sample_grouped_backward(
    maps: &Tensor,
    groups: &[usize],
    points: &Tensor,
    grad_out: &Tensor,
    need_maps: bool,
    need_points: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let [_, c, h, w] = *maps.shape() else { unreachable!() };
    let p = points.shape()[1];
    let plane = h * w;
    let md = maps.data();
    let pd = points.data();
    let gd = grad_out.data();
    let mut gmaps = need_maps.then(|| vec![0.0; maps.numel()]);
    let mut gpts = need_points.then(|| vec![0.0; points.numel()]);
    for (row, &grp) in groups.iter().enumerate() {
        let base = grp * c * plane;
        for q in 0..p {
            let pi = (row * p + q) * 2;
            let (taps, count) = bilinear_taps(pd[pi], pd[pi + 1], h, w);
            let go = &gd[(row * p + q) * c..][..c];
            let mut gy = 0.0;
            let mut gx = 0.0;
            for tap in &taps[..count] {
                let mut dot = 0.0;
                for (ch, &g) in go.iter().enumerate() {
                    let idx = base + ch * plane + tap.offset;
                    dot += g * md[idx];
                    if let Some(gm) = gmaps.as_mut() {
                        gm[idx] += tap.weight * g;
                    }
                }
                gy += tap.dy * dot;
                gx += tap.dx * dot;
            }
            if let Some(gp) = gpts.as_mut() {
                gp[pi] = gy;
                gp[pi + 1] = gx;
            }
        }
    }
    (
        gmaps.map(|d| Tensor::new(maps.shape(), d).expect("shape")),
        gpts.map(|d| Tensor::new(points.shape(), d).expect("shape")),
    )
}

/// Per-output-index source taps for half-pixel bilinear resizing.
pub(crate) fn resize_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len_in - 1);
            let i1 = (i0 + 1).min(len_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of `N x C x H x W` to `N x C x out_h x out_w` (half-pixel centers, edge clamp).
pub fn upsample_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [n, c, h, w] = *x.shape() else {
        return Err(Error::shape("upsample_bilinear", format!("input must be 4-D, got {:?}", x.shape())));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("upsample target must be non-empty".into()));
    }
    let ry = resize_taps(h, out_h);
    let rx = resize_taps(w, out_w);
    let xd = x.data();
    let mut out = vec![0.0; n * c * out_h * out_w];
    for (plane_in, plane_out) in xd.chunks_exact(h * w).zip(out.chunks_exact_mut(out_h * out_w)) {
        for (oy, &(y0, y1, ly)) in ry.iter().enumerate() {
            let r0 = &plane_in[y0 * w..][..w];
            let r1 = &plane_in[y1 * w..][..w];
            let orow = &mut plane_out[oy * out_w..][..out_w];
            for (ox, &(x0, x1, lx)) in rx.iter().enumerate() {
                let top = (1.0 - lx) * r0[x0] + lx * r0[x1];
                let bot = (1.0 - lx) * r1[x0] + lx * r1[x1];
                orow[ox] = (1.0 - ly) * top + ly * bot;
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], out)
}

pub(crate) fn upsample_bilinear_backward(in_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let [_, _, h, w] = *in_shape else { unreachable!() };
    let [_, _, out_h, out_w] = *grad_out.shape() else { unreachable!() };
    let ry = resize_taps(h, out_h);
    let rx = resize_taps(w, out_w);
    let mut gin = vec![0.0; in_shape.iter().product()];
    for (plane_in, plane_out) in gin
        .chunks_exact_mut(h * w)
        .zip(grad_out.data().chunks_exact(out_h * out_w))
    {
        for (oy, &(y0, y1, ly)) in ry.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in rx.iter().enumerate() {
                let g = plane_out[oy * out_w + ox];
                plane_in[y0 * w + x0] += (1.0 - ly) * (1.0 - lx) * g;
                plane_in[y0 * w + x1] += (1.0 - ly) * lx * g;
                plane_in[y1 * w + x0] += ly * (1.0 - lx) * g;
                plane_in[y1 * w + x1] += ly * lx * g;
            }
        }
    }
    Tensor::new(in_shape, gin).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_conv_is_identity() {
        let x = Tensor::from_fn([2, 1, 5, 4], |i| (i as f64 * 0.37).sin());
        let w = Tensor::full([1, 1, 1, 1], 1.0);
        let b = Tensor::zeros([1]);
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_3x3_over_ones_gives_nine() {
        let x = Tensor::full([1, 1, 5, 5], 1.0);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, Some(&Tensor::zeros([1])), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_output_shape_formula() {
        let x = Tensor::zeros([1, 3, 16, 16]);
        let w = Tensor::zeros([8, 3, 3, 3]);
        let y = conv2d(&x, &w, Some(&Tensor::zeros([8])), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 8, 16, 16]);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 8, 8, 8]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_even_kernels() {
        let x = Tensor::zeros([1, 3, 8, 8]);
        assert!(conv2d(&x, &Tensor::zeros([4, 2, 3, 3]), None, 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros([4, 3, 2, 2]), None, 1, 0).is_err());
    }

    #[test]
    fn conv_matches_naive_loops_with_stride_and_padding() {
        let x = Tensor::from_fn([2, 3, 7, 6], |i| ((i * 7919) % 23) as f64 - 11.0);
        let w = Tensor::from_fn([4, 3, 3, 5], |i| ((i * 104729) % 17) as f64 * 0.1 - 0.8);
        let b = Tensor::from_fn([4], |i| i as f64);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 2), (3, 0)] {
            let y = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
            let [_, _, ho, wo] = *y.shape() else { panic!() };
            for n in 0..2 {
                for co in 0..4 {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = b.data()[co];
                            for ci in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..5 {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 {
                                            continue;
                                        }
                                        acc += w.at(&[co, ci, ky, kx])
                                            * x.at(&[n, ci, iy as usize, ix as usize]);
                                    }
                                }
                            }
                            assert!((y.at(&[n, co, oy, ox]) - acc).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn linear_hand_case_and_identity() {
        let x = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let b = Tensor::new([2], vec![0.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), &[1.0, 5.0]);

        let x = Tensor::from_fn([2, 3, 4], |i| i as f64 - 7.5);
        let eye = Tensor::from_fn([4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let y = linear(&x, &eye, None).unwrap();
        assert_eq!(y, x);
        assert!(linear(&x, &Tensor::zeros([3, 4]), None).is_err());
    }

    #[test]
    fn softmax_hand_cases() {
        let x = Tensor::new([2], vec![0.0, 3f64.ln()]).unwrap();
        let y = softmax_axis(&x, 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);

        let c = Tensor::full([3, 5, 2], 4.2);
        let y = softmax_axis(&c, 1).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));

        let x = Tensor::from_fn([3, 4], |i| (i as f64).cos() * 3.0);
        let shifted = x.map(|v| v + 17.0);
        let a = softmax_axis(&x, 1).unwrap();
        let b = softmax_axis(&shifted, 1).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
        assert!(softmax_axis(&x, 2).is_err());
    }

    #[test]
    fn global_avg_pool_cases() {
        let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::full([2, 3, 4, 5], -1.25);
        assert!(global_avg_pool(&c).unwrap().data().iter().all(|&v| v == -1.25));
        assert!(global_avg_pool(&Tensor::zeros([1, 2, 3, 3]))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_hand_cases() {
        let map = Tensor::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pts = Tensor::new([4, 2], vec![1.0, 0.0, 0.5, 0.5, -5.0, -5.0, 1.0, 1.0]).unwrap();
        let s = bilinear_sample(&map, &pts).unwrap();
        assert_eq!(s.shape(), &[4, 1]);
        assert_eq!(s.data(), &[3.0, 2.5, 0.0, 4.0]);
    }

    #[test]
    fn bilinear_border_is_zero_padded() {
        let map = Tensor::full([1, 3, 3], 2.0);
        let pts = Tensor::new([2, 2], vec![-0.5, 0.0, 2.0, 2.75]).unwrap();
        let s = bilinear_sample(&map, &pts).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-15);
        assert!((s.data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let x = Tensor::full([1, 2, 3, 4], 0.7);
        let y = upsample_bilinear(&x, 9, 8).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }
}
