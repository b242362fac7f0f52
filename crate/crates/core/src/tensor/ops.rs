//! Differentiable operations recorded on a [`Tape`].

use std::rc::Rc;

use super::kernels::{self, axis_split, ConvGeom};
use super::tape::{Tape, Var};
use super::{strides, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape")
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.rc(a), self.rc(b));
        same_shape("add", &ta, &tb)?;
        let out = zip_map(&ta, &tb, |x, y| x + y);
        self.push("add", out, &[a, b], Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.rc(a), self.rc(b));
        same_shape("sub", &ta, &tb)?;
        let out = zip_map(&ta, &tb, |x, y| x - y);
        self.push(
            "sub",
            out,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.rc(a), self.rc(b));
        same_shape("mul", &ta, &tb)?;
        let out = zip_map(&ta, &tb, |x, y| x * y);
        self.push(
            "mul",
            out,
            &[a, b],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| zip_map(g, &tb, |x, y| x * y)),
                    need[1].then(|| zip_map(g, &ta, |x, y| x * y)),
                ]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * factor);
        self.push("scale", out, &[a], Box::new(move |g, _| vec![Some(g.map(|v| v * factor))]))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let s: f64 = self.value(a).data().iter().sum();
        self.push(
            "sum",
            Tensor::scalar(s),
            &[a],
            Box::new(move |g, _| vec![Some(Tensor::full(shape, g.item()))]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.rc(a);
        let out = x.map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(
            "relu",
            out,
            &[a],
            Box::new(move |g, _| vec![Some(zip_map(g, &x, |g, v| if v > 0.0 { g } else { 0.0 }))]),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let y = Rc::new(out.clone());
        self.push(
            "sigmoid",
            out,
            &[a],
            Box::new(move |g, _| vec![Some(zip_map(g, &y, |g, s| g * s * (1.0 - s)))]),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let from = self.shape(a).to_vec();
        let out = self.value(a).reshape(shape)?;
        self.push(
            "reshape",
            out,
            &[a],
            Box::new(move |g, _| vec![Some(g.reshape(from).expect("shape"))]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let x = self.rc(a);
        let n = x.ndim();
        let mut seen = vec![false; n];
        if axes.len() != n || axes.iter().any(|&ax| ax >= n || std::mem::replace(&mut seen[ax], true)) {
            return Err(Error::shape("permute", format!("{axes:?} is not a permutation of {n} axes")));
        }
        let out = permute_tensor(&x, axes);
        let mut inverse = vec![0; n];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.push(
            "permute",
            out,
            &[a],
            Box::new(move |g, _| vec![Some(permute_tensor(g, &inverse))]),
        )
    }

    /// Sums out `axis` (the axis is removed from the shape).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.rc(a);
        if axis >= x.ndim() {
            return Err(Error::shape("sum_axis", format!("axis {axis} out of range for {:?}", x.shape())));
        }
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x.data()[(o * len + k) * inner..][..inner];
                for (d, s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let in_shape = x.shape().to_vec();
        self.push(
            "sum_axis",
            Tensor::new(shape, out)?,
            &[a],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        gx[(o * len + k) * inner..][..inner]
                            .copy_from_slice(&g.data()[o * inner..][..inner]);
                    }
                }
                vec![Some(Tensor::new(in_shape, gx).expect("shape"))]
            }),
        )
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax_axis(self.value(a), axis)?;
        let y = Rc::new(out.clone());
        self.push(
            "softmax",
            out,
            &[a],
            Box::new(move |g, _| vec![Some(kernels::softmax_backward(&y, g, axis))]),
        )
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.rc(x), self.rc(w));
        let tb = b.map(|b| self.rc(b));
        let out = kernels::linear(&tx, &tw, tb.as_deref())?;
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            "linear",
            out,
            &parents,
            Box::new(move |g, need| {
                let (gx, gw, gb) = kernels::linear_backward(&tx, &tw, g, need[0], need[1]);
                let mut v = vec![gx, gw];
                if need.len() == 3 {
                    v.push(need[2].then_some(gb));
                }
                v
            }),
        )
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (tx, tw) = (self.rc(x), self.rc(w));
        let tb = b.map(|b| self.rc(b));
        let out = kernels::conv2d(&tx, &tw, tb.as_deref(), stride, pad)?;
        let geom = ConvGeom::new(tx.shape(), tw.shape(), stride, pad)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            "conv2d",
            out,
            &parents,
            Box::new(move |g, need| {
                let (gx, gw, gb) = kernels::conv2d_backward(&tx, &tw, g, &geom, need[0], need[1]);
                let mut v = vec![gx, gw];
                if need.len() == 3 {
                    v.push(need[2].then_some(gb));
                }
                v
            }),
        )
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = kernels::global_avg_pool(self.value(x))?;
        let in_shape = self.shape(x).to_vec();
        self.push(
            "global_avg_pool",
            out,
            &[x],
            Box::new(move |g, _| {
                let plane = in_shape[2] * in_shape[3];
                let scale = 1.0 / plane as f64;
                let mut gx = Vec::with_capacity(in_shape.iter().product());
                for &gv in g.data() {
                    gx.extend(std::iter::repeat_n(gv * scale, plane));
                }
                vec![Some(Tensor::new(in_shape, gx).expect("shape"))]
            }),
        )
    }

    /// Normalization over all of `C x H x W` per sample (a single group),
    /// followed by a per-channel affine transform.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.rc(x);
        let [n, c, h, w] = *tx.shape() else {
            return Err(Error::shape("group_norm", format!("input must be 4-D, got {:?}", tx.shape())));
        };
        let (tg, tb) = (self.rc(gamma), self.rc(beta));
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(Error::shape("group_norm", format!("affine parameters must be [{c}]")));
        }
        let plane = h * w;
        let per = c * plane;
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; tx.numel()];
        for s in 0..n {
            let xs = &tx.data()[s * per..][..per];
            let mean = xs.iter().sum::<f64>() / per as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[s] = is;
            for ch in 0..c {
                for i in 0..plane {
                    let j = s * per + ch * plane + i;
                    let xh = (tx.data()[j] - mean) * is;
                    xhat[j] = xh;
                    out[j] = tg.data()[ch] * xh + tb.data()[ch];
                }
            }
        }
        let xhat = Tensor::new(tx.shape(), xhat)?;
        self.push(
            "group_norm",
            Tensor::new(tx.shape(), out)?,
            &[x, gamma, beta],
            Box::new(move |g, _| {
                let gd = g.data();
                let xh = xhat.data();
                let mut gx = vec![0.0; xh.len()];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for s in 0..n {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for ch in 0..c {
                        for i in 0..plane {
                            let j = s * per + ch * plane + i;
                            ggamma[ch] += gd[j] * xh[j];
                            gbeta[ch] += gd[j];
                            let d = gd[j] * tg.data()[ch];
                            mean_d += d;
                            mean_dx += d * xh[j];
                        }
                    }
                    mean_d /= per as f64;
                    mean_dx /= per as f64;
                    for ch in 0..c {
                        for i in 0..plane {
                            let j = s * per + ch * plane + i;
                            let d = gd[j] * tg.data()[ch];
                            gx[j] = inv_std[s] * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
                vec![
                    Some(Tensor::new(xhat.shape(), gx).expect("shape")),
                    Some(Tensor::new([c], ggamma).expect("shape")),
                    Some(Tensor::new([c], gbeta).expect("shape")),
                ]
            }),
        )
    }

    /// `x[n, c, :, :] * gate[n, c]`.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (tx, tg) = (self.rc(x), self.rc(gate));
        let [n, c, h, w] = *tx.shape() else {
            return Err(Error::shape("channel_scale", format!("input must be 4-D, got {:?}", tx.shape())));
        };
        if tg.shape() != [n, c] {
            return Err(Error::shape(
                "channel_scale",
                format!("gate must be [{n}, {c}], got {:?}", tg.shape()),
            ));
        }
        let plane = h * w;
        let out: Vec<f64> = tx
            .data()
            .chunks_exact(plane)
            .zip(tg.data())
            .flat_map(|(p, &s)| p.iter().map(move |v| v * s))
            .collect();
        self.push(
            "channel_scale",
            Tensor::new(tx.shape(), out)?,
            &[x, gate],
            Box::new(move |g, need| {
                let gx = need[0].then(|| {
                    let d = g
                        .data()
                        .chunks_exact(plane)
                        .zip(tg.data())
                        .flat_map(|(p, &s)| p.iter().map(move |v| v * s))
                        .collect();
                    Tensor::new(tx.shape(), d).expect("shape")
                });
                let gg = need[1].then(|| {
                    let d = g
                        .data()
                        .chunks_exact(plane)
                        .zip(tx.data().chunks_exact(plane))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect();
                    Tensor::new([n, c], d).expect("shape")
                });
                vec![gx, gg]
            }),
        )
    }

    /// Grouped bilinear sampling with border-zero policy.
    /// `maps: G x C x H x W`, `points: M x P x 2` in `(y, x)` pixel coordinates,
    /// `groups[m]` selects the map for point row `m`. Output `M x P x C`.
    pub fn sample_points(&mut self, maps: Var, groups: Vec<usize>, points: Var) -> Result<Var> {
        let (tm, tp) = (self.rc(maps), self.rc(points));
        let out = kernels::sample_grouped(&tm, &groups, &tp)?;
        self.push(
            "sample_points",
            out,
            &[maps, points],
            Box::new(move |g, need| {
                let (gm, gp) =
                    kernels::sample_grouped_backward(&tm, &groups, &tp, g, need[0], need[1]);
                vec![gm, gp]
            }),
        )
    }

    /// `out[..., c] = sum_k weights[..., k] * values[..., k, c]`.
    pub fn weighted_sum(&mut self, values: Var, weights: Var) -> Result<Var> {
        let (tv, tw) = (self.rc(values), self.rc(weights));
        let vs = tv.shape();
        if vs.len() < 2 || tw.shape() != &vs[..vs.len() - 1] {
            return Err(Error::shape(
                "weighted_sum",
                format!("values {:?} incompatible with weights {:?}", vs, tw.shape()),
            ));
        }
        let c = vs[vs.len() - 1];
        let k = vs[vs.len() - 2];
        let rows = tw.numel() / k;
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            let o = &mut out[r * c..][..c];
            for j in 0..k {
                let a = tw.data()[r * k + j];
                for (d, v) in o.iter_mut().zip(&tv.data()[(r * k + j) * c..][..c]) {
                    *d += a * v;
                }
            }
        }
        let mut shape = vs[..vs.len() - 2].to_vec();
        shape.push(c);
        self.push(
            "weighted_sum",
            Tensor::new(shape, out)?,
            &[values, weights],
            Box::new(move |g, need| {
                let gd = g.data();
                let mut gv = need[0].then(|| vec![0.0; tv.numel()]);
                let mut gw = need[1].then(|| vec![0.0; tw.numel()]);
                for r in 0..rows {
                    let go = &gd[r * c..][..c];
                    for j in 0..k {
                        let idx = r * k + j;
                        if let Some(gv) = gv.as_mut() {
                            let a = tw.data()[idx];
                            for (d, g) in gv[idx * c..][..c].iter_mut().zip(go) {
                                *d = a * g;
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[idx] = tv.data()[idx * c..][..c].iter().zip(go).map(|(v, g)| v * g).sum();
                        }
                    }
                }
                vec![
                    gv.map(|d| Tensor::new(tv.shape(), d).expect("shape")),
                    gw.map(|d| Tensor::new(tw.shape(), d).expect("shape")),
                ]
            }),
        )
    }

    /// `out[n, c, h, w] = sum_t alpha[n, t, c] * f[n, t, c, h, w]`.
    pub fn temporal_collapse(&mut self, f: Var, alpha: Var) -> Result<Var> {
        let (tf, ta) = (self.rc(f), self.rc(alpha));
        let [n, t, c, h, w] = *tf.shape() else {
            return Err(Error::shape("temporal_collapse", format!("features must be 5-D, got {:?}", tf.shape())));
        };
        if ta.shape() != [n, t, c] {
            return Err(Error::shape(
                "temporal_collapse",
                format!("weights must be [{n}, {t}, {c}], got {:?}", ta.shape()),
            ));
        }
        let plane = h * w;
        let mut out = vec![0.0; n * c * plane];
        for s in 0..n {
            for ti in 0..t {
                for ch in 0..c {
                    let a = ta.data()[(s * t + ti) * c + ch];
                    let src = &tf.data()[((s * t + ti) * c + ch) * plane..][..plane];
                    for (d, v) in out[(s * c + ch) * plane..][..plane].iter_mut().zip(src) {
                        *d += a * v;
                    }
                }
            }
        }
        self.push(
            "temporal_collapse",
            Tensor::new([n, c, h, w], out)?,
            &[f, alpha],
            Box::new(move |g, need| {
                let gd = g.data();
                let mut gf = need[0].then(|| vec![0.0; tf.numel()]);
                let mut ga = need[1].then(|| vec![0.0; ta.numel()]);
                for s in 0..n {
                    for ti in 0..t {
                        for ch in 0..c {
                            let ai = (s * t + ti) * c + ch;
                            let go = &gd[(s * c + ch) * plane..][..plane];
                            if let Some(gf) = gf.as_mut() {
                                let a = ta.data()[ai];
                                for (d, g) in gf[ai * plane..][..plane].iter_mut().zip(go) {
                                    *d = a * g;
                                }
                            }
                            if let Some(ga) = ga.as_mut() {
                                let src = &tf.data()[ai * plane..][..plane];
                                ga[ai] = src.iter().zip(go).map(|(v, g)| v * g).sum();
                            }
                        }
                    }
                }
                vec![
                    gf.map(|d| Tensor::new(tf.shape(), d).expect("shape")),
                    ga.map(|d| Tensor::new(ta.shape(), d).expect("shape")),
                ]
            }),
        )
    }

    /// Reads `x[n, :, :, y, x]` at each site `(n, y, x)`: `N x T x C x H x W -> R x T x C`.
    pub fn gather_sites(&mut self, x: Var, sites: Rc<[(usize, usize, usize)]>) -> Result<Var> {
        let tx = self.rc(x);
        let (n, t, c, h, w) = site_dims("gather_sites", tx.shape(), &sites)?;
        let plane = h * w;
        let r = sites.len();
        let mut out = vec![0.0; r * t * c];
        for (ri, &(s, y, xx)) in sites.iter().enumerate() {
            for tc in 0..t * c {
                out[ri * t * c + tc] = tx.data()[(s * t * c + tc) * plane + y * w + xx];
            }
        }
        let in_shape = [n, t, c, h, w];
        self.push(
            "gather_sites",
            Tensor::new([r, t, c], out)?,
            &[x],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; in_shape.iter().product()];
                for (ri, &(s, y, xx)) in sites.iter().enumerate() {
                    for tc in 0..t * c {
                        gx[(s * t * c + tc) * plane + y * w + xx] += g.data()[ri * t * c + tc];
                    }
                }
                vec![Some(Tensor::new(in_shape, gx).expect("shape"))]
            }),
        )
    }

    /// `base` plus `vals` (`R x T x C`) added at each site `(n, y, x)`;
    /// every other location of `base` passes through unchanged.
    pub fn scatter_add_sites(
        &mut self,
        base: Var,
        vals: Var,
        sites: Rc<[(usize, usize, usize)]>,
    ) -> Result<Var> {
        let (tb, tv) = (self.rc(base), self.rc(vals));
        let (_, t, c, h, w) = site_dims("scatter_add_sites", tb.shape(), &sites)?;
        let r = sites.len();
        if tv.shape() != [r, t, c] {
            return Err(Error::shape(
                "scatter_add_sites",
                format!("values must be [{r}, {t}, {c}], got {:?}", tv.shape()),
            ));
        }
        let plane = h * w;
        let mut out = tb.data().to_vec();
        for (ri, &(s, y, xx)) in sites.iter().enumerate() {
            for tc in 0..t * c {
                out[(s * t * c + tc) * plane + y * w + xx] += tv.data()[ri * t * c + tc];
            }
        }
        self.push(
            "scatter_add_sites",
            Tensor::new(tb.shape(), out)?,
            &[base, vals],
            Box::new(move |g, need| {
                let gv = need[1].then(|| {
                    let mut d = vec![0.0; r * t * c];
                    for (ri, &(s, y, xx)) in sites.iter().enumerate() {
                        for tc in 0..t * c {
                            d[ri * t * c + tc] = g.data()[(s * t * c + tc) * plane + y * w + xx];
                        }
                    }
                    Tensor::new([r, t, c], d).expect("shape")
                });
                vec![need[0].then(|| g.clone()), gv]
            }),
        )
    }

    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = kernels::upsample_bilinear(self.value(x), out_h, out_w)?;
        let in_shape = self.shape(x).to_vec();
        self.push(
            "upsample_bilinear",
            out,
            &[x],
            Box::new(move |g, _| vec![Some(kernels::upsample_bilinear_backward(&in_shape, g))]),
        )
    }

    /// Mean per-pixel softmax cross-entropy over `N x K x H x W` logits;
    /// pixels labelled `ignore_index` are excluded.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], ignore_index: usize) -> Result<Var> {
        let tl = self.rc(logits);
        let [n, k, h, w] = *tl.shape() else {
            return Err(Error::shape("cross_entropy", format!("logits must be 4-D, got {:?}", tl.shape())));
        };
        let plane = h * w;
        if labels.len() != n * plane {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for {} pixels", labels.len(), n * plane),
            ));
        }
        let mut probs = vec![0.0; tl.numel()];
        let mut total = 0.0;
        let mut count = 0usize;
        for s in 0..n {
            for p in 0..plane {
                let label = labels[s * plane + p];
                if label == ignore_index {
                    continue;
                }
                if label >= k {
                    return Err(Error::InvalidArgument(format!(
                        "label {label} out of range for {k} classes"
                    )));
                }
                let idx = |c: usize| (s * k + c) * plane + p;
                let max = (0..k).map(|c| tl.data()[idx(c)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..k).map(|c| (tl.data()[idx(c)] - max).exp()).sum();
                for c in 0..k {
                    probs[idx(c)] = (tl.data()[idx(c)] - max).exp() / z;
                }
                total += z.ln() + max - tl.data()[idx(label)];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument("every pixel is ignored".into()));
        }
        let labels = labels.to_vec();
        let shape = tl.shape().to_vec();
        self.push(
            "cross_entropy",
            Tensor::scalar(total / count as f64),
            &[logits],
            Box::new(move |g, _| {
                let scale = g.item() / count as f64;
                let mut gl = vec![0.0; probs.len()];
                for s in 0..n {
                    for p in 0..plane {
                        let label = labels[s * plane + p];
                        if label == ignore_index {
                            continue;
                        }
                        for c in 0..k {
                            let i = (s * k + c) * plane + p;
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            gl[i] = (probs[i] - onehot) * scale;
                        }
                    }
                }
                vec![Some(Tensor::new(shape, gl).expect("shape"))]
            }),
        )
    }
}

fn site_dims(
    op: &'static str,
    shape: &[usize],
    sites: &[(usize, usize, usize)],
) -> Result<(usize, usize, usize, usize, usize)> {
    let [n, t, c, h, w] = *shape else {
        return Err(Error::shape(op, format!("input must be 5-D, got {shape:?}")));
    };
    if sites.is_empty() {
        return Err(Error::InvalidArgument(format!("{op}: empty site list")));
    }
    if let Some(&(s, y, x)) = sites.iter().find(|&&(s, y, x)| s >= n || y >= h || x >= w) {
        return Err(Error::shape(
            op,
            format!("site ({s}, {y}, {x}) outside [{n}, {h}, {w}]"),
        ));
    }
    Ok((n, t, c, h, w))
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn permute_tensor(x: &Tensor, axes: &[usize]) -> Tensor {
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let nd = out_shape.len();
    let mut out = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..x.numel() {
        out.push(x.data()[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_round_trip() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([2, 3, 4], |i| i as f64));
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(p), &[4, 2, 3]);
        assert_eq!(tape.value(p).at(&[3, 1, 2]), tape.value(x).at(&[1, 2, 3]));
        let back = tape.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(back), tape.value(x));
        assert!(tape.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::full([1, 4, 2, 3], 0.7));
        let loss = tape.cross_entropy(l, &[0, 1, 2, 3, 255, 1], 255).unwrap();
        assert!((tape.value(loss).item() - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_two_pixel_hand_case() {
        let mut tape = Tape::new();
        // pixel 0 logits (1, 2), label 1; pixel 1 logits (0.5, -1), label 0.
        let l = tape.constant(Tensor::new([1, 2, 1, 2], vec![1.0, 0.5, 2.0, -1.0]).unwrap());
        let loss = tape.cross_entropy(l, &[1, 0], 255).unwrap();
        let p0 = -(2f64.exp() / (1f64.exp() + 2f64.exp())).ln();
        let p1 = -(0.5f64.exp() / (0.5f64.exp() + (-1f64).exp())).ln();
        assert!((tape.value(loss).item() - (p0 + p1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_is_near_zero() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::new([1, 2, 1, 2], vec![50.0, -50.0, -50.0, 50.0]).unwrap());
        let loss = tape.cross_entropy(l, &[0, 1], 255).unwrap();
        assert!(tape.value(loss).item() < 1e-40);
    }

    #[test]
    fn cross_entropy_all_ignored_fails() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros([1, 2, 1, 2]));
        assert!(tape.cross_entropy(l, &[255, 255], 255).is_err());
        assert!(tape.cross_entropy(l, &[0, 2], 255).is_err());
    }

    #[test]
    fn scatter_touches_only_sites() {
        let mut tape = Tape::new();
        let base = tape.constant(Tensor::from_fn([2, 2, 1, 3, 3], |i| i as f64));
        let sites: Rc<[(usize, usize, usize)]> = vec![(1, 0, 2), (0, 1, 1)].into();
        let vals = tape.constant(Tensor::full([2, 2, 1], 100.0));
        let out = tape.scatter_add_sites(base, vals, sites.clone()).unwrap();
        let (b, o) = (tape.value(base).clone(), tape.value(out).clone());
        let mut changed = 0;
        for (i, (x, y)) in b.data().iter().zip(o.data()).enumerate() {
            if x != y {
                changed += 1;
                assert_eq!(y - x, 100.0, "index {i}");
            }
        }
        assert_eq!(changed, 4);
        let g = tape.gather_sites(out, sites).unwrap();
        assert_eq!(tape.value(g).data(), &[120.0, 129.0, 104.0, 113.0]);
    }
}
