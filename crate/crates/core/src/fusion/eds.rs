//! Frame-to-spike injection at event locations.
//!
//! At every reference point `r` and timestep `t` a shared head reads the
//! spike features and predicts `K` offsets `dr_k` and softmax weights `A_k`.
//! The output there is
//!
//! `sum_k A_k * Proj(F_ANN)[r + dr_k] * F_SNN[t, r + dr_k]`
//!
//! with both factors bilinearly sampled; it is added to the spike features at
//! `r` only. Every other location passes through untouched.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::ReferencePointSet;
use crate::params::{param_fields, uniform};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EdsParams<P> {
    /// `C x 2K`, `(dy, dx)` per point.
    pub offset_w: P,
    pub offset_b: P,
    /// `C x K`.
    pub weight_w: P,
    pub weight_b: P,
    /// `C_ann x C`.
    pub proj_w: P,
    pub proj_b: P,
}

param_fields!(EdsParams { offset_w, offset_b, weight_w, weight_b, proj_w, proj_b });

impl EdsParams<Tensor> {
    /// Zero offset bias and zero projection: a fresh injector adds nothing.
    pub fn init(c: usize, c_ann: usize, points: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if points == 0 {
            return Err(Error::InvalidArgument("EDS needs at least one point".into()));
        }
        Ok(Self {
            offset_w: uniform(&[c, 2 * points], c, rng),
            offset_b: Tensor::zeros([2 * points]),
            weight_w: uniform(&[c, points], c, rng),
            weight_b: uniform(&[points], c, rng),
            proj_w: Tensor::zeros([c_ann, c]),
            proj_b: Tensor::zeros([c]),
        })
    }
}

/// Offsets and weights at every location: `N x T x H x W x K x 2` and
/// `N x T x H x W x K`.
pub fn eds_offsets(f_snn: &Tensor, p: &EdsParams<Tensor>) -> Result<(Tensor, Tensor)> {
    let [n, t, c, h, w] = *f_snn.shape() else {
        return Err(Error::shape("eds_offsets", format!("expected 5-D, got {:?}", f_snn.shape())));
    };
    let k = p.weight_b.numel();
    let mut tape = Tape::new();
    let pv = p.map(&mut |x| tape.constant(x.clone()));
    let f = tape.constant(f_snn.clone());
    let last = tape.permute(f, &[0, 1, 3, 4, 2])?;
    let off = tape.linear(last, pv.offset_w, Some(pv.offset_b))?;
    let off = tape.reshape(off, &[n, t, h, w, k, 2])?;
    let logits = tape.linear(last, pv.weight_w, Some(pv.weight_b))?;
    let a = tape.softmax(logits, 4)?;
    debug_assert_eq!(tape.shape(last)[4], c);
    Ok((tape.value(off).clone(), tape.value(a).clone()))
}

/// Flattens per-sample reference points into `(n, y, x)` sites, checking
/// them against the feature geometry.
pub fn reference_sites(
    refs: &[ReferencePointSet],
    n: usize,
    h: usize,
    w: usize,
) -> Result<Vec<(usize, usize, usize)>> {
    if refs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} reference sets for a batch of {n}",
            refs.len()
        )));
    }
    let mut sites = Vec::new();
    for (s, set) in refs.iter().enumerate() {
        for &(y, x) in &set.points {
            if y >= h || x >= w {
                return Err(Error::InvalidArgument(format!(
                    "reference point ({y}, {x}) of sample {s} outside {h}x{w} features"
                )));
            }
            sites.push((s, y, x));
        }
    }
    Ok(sites)
}

/// Sparse injection of `f_ann` (`N x C_a x H x W`) into `f_snn`
/// (`N x T x C x H x W`). An empty reference set returns `f_snn` itself.
pub fn eds_inject(
    tape: &mut Tape,
    f_snn: Var,
    f_ann: Var,
    refs: &[ReferencePointSet],
    p: &EdsParams<Var>,
) -> Result<Var> {
    let [n, t, c, h, w] = *tape.shape(f_snn) else {
        return Err(Error::shape("eds_inject", format!("spike features must be 5-D, got {:?}", tape.shape(f_snn))));
    };
    let [na, ca, ha, wa] = *tape.shape(f_ann) else {
        return Err(Error::shape("eds_inject", format!("frame features must be 4-D, got {:?}", tape.shape(f_ann))));
    };
    if (na, ha, wa) != (n, h, w) {
        return Err(Error::shape(
            "eds_inject",
            format!("{:?} vs {:?}", tape.shape(f_snn), tape.shape(f_ann)),
        ));
    }
    if tape.shape(p.proj_w) != [ca, c] {
        return Err(Error::shape(
            "eds_inject",
            format!("projection {:?} does not map {ca} to {c} channels", tape.shape(p.proj_w)),
        ));
    }
    let sites = reference_sites(refs, n, h, w)?;
    if sites.is_empty() {
        return Ok(f_snn);
    }
    let r = sites.len();
    let k = tape.shape(p.weight_b)[0];
    let sites: Rc<[(usize, usize, usize)]> = sites.into();

    let at_refs = tape.gather_sites(f_snn, Rc::clone(&sites))?;
    let off = tape.linear(at_refs, p.offset_w, Some(p.offset_b))?;
    let off = tape.reshape(off, &[r, t * k, 2])?;
    let anchors = Tensor::from_fn([r, t * k, 2], |i| {
        let (_, y, x) = sites[i / (2 * t * k)];
        if i % 2 == 0 {
            y as f64
        } else {
            x as f64
        }
    });
    let anchors = tape.constant(anchors);
    let positions = tape.add(anchors, off)?;
    let logits = tape.linear(at_refs, p.weight_w, Some(p.weight_b))?;
    let weights = tape.softmax(logits, 2)?;

    let nhwc = tape.permute(f_ann, &[0, 2, 3, 1])?;
    let proj = tape.linear(nhwc, p.proj_w, Some(p.proj_b))?;
    let proj = tape.permute(proj, &[0, 3, 1, 2])?;
    let ann = tape.sample_points(proj, sites.iter().map(|s| s.0).collect(), positions)?;

    let maps = tape.reshape(f_snn, &[n * t, c, h, w])?;
    let per_step = tape.reshape(positions, &[r * t, k, 2])?;
    let groups = sites
        .iter()
        .flat_map(|&(s, _, _)| (0..t).map(move |ti| s * t + ti))
        .collect();
    let snn = tape.sample_points(maps, groups, per_step)?;
    let snn = tape.reshape(snn, &[r, t * k, c])?;

    let prod = tape.mul(ann, snn)?;
    let prod = tape.reshape(prod, &[r, t, k, c])?;
    let out = tape.weighted_sum(prod, weights)?;
    tape.scatter_add_sites(f_snn, out, sites)
}

/// Softmax weights at every reference point, `R x T x K`. Exposed for
/// normalization checks.
pub fn eds_attention_weights(
    tape: &mut Tape,
    f_snn: Var,
    refs: &[ReferencePointSet],
    p: &EdsParams<Var>,
) -> Result<Option<Var>> {
    let [n, _, _, h, w] = *tape.shape(f_snn) else {
        return Err(Error::shape("eds_attention_weights", "spike features must be 5-D"));
    };
    let sites = reference_sites(refs, n, h, w)?;
    if sites.is_empty() {
        return Ok(None);
    }
    let at_refs = tape.gather_sites(f_snn, sites.into())?;
    let logits = tape.linear(at_refs, p.weight_w, Some(p.weight_b))?;
    tape.softmax(logits, 2).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    fn refs(points: Vec<(usize, usize)>, h: usize, w: usize) -> ReferencePointSet {
        ReferencePointSet {
            points,
            height: h,
            width: w,
            scale: 1,
        }
    }

    fn run(
        f_snn: &Tensor,
        f_ann: &Tensor,
        r: &[ReferencePointSet],
        p: &EdsParams<Tensor>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = p.map(&mut |x| tape.constant(x.clone()));
        let s = tape.constant(f_snn.clone());
        let a = tape.constant(f_ann.clone());
        let out = eds_inject(&mut tape, s, a, r, &pv)?;
        Ok(tape.value(out).clone())
    }

    #[test]
    fn no_reference_points_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = EdsParams::init(3, 2, 4, &mut rng).unwrap();
        p.proj_w = rand_tensor(&[2, 3], &mut rng);
        let s = rand_tensor(&[1, 2, 3, 4, 4], &mut rng);
        let a = rand_tensor(&[1, 2, 4, 4], &mut rng);
        let out = run(&s, &a, &[refs(vec![], 4, 4)], &p).unwrap();
        assert!(out.bitwise_eq(&s));
    }

    #[test]
    fn trivial_offsets_hand_case() {
        // K = 1, zero offsets, identity projection: out = F_ANN[r] * F_SNN[t, r]
        let (t, c, h, w) = (1, 2, 4, 4);
        let p = EdsParams {
            offset_w: Tensor::zeros([c, 2]),
            offset_b: Tensor::zeros([2]),
            weight_w: Tensor::zeros([c, 1]),
            weight_b: Tensor::zeros([1]),
            proj_w: Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            proj_b: Tensor::zeros([2]),
        };
        let s = Tensor::from_fn([1, t, c, h, w], |i| i as f64 * 0.5);
        let a = Tensor::from_fn([1, c, h, w], |i| 1.0 + i as f64);
        let pts = vec![(0, 1), (2, 3)];
        let out = run(&s, &a, &[refs(pts.clone(), h, w)], &p).unwrap();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let base = s.at(&[0, 0, ch, y, x]);
                    let expect = if pts.contains(&(y, x)) {
                        base + a.at(&[0, ch, y, x]) * base
                    } else {
                        base
                    };
                    assert_eq!(out.at(&[0, 0, ch, y, x]), expect);
                }
            }
        }
    }

    #[test]
    fn duplicated_points_with_halved_weights_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, ca) = (3, 2);
        let mut p = EdsParams::init(c, ca, 2, &mut rng).unwrap();
        p.proj_w = rand_tensor(&[ca, c], &mut rng);
        p.proj_b = rand_tensor(&[c], &mut rng);
        p.offset_b = rand_tensor(&[4], &mut rng);
        // Duplicate each point: offsets repeat, weight logits repeat so the
        // softmax halves every weight.
        let mut d = p.clone();
        let dup_cols = |m: &Tensor, group: usize| {
            let rows = m.numel() / (m.shape().last().unwrap());
            let k = m.shape().last().unwrap() / group;
            let mut v = Vec::new();
            for row in 0..rows {
                let src = &m.data()[row * k * group..][..k * group];
                v.extend_from_slice(src);
                v.extend_from_slice(src);
            }
            let mut shape = m.shape().to_vec();
            *shape.last_mut().unwrap() *= 2;
            Tensor::new(shape, v).unwrap()
        };
        d.offset_w = dup_cols(&p.offset_w, 2);
        d.offset_b = dup_cols(&p.offset_b, 2);
        d.weight_w = dup_cols(&p.weight_w, 1);
        d.weight_b = dup_cols(&p.weight_b, 1);
        let s = rand_tensor(&[2, 3, c, 5, 4], &mut rng);
        let a = rand_tensor(&[2, ca, 5, 4], &mut rng);
        let r = [refs(vec![(0, 0), (3, 2)], 5, 4), refs(vec![(4, 3)], 5, 4)];
        let o1 = run(&s, &a, &r, &p).unwrap();
        let o2 = run(&s, &a, &r, &d).unwrap();
        assert!(o1.max_abs_diff(&o2) <= 1e-12);
        assert!(o1.max_abs_diff(&s) > 0.0);
    }

    #[test]
    fn out_of_geometry_reference_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EdsParams::init(2, 2, 4, &mut rng).unwrap();
        let s = Tensor::zeros([1, 1, 2, 3, 3]);
        let a = Tensor::zeros([1, 2, 3, 3]);
        assert!(run(&s, &a, &[refs(vec![(3, 0)], 3, 3)], &p).is_err());
    }

    #[test]
    fn offsets_vanish_on_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = EdsParams::init(3, 3, 4, &mut rng).unwrap();
        let (off, a) = eds_offsets(&Tensor::zeros([1, 2, 3, 2, 2]), &p).unwrap();
        assert_eq!(off.shape(), &[1, 2, 2, 2, 4, 2]);
        assert!(off.data().iter().all(|&v| v == 0.0));
        for row in a.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
