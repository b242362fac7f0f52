//! Spike-to-frame injection.
//!
//! Spike features are pooled spatially, passed through a bottleneck adaptor
//! `W_up^T relu(W_down^T pool)` and softmax-normalized over time per channel.
//! The resulting weights collapse the time axis. Each frame-branch location
//! then queries the collapsed map with single-head deformable attention.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{param_fields, uniform};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AtwParams<P> {
    /// `C x C/r`.
    pub w_down: P,
    /// `C/r x C`.
    pub w_up: P,
    pub query_w: P,
    pub query_b: P,
    /// `C x 2K`, `(dy, dx)` per point.
    pub offset_w: P,
    pub offset_b: P,
    /// `C x K`.
    pub weight_w: P,
    pub weight_b: P,
    pub out_w: P,
    pub out_b: P,
}

param_fields!(AtwParams {
    w_down, w_up, query_w, query_b, offset_w, offset_b, weight_w, weight_b, out_w, out_b
});

impl AtwParams<Tensor> {
    pub fn init(c: usize, reduction: usize, points: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if reduction == 0 || c % reduction != 0 || points == 0 {
            return Err(Error::InvalidArgument(format!(
                "channel width {c} must be divisible by reduction {reduction}, with at least one point"
            )));
        }
        let cr = c / reduction;
        Ok(Self {
            w_down: uniform(&[c, cr], c, rng),
            w_up: uniform(&[cr, c], cr, rng),
            query_w: uniform(&[c, c], c, rng),
            query_b: uniform(&[c], c, rng),
            offset_w: uniform(&[c, 2 * points], c, rng),
            offset_b: Tensor::zeros([2 * points]),
            weight_w: uniform(&[c, points], c, rng),
            weight_b: uniform(&[points], c, rng),
            out_w: Tensor::zeros([c, c]),
            out_b: Tensor::zeros([c]),
        })
    }

    pub fn points(&self) -> usize {
        self.weight_b.numel()
    }
}

/// `alpha: N x T x C`, softmax over `T` for every `(n, c)`.
pub fn atw_temporal_weights(tape: &mut Tape, f_snn: Var, p: &AtwParams<Var>) -> Result<Var> {
    let [n, t, c, h, w] = *tape.shape(f_snn) else {
        return Err(Error::shape(
            "atw_temporal_weights",
            format!("spike features must be N x T x C x H x W, got {:?}", tape.shape(f_snn)),
        ));
    };
    let flat = tape.reshape(f_snn, &[n * t, c, h, w])?;
    let pooled = tape.global_avg_pool(flat)?;
    let pooled = tape.reshape(pooled, &[n, t, c])?;
    let down = tape.linear(pooled, p.w_down, None)?;
    let down = tape.relu(down)?;
    let scores = tape.linear(down, p.w_up, None)?;
    tape.softmax(scores, 1)
}

/// `sum_t alpha[n, t, c] * f[n, t, c]`.
pub fn atw_collapse(tape: &mut Tape, f_snn: Var, alpha: Var) -> Result<Var> {
    tape.temporal_collapse(f_snn, alpha)
}

/// Integer `(y, x)` position of every query of an `N x H x W` grid, repeated
/// for each of the `k` points: `N x (H W K) x 2`.
fn query_grid(n: usize, h: usize, w: usize, k: usize) -> Tensor {
    let per = h * w * k;
    Tensor::from_fn([n, per, 2], |i| {
        let q = (i / 2) % per / k;
        if i % 2 == 0 {
            (q / w) as f64
        } else {
            (q % w) as f64
        }
    })
}

/// Attention weights of every query, `N x H x W x K` (before the value sum).
/// Exposed for normalization checks.
pub fn atw_attention_weights(tape: &mut Tape, f_ann: Var, p: &AtwParams<Var>) -> Result<Var> {
    let q = queries(tape, f_ann, p)?;
    let logits = tape.linear(q, p.weight_w, Some(p.weight_b))?;
    tape.softmax(logits, 3)
}

fn queries(tape: &mut Tape, f_ann: Var, p: &AtwParams<Var>) -> Result<Var> {
    let nhwc = tape.permute(f_ann, &[0, 2, 3, 1])?;
    tape.linear(nhwc, p.query_w, Some(p.query_b))
}

/// `F_ANN + Proj(Attn(F_ANN queries, F_SNN^W values))`.
pub fn atw_inject(tape: &mut Tape, f_ann: Var, f_w: Var, p: &AtwParams<Var>) -> Result<Var> {
    let [n, c, h, w] = *tape.shape(f_ann) else {
        return Err(Error::shape(
            "atw_inject",
            format!("frame features must be N x C x H x W, got {:?}", tape.shape(f_ann)),
        ));
    };
    if tape.shape(f_w) != [n, c, h, w] {
        return Err(Error::shape(
            "atw_inject",
            format!("{:?} vs {:?}", tape.shape(f_ann), tape.shape(f_w)),
        ));
    }
    let k = tape.shape(p.weight_b)[0];
    let q = queries(tape, f_ann, p)?;
    let offsets = tape.linear(q, p.offset_w, Some(p.offset_b))?;
    let offsets = tape.reshape(offsets, &[n, h * w * k, 2])?;
    let grid = tape.constant(query_grid(n, h, w, k));
    let positions = tape.add(grid, offsets)?;
    let logits = tape.linear(q, p.weight_w, Some(p.weight_b))?;
    let weights = tape.softmax(logits, 3)?;
    let values = tape.sample_points(f_w, (0..n).collect(), positions)?;
    let values = tape.reshape(values, &[n, h, w, k, c])?;
    let attended = tape.weighted_sum(values, weights)?;
    let projected = tape.linear(attended, p.out_w, Some(p.out_b))?;
    let projected = tape.permute(projected, &[0, 3, 1, 2])?;
    tape.add(f_ann, projected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    fn bind(tape: &mut Tape, p: &AtwParams<Tensor>) -> AtwParams<Var> {
        p.map(&mut |t| tape.constant(t.clone()))
    }

    #[test]
    fn zero_spikes_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AtwParams::init(8, 4, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let pv = bind(&mut tape, &p);
        let f = tape.constant(Tensor::zeros([2, 5, 8, 3, 3]));
        let a = atw_temporal_weights(&mut tape, f, &pv).unwrap();
        assert!(tape.value(a).data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn temporal_weights_match_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, t, c, h, w) = (1, 3, 2, 4, 4);
        let mut p = AtwParams::init(c, 2, 4, &mut rng).unwrap();
        p.w_down = rand_tensor(&[c, 1], &mut rng);
        p.w_up = rand_tensor(&[1, c], &mut rng);
        let x = rand_tensor(&[n, t, c, h, w], &mut rng);
        let mut tape = Tape::new();
        let pv = bind(&mut tape, &p);
        let f = tape.constant(x.clone());
        let a = atw_temporal_weights(&mut tape, f, &pv).unwrap();
        let a = tape.value(a);
        let mut scores = vec![vec![0.0; c]; t];
        for (ti, row) in scores.iter_mut().enumerate() {
            let pool: Vec<f64> = (0..c)
                .map(|ch| {
                    let mut s = 0.0;
                    for y in 0..h {
                        for xx in 0..w {
                            s += x.at(&[0, ti, ch, y, xx]);
                        }
                    }
                    s / (h * w) as f64
                })
                .collect();
            let hidden = (0..c).map(|ch| pool[ch] * p.w_down.at(&[ch, 0])).sum::<f64>().max(0.0);
            for (ch, r) in row.iter_mut().enumerate() {
                *r = hidden * p.w_up.at(&[0, ch]);
            }
        }
        for ch in 0..c {
            let z: f64 = (0..t).map(|ti| scores[ti][ch].exp()).sum();
            for ti in 0..t {
                let expect = scores[ti][ch].exp() / z;
                assert!((a.at(&[0, ti, ch]) - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fresh_injector_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AtwParams::init(4, 4, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let pv = bind(&mut tape, &p);
        let fa = rand_tensor(&[2, 4, 5, 3], &mut rng);
        let a = tape.constant(fa.clone());
        let fw = tape.constant(rand_tensor(&[2, 4, 5, 3], &mut rng));
        let out = atw_inject(&mut tape, a, fw, &pv).unwrap();
        assert!(tape.value(out).bitwise_eq(&fa));
    }

    #[test]
    fn zero_values_leave_frames_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = AtwParams::init(4, 2, 3, &mut rng).unwrap();
        p.out_w = rand_tensor(&[4, 4], &mut rng);
        let mut tape = Tape::new();
        let pv = bind(&mut tape, &p);
        let fa = rand_tensor(&[1, 4, 4, 4], &mut rng);
        let a = tape.constant(fa.clone());
        let fw = tape.constant(Tensor::zeros([1, 4, 4, 4]));
        let out = atw_inject(&mut tape, a, fw, &pv).unwrap();
        assert!(tape.value(out).bitwise_eq(&fa));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = AtwParams::init(4, 4, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let pv = bind(&mut tape, &p);
        let a = tape.constant(Tensor::zeros([1, 4, 4, 4]));
        let b = tape.constant(Tensor::zeros([1, 4, 2, 4]));
        assert!(atw_inject(&mut tape, a, b, &pv).is_err());
        assert!(AtwParams::init(6, 4, 4, &mut rng).is_err());
    }

    #[test]
    fn query_grid_layout() {
        let g = query_grid(1, 2, 3, 2);
        assert_eq!(g.shape(), &[1, 12, 2]);
        // query 4 is (1, 1); its two points are rows 8 and 9
        assert_eq!(g.at(&[0, 8, 0]), 1.0);
        assert_eq!(g.at(&[0, 9, 1]), 1.0);
        assert_eq!(g.at(&[0, 5, 0]), 0.0);
        assert_eq!(g.at(&[0, 5, 1]), 2.0);
    }
}
