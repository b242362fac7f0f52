//! Leaky integrate-and-fire neurons with hard reset and a sigmoid surrogate
//! gradient.
//!
//! Per timestep: `H = V + (X - V) / tau`, `S = [H >= theta]`, and the membrane
//! becomes `v_reset` where `S = 1`, otherwise `H`. In the backward pass the
//! Heaviside derivative is replaced by [`surrogate_grad`] and the reset mask is
//! treated as a constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifConfig {
    pub tau: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    /// Sharpness of the surrogate sigmoid.
    pub surrogate_alpha: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_threshold: 1.0,
            v_reset: 0.0,
            surrogate_alpha: 4.0,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tau must exceed 1, got {}", self.tau)));
        }
        if !(self.v_threshold > self.v_reset) {
            return Err(Error::InvalidArgument(format!(
                "threshold {} must exceed reset {}",
                self.v_threshold, self.v_reset
            )));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(Error::InvalidArgument("surrogate alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Forward nonlinearity used by [`Tape::lif`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpikeMode {
    /// Binary spikes (the model).
    #[default]
    Heaviside,
    /// `sigmoid(alpha * (H - theta))` in the forward pass as well, so that
    /// finite differences see the same function the surrogate differentiates.
    /// The reset still uses the hard threshold.
    Sigmoid,
}

/// One leak step `v + (x - v) * inv_tau`.
///
/// When `v != x` the exact result lies strictly between them, but rounding can
/// land it on `x` (e.g. `v = 1 - 2^-53`, `x = 1`, `inv_tau = 0.5` rounds to
/// `1`). That would let a constant sub-threshold current fire, so the result
/// is pulled back one ulp toward `v` in that case.
pub(crate) fn leak_toward(v: f64, x: f64, inv_tau: f64) -> f64 {
    let h = v + (x - v) * inv_tau;
    if h == x && v != x {
        if v < x {
            h.next_down()
        } else {
            h.next_up()
        }
    } else {
        h
    }
}

/// `alpha * sigma(alpha (h - theta)) * (1 - sigma(alpha (h - theta)))`,
/// evaluated in a form that is exactly symmetric around `theta`.
pub fn surrogate_grad(h: f64, cfg: &LifConfig) -> f64 {
    let a = cfg.surrogate_alpha;
    let e = (-(a * (h - cfg.v_threshold)).abs()).exp();
    a * e / ((1.0 + e) * (1.0 + e))
}

/// Single update for a layer. Returns `(spikes, next membrane)`.
pub fn lif_step(v: &Tensor, x: &Tensor, cfg: &LifConfig) -> Result<(Tensor, Tensor)> {
    if v.shape() != x.shape() {
        return Err(Error::shape(
            "lif_step",
            format!("state {:?} vs input {:?}", v.shape(), x.shape()),
        ));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("lif_step input".into()));
    }
    let inv_tau = 1.0 / cfg.tau;
    let mut s = Tensor::zeros(x.shape());
    let mut next = Tensor::zeros(x.shape());
    for (i, (&vi, &xi)) in v.data().iter().zip(x.data()).enumerate() {
        let h = leak_toward(vi, xi, inv_tau);
        if h >= cfg.v_threshold {
            s.data_mut()[i] = 1.0;
            next.data_mut()[i] = cfg.v_reset;
        } else {
            next.data_mut()[i] = h;
        }
    }
    Ok((s, next))
}

/// Runs a sequence from rest and stacks the spikes along a new leading axis.
pub fn lif_forward_seq(inputs: &[Tensor], cfg: &LifConfig) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty input sequence".into()))?;
    let mut v = Tensor::full(first.shape(), cfg.v_reset);
    let mut shape = vec![inputs.len()];
    shape.extend_from_slice(first.shape());
    let mut out = Vec::with_capacity(first.numel() * inputs.len());
    for x in inputs {
        let (s, next) = lif_step(&v, x, cfg)?;
        out.extend_from_slice(s.data());
        v = next;
    }
    Tensor::new(shape, out)
}

/// Mean of a binary tensor.
pub fn spike_rate(s: &Tensor) -> Result<f64> {
    let mut ones = 0usize;
    for &v in s.data() {
        if v == 1.0 {
            ones += 1;
        } else if v != 0.0 {
            return Err(Error::InvalidArgument(format!("non-binary spike value {v}")));
        }
    }
    Ok(ones as f64 / s.numel() as f64)
}

/// Statistics of one [`Tape::lif`] call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifTrace {
    /// Fraction of (neuron, timestep) pairs that crossed the threshold.
    pub rate: f64,
    /// Smallest `|H - theta|` seen; finite-difference checks need this to
    /// exceed the perturbation size.
    pub min_margin: f64,
}

impl Tape {
    /// LIF over `x` of shape `N x T x ...`, from rest, returning spikes of the
    /// same shape.
    pub fn lif(&mut self, x: Var, cfg: &LifConfig, mode: SpikeMode) -> Result<(Var, LifTrace)> {
        let xt = self.rc(x);
        let shape = xt.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("lif", format!("need N x T x ..., got {shape:?}")));
        }
        let (n, t) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let inv_tau = 1.0 / cfg.tau;
        let total = xt.numel();
        let mut h_all = vec![0.0; total];
        let mut fired = vec![false; total];
        let mut out = vec![0.0; total];
        let mut count = 0usize;
        let mut min_margin = f64::INFINITY;
        let mut v = vec![0.0; inner];
        for b in 0..n {
            v.fill(cfg.v_reset);
            for step in 0..t {
                let base = (b * t + step) * inner;
                for i in 0..inner {
                    let k = base + i;
                    let h = leak_toward(v[i], xt.data()[k], inv_tau);
                    h_all[k] = h;
                    min_margin = min_margin.min((h - cfg.v_threshold).abs());
                    let spike = h >= cfg.v_threshold;
                    fired[k] = spike;
                    if spike {
                        count += 1;
                        v[i] = cfg.v_reset;
                    } else {
                        v[i] = h;
                    }
                    out[k] = match mode {
                        SpikeMode::Heaviside => f64::from(spike),
                        SpikeMode::Sigmoid => {
                            crate::tensor::sigmoid(cfg.surrogate_alpha * (h - cfg.v_threshold))
                        }
                    };
                }
            }
        }
        let trace = LifTrace {
            rate: count as f64 / total as f64,
            min_margin,
        };
        let cfg = *cfg;
        let out = Tensor::new(shape.clone(), out)?;
        let var = self.push(
            "lif",
            out,
            &[x],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; total];
                let mut gv = vec![0.0; inner];
                for b in 0..n {
                    gv.fill(0.0);
                    for step in (0..t).rev() {
                        let base = (b * t + step) * inner;
                        for i in 0..inner {
                            let k = base + i;
                            let keep = if fired[k] { 0.0 } else { 1.0 };
                            let gh = g.data()[k] * surrogate_grad(h_all[k], &cfg) + gv[i] * keep;
                            gx[k] = gh * inv_tau;
                            gv[i] = gh * (1.0 - inv_tau);
                        }
                    }
                }
                vec![Some(Tensor::new(shape, gx).expect("shape"))]
            }),
        )?;
        Ok((var, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LifConfig {
        LifConfig::default()
    }

    fn t1(v: f64) -> Tensor {
        Tensor::full([1], v)
    }

    #[test]
    fn step_hand_cases() {
        let (s, v) = lif_step(&t1(0.0), &t1(0.0), &cfg()).unwrap();
        assert_eq!((s.item(), v.item()), (0.0, 0.0));
        let (s, v) = lif_step(&t1(0.0), &t1(2.0), &cfg()).unwrap();
        assert_eq!((s.item(), v.item()), (1.0, 0.0));
        let (s, v) = lif_step(&t1(0.4), &t1(1.0), &cfg()).unwrap();
        assert_eq!((s.item(), v.item()), (0.0, 0.7));
        assert!(lif_step(&t1(0.0), &t1(f64::NAN), &cfg()).is_err());
        assert!(lif_step(&t1(0.0), &Tensor::zeros([2]), &cfg()).is_err());
    }

    #[test]
    fn sequence_cases() {
        assert!(lif_forward_seq(&[], &cfg()).is_err());
        let s = lif_forward_seq(&vec![Tensor::zeros([2, 3]); 4], &cfg()).unwrap();
        assert_eq!(s.shape(), &[4, 2, 3]);
        assert!(s.data().iter().all(|&v| v == 0.0));
        let s = lif_forward_seq(&vec![t1(2.0); 6], &cfg()).unwrap();
        assert!(s.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rounding_cannot_reach_a_constant_input() {
        let mut v = 1.0 - f64::EPSILON / 2.0;
        assert_eq!(v + (1.0 - v) * 0.5, 1.0);
        v = leak_toward(v, 1.0, 0.5);
        assert!(v < 1.0);
        assert_eq!(leak_toward(3.0, 3.0, 0.5), 3.0);
        assert!(leak_toward(1.0 + f64::EPSILON, 1.0, 0.5) > 1.0);
    }

    #[test]
    fn surrogate_cases() {
        let c = cfg();
        assert_eq!(surrogate_grad(1.0, &c), 1.0);
        assert!(surrogate_grad(11.0, &c) <= 1e-15);
        assert!(surrogate_grad(-9.0, &c) <= 1e-15);
        for d in [0.015625, 0.25, 1.75, 5.0] {
            assert_eq!(surrogate_grad(1.0 + d, &c), surrogate_grad(1.0 - d, &c));
        }
    }

    #[test]
    fn rate_cases() {
        assert_eq!(spike_rate(&Tensor::zeros([4])).unwrap(), 0.0);
        assert_eq!(spike_rate(&Tensor::full([4], 1.0)).unwrap(), 1.0);
        let half = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(spike_rate(&half).unwrap(), 0.5);
        assert!(spike_rate(&Tensor::full([2], 0.5)).is_err());
    }

    #[test]
    fn tape_op_matches_the_step_function() {
        let x = Tensor::from_fn([2, 4, 3], |i| ((i * 7) % 11) as f64 * 0.35 - 0.5);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (s, trace) = tape.lif(xv, &cfg(), SpikeMode::Heaviside).unwrap();
        for b in 0..2 {
            let seq: Vec<Tensor> = (0..4)
                .map(|t| Tensor::from_fn([3], |i| x.at(&[b, t, i])))
                .collect();
            let expect = lif_forward_seq(&seq, &cfg()).unwrap();
            for t in 0..4 {
                for i in 0..3 {
                    assert_eq!(tape.value(s).at(&[b, t, i]), expect.at(&[t, i]));
                }
            }
        }
        assert_eq!(trace.rate, spike_rate(tape.value(s)).unwrap());
    }
}
