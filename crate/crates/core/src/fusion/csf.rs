//! Channel-selection fusion: `s = x * AvgPool(Conv1x1(sigmoid(x)))` per
//! branch, with the spiking branch summed over time first; the two selections
//! are added.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{param_fields, uniform};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct CsfParams<P> {
    /// `C x C x 1 x 1`.
    pub w: P,
    pub b: P,
}

param_fields!(CsfParams { w, b });

impl CsfParams<Tensor> {
    pub fn init(c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: uniform(&[c, c, 1, 1], c, rng),
            b: uniform(&[c], c, rng),
        }
    }
}

/// Per-channel gate `N x C` of `x`.
pub fn csf_gate(tape: &mut Tape, x: Var, p: &CsfParams<Var>) -> Result<Var> {
    let s = tape.sigmoid(x)?;
    let conv = tape.conv2d(s, p.w, Some(p.b), 1, 0)?;
    tape.global_avg_pool(conv)
}

pub fn csf_select(tape: &mut Tape, x: Var, p: &CsfParams<Var>) -> Result<Var> {
    let gate = csf_gate(tape, x, p)?;
    tape.channel_scale(x, gate)
}

/// `csf_select(a_o) + csf_select(sum_t s_o)`.
pub fn csf_fuse(
    tape: &mut Tape,
    a_o: Var,
    s_o: Var,
    p_ann: &CsfParams<Var>,
    p_snn: &CsfParams<Var>,
) -> Result<Var> {
    let x_snn = time_sum(tape, a_o, s_o)?;
    let sa = csf_select(tape, a_o, p_ann)?;
    let ss = csf_select(tape, x_snn, p_snn)?;
    tape.add(sa, ss)
}

/// `sum_t s_o`, checked against the frame-branch shape.
pub(crate) fn time_sum(tape: &mut Tape, a_o: Var, s_o: Var) -> Result<Var> {
    let sa = tape.shape(a_o).to_vec();
    let ss = tape.shape(s_o).to_vec();
    if sa.len() != 4 || ss.len() != 5 || ss[0] != sa[0] || ss[2..] != sa[1..] {
        return Err(Error::shape("csf_fuse", format!("{sa:?} vs {ss:?}")));
    }
    tape.sum_axis(s_o, 1)
}
