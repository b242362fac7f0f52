//! Parameter containers generic over their leaf type.
//!
//! Every parameter struct is generic over `P`: `Tensor` for stored weights,
//! `Var` once bound to a tape, `()` for shape-free traversal. Field order is
//! the declaration order used by the optimizer and the checkpoint format.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Implements `map`, `for_each` and `for_each_mut` over the listed fields, in order.
macro_rules! param_fields {
    ($name:ident { $($field:ident),* $(,)? }) => {
        impl<P> $name<P> {
            pub fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> $name<Q> {
                $name { $($field: f(&self.$field)),* }
            }

            pub fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a P)) {
                $(f(&self.$field);)*
            }

            pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
                $(f(&mut self.$field);)*
            }
        }
    };
}
pub(crate) use param_fields;

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..bound))
}
