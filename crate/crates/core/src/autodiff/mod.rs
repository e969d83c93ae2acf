//! Reverse-mode automatic differentiation on a thread-local tape.
//!
//! Forces are gradients of the energy, and training on forces needs the
//! gradient of a loss that already contains a gradient. [`Tape::grad_graph`]
//! records the backward sweep itself so that a second [`Tape::grad`] can run
//! through it.

mod stress;
mod tape;
mod var;

pub use stress::stress_of;
pub use tape::{AdError, Tape};
pub use var::Var;

/// Value and gradient of `f` at `x`.
pub fn value_and_grad(x: &[f64], f: impl FnOnce(&[Var]) -> Var) -> (f64, Vec<f64>) {
    let tape = Tape::new();
    let xs = tape.leaves(x);
    let y = f(&xs);
    let g = tape.grad(&[y], &xs).expect("leaves are registered");
    (y.value(), g)
}
