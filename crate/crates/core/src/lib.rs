//! Numerical toolkit for weak invariance of dynamical systems under Lie group
//! actions.
//!
//! A vector field `V` on `M` is weakly invariant under an action
//! `Φ : G × M → M` when there is a vector field `W` on `G` with
//! `dΦ(W(g), V(p)) = V(Φ(g, p))` for all `g, p`. The crate classifies fields
//! and diffeomorphisms by symmetry type, recovers `W` (group linear) and the
//! automorphisms `σ_t` generated by it, integrates flows on manifolds and
//! matrix Lie groups, and splits weakly invariant systems into a quotient
//! subsystem cascading into a group-affine subsystem.
//!
//! Every claim is certified at finitely many seeded samples; nothing here is a
//! proof.

pub mod actions;
pub mod cascade;
pub mod error;
pub mod flows;
pub mod invariance;
pub mod lie;
pub mod par;
pub mod sampling;

pub use error::{Error, Result};
pub use sampling::{ResidualStats, SamplingPlan, Tolerances};
