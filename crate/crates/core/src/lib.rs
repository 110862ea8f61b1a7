//! Planning invariance and horizon generalization in tabular goal-conditioned
//! control.
//!
//! The crate estimates temporal distances from trajectories, projects them
//! onto quasimetrics with path relaxation, acts greedily on the result, and
//! measures how success decays with goal distance and whether conditioning
//! on planned waypoints changes behaviour.
//!
//! | module | contents |
//! |---|---|
//! | [`env`] | gridworld dynamics, mazes, exact shortest paths, data collection |
//! | [`table`] | distance tables and their CSV form |
//! | [`estimation`] | hitting times, successor distances, discounted occupancies |
//! | [`quasimetric`] | path-relaxation closure, audits, short-pair restriction |
//! | [`control`] | greedy / Boltzmann / adversarial policies, planners, rollouts |
//! | [`eval`] | success curves, eta and Reach, invariance ratios, Bellman error |
//! | [`otdist`] | exact transport distance between state distributions |
//! | [`experiment`] | declarative configs and the end-to-end commands |
//!
//! The guide in `book/` walks through the same material with runnable
//! snippets; those snippets are compiled and run as doctests of this crate.

pub mod control;
pub mod env;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod experiment;
pub mod otdist;
pub mod quasimetric;
pub mod rng;
pub mod table;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gridworld.md")]
    mod gridworld {}
    #[doc = include_str!("../../../book/src/distances.md")]
    mod distances {}
    #[doc = include_str!("../../../book/src/path_relaxation.md")]
    mod path_relaxation {}
    #[doc = include_str!("../../../book/src/planning_invariance.md")]
    mod planning_invariance {}
    #[doc = include_str!("../../../book/src/horizon_generalization.md")]
    mod horizon_generalization {}
    #[doc = include_str!("../../../book/src/bellman.md")]
    mod bellman {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
