//! Ruin probabilities for a compound risk process whose premium rate depends
//! on the current reserve and approaches the critical rate `v_c = Eξ/Eτ`
//! from above.
//!
//! Between claims the reserve follows `dR = v(R) dt`; at claim epochs it
//! drops by the claim size. Ruin can only happen at claim epochs, so the
//! library works with the embedded chain `R_n` and its jumps
//! `ξ(x) = V_x(τ) − x − ξ`.
//!
//! * [`model`]: claim laws, premium-rate families and derived constants.
//! * [`flow`]: the deterministic flow `V_x(t)` between claims.
//! * [`chain`]: jump sampling and path simulation.
//! * [`montecarlo`]: ruin estimates, decay fits and the Γ-limit test.
//! * [`closed_form`]: exact `ψ` ratios for exponential claims.
//! * [`lyapunov`]: test functions, bound envelopes, the classifier and the
//!   power-rate series.
//! * [`heavy_tail`]: regularly varying claims.
//!
//! Every random quantity is drawn from a [`rng::RngStream`] keyed by a seed
//! and a stream id, and parallel reductions run in a fixed order, so results
//! do not depend on the number of worker threads.

// Parameter checks are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod closed_form;
pub mod error;
pub mod flow;
pub mod heavy_tail;
pub mod lyapunov;
pub mod model;
pub mod montecarlo;
pub mod quadrature;
pub mod rng;

pub use chain::Caps;
pub use error::{Error, Result};
pub use flow::{FlowMethod, FlowSolver};
pub use model::{ClaimModel, Distribution, PremiumRateSpec, RateKind, RiskModel};
pub use montecarlo::RuinEstimate;
