//! Gradient-flow laboratory for LQR policy optimization.
//!
//! The crate compares the standard policy-gradient flow `K̇ = −∇J(K)` with
//! the flow over a two-factor parameterization `K = K₂K₁`, certifies
//! Polyak–Łojasiewicz-type inequalities for the scalar problem, and
//! classifies recorded cost-gap trajectories as exponential or
//! linear-then-exponential.
//!
//! Modules, bottom up:
//!
//! * [`linalg`]: Lyapunov solves and stability tests
//! * [`lqr`]: LQR cost and gradient, matrix and scalar closed forms
//! * [`overparam`]: factored gains, the conserved invariant and imbalance
//! * [`flow`]: adaptive integration of the gradient flows
//! * [`pli`]: rate formulas, sampling certificates, profile classification
//! * [`experiments`]: configs, presets, runners and CSV/JSON output

pub mod error;
pub mod experiments;
pub mod flow;
pub mod linalg;
pub mod lqr;
pub mod overparam;
pub mod pli;

pub use error::{ExperimentError, FlowError, LinalgError, LqrError, OverparamError, PliError};
pub use flow::{IntegratorConfig, TerminalStatus, Trajectory};
pub use linalg::Mat;
pub use lqr::{LtiSystem, ScalarProblem};
pub use overparam::FactoredGain;
pub use pli::{PliCertificate, ProfileFit, Verdict};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lqr.md")]
    mod lqr {}
    #[doc = include_str!("../../../book/src/factored.md")]
    mod factored {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/rates.md")]
    mod rates {}
    #[doc = include_str!("../../../book/src/profiles.md")]
    mod profiles {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
