//! Gradient flows of the LQR cost.
//!
//! * standard: `K̇ = −∇J(K)`
//! * factored: `K̇₁ = −K₂ᵀ∇J(K₂K₁)`, `K̇₂ = −∇J(K₂K₁)K₁ᵀ`
//! * scalar reparameterized: `k̇ = −2k ∇J(k²)`
//!
//! All flows share one adaptive integrator and record the optimality gap,
//! the gradient norm and, for factored runs, the distance measure and the
//! drift of the conserved invariant.

mod integrator;

use serde::{Deserialize, Serialize};

use crate::error::FlowError;
use crate::linalg::{self, Mat};
use crate::lqr::{self, LtiSystem, ScalarProblem};
use crate::overparam::{self, FactoredGain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub t_end: f64,
    pub max_step: f64,
    /// Sampling interval of the recorded trajectory.
    pub record_stride: f64,
    pub guard_margin: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            t_end: 50.0,
            max_step: 0.1,
            record_stride: 0.1,
            guard_margin: 1e-8,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("t_end", self.t_end),
            ("max_step", self.max_step),
            ("record_stride", self.record_stride),
            ("guard_margin", self.guard_margin),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FlowError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.rtol >= 1.0 || self.atol >= 1.0 {
            return Err(FlowError::InvalidConfig("rtol and atol must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn with_horizon(mut self, t_end: f64, record_stride: f64) -> Self {
        self.t_end = t_end;
        self.record_stride = record_stride;
        self
    }

    /// Same config with both tolerances scaled by `factor`.
    pub fn scaled_tolerances(mut self, factor: f64) -> Self {
        self.rtol *= factor;
        self.atol *= factor;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    ReachedTEnd,
    Converged,
    GuardStop,
    IntegratorFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `θ(t) = L(t) − L̲`.
    pub gaps: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// `‖K₁ + K₂ᵀ‖²`, factored runs with `m = n` only.
    pub d_values: Option<Vec<f64>>,
    /// `‖C(t) − C(0)‖_F`, factored runs only.
    pub invariant_drift: Option<Vec<f64>>,
    /// Raw integrator state at each recorded time.
    pub states: Vec<Vec<f64>>,
    pub terminal_status: TerminalStatus,
}

impl Trajectory {
    fn empty(factored: bool, has_d: bool) -> Self {
        Self {
            times: Vec::new(),
            gaps: Vec::new(),
            grad_norms: Vec::new(),
            d_values: (factored && has_d).then(Vec::new),
            invariant_drift: factored.then(Vec::new),
            states: Vec::new(),
            terminal_status: TerminalStatus::ReachedTEnd,
        }
    }

    fn push(&mut self, t: f64, y: &[f64], obs: &Observation) {
        self.times.push(t);
        self.gaps.push(obs.gap);
        self.grad_norms.push(obs.grad_norm);
        if let (Some(ds), Some(d)) = (self.d_values.as_mut(), obs.d) {
            ds.push(d);
        }
        if let (Some(dr), Some(v)) = (self.invariant_drift.as_mut(), obs.drift) {
            dr.push(v);
        }
        self.states.push(y.to_vec());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(f64::NAN)
    }

    pub fn max_invariant_drift(&self) -> Option<f64> {
        self.invariant_drift
            .as_ref()
            .map(|d| d.iter().copied().fold(0.0, f64::max))
    }

    /// Linear interpolation of the gap at time `t` (clamped to the recorded range).
    pub fn gap_at(&self, t: f64) -> f64 {
        match self.times.iter().position(|&s| s >= t) {
            None => self.final_gap(),
            Some(0) => self.gaps[0],
            Some(i) => {
                let (t0, t1) = (self.times[i - 1], self.times[i]);
                let w = (t - t0) / (t1 - t0);
                self.gaps[i - 1] * (1.0 - w) + self.gaps[i] * w
            }
        }
    }
}

/// State rejected by a model: the closed loop is not stable there.
#[derive(Debug, Clone)]
pub struct Inadmissible(pub String);

#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub gap: f64,
    pub grad_norm: f64,
    pub d: Option<f64>,
    pub drift: Option<f64>,
}

impl Observation {
    fn converged(&self, atol: f64) -> bool {
        self.gap <= atol && self.grad_norm <= atol.sqrt()
    }
}

/// A gradient flow `ẏ = −∇L(y)` over a flat state vector.
pub trait FlowModel {
    /// Writes `ẏ` and returns the closed-loop spectral abscissa at `y`.
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<f64, Inadmissible>;
    fn observe(&self, y: &[f64]) -> Result<Observation, Inadmissible>;
    fn has_factored_observables(&self) -> bool {
        false
    }
    fn has_distance(&self) -> bool {
        false
    }
}

fn lqr_inadmissible(e: crate::error::LqrError) -> Inadmissible {
    Inadmissible(e.to_string())
}

struct MatrixStandard<'a> {
    sys: &'a LtiSystem,
    j_min: f64,
}

impl MatrixStandard<'_> {
    fn gain(&self, y: &[f64]) -> Mat {
        Mat::from_column_slice(self.sys.n_inputs(), self.sys.n_states(), y)
    }
}

impl FlowModel for MatrixStandard<'_> {
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<f64, Inadmissible> {
        let (eval, grad) = lqr::lqr_cost_and_gradient(self.sys, &self.gain(y)).map_err(lqr_inadmissible)?;
        for (d, g) in dy.iter_mut().zip(grad.iter()) {
            *d = -g;
        }
        Ok(eval.abscissa)
    }

    fn observe(&self, y: &[f64]) -> Result<Observation, Inadmissible> {
        let (eval, grad) = lqr::lqr_cost_and_gradient(self.sys, &self.gain(y)).map_err(lqr_inadmissible)?;
        Ok(Observation {
            gap: eval.cost - self.j_min,
            grad_norm: grad.norm(),
            d: None,
            drift: None,
        })
    }
}

struct MatrixFactored<'a> {
    sys: &'a LtiSystem,
    j_min: f64,
    kappa: usize,
    c0: Mat,
}

impl MatrixFactored<'_> {
    fn split(&self, y: &[f64]) -> FactoredGain {
        let n = self.sys.n_states();
        let m = self.sys.n_inputs();
        let k1 = Mat::from_column_slice(self.kappa, n, &y[..self.kappa * n]);
        let k2 = Mat::from_column_slice(m, self.kappa, &y[self.kappa * n..]);
        FactoredGain::new(k1, k2).expect("state layout fixed at construction")
    }

    fn grads(&self, fg: &FactoredGain) -> Result<(lqr::CostEval, Mat, Mat), Inadmissible> {
        let k = overparam::compose(fg);
        let (eval, g) = lqr::lqr_cost_and_gradient(self.sys, &k).map_err(lqr_inadmissible)?;
        let g1 = fg.k2().transpose() * &g;
        let g2 = &g * fg.k1().transpose();
        Ok((eval, g1, g2))
    }
}

impl FlowModel for MatrixFactored<'_> {
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<f64, Inadmissible> {
        let fg = self.split(y);
        let (eval, g1, g2) = self.grads(&fg)?;
        for (d, g) in dy.iter_mut().zip(g1.iter().chain(g2.iter())) {
            *d = -g;
        }
        Ok(eval.abscissa)
    }

    fn observe(&self, y: &[f64]) -> Result<Observation, Inadmissible> {
        let fg = self.split(y);
        let (eval, g1, g2) = self.grads(&fg)?;
        Ok(Observation {
            gap: eval.cost - self.j_min,
            grad_norm: (g1.norm_squared() + g2.norm_squared()).sqrt(),
            d: overparam::distance_measure(&fg).ok(),
            drift: Some((overparam::invariant_matrix(&fg) - &self.c0).norm()),
        })
    }

    fn has_factored_observables(&self) -> bool {
        true
    }

    fn has_distance(&self) -> bool {
        self.sys.n_inputs() == self.sys.n_states()
    }
}

struct ScalarStandard {
    p: ScalarProblem,
}

impl FlowModel for ScalarStandard {
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<f64, Inadmissible> {
        dy[0] = -lqr::scalar_gradient(&self.p, y[0]).map_err(lqr_inadmissible)?;
        Ok(self.p.a - y[0])
    }

    fn observe(&self, y: &[f64]) -> Result<Observation, Inadmissible> {
        Ok(Observation {
            gap: lqr::scalar_gap(&self.p, y[0]).map_err(lqr_inadmissible)?,
            grad_norm: lqr::scalar_gradient(&self.p, y[0]).map_err(lqr_inadmissible)?.abs(),
            d: None,
            drift: None,
        })
    }
}

struct ScalarFactored {
    p: ScalarProblem,
    kappa: usize,
    c0: Mat,
}

impl ScalarFactored {
    fn split<'y>(&self, y: &'y [f64]) -> (&'y [f64], &'y [f64], f64) {
        let (k1, k2) = y.split_at(self.kappa);
        let k = k1.iter().zip(k2).map(|(a, b)| a * b).sum();
        (k1, k2, k)
    }
}

impl FlowModel for ScalarFactored {
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<f64, Inadmissible> {
        let (k1, k2, k) = self.split(y);
        let g = lqr::scalar_gradient(&self.p, k).map_err(lqr_inadmissible)?;
        let (d1, d2) = dy.split_at_mut(self.kappa);
        for i in 0..self.kappa {
            d1[i] = -g * k2[i];
            d2[i] = -g * k1[i];
        }
        Ok(self.p.a - k)
    }

    fn observe(&self, y: &[f64]) -> Result<Observation, Inadmissible> {
        let (k1, k2, k) = self.split(y);
        let g = lqr::scalar_gradient(&self.p, k).map_err(lqr_inadmissible)?;
        let fg = FactoredGain::from_vectors(k1, k2).map_err(|e| Inadmissible(e.to_string()))?;
        let norms = overparam::norm_sum(&fg);
        Ok(Observation {
            gap: lqr::scalar_gap(&self.p, k).map_err(lqr_inadmissible)?,
            grad_norm: g.abs() * norms.sqrt(),
            d: overparam::distance_measure(&fg).ok(),
            drift: Some((overparam::invariant_matrix(&fg) - &self.c0).norm()),
        })
    }

    fn has_factored_observables(&self) -> bool {
        true
    }

    fn has_distance(&self) -> bool {
        true
    }
}

struct ScalarReparam {
    p: ScalarProblem,
}

impl FlowModel for ScalarReparam {
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<f64, Inadmissible> {
        let k = y[0];
        dy[0] = -2.0 * k * lqr::scalar_gradient(&self.p, k * k).map_err(lqr_inadmissible)?;
        Ok(self.p.a - k * k)
    }

    fn observe(&self, y: &[f64]) -> Result<Observation, Inadmissible> {
        let k = y[0];
        let g = 2.0 * k * lqr::scalar_gradient(&self.p, k * k).map_err(lqr_inadmissible)?;
        Ok(Observation {
            gap: lqr::scalar_gap(&self.p, k * k).map_err(lqr_inadmissible)?,
            grad_norm: g.abs(),
            d: None,
            drift: None,
        })
    }
}

fn check_stable(sys: &LtiSystem, k: &Mat) -> Result<(), FlowError> {
    let abscissa = linalg::spectral_abscissa(&sys.closed_loop(k)).map_err(crate::error::LqrError::from)?;
    if abscissa >= 0.0 {
        return Err(FlowError::Inadmissible(format!(
            "closed-loop spectral abscissa {abscissa:.3e} at the initial gain"
        )));
    }
    Ok(())
}

/// Integrates `K̇ = −∇J(K)` from `k0`; gaps are measured against `j_min`.
pub fn flow_standard(
    sys: &LtiSystem,
    k0: &Mat,
    cfg: &IntegratorConfig,
    j_min: f64,
) -> Result<Trajectory, FlowError> {
    check_stable(sys, k0)?;
    integrator::integrate(&MatrixStandard { sys, j_min }, k0.as_slice().to_vec(), cfg)
}

/// Integrates the factored flow from `fg0`.
pub fn flow_factored(
    sys: &LtiSystem,
    fg0: &FactoredGain,
    cfg: &IntegratorConfig,
    j_min: f64,
) -> Result<Trajectory, FlowError> {
    let (n, m) = (sys.n_states(), sys.n_inputs());
    if fg0.k1().ncols() != n || fg0.k2().nrows() != m {
        return Err(FlowError::Inadmissible(format!(
            "factor shapes {:?}, {:?} do not match the system ({m} inputs, {n} states)",
            fg0.k1().shape(),
            fg0.k2().shape()
        )));
    }
    check_stable(sys, &overparam::compose(fg0))?;
    let model = MatrixFactored {
        sys,
        j_min,
        kappa: fg0.kappa(),
        c0: overparam::invariant_matrix(fg0),
    };
    let mut y0 = fg0.k1().as_slice().to_vec();
    y0.extend_from_slice(fg0.k2().as_slice());
    integrator::integrate(&model, y0, cfg)
}

/// Scalar standard flow `k̇ = −∇J(k)` using the closed forms.
pub fn flow_scalar_standard(
    p: &ScalarProblem,
    k0: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    lqr::scalar_cost(p, k0)?;
    integrator::integrate(&ScalarStandard { p: *p }, vec![k0], cfg)
}

/// Scalar factored flow with vector factors `k₁ ∈ ℝ^κ` (column) and `k₂ ∈ ℝ^{1×κ}`.
pub fn flow_scalar_factored(
    p: &ScalarProblem,
    fg0: &FactoredGain,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    if fg0.k1().ncols() != 1 || fg0.k2().nrows() != 1 {
        return Err(FlowError::Inadmissible("scalar factored flow needs κ×1 and 1×κ factors".into()));
    }
    lqr::scalar_cost(p, overparam::compose(fg0)[(0, 0)])?;
    let model = ScalarFactored {
        p: *p,
        kappa: fg0.kappa(),
        c0: overparam::invariant_matrix(fg0),
    };
    let mut y0 = fg0.k1().as_slice().to_vec();
    y0.extend_from_slice(fg0.k2().as_slice());
    integrator::integrate(&model, y0, cfg)
}

/// Flow of `f(k) = J(k²)`: `k̇ = −2k ∇J(k²)`. Needs `a > 0` and `k0² > a`.
pub fn scalar_flow_reparam(
    p: &ScalarProblem,
    k0: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    if p.a <= 0.0 {
        return Err(FlowError::Inadmissible(format!(
            "reparameterized flow needs a > 0, got a = {}",
            p.a
        )));
    }
    if !(k0 > p.a.sqrt()) {
        return Err(FlowError::Inadmissible(format!(
            "need k0 > √a = {}, got {k0}",
            p.a.sqrt()
        )));
    }
    integrator::integrate(&ScalarReparam { p: *p }, vec![k0], cfg)
}
