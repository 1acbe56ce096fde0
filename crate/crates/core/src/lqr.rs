//! Continuous-time LQR cost and policy gradient.
//!
//! The matrix case evaluates `J(K) = tr(P Σ)` with `P` from the closed-loop
//! Lyapunov equation. The scalar case (`ẋ = a x + u`, `x₀ ~ N(0, 1)`) uses
//! closed forms throughout.

use serde::{Deserialize, Serialize};

use crate::error::LqrError;
use crate::linalg::{self, Mat};

/// Continuous-time LQR instance `ẋ = A x + B u` with weights `Q`, `R` and
/// initial-state covariance `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    sigma: Mat,
}

fn symmetric_check(m: &Mat, name: &str, strict: bool) -> Result<(), LqrError> {
    let asym = (m - m.transpose()).norm();
    if asym > 1e-12 * m.norm().max(1.0) {
        return Err(LqrError::InvalidSystem(format!("{name} is not symmetric")));
    }
    let lam = linalg::symmetric_eigenvalues(m)?;
    let min = lam.first().copied().unwrap_or(0.0);
    let floor = -1e-12 * m.norm().max(1.0);
    if strict && min <= 0.0 {
        return Err(LqrError::InvalidSystem(format!(
            "{name} is not positive definite (min eigenvalue {min:.3e})"
        )));
    }
    if !strict && min < floor {
        return Err(LqrError::InvalidSystem(format!(
            "{name} is not positive semidefinite (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

impl LtiSystem {
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat, sigma: Mat) -> Result<Self, LqrError> {
        let n = a.nrows();
        let m = b.ncols();
        let dims = [
            ("A", a.shape(), (n, n)),
            ("B", b.shape(), (n, m)),
            ("Q", q.shape(), (n, n)),
            ("R", r.shape(), (m, m)),
            ("Sigma", sigma.shape(), (n, n)),
        ];
        for (name, found, expected) in dims {
            if found != expected {
                return Err(LqrError::InvalidSystem(format!(
                    "{name} has shape {found:?}, expected {expected:?}"
                )));
            }
        }
        for m in [&a, &b, &q, &r, &sigma] {
            linalg::check_finite(m)?;
        }
        symmetric_check(&q, "Q", false)?;
        symmetric_check(&r, "R", true)?;
        symmetric_check(&sigma, "Sigma", true)?;
        Ok(Self { a, b, q, r, sigma })
    }

    /// `Q = I`, `R = I`, `Σ = I`.
    pub fn with_identity_weights(a: Mat, b: Mat) -> Result<Self, LqrError> {
        let n = a.nrows();
        let m = b.ncols();
        Self::new(
            a,
            b,
            Mat::identity(n, n),
            Mat::identity(m, m),
            Mat::identity(n, n),
        )
    }

    /// The 1-D system equivalent to a [`ScalarProblem`].
    pub fn from_scalar(p: &ScalarProblem) -> Self {
        let one = |v: f64| Mat::from_element(1, 1, v);
        Self {
            a: one(p.a),
            b: one(1.0),
            q: one(p.q),
            r: one(p.r),
            sigma: one(1.0),
        }
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }
    pub fn sigma(&self) -> &Mat {
        &self.sigma
    }
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self, k: &Mat) -> Mat {
        &self.a - &self.b * k
    }

    fn check_gain_shape(&self, k: &Mat) -> Result<(), LqrError> {
        if k.shape() != (self.n_inputs(), self.n_states()) {
            return Err(LqrError::InvalidSystem(format!(
                "gain has shape {:?}, expected {:?}",
                k.shape(),
                (self.n_inputs(), self.n_states())
            )));
        }
        Ok(())
    }
}

/// Cost, cost-to-go matrix and closed-loop abscissa at a stabilizing gain.
#[derive(Debug, Clone)]
pub struct CostEval {
    pub cost: f64,
    pub p: Mat,
    pub abscissa: f64,
}

fn closed_loop_checked(sys: &LtiSystem, k: &Mat) -> Result<(Mat, f64), LqrError> {
    sys.check_gain_shape(k)?;
    linalg::check_finite(k)?;
    let a_cl = sys.closed_loop(k);
    let abscissa = linalg::spectral_abscissa(&a_cl)?;
    if abscissa >= 0.0 {
        return Err(LqrError::UnstableGain { abscissa });
    }
    Ok((a_cl, abscissa))
}

pub fn lqr_cost_eval(sys: &LtiSystem, k: &Mat) -> Result<CostEval, LqrError> {
    let (a_cl, abscissa) = closed_loop_checked(sys, k)?;
    let w = &sys.q + k.transpose() * &sys.r * k;
    let p = linalg::solve_lyapunov(&a_cl, &w).map_err(|e| match e {
        crate::error::LinalgError::IllConditioned { abscissa } => LqrError::UnstableGain { abscissa },
        other => other.into(),
    })?;
    let cost = (&p * &sys.sigma).trace();
    Ok(CostEval { cost, p, abscissa })
}

/// `J(K) = tr(P Σ)`, where `(A−BK)ᵀP + P(A−BK) + Q + KᵀRK = 0`.
pub fn lqr_cost(sys: &LtiSystem, k: &Mat) -> Result<f64, LqrError> {
    Ok(lqr_cost_eval(sys, k)?.cost)
}

/// Cost and policy gradient evaluated together (shares the Lyapunov solves).
pub fn lqr_cost_and_gradient(sys: &LtiSystem, k: &Mat) -> Result<(CostEval, Mat), LqrError> {
    let eval = lqr_cost_eval(sys, k)?;
    let a_cl = sys.closed_loop(k);
    // A_cl L + L A_clᵀ + Σ = 0 is the Lyapunov equation of A_clᵀ
    let l = linalg::solve_lyapunov(&a_cl.transpose(), &sys.sigma)?;
    let grad = (&sys.r * k - sys.b.transpose() * &eval.p) * l * 2.0;
    Ok((eval, grad))
}

/// `∇J(K) = 2 (R K − Bᵀ P) L_c` with `L_c` the closed-loop state covariance.
pub fn lqr_gradient(sys: &LtiSystem, k: &Mat) -> Result<Mat, LqrError> {
    Ok(lqr_cost_and_gradient(sys, k)?.1)
}

/// Central finite differences of `cost` around `k`, one entry at a time.
pub fn finite_diff_gradient<F, E>(cost: F, k: &Mat, h: f64) -> Result<Mat, E>
where
    F: Fn(&Mat) -> Result<f64, E>,
{
    let mut grad = Mat::zeros(k.nrows(), k.ncols());
    let mut probe = k.clone();
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let up = cost(&probe)?;
            probe[(i, j)] = orig - h;
            let down = cost(&probe)?;
            probe[(i, j)] = orig;
            grad[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Riccati-optimal gain by Newton–Kleinman iteration.
///
/// Starts from `initial` if given, otherwise from zero when `A` is Hurwitz
/// and from Bass's shifted-Gramian gain when it is not.
pub fn riccati_gain(sys: &LtiSystem, initial: Option<&Mat>) -> Result<Mat, LqrError> {
    let mut k = match initial {
        Some(k0) => k0.clone(),
        None => stabilizing_gain(sys)?,
    };
    let r_inv = sys
        .r
        .clone()
        .try_inverse()
        .ok_or(crate::error::LinalgError::Singular)?;
    const MAX_ITER: usize = 100;
    for _ in 0..MAX_ITER {
        let eval = lqr_cost_eval(sys, &k)?;
        let next = &r_inv * sys.b.transpose() * &eval.p;
        let step = (&next - &k).norm();
        k = next;
        if step <= 1e-13 * (1.0 + k.norm()) {
            // final polish so the returned gain is consistent with its own P
            let eval = lqr_cost_eval(sys, &k)?;
            return Ok(&r_inv * sys.b.transpose() * &eval.p);
        }
    }
    Err(LqrError::RiccatiNoConvergence(MAX_ITER))
}

fn stabilizing_gain(sys: &LtiSystem) -> Result<Mat, LqrError> {
    let n = sys.n_states();
    let abscissa = linalg::spectral_abscissa(&sys.a)?;
    if abscissa < -linalg::HURWITZ_TOL {
        return Ok(Mat::zeros(sys.n_inputs(), n));
    }
    // (A+βI) Z + Z (A+βI)ᵀ = 2 B Bᵀ, then K = Bᵀ Z⁻¹ gives A_cl Z + Z A_clᵀ = −2βZ
    let beta = abscissa.max(0.0) + 1.0;
    let shifted = &sys.a + Mat::identity(n, n) * beta;
    let w = -(&sys.b * sys.b.transpose()) * 2.0;
    let z = linalg::solve_lyapunov(&shifted.transpose(), &w)?;
    let z_inv = z.try_inverse().ok_or_else(|| {
        LqrError::InvalidSystem("(A, B) is not controllable; supply a stabilizing gain".into())
    })?;
    Ok(sys.b.transpose() * z_inv)
}

/// Optimal gain and optimal cost of a matrix LQR instance.
pub fn lqr_optimum(sys: &LtiSystem) -> Result<(Mat, f64), LqrError> {
    let k = riccati_gain(sys, None)?;
    let j = lqr_cost(sys, &k)?;
    Ok((k, j))
}

/// Scalar LQR instance `ẋ = a x + u` with weights `q, r > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarProblem {
    pub a: f64,
    pub q: f64,
    pub r: f64,
}

impl ScalarProblem {
    pub fn new(a: f64, q: f64, r: f64) -> Result<Self, LqrError> {
        if !(a.is_finite() && q.is_finite() && r.is_finite()) {
            return Err(LqrError::InvalidSystem("non-finite scalar parameter".into()));
        }
        if q <= 0.0 || r <= 0.0 {
            return Err(LqrError::InvalidSystem(format!(
                "cost weights must be positive (q = {q}, r = {r})"
            )));
        }
        Ok(Self { a, q, r })
    }

    fn admissible(&self, k: f64) -> Result<(), LqrError> {
        if k > self.a {
            Ok(())
        } else {
            Err(LqrError::OutsideAdmissible { k, a: self.a })
        }
    }

    /// `k* = a + √(a² + q/r)`.
    pub fn k_star(&self) -> f64 {
        self.a + (self.a * self.a + self.q / self.r).sqrt()
    }

    /// `ℓ = −1 / (2(a − k))`, the closed-loop variance at gain `k`.
    pub fn ell(&self, k: f64) -> f64 {
        1.0 / (2.0 * (k - self.a))
    }
}

/// `J(k) = (q + r k²) / (2(k − a))`.
pub fn scalar_cost(p: &ScalarProblem, k: f64) -> Result<f64, LqrError> {
    p.admissible(k)?;
    Ok((p.q + p.r * k * k) / (2.0 * (k - p.a)))
}

/// `∇J(k) = (r k² − 2 a r k − q) / (2(a − k)²)`.
pub fn scalar_gradient(p: &ScalarProblem, k: f64) -> Result<f64, LqrError> {
    p.admissible(k)?;
    let d = p.a - k;
    Ok((p.r * k * k - 2.0 * p.a * p.r * k - p.q) / (2.0 * d * d))
}

/// Optimality gap `J(k) − J(k*) = r ℓ ε²` with `ε = k − k*`.
///
/// Equal to `scalar_cost(k) − j_min` but free of cancellation near `k*`.
pub fn scalar_gap(p: &ScalarProblem, k: f64) -> Result<f64, LqrError> {
    p.admissible(k)?;
    let eps = k - p.k_star();
    Ok(p.r * p.ell(k) * eps * eps)
}

/// `(k*, J(k*))`.
pub fn scalar_optimum(p: &ScalarProblem) -> (f64, f64) {
    let k = p.k_star();
    // k* > a always holds, so the cost is defined
    let j = (p.q + p.r * k * k) / (2.0 * (k - p.a));
    (k, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> ScalarProblem {
        ScalarProblem::new(0.0, 1.0, 1.0).unwrap()
    }

    fn m1(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn scalar_cost_examples() {
        assert_relative_eq!(scalar_cost(&unit(), 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(scalar_cost(&unit(), 2.0).unwrap(), 1.25, epsilon = 1e-15);
        let p = ScalarProblem::new(1.0, 3.0, 1.0).unwrap();
        assert_relative_eq!(scalar_cost(&p, 3.0).unwrap(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn scalar_gradient_examples() {
        assert_eq!(scalar_gradient(&unit(), 1.0).unwrap(), 0.0);
        assert_relative_eq!(scalar_gradient(&unit(), 2.0).unwrap(), 0.375, epsilon = 1e-15);
        let p = ScalarProblem::new(1.0, 3.0, 1.0).unwrap();
        assert_eq!(scalar_gradient(&p, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn inadmissible_gain_is_rejected() {
        let p = ScalarProblem::new(1.0, 3.0, 1.0).unwrap();
        assert!(matches!(
            scalar_cost(&p, 1.0),
            Err(LqrError::OutsideAdmissible { .. })
        ));
        assert!(scalar_gradient(&p, 0.5).is_err());
        assert!(ScalarProblem::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn scalar_optimum_examples() {
        assert_eq!(scalar_optimum(&unit()), (1.0, 1.0));
        let (k, j) = scalar_optimum(&ScalarProblem::new(1.0, 3.0, 1.0).unwrap());
        assert_relative_eq!(k, 3.0, epsilon = 1e-15);
        assert_relative_eq!(j, 3.0, epsilon = 1e-15);
        let p = ScalarProblem::new(-1.0, 1.0, 1.0).unwrap();
        let (k, j) = scalar_optimum(&p);
        assert_relative_eq!(k, 2f64.sqrt() - 1.0, epsilon = 1e-15);
        assert_relative_eq!(j, scalar_cost(&p, k).unwrap(), epsilon = 1e-15);
        assert!(scalar_gradient(&p, k).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn gap_matches_direct_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = ScalarProblem::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(0.1..5.0),
                rng.random_range(0.1..5.0),
            )
            .unwrap();
            let (ks, jmin) = scalar_optimum(&p);
            let k = p.a + (ks - p.a) * rng.random_range(0.05..20.0);
            let direct = scalar_cost(&p, k).unwrap() - jmin;
            let gap = scalar_gap(&p, k).unwrap();
            assert!((gap - direct).abs() <= 1e-10 * direct.abs().max(1e-3), "{gap} {direct}");
        }
    }

    #[test]
    fn gradient_sign_pattern() {
        for p in [
            unit(),
            ScalarProblem::new(1.0, 3.0, 1.0).unwrap(),
            ScalarProblem::new(-2.0, 0.5, 2.0).unwrap(),
        ] {
            let ks = p.k_star();
            for i in 1..100 {
                let below = p.a + (ks - p.a) * i as f64 / 100.0;
                let above = ks * (1.0 + i as f64 / 10.0) + i as f64;
                assert!(scalar_gradient(&p, below).unwrap() < 0.0);
                assert!(scalar_gradient(&p, above).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn cost_blows_up_at_the_stability_boundary() {
        let p = ScalarProblem::new(0.5, 1.0, 1.0).unwrap();
        let costs: Vec<f64> = (1..12)
            .map(|j| scalar_cost(&p, p.a + 10f64.powi(-j)).unwrap())
            .collect();
        assert!(costs.windows(2).all(|w| w[1] > w[0]));
        assert!(costs.last().unwrap() > &1e10);
    }

    #[test]
    fn unit_matrix_cost_and_gradient() {
        let sys = LtiSystem::from_scalar(&unit());
        assert_relative_eq!(lqr_cost(&sys, &m1(1.0)).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(lqr_gradient(&sys, &m1(2.0)).unwrap()[(0, 0)], 0.375, epsilon = 1e-14);
    }

    #[test]
    fn matrix_and_scalar_forms_agree() {
        for p in [
            unit(),
            ScalarProblem::new(1.0, 3.0, 1.0).unwrap(),
            ScalarProblem::new(-1.5, 0.7, 2.5).unwrap(),
        ] {
            let sys = LtiSystem::from_scalar(&p);
            for i in 1..60 {
                let k = p.a + 0.05 * i as f64 * (1.0 + 0.3 * i as f64);
                let jm = lqr_cost(&sys, &m1(k)).unwrap();
                let gm = lqr_gradient(&sys, &m1(k)).unwrap()[(0, 0)];
                let js = scalar_cost(&p, k).unwrap();
                let gs = scalar_gradient(&p, k).unwrap();
                assert_relative_eq!(jm, js, max_relative = 1e-10);
                assert!((gm - gs).abs() <= 1e-10 * gs.abs().max(1e-6), "{gm} vs {gs}");
            }
        }
    }

    #[test]
    fn unstable_gain_is_reported() {
        let sys = LtiSystem::from_scalar(&unit());
        match lqr_cost(&sys, &m1(-0.5)) {
            Err(LqrError::UnstableGain { abscissa }) => assert_relative_eq!(abscissa, 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn riccati_gain_is_stationary_and_locally_optimal() {
        let a = crate::experiments::presets::a_minus();
        let sys = LtiSystem::with_identity_weights(a, crate::experiments::presets::b1()).unwrap();
        let (k_opt, j_opt) = lqr_optimum(&sys).unwrap();
        assert!(lqr_gradient(&sys, &k_opt).unwrap().norm() <= 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let dk = Mat::from_fn(k_opt.nrows(), k_opt.ncols(), |_, _| rng.random_range(-1e-2..1e-2));
            assert!(lqr_cost(&sys, &(&k_opt + dk)).unwrap() >= j_opt);
        }
    }

    #[test]
    fn riccati_handles_unstable_open_loop() {
        let sys = LtiSystem::with_identity_weights(
            crate::experiments::presets::base_a(),
            Mat::identity(5, 5),
        )
        .unwrap();
        let k = riccati_gain(&sys, None).unwrap();
        assert!(lqr_gradient(&sys, &k).unwrap().norm() <= 1e-8);
    }

    #[test]
    fn finite_differences_of_closed_form() {
        let g = finite_diff_gradient(|k: &Mat| scalar_cost(&unit(), k[(0, 0)]), &m1(2.0), 1e-5)
            .unwrap();
        assert!((g[(0, 0)] - 0.375).abs() < 1e-8);
        let zero = finite_diff_gradient(|_: &Mat| Ok::<f64, LqrError>(4.2), &Mat::zeros(2, 3), 1e-5)
            .unwrap();
        assert_eq!(zero, Mat::zeros(2, 3));
    }

    #[test]
    fn finite_difference_failure_propagates() {
        let sys = LtiSystem::from_scalar(&unit());
        // probe at k = -h leaves the admissible set
        let res = finite_diff_gradient(|k: &Mat| lqr_cost(&sys, k), &m1(0.0), 1e-5);
        assert!(res.is_err());
    }

    #[test]
    fn system_validation() {
        let bad_r = LtiSystem::new(
            Mat::identity(2, 2),
            Mat::identity(2, 1),
            Mat::identity(2, 2),
            Mat::from_element(1, 1, -1.0),
            Mat::identity(2, 2),
        );
        assert!(bad_r.is_err());
        let bad_shape = LtiSystem::with_identity_weights(Mat::identity(2, 2), Mat::identity(3, 1));
        assert!(bad_shape.is_err());
    }
}
