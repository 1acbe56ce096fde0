//! Factored (two-layer linear network) gains `K = K₂ K₁`.
//!
//! The invariant `C = K₁K₁ᵀ − K₂ᵀK₂` is conserved by the factored gradient
//! flow. For scalar-output gains the imbalance `c = 2 tr(C²) − (tr C)²` is
//! nonnegative and, together with the composed gain `𝐤`, fixes
//! `‖K₁‖² + ‖K₂‖² = √(c + 4𝐤²)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LqrError, OverparamError};
use crate::linalg::{self, Mat};
use crate::lqr::{self, LtiSystem};

const MAX_RANK_DRAWS: usize = 10;
const MAX_COND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct FactoredGain {
    k1: Mat,
    k2: Mat,
}

impl FactoredGain {
    /// `k1` is κ×n, `k2` is m×κ.
    pub fn new(k1: Mat, k2: Mat) -> Result<Self, OverparamError> {
        if k1.nrows() != k2.ncols() {
            return Err(OverparamError::Shape(format!(
                "inner dimensions disagree: K1 is {:?}, K2 is {:?}",
                k1.shape(),
                k2.shape()
            )));
        }
        if k1.nrows() == 0 {
            return Err(OverparamError::Shape("kappa must be at least 1".into()));
        }
        Ok(Self { k1, k2 })
    }

    /// Scalar-system factors from a column `k1` and a row `k2`, both of length κ.
    pub fn from_vectors(k1: &[f64], k2: &[f64]) -> Result<Self, OverparamError> {
        Self::new(
            Mat::from_column_slice(k1.len(), 1, k1),
            Mat::from_row_slice(1, k2.len(), k2),
        )
    }

    pub fn k1(&self) -> &Mat {
        &self.k1
    }
    pub fn k2(&self) -> &Mat {
        &self.k2
    }
    pub fn kappa(&self) -> usize {
        self.k1.nrows()
    }

    /// Factors for a scalar system with prescribed composed gain `k` and
    /// imbalance `c ≥ 0`, using the first two coordinate directions.
    pub fn scalar_with_imbalance(k: f64, c: f64, kappa: usize) -> Result<Self, OverparamError> {
        let (alpha, beta, cos_phi) = norm_split(k, c, if kappa == 1 { 1.0 } else { 0.5 })?;
        let mut a = vec![0.0; kappa];
        let mut b = vec![0.0; kappa];
        a[0] = alpha.sqrt();
        b[0] = beta.sqrt() * cos_phi;
        if kappa > 1 {
            b[1] = beta.sqrt() * (1.0 - cos_phi * cos_phi).max(0.0).sqrt();
        }
        Self::from_vectors(&a, &b)
    }

    /// Randomly oriented scalar factors with prescribed `k` and `c`.
    pub fn random_scalar_with_imbalance<R: Rng>(
        k: f64,
        c: f64,
        kappa: usize,
        rng: &mut R,
    ) -> Result<Self, OverparamError> {
        let split = if kappa == 1 {
            if rng.random_bool(0.5) {
                1.0
            } else {
                0.0
            }
        } else {
            rng.random_range(0.0..=1.0)
        };
        let (alpha, beta, cos_phi) = norm_split(k, c, split)?;
        let (u, v) = random_orthonormal_pair(kappa, rng);
        let sin_phi = (1.0 - cos_phi * cos_phi).max(0.0).sqrt();
        let a: Vec<f64> = u.iter().map(|x| alpha.sqrt() * x).collect();
        let b: Vec<f64> = u
            .iter()
            .zip(&v)
            .map(|(x, y)| beta.sqrt() * (cos_phi * x + sin_phi * y))
            .collect();
        Self::from_vectors(&a, &b)
    }
}

/// Splits `s = √(c + 4k²)` into `‖a‖² = α`, `‖b‖² = s − α` with `aᵀb = k`.
/// `t ∈ [0, 1]` interpolates between the two extreme splits `(s ∓ √c)/2`.
fn norm_split(k: f64, c: f64, t: f64) -> Result<(f64, f64, f64), OverparamError> {
    if !(c >= 0.0) || !k.is_finite() {
        return Err(OverparamError::Shape(format!(
            "need finite k and c >= 0 (k = {k}, c = {c})"
        )));
    }
    let s = (c + 4.0 * k * k).sqrt();
    if s == 0.0 {
        return Ok((0.0, 0.0, 1.0));
    }
    let lo = 0.5 * (s - c.sqrt());
    let hi = 0.5 * (s + c.sqrt());
    let alpha = lo + t * (hi - lo);
    let beta = s - alpha;
    let denom = (alpha * beta).sqrt();
    let cos_phi = if denom > 0.0 {
        (k / denom).clamp(-1.0, 1.0)
    } else {
        1.0
    };
    Ok((alpha, beta, cos_phi))
}

fn random_orthonormal_pair<R: Rng>(kappa: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let normalize = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    };
    let mut u: Vec<f64> = (0..kappa).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut u);
    if kappa == 1 {
        return (u, vec![0.0]);
    }
    loop {
        let mut v: Vec<f64> = (0..kappa).map(|_| rng.sample(StandardNormal)).collect();
        let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&u).for_each(|(x, y)| *x -= proj * y);
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            normalize(&mut v);
            return (u, v);
        }
    }
}

/// `K₂ K₁`.
pub fn compose(fg: &FactoredGain) -> Mat {
    &fg.k2 * &fg.k1
}

/// `C = K₁K₁ᵀ − K₂ᵀK₂`.
pub fn invariant_matrix(fg: &FactoredGain) -> Mat {
    &fg.k1 * fg.k1.transpose() - fg.k2.transpose() * &fg.k2
}

/// `c = 2 tr(C²) − (tr C)²`.
pub fn imbalance(fg: &FactoredGain) -> f64 {
    imbalance_of(&invariant_matrix(fg))
}

pub fn imbalance_of(c: &Mat) -> f64 {
    let tr = c.trace();
    2.0 * (c * c).trace() - tr * tr
}

/// `d = ‖K₁ + K₂ᵀ‖²`; needs `K₁` and `K₂ᵀ` to have the same shape.
pub fn distance_measure(fg: &FactoredGain) -> Result<f64, OverparamError> {
    if fg.k1.shape() != (fg.k2.ncols(), fg.k2.nrows()) {
        return Err(OverparamError::Shape(format!(
            "distance measure needs K1 and K2ᵀ of equal shape, got {:?} and {:?}",
            fg.k1.shape(),
            (fg.k2.ncols(), fg.k2.nrows())
        )));
    }
    Ok((&fg.k1 + fg.k2.transpose()).norm_squared())
}

/// `‖K₁‖² + ‖K₂‖²`.
pub fn norm_sum(fg: &FactoredGain) -> f64 {
    fg.k1.norm_squared() + fg.k2.norm_squared()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    /// Row-major entries of the invariant matrix.
    pub invariant: Vec<Vec<f64>>,
    pub c: f64,
    pub d: Option<f64>,
}

pub fn imbalance_report(fg: &FactoredGain) -> ImbalanceReport {
    let cm = invariant_matrix(fg);
    ImbalanceReport {
        c: imbalance_of(&cm),
        invariant: linalg::to_rows(&cm),
        d: distance_measure(fg).ok(),
    }
}

/// Seeded factorization: `K₁` standard normal (redrawn until well
/// conditioned), `K₂ = K (K₁ᵀK₁)⁻¹ K₁ᵀ`, so that `K₂K₁ = K`.
pub fn remark2_factorize(
    k_target: &Mat,
    kappa: usize,
    seed: u64,
) -> Result<FactoredGain, OverparamError> {
    let n = k_target.ncols();
    if kappa < n {
        return Err(OverparamError::KappaTooSmall { kappa, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RANK_DRAWS {
        let k1 = Mat::from_fn(kappa, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sv = k1.singular_values();
        let (smax, smin) = sv
            .iter()
            .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
        if smin <= 0.0 || smax / smin > MAX_COND {
            continue;
        }
        let gram_inv = match (k1.transpose() * &k1).try_inverse() {
            Some(g) => g,
            None => continue,
        };
        let k2 = k_target * gram_inv * k1.transpose();
        return FactoredGain::new(k1, k2);
    }
    Err(OverparamError::RankFailure(MAX_RANK_DRAWS))
}

/// Balanced factorization (`C = 0`) from the thin SVD `K = U S Vᵀ`:
/// `K₁ = [√S Vᵀ; 0]`, `K₂ = [U √S, 0]`.
pub fn balanced_factorize(k_target: &Mat, kappa: usize) -> Result<FactoredGain, OverparamError> {
    let (m, n) = k_target.shape();
    let rank = m.min(n);
    if kappa < rank {
        return Err(OverparamError::KappaTooSmall { kappa, n: rank });
    }
    let svd = k_target.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| OverparamError::Shape("SVD failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| OverparamError::Shape("SVD failed".into()))?;
    let mut k1 = Mat::zeros(kappa, n);
    let mut k2 = Mat::zeros(m, kappa);
    for (i, s) in svd.singular_values.iter().enumerate() {
        let root = s.sqrt();
        for j in 0..n {
            k1[(i, j)] = root * v_t[(i, j)];
        }
        for j in 0..m {
            k2[(j, i)] = root * u[(j, i)];
        }
    }
    FactoredGain::new(k1, k2)
}

/// Result of the geometric scaling search.
#[derive(Debug, Clone)]
pub struct ScaledInit {
    pub gain: Mat,
    pub scale: f64,
    pub gap: f64,
    pub optimal_gain: Mat,
    pub optimal_cost: f64,
}

/// Scales the Riccati gain `K*` by `s ∈ {s0·growthʲ}` until the closed loop
/// is Hurwitz and the optimality gap reaches `eta`.
pub fn remark2_scale(
    sys: &LtiSystem,
    eta: f64,
    s0: f64,
    growth: f64,
) -> Result<ScaledInit, OverparamError> {
    if !(eta > 0.0 && s0 > 0.0 && growth > 1.0) {
        return Err(OverparamError::Shape(format!(
            "need eta > 0, s0 > 0, growth > 1 (got {eta}, {s0}, {growth})"
        )));
    }
    const MAX_STEPS: usize = 200;
    let (k_opt, j_opt) = lqr::lqr_optimum(sys)?;
    let mut s = s0;
    for _ in 0..=MAX_STEPS {
        let gain = &k_opt * s;
        if linalg::is_hurwitz(&sys.closed_loop(&gain), linalg::HURWITZ_TOL).map_err(LqrError::from)? {
            let gap = lqr::lqr_cost(sys, &gain)? - j_opt;
            if gap >= eta {
                return Ok(ScaledInit {
                    gain,
                    scale: s,
                    gap,
                    optimal_gain: k_opt,
                    optimal_cost: j_opt,
                });
            }
        }
        s *= growth;
    }
    Err(OverparamError::NoAdmissibleScale(MAX_STEPS))
}

pub const DEFAULT_S0: f64 = 1.05;
pub const DEFAULT_GROWTH: f64 = 1.25;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::ScalarProblem;
    use approx::assert_relative_eq;

    fn fg(k1: &[f64], k2: &[f64]) -> FactoredGain {
        FactoredGain::from_vectors(k1, k2).unwrap()
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose(&fg(&[2.0], &[2.0]))[(0, 0)], 4.0);
        assert_eq!(compose(&fg(&[1.0, 0.0], &[0.0, 1.0]))[(0, 0)], 0.0);
    }

    #[test]
    fn invariant_examples() {
        let bal = fg(&[1.5, -0.3], &[1.5, -0.3]);
        assert_eq!(invariant_matrix(&bal), Mat::zeros(2, 2));
        let orth = fg(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(
            invariant_matrix(&orth),
            Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]))
        );
        assert_eq!(invariant_matrix(&fg(&[3.0], &[1.0]))[(0, 0)], 8.0);
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance(&fg(&[0.4, 2.0], &[0.4, 2.0])), 0.0);
        assert_eq!(imbalance(&fg(&[1.0, 0.0], &[0.0, 1.0])), 4.0);
        let one = fg(&[3.0], &[1.0]);
        assert_eq!(imbalance(&one), 64.0);
        assert_eq!(imbalance(&one), (9.0f64 - 1.0).powi(2));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance_measure(&fg(&[2.0], &[2.0])).unwrap(), 16.0);
        assert_eq!(distance_measure(&fg(&[1.0, 0.0], &[0.0, 1.0])).unwrap(), 2.0);
        assert_eq!(distance_measure(&fg(&[1.0, -2.0], &[-1.0, 2.0])).unwrap(), 0.0);
        // d = √(c + 4k²) + 2k
        assert_relative_eq!((0.0f64 + 4.0 * 16.0).sqrt() + 2.0 * 4.0, 16.0);
    }

    #[test]
    fn prescribed_imbalance_constructor() {
        for kappa in [1, 2, 5] {
            for &(k, c) in &[(2.0, 0.0), (2.0, 4.0), (-0.7, 3.0), (0.0, 1.0), (1e3, 1.0)] {
                let f = FactoredGain::scalar_with_imbalance(k, c, kappa).unwrap();
                assert_relative_eq!(compose(&f)[(0, 0)], k, max_relative = 1e-12, epsilon = 1e-12);
                assert_relative_eq!(imbalance(&f), c, max_relative = 1e-9, epsilon = 1e-9 * (1.0 + k * k));
            }
        }
    }

    #[test]
    fn remark2_factorize_examples() {
        let zero = remark2_factorize(&Mat::zeros(3, 5), 10, 1).unwrap();
        assert_eq!(zero.k2(), &Mat::zeros(3, 10));

        let k = crate::experiments::presets::k_minus0();
        let f = remark2_factorize(&k, 10, 42).unwrap();
        assert!((compose(&f) - &k).norm() <= 1e-10);

        let s = remark2_factorize(&Mat::from_element(1, 1, 4.0), 1, 0).unwrap();
        let g = s.k1()[(0, 0)];
        assert_relative_eq!(s.k2()[(0, 0)], 4.0 / g, max_relative = 1e-14);
    }

    #[test]
    fn remark2_factorize_rejects_small_kappa() {
        assert!(matches!(
            remark2_factorize(&Mat::zeros(3, 5), 4, 0),
            Err(OverparamError::KappaTooSmall { .. })
        ));
    }

    #[test]
    fn balanced_factorization_has_zero_invariant() {
        let k = crate::experiments::presets::k_minus0();
        let f = balanced_factorize(&k, 10).unwrap();
        assert!((compose(&f) - &k).norm() <= 1e-10 * k.norm());
        assert!(invariant_matrix(&f).norm() <= 1e-10 * k.norm());
    }

    #[test]
    fn remark2_scale_scalar() {
        let p = ScalarProblem::new(0.0, 1.0, 1.0).unwrap();
        let sys = LtiSystem::from_scalar(&p);
        let init = remark2_scale(&sys, 0.05, 1.1, 1.2).unwrap();
        // oracle: walk the same geometric grid with the closed-form cost
        let mut s = 1.1;
        let expected = loop {
            if lqr::scalar_cost(&p, s).unwrap() - 1.0 >= 0.05 {
                break s;
            }
            s *= 1.2;
        };
        assert_relative_eq!(init.scale, expected, max_relative = 1e-12);
        assert_relative_eq!(init.gain[(0, 0)], expected, max_relative = 1e-10);
        assert!(init.gap >= 0.05);
        // the gap grows along the grid
        let gaps: Vec<f64> = (0..6)
            .map(|j| lqr::scalar_cost(&p, 1.1 * 1.2f64.powi(j)).unwrap() - 1.0)
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn remark2_scale_tiny_eta_takes_first_candidate() {
        let p = ScalarProblem::new(0.0, 1.0, 1.0).unwrap();
        let init = remark2_scale(&LtiSystem::from_scalar(&p), 1e-12, 1.1, 1.2).unwrap();
        assert_eq!(init.scale, 1.1);
    }
}
