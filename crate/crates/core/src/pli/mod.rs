//! Polyak–Łojasiewicz-type inequalities for the scalar problem.
//!
//! For the factored scalar cost `L(k₁, k₂) = J(k₂k₁)` with composed gain `𝐤`,
//! imbalance `c` and gap `θ = J(𝐤) − J*`, the ratio `‖∇L‖² / θ` depends only
//! on `(𝐤, c)`. This module provides the rate `μ_γ(c)` guaranteed on the
//! set `K_γ = {d ≥ γ}`, its uniform lower bound, a Monte Carlo check of the
//! inequality, semi-global (saturated) witnesses for the unfactored cost and
//! rate estimates for the reparameterization `f(k) = J(k²)`.

pub mod profile;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PliError;
use crate::lqr::{self, ScalarProblem};
use crate::overparam::{self, FactoredGain};

pub use profile::{classify_profile, classify_series, ProfileFit, Verdict};

/// Relative slack used when comparing an observed ratio to a rate.
pub const RATE_SLACK: f64 = 1e-9;

/// Relative distance to `k*` below which ratios use their limiting value.
const LIMIT_BAND: f64 = 1e-7;

fn check_gamma(p: &ScalarProblem, gamma: f64) -> Result<(), PliError> {
    let bound = (4.0 * p.a).max(0.0);
    if !(gamma > bound) || !gamma.is_finite() {
        return Err(PliError::OutsideHypothesis { gamma, bound });
    }
    Ok(())
}

fn check_c(c: f64) -> Result<(), PliError> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(PliError::InvalidArgument(format!("imbalance must be finite and >= 0, got {c}")));
    }
    Ok(())
}

/// Switching imbalance `c̃ = aγ² / (a − γ)` (meaningful for `a < 0`).
pub fn c_tilde(p: &ScalarProblem, gamma: f64) -> f64 {
    p.a * gamma * gamma / (p.a - gamma)
}

/// Smallest composed gain in `K_γ` for imbalance `c`: `d ≥ γ ⇔ 𝐤 ≥ (γ² − c)/(4γ)`.
pub fn k_lower(gamma: f64, c: f64) -> f64 {
    (gamma * gamma - c) / (4.0 * gamma)
}

/// Guaranteed rate `μ_γ(c)` on `K_γ`.
///
/// ```
/// use lqrflow::{pli, ScalarProblem};
/// let p = ScalarProblem::new(-1.0, 1.0, 1.0).unwrap();
/// let mu = pli::mu_gamma(&p, 0.0, 1.0).unwrap();
/// assert!((mu - 0.05).abs() < 1e-15);
/// ```
pub fn mu_gamma(p: &ScalarProblem, c: f64, gamma: f64) -> Result<f64, PliError> {
    check_gamma(p, gamma)?;
    check_c(c)?;
    let (a, r, g) = (p.a, p.r, gamma);
    let mu = if a >= 0.0 {
        0.25 * r * (4.0 * c + g * g).sqrt() / (g - 4.0 * a).abs()
    } else if c < c_tilde(p, g) {
        0.25 * r * (g * g + c) / (g * g - c - 4.0 * a * g).abs()
    } else {
        0.25 * r * (c / (4.0 * a * a + c)).sqrt()
    };
    Ok(mu)
}

/// `μ̲ = (r/4) min{1, |γ/(γ − 4a)|}`, a lower bound on `μ_γ(c)` uniform in `c`.
pub fn mu_lower_bound(p: &ScalarProblem, gamma: f64) -> Result<f64, PliError> {
    check_gamma(p, gamma)?;
    Ok(0.25 * p.r * (gamma / (gamma - 4.0 * p.a)).abs().min(1.0))
}

/// The two factors `ϑ₁ = r(ℓε − 1)²` and `ϑ₂ = ℓ√(c + 4𝐤²)`.
///
/// The ratio itself is `‖∇L‖²/θ = 4ϑ₁ϑ₂`.
pub fn pli_ratio_components(p: &ScalarProblem, k: f64, c: f64) -> Result<(f64, f64), PliError> {
    check_c(c)?;
    if !(k > p.a) {
        return Err(PliError::InvalidArgument(format!("need k > a = {}, got {k}", p.a)));
    }
    let ell = p.ell(k);
    let x = ell * (k - p.k_star());
    Ok((p.r * (x - 1.0).powi(2), ell * (c + 4.0 * k * k).sqrt()))
}

/// `‖∇L‖² / θ` at composed gain `k` and imbalance `c`, with the removable
/// singularity at `k*` filled by its limit.
pub fn overparam_ratio(p: &ScalarProblem, k: f64, c: f64) -> Result<f64, PliError> {
    let (t1, t2) = pli_ratio_components(p, k, c)?;
    Ok(4.0 * t1 * t2)
}

/// Unfactored ratio `∇J(k)² / (J(k) − J*) = 4 r ℓ (ℓε − 1)²`.
pub fn standard_ratio(p: &ScalarProblem, k: f64) -> Result<f64, PliError> {
    let (t1, _) = pli_ratio_components(p, k, 0.0)?;
    Ok(4.0 * t1 * p.ell(k))
}

fn near_optimum(p: &ScalarProblem, k: f64) -> bool {
    let ks = p.k_star();
    (k - ks).abs() <= LIMIT_BAND * ks.abs().max(1.0)
}

/// Directly measured `‖∇L‖²/θ` for concrete factors.
pub fn measured_ratio(p: &ScalarProblem, fg: &FactoredGain) -> Result<f64, PliError> {
    let k = overparam::compose(fg)[(0, 0)];
    if near_optimum(p, k) {
        return overparam_ratio(p, k, overparam::imbalance(fg).max(0.0));
    }
    let grad = lqr::scalar_gradient(p, k).map_err(|e| PliError::InvalidArgument(e.to_string()))?;
    let gap = lqr::scalar_gap(p, k).map_err(|e| PliError::InvalidArgument(e.to_string()))?;
    Ok(grad * grad * overparam::norm_sum(fg) / gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertificateKind {
    /// `‖∇L‖² ≥ μ θ` on the sampled domain.
    Gpli { mu: f64 },
    /// `‖∇J‖² ≥ a θ/(b + θ)` with `|∇J| ≤ grad_bound`.
    SatPli { a_sat: f64, b_sat: f64, grad_bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PliCertificate {
    #[serde(flatten)]
    pub kind: CertificateKind,
    pub domain_descriptor: String,
    pub samples_checked: usize,
    pub min_ratio_observed: f64,
}

/// Worst sample found when the inequality fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpliViolation {
    pub k: f64,
    pub c: f64,
    pub d: f64,
    pub ratio: f64,
    pub mu: f64,
    pub violations: usize,
    pub samples_checked: usize,
}

impl fmt::Display for GpliViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} of {} samples below the rate; worst at k = {:.6e}, c = {:.6e}, d = {:.6e}: ratio {:.6e} < mu {:.6e}",
            self.violations, self.samples_checked, self.k, self.c, self.d, self.ratio, self.mu
        )
    }
}

/// Sampling plan for [`verify_gpli_samples`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub kappa: usize,
    /// Upper end of the imbalance range.
    pub c_max: f64,
    /// Largest offset of `𝐤` above the lower edge of `K_γ`.
    pub k_span: f64,
    pub threads: usize,
}

impl SamplingPlan {
    pub fn for_problem(p: &ScalarProblem, gamma: f64) -> Self {
        let scale = 1.0 + p.a.abs() + p.k_star();
        Self {
            kappa: 3,
            c_max: 100.0 * (1.0 + gamma * gamma),
            k_span: 1e3 * scale,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()).min(8),
        }
    }
}

struct Sample {
    k: f64,
    c: f64,
    d: f64,
    ratio: f64,
    mu: f64,
}

#[derive(Default)]
struct Tally {
    checked: usize,
    violations: usize,
    min_ratio: f64,
    worst: Option<Sample>,
}

impl Tally {
    fn merge(&mut self, other: Tally) {
        self.checked += other.checked;
        self.violations += other.violations;
        self.min_ratio = self.min_ratio.min(other.min_ratio);
        if let Some(w) = other.worst {
            let replace = self
                .worst
                .as_ref()
                .is_none_or(|cur| w.ratio / w.mu < cur.ratio / cur.mu);
            if replace {
                self.worst = Some(w);
            }
        }
    }
}

/// Imbalance strata: zero, a log grid up to `c_max`, and points around `c̃`.
fn c_strata(p: &ScalarProblem, gamma: f64, c_max: f64) -> Vec<(f64, f64)> {
    let mut edges = vec![0.0];
    let lo: f64 = 1e-3;
    let n = 24;
    for i in 0..=n {
        edges.push(lo * (c_max / lo).powf(i as f64 / n as f64));
    }
    let mut strata: Vec<(f64, f64)> = edges.windows(2).map(|w| (w[0], w[1])).collect();
    if p.a < 0.0 {
        let ct = c_tilde(p, gamma);
        strata.push((ct * 0.99, ct));
        strata.push((ct, ct * 1.01));
    }
    strata.push((0.0, 0.0));
    strata
}

fn draw_k<R: Rng>(rng: &mut R, p: &ScalarProblem, gamma: f64, c: f64, span: f64, stratum: usize) -> f64 {
    let base = k_lower(gamma, c).max(p.a);
    // special points: K_γ edge, the optimum and the minimizer of the
    // ratio's ℓ-factor for a < 0
    match stratum {
        0 => return base.max(p.a + 1e-9 * (1.0 + p.a.abs())),
        1 => return p.k_star().max(base),
        2 if p.a < 0.0 => return (-c / (4.0 * p.a)).max(base),
        _ => {}
    }
    let lo: f64 = 1e-6;
    let u: f64 = rng.random_range(0.0..1.0);
    let offset = lo * (span / lo).powf(u);
    base + offset
}

fn sample_chunk(
    p: &ScalarProblem,
    gamma: f64,
    plan: &SamplingPlan,
    seed: u64,
    indices: std::ops::Range<usize>,
) -> Result<Tally, PliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata = c_strata(p, gamma, plan.c_max);
    let mut tally = Tally {
        min_ratio: f64::INFINITY,
        ..Tally::default()
    };
    for i in indices {
        let (c_lo, c_hi) = strata[i % strata.len()];
        let k_stratum = (i / strata.len()) % 8;
        let mut accepted = None;
        for _ in 0..64 {
            let c = if c_hi > c_lo { rng.random_range(c_lo..c_hi) } else { c_lo };
            let k = draw_k(&mut rng, p, gamma, c, plan.k_span, k_stratum);
            let fg = FactoredGain::random_scalar_with_imbalance(k, c, plan.kappa, &mut rng)
                .map_err(|e| PliError::InvalidArgument(e.to_string()))?;
            // measure what the factors actually realize
            let k_obs = overparam::compose(&fg)[(0, 0)];
            let c_obs = overparam::imbalance(&fg).max(0.0);
            let d_obs = overparam::distance_measure(&fg)
                .map_err(|e| PliError::InvalidArgument(e.to_string()))?;
            if d_obs >= gamma && k_obs > p.a {
                accepted = Some((fg, k_obs, c_obs, d_obs));
                break;
            }
        }
        let Some((fg, k, c, d)) = accepted else {
            continue;
        };
        let ratio = measured_ratio(p, &fg)?;
        let mu = mu_gamma(p, c, gamma)?;
        tally.checked += 1;
        tally.min_ratio = tally.min_ratio.min(ratio);
        let margin = ratio / mu;
        if ratio < mu * (1.0 - RATE_SLACK) {
            tally.violations += 1;
        }
        if tally.worst.as_ref().is_none_or(|w| margin < w.ratio / w.mu) {
            tally.worst = Some(Sample { k, c, d, ratio, mu });
        }
    }
    Ok(tally)
}

/// Monte Carlo check of `‖∇L‖² ≥ μ_γ(c) θ` over random factors in `K_γ`.
///
/// Imbalance is stratified over `[0, c_max]` (log scale, plus the switch
/// value `c̃` when `a < 0`) and the composed gain over the edge of `K_γ`,
/// `k*`, and a log-scale range above the edge. Each factor pair is drawn with
/// a random orientation and the realized `𝐤`, `c`, `d` are measured from the
/// factors. Work is split across threads by seed; the merge is deterministic.
pub fn verify_gpli_samples(
    p: &ScalarProblem,
    gamma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<PliCertificate, PliError> {
    verify_gpli_with_plan(p, gamma, n_samples, seed, &SamplingPlan::for_problem(p, gamma))
}

pub fn verify_gpli_with_plan(
    p: &ScalarProblem,
    gamma: f64,
    n_samples: usize,
    seed: u64,
    plan: &SamplingPlan,
) -> Result<PliCertificate, PliError> {
    check_gamma(p, gamma)?;
    if n_samples == 0 {
        return Err(PliError::InvalidArgument("n_samples must be positive".into()));
    }
    if plan.kappa == 0 {
        return Err(PliError::InvalidArgument("kappa must be at least 1".into()));
    }
    // fixed chunking keeps the result independent of the thread count
    const CHUNK: usize = 4096;
    let chunks: Vec<(u64, std::ops::Range<usize>)> = (0..n_samples.div_ceil(CHUNK))
        .map(|j| {
            let start = j * CHUNK;
            (
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(j as u64),
                start..(start + CHUNK).min(n_samples),
            )
        })
        .collect();
    let threads = plan.threads.max(1).min(chunks.len());
    let results: Vec<Result<Tally, PliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let chunks = &chunks;
                s.spawn(move || {
                    chunks
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| j % threads == w)
                        .map(|(_, (sd, range))| (range.start, sample_chunk(p, gamma, plan, *sd, range.clone())))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<(usize, Result<Tally, PliError>)> =
            handles.into_iter().flat_map(|h| h.join().expect("sampler thread panicked")).collect();
        all.sort_by_key(|(start, _)| *start);
        all.into_iter().map(|(_, r)| r).collect()
    });
    let mut total = Tally {
        min_ratio: f64::INFINITY,
        ..Tally::default()
    };
    for r in results {
        total.merge(r?);
    }
    if total.checked == 0 {
        return Err(PliError::InvalidArgument("no sample landed in K_gamma".into()));
    }
    if total.violations > 0 {
        let w = total.worst.expect("violations imply a worst sample");
        return Err(PliError::Violation(Box::new(GpliViolation {
            k: w.k,
            c: w.c,
            d: w.d,
            ratio: w.ratio,
            mu: w.mu,
            violations: total.violations,
            samples_checked: total.checked,
        })));
    }
    Ok(PliCertificate {
        kind: CertificateKind::Gpli {
            mu: mu_lower_bound(p, gamma)?,
        },
        domain_descriptor: format!(
            "K_gamma = {{d >= {gamma}}}, c in [0, {:.3e}], kappa = {}",
            plan.c_max, plan.kappa
        ),
        samples_checked: total.checked,
        min_ratio_observed: total.min_ratio,
    })
}

/// Evidence that the unfactored cost satisfies only a saturated inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatPliWitness {
    pub certificate: PliCertificate,
    /// `∇J²/θ` at `2k*`.
    pub ratio_at_2kstar: f64,
    /// `∇J²/θ` at `k_max`.
    pub ratio_at_kmax: f64,
    pub max_gradient_observed: f64,
}

/// Grid check on `(k*, k_max]` that `|∇J| ≤ r/2` while `∇J²/θ` decays.
pub fn satpli_witness(p: &ScalarProblem, k_max: f64) -> Result<SatPliWitness, PliError> {
    let ks = p.k_star();
    if !(k_max > ks) || !k_max.is_finite() {
        return Err(PliError::InvalidArgument(format!("need k_max > k* = {ks}, got {k_max}")));
    }
    let grad_bound = 0.5 * p.r;
    let b_sat = lqr::scalar_gap(p, ks + (ks - p.a)).map_err(|e| PliError::InvalidArgument(e.to_string()))?;
    let n = 4000;
    let span = k_max - ks;
    let lo = span * 1e-9;
    let mut min_ratio = f64::INFINITY;
    let mut a_sat = f64::INFINITY;
    let mut max_grad: f64 = 0.0;
    for i in 0..=n {
        let k = ks + lo * (span / lo).powf(i as f64 / n as f64);
        let grad = lqr::scalar_gradient(p, k).map_err(|e| PliError::InvalidArgument(e.to_string()))?;
        let theta = lqr::scalar_gap(p, k).map_err(|e| PliError::InvalidArgument(e.to_string()))?;
        let ratio = standard_ratio(p, k)?;
        max_grad = max_grad.max(grad.abs());
        min_ratio = min_ratio.min(ratio);
        a_sat = a_sat.min(ratio * (b_sat + theta));
    }
    if max_grad > grad_bound * (1.0 + RATE_SLACK) {
        return Err(PliError::InvalidArgument(format!(
            "gradient {max_grad} exceeds the bound {grad_bound}"
        )));
    }
    Ok(SatPliWitness {
        certificate: PliCertificate {
            kind: CertificateKind::SatPli {
                a_sat,
                b_sat,
                grad_bound,
            },
            domain_descriptor: format!("({ks}, {k_max}]"),
            samples_checked: n + 1,
            min_ratio_observed: min_ratio,
        },
        ratio_at_2kstar: standard_ratio(p, 2.0 * ks.max(p.a.abs() + 1e-12))?,
        ratio_at_kmax: standard_ratio(p, k_max)?,
        max_gradient_observed: max_grad,
    })
}

/// `f'(k)² / (f(k) − f*)` for `f(k) = J(k²)`.
pub fn reparam_ratio(p: &ScalarProblem, k: f64) -> Result<f64, PliError> {
    let kk = k * k;
    if !(kk > p.a) {
        return Err(PliError::InvalidArgument(format!("need k² > a = {}, got k = {k}", p.a)));
    }
    // f'² / (f − f*) = 4k² ∇J(k²)² / θ(k²)
    Ok(4.0 * kk * standard_ratio(p, kk)?)
}

/// Infimum of [`reparam_ratio`] over `[epsilon, k_max]`, on a log grid that
/// includes `√k*`.
pub fn reparam_mu_estimate(p: &ScalarProblem, epsilon: f64, k_max: f64) -> Result<f64, PliError> {
    reparam_mu_estimate_on_grid(p, epsilon, k_max, 4000)
}

pub fn reparam_mu_estimate_on_grid(
    p: &ScalarProblem,
    epsilon: f64,
    k_max: f64,
    n_grid: usize,
) -> Result<f64, PliError> {
    if !(p.a > 0.0) {
        return Err(PliError::InvalidArgument(format!("need a > 0, got {}", p.a)));
    }
    let root = p.k_star().sqrt();
    if !(epsilon > p.a.sqrt()) {
        return Err(PliError::InvalidArgument(format!("need epsilon > √a = {}", p.a.sqrt())));
    }
    if !(k_max > 10.0 * root) {
        return Err(PliError::InvalidArgument(format!("need k_max > 10·√k* = {}", 10.0 * root)));
    }
    if n_grid < 2 || epsilon >= k_max {
        return Err(PliError::InvalidArgument("need n_grid >= 2 and epsilon < k_max".into()));
    }
    let mut best = f64::INFINITY;
    for i in 0..n_grid {
        let k = epsilon * (k_max / epsilon).powf(i as f64 / (n_grid - 1) as f64);
        best = best.min(reparam_ratio(p, k)?);
    }
    if root >= epsilon && root <= k_max {
        best = best.min(reparam_ratio(p, root)?);
    }
    Ok(best)
}

/// Infimum of the unfactored ratio `∇J²/θ` over `(k*, k_max]`.
pub fn standard_ratio_infimum(p: &ScalarProblem, k_max: f64) -> Result<f64, PliError> {
    let ks = p.k_star();
    if !(k_max > ks) {
        return Err(PliError::InvalidArgument(format!("need k_max > k* = {ks}")));
    }
    // the ratio 4rℓ(1 − ℓε)² decreases on (k*, ∞), so the right end is the infimum
    let n = 2000;
    let lo = (k_max - ks) * 1e-9;
    let mut best = standard_ratio(p, k_max)?;
    for i in 0..n {
        let k = ks + lo * ((k_max - ks) / lo).powf(i as f64 / n as f64);
        best = best.min(standard_ratio(p, k)?);
    }
    Ok(best)
}

/// Whether `μ_γ` is non-decreasing along an ascending imbalance grid.
pub fn monotonicity_check(p: &ScalarProblem, gamma: f64, c_grid: &[f64]) -> Result<bool, PliError> {
    if c_grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(PliError::InvalidArgument("imbalance grid must be ascending".into()));
    }
    let mut prev = f64::NEG_INFINITY;
    for &c in c_grid {
        let mu = mu_gamma(p, c, gamma)?;
        if mu < prev * (1.0 - 1e-12) {
            return Ok(false);
        }
        prev = mu;
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn prob(a: f64) -> ScalarProblem {
        ScalarProblem::new(a, 1.0, 1.0).unwrap()
    }

    #[test]
    fn rate_examples() {
        let p = prob(-1.0);
        assert_relative_eq!(mu_gamma(&p, 0.0, 1.0).unwrap(), 0.05, max_relative = 1e-14);
        assert_relative_eq!(mu_gamma(&p, 0.5, 1.0).unwrap(), 1.0 / 12.0, max_relative = 1e-14);
        // the two a<0 branches meet at c̃
        let ct = c_tilde(&p, 1.0);
        assert_relative_eq!(ct, 0.5, max_relative = 1e-15);
        let left = 0.25 * (1.0 + ct) / (1.0 - ct + 4.0);
        let right = 0.25 * (ct / (4.0 + ct)).sqrt();
        assert_relative_eq!(left, right, max_relative = 1e-14);
        let p0 = prob(0.0);
        assert_relative_eq!(mu_gamma(&p0, 0.0, 2.0).unwrap(), 0.25, max_relative = 1e-15);
    }

    #[test]
    fn hypothesis_enforced() {
        let p = prob(1.0);
        assert!(matches!(
            mu_gamma(&p, 0.0, 4.0),
            Err(PliError::OutsideHypothesis { bound, .. }) if bound == 4.0
        ));
        assert!(mu_lower_bound(&prob(-1.0), 0.0).is_err());
        assert!(mu_gamma(&prob(-1.0), -1.0, 1.0).is_err());
    }

    #[test]
    fn components_and_ratio_at_zero_gain() {
        let p = prob(0.0);
        // k* = 1, k = 2: ℓ = 1/4, ε = 1
        let (t1, t2) = pli_ratio_components(&p, 2.0, 0.0).unwrap();
        assert_relative_eq!(t1, 0.5625, max_relative = 1e-15);
        assert_relative_eq!(t2, 1.0, max_relative = 1e-15);
        let fg = FactoredGain::scalar_with_imbalance(2.0, 0.0, 2).unwrap();
        assert_relative_eq!(measured_ratio(&p, &fg).unwrap(), 2.25, max_relative = 1e-12);
    }

    #[test]
    fn ratio_limit_at_optimum() {
        let p = ScalarProblem::new(0.7, 2.0, 0.5).unwrap();
        let ks = p.k_star();
        let c = 3.0;
        let limit = 4.0 * p.r * p.ell(ks) * (c + 4.0 * ks * ks).sqrt();
        assert_relative_eq!(overparam_ratio(&p, ks, c).unwrap(), limit, max_relative = 1e-14);
        let fg = FactoredGain::scalar_with_imbalance(ks, c, 2).unwrap();
        assert!(measured_ratio(&p, &fg).unwrap().is_finite());
    }

    #[test]
    fn monotone_in_imbalance() {
        let grid: Vec<f64> = (0..200).map(|i| 0.05 * i as f64 * i as f64).collect();
        for (a, g) in [(-2.0, 0.5), (-1.0, 1.0), (-0.1, 3.0), (0.0, 1.0), (0.5, 2.5)] {
            assert!(monotonicity_check(&prob(a), g, &grid).unwrap(), "a = {a}, gamma = {g}");
        }
        assert!(monotonicity_check(&prob(-1.0), 1.0, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn negative_a_rate_holds_on_samples() {
        for (a, g) in [(-1.0, 1.0), (-0.5, 0.25), (-3.0, 5.0)] {
            let cert = verify_gpli_samples(&prob(a), g, 3000, 7).unwrap();
            assert!(cert.samples_checked > 2000);
            let CertificateKind::Gpli { mu } = cert.kind else { panic!() };
            assert!(cert.min_ratio_observed >= mu * (1.0 - RATE_SLACK));
        }
    }

    #[test]
    fn sampler_is_thread_count_independent() {
        let p = prob(-1.0);
        let mut plan = SamplingPlan::for_problem(&p, 1.0);
        plan.threads = 1;
        let one = verify_gpli_with_plan(&p, 1.0, 9000, 3, &plan).unwrap();
        plan.threads = 4;
        let four = verify_gpli_with_plan(&p, 1.0, 9000, 3, &plan).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn satpli_witness_shows_saturation() {
        let p = prob(1.0);
        let w = satpli_witness(&p, 1e4).unwrap();
        assert!(w.max_gradient_observed <= 0.5);
        assert!(w.ratio_at_kmax < w.ratio_at_2kstar / 10.0);
        let CertificateKind::SatPli { a_sat, b_sat, .. } = w.certificate.kind else { panic!() };
        assert!(a_sat > 0.0 && b_sat > 0.0);
        assert!(satpli_witness(&p, 1.0).is_err());
    }

    #[test]
    fn reparam_rate_is_positive_and_grid_stable() {
        let p = prob(1.0);
        let coarse = reparam_mu_estimate_on_grid(&p, 1.2, 100.0, 2000).unwrap();
        let fine = reparam_mu_estimate_on_grid(&p, 1.2, 100.0, 8000).unwrap();
        assert!(coarse > 0.0);
        assert!((coarse - fine).abs() <= 0.01 * fine);
        let unfactored: Vec<f64> = [1e2, 1e3, 1e4]
            .iter()
            .map(|&km| standard_ratio_infimum(&p, km).unwrap())
            .collect();
        assert!(unfactored[2] < unfactored[1] && unfactored[1] < unfactored[0]);
        assert!(unfactored[2] < 0.01 * coarse);
    }

    proptest! {
        #[test]
        fn ratio_is_four_theta_product(a in -3.0f64..3.0, q in 0.1f64..5.0, r in 0.1f64..5.0,
                                       off in 1e-3f64..50.0, c in 0.0f64..50.0) {
            let p = ScalarProblem::new(a, q, r).unwrap();
            let k = p.k_star() + off * if off > 25.0 { 1.0 } else { -0.999 * (p.k_star() - a) / 25.0 };
            let fg = FactoredGain::scalar_with_imbalance(k, c, 2).unwrap();
            let direct = measured_ratio(&p, &fg).unwrap();
            let (t1, t2) = pli_ratio_components(&p, k, overparam::imbalance(&fg).max(0.0)).unwrap();
            prop_assert!((direct - 4.0 * t1 * t2).abs() <= 1e-7 * direct.abs().max(1e-12));
        }

        #[test]
        fn lower_bound_below_rate(a in -3.0f64..3.0, c in 0.0f64..1e3, extra in 1e-3f64..20.0) {
            let p = prob(a);
            let g = (4.0 * a).max(0.0) + extra;
            let mu = mu_gamma(&p, c, g).unwrap();
            let lb = mu_lower_bound(&p, g).unwrap();
            prop_assert!(mu >= lb * (1.0 - 1e-12));
        }
    }
}
