//! Convergence-profile classification of recorded gap curves.
//!
//! Two models compete on the normalized gap `g(t) = θ(t)/θ(0)`:
//!
//! * pure exponential, `g ≈ e^{α − μ t}` over the whole record;
//! * linear then exponential, `g ≈ g₀ − β t` up to `t*` and `g ≈ e^{α' − μ_tail t}`
//!   after it, with `t*` searched over the recorded times.
//!
//! Exponential pieces are affine regressions of `log g` on `t` weighted by
//! `g²`, which is the first-order equivalent of least squares on `g` itself.
//! Both models are scored by their squared error on `g`, and each piece must
//! hold at least a tenth of the points so that the piecewise model cannot win
//! by discarding a handful of leading samples. The simpler model wins unless
//! the piecewise one lowers the error by more than 5%.

use serde::{Deserialize, Serialize};

use crate::error::PliError;
use crate::flow::Trajectory;

pub const MIN_POINTS: usize = 50;
pub const SSE_TOLERANCE: f64 = 0.05;
/// Smallest share of the usable points each piece must cover.
pub const MIN_SEGMENT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "GECS-like")]
    GecsLike,
    #[serde(rename = "GLECS-like")]
    GlecsLike,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::GecsLike => "GECS-like",
            Verdict::GlecsLike => "GLECS-like",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit {
    /// Slope of the linear phase, in gap units per unit time.
    pub beta: f64,
    pub t_star: f64,
    /// Decay rate of the exponential tail after `t_star`.
    pub mu_tail: f64,
    /// Decay rate of the single exponential fitted to the whole record.
    pub mu_pure: f64,
    pub sse_piecewise: f64,
    pub sse_pure_exp: f64,
    pub points_used: usize,
    pub verdict: Verdict,
}

/// Weighted running sums for `y ≈ c0 + c1 x`.
#[derive(Default, Clone, Copy)]
struct Sums {
    w: f64,
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
}

impl Sums {
    fn add(&mut self, w: f64, x: f64, y: f64) {
        self.w += w;
        self.x += w * x;
        self.y += w * y;
        self.xx += w * x * x;
        self.xy += w * x * y;
    }

    fn sub(&self, o: &Sums) -> Sums {
        Sums {
            w: self.w - o.w,
            x: self.x - o.x,
            y: self.y - o.y,
            xx: self.xx - o.xx,
            xy: self.xy - o.xy,
        }
    }

    fn line(&self) -> (f64, f64) {
        let sxx = self.xx - self.x * self.x / self.w;
        if !(sxx > 0.0) {
            return (self.y / self.w, 0.0);
        }
        let slope = (self.xy - self.x * self.y / self.w) / sxx;
        ((self.y - slope * self.x) / self.w, slope)
    }
}

/// Classifies a recorded trajectory; points with gap at or below `gap_floor`
/// (normally the integrator's absolute tolerance) are ignored.
pub fn classify_profile(traj: &Trajectory, gap_floor: f64) -> Result<ProfileFit, PliError> {
    classify_series(&traj.times, &traj.gaps, gap_floor)
}

pub fn classify_series(times: &[f64], gaps: &[f64], gap_floor: f64) -> Result<ProfileFit, PliError> {
    if times.len() != gaps.len() {
        return Err(PliError::InvalidArgument(format!(
            "{} times but {} gaps",
            times.len(),
            gaps.len()
        )));
    }
    let (t, g): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(gaps)
        .filter(|(ti, gi)| ti.is_finite() && gi.is_finite() && **gi > gap_floor && **gi > 0.0)
        .map(|(a, b)| (*a, *b))
        .unzip();
    let n = t.len();
    if n < MIN_POINTS {
        return Err(PliError::TrajectoryTooShort {
            usable: n,
            required: MIN_POINTS,
        });
    }
    let g0 = g[0];
    let gn: Vec<f64> = g.iter().map(|v| v / g0).collect();
    let t0 = t[0];
    let ts: Vec<f64> = t.iter().map(|v| v - t0).collect();
    let logs: Vec<f64> = gn.iter().map(|v| v.ln()).collect();

    let mut lin = vec![Sums::default(); n + 1];
    let mut exp = vec![Sums::default(); n + 1];
    for i in 0..n {
        let mut s = lin[i];
        s.add(1.0, ts[i], gn[i]);
        lin[i + 1] = s;
        let mut s = exp[i];
        s.add(gn[i] * gn[i], ts[i], logs[i]);
        exp[i + 1] = s;
    }
    let exp_sse = |range: std::ops::Range<usize>, d0: f64, d1: f64| -> f64 {
        range.map(|i| (gn[i] - (d0 + d1 * ts[i]).exp()).powi(2)).sum()
    };

    let (p0, p1) = exp[n].line();
    let sse_pure = exp_sse(0..n, p0, p1);

    let min_seg = ((n as f64 * MIN_SEGMENT_FRACTION).ceil() as usize).max(3);
    let mut best: Option<(f64, usize, f64, f64)> = None;
    for split in min_seg..=(n - min_seg) {
        // head: [0, split), tail: [split, n)
        let (c0, c1) = lin[split].line();
        let sse_head: f64 = (0..split).map(|i| (gn[i] - c0 - c1 * ts[i]).powi(2)).sum();
        let (d0, d1) = exp[n].sub(&exp[split]).line();
        let total = sse_head + exp_sse(split..n, d0, d1);
        if best.is_none_or(|b| total < b.0) {
            best = Some((total, split, -c1 * g0, -d1));
        }
    }
    let (sse_pw, split, beta, mu_tail) = best.expect("n >= MIN_POINTS leaves at least one split");

    // roundoff floor so that two exact fits do not compare noise
    let floor = 1e-24 * n as f64;
    let verdict = if sse_pure <= sse_pw * (1.0 + SSE_TOLERANCE) + floor {
        Verdict::GecsLike
    } else {
        Verdict::GlecsLike
    };
    Ok(ProfileFit {
        beta,
        t_star: t[split - 1],
        mu_tail,
        mu_pure: -p1,
        sse_piecewise: sse_pw,
        sse_pure_exp: sse_pure,
        points_used: n,
        verdict,
    })
}
