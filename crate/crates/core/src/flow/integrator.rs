//! Dormand–Prince 5(4) with PI step-size control.
//!
//! Steps are clipped so that every recording instant `i·stride` is hit
//! exactly; the controller's proposal is kept separately so clipping does not
//! leak into later step sizes.

use super::{FlowModel, Inadmissible, IntegratorConfig, TerminalStatus, Trajectory};
use crate::error::FlowError;


const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 20_000_000;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Stages {
    fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            y_new: vec![0.0; dim],
        }
    }
}

fn combine(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (coef, k) in terms {
            acc += coef * k[i];
        }
        *o = y[i] + h * acc;
    }
}

/// One trial step from `y` with `k[0] = f(y)`. Returns the scaled error norm
/// and the closed-loop abscissa at the new point.
fn try_step<M: FlowModel>(
    model: &M,
    y: &[f64],
    h: f64,
    st: &mut Stages,
    cfg: &IntegratorConfig,
) -> Result<(f64, f64), Inadmissible> {
    let [k1, k2, k3, k4, k5, k6, k7] = &mut st.k;
    combine(&mut st.tmp, y, h, &[(A21, k1)]);
    model.rhs(&st.tmp, k2)?;
    combine(&mut st.tmp, y, h, &[(A31, k1), (A32, k2)]);
    model.rhs(&st.tmp, k3)?;
    combine(&mut st.tmp, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
    model.rhs(&st.tmp, k4)?;
    combine(&mut st.tmp, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
    model.rhs(&st.tmp, k5)?;
    combine(
        &mut st.tmp,
        y,
        h,
        &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)],
    );
    model.rhs(&st.tmp, k6)?;
    combine(
        &mut st.y_new,
        y,
        h,
        &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)],
    );
    let abscissa = model.rhs(&st.y_new, k7)?;

    let mut sum = 0.0;
    for i in 0..y.len() {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = cfg.atol + cfg.rtol * y[i].abs().max(st.y_new[i].abs());
        sum += (e / sc).powi(2);
    }
    Ok(((sum / y.len() as f64).sqrt(), abscissa))
}

fn initial_step(y: &[f64], f: &[f64], cfg: &IntegratorConfig) -> f64 {
    let scaled = |v: &[f64]| {
        let s: f64 = v
            .iter()
            .zip(y)
            .map(|(a, b)| (a / (cfg.atol + cfg.rtol * b.abs())).powi(2))
            .sum();
        (s / y.len() as f64).sqrt()
    };
    let d0 = scaled(y);
    let d1 = scaled(f);
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(cfg.max_step).min(cfg.record_stride).max(1e-12)
}

pub(crate) fn integrate<M: FlowModel>(
    model: &M,
    y0: Vec<f64>,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    cfg.validate()?;
    let dim = y0.len();
    let mut traj = Trajectory::empty(model.has_factored_observables(), model.has_distance());

    let obs0 = model
        .observe(&y0)
        .map_err(|e| FlowError::Inadmissible(e.0))?;
    let mut st = Stages::new(dim);
    let mut y = y0;
    let abscissa0 = model
        .rhs(&y, &mut st.k[0])
        .map_err(|e| FlowError::Inadmissible(e.0))?;
    traj.push(0.0, &y, &obs0);
    if abscissa0 > -cfg.guard_margin {
        traj.terminal_status = TerminalStatus::GuardStop;
        return Ok(traj);
    }
    if obs0.converged(cfg.atol) {
        traj.terminal_status = TerminalStatus::Converged;
        return Ok(traj);
    }

    let mut t = 0.0;
    let mut record_idx: u64 = 1;
    let record_time = |idx: u64| (idx as f64 * cfg.record_stride).min(cfg.t_end);
    let mut h_prop = initial_step(&y, &st.k[0], cfg);
    let mut err_old: f64 = 1e-4;
    let mut rejected_last = false;

    for _ in 0..MAX_STEPS {
        let target = record_time(record_idx);
        let remaining = target - t;
        let h_try = h_prop.min(cfg.max_step);
        // land exactly on the record time instead of leaving a sliver
        let h = if h_try >= remaining * (1.0 - 1e-9) { remaining } else { h_try };
        if h <= 1e-14 * t.abs().max(1.0) {
            traj.terminal_status = TerminalStatus::IntegratorFailure;
            return Ok(traj);
        }

        match try_step(model, &y, h, &mut st, cfg) {
            Err(_) => {
                // a stage left the admissible set; retreat
                h_prop = h * 0.25;
                rejected_last = true;
                continue;
            }
            Ok((err, abscissa)) if err <= 1.0 => {
                let fac11 = err.max(1e-300).powf(EXPO);
                let fac = (fac11 / err_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_next = h / fac;
                if rejected_last {
                    h_next = h_next.min(h);
                }
                err_old = err.max(1e-4);
                rejected_last = false;
                // only grow from the unclipped proposal
                h_prop = if h < h_prop { h_prop.max(h_next) } else { h_next };

                t = if h == target - t { target } else { t + h };
                std::mem::swap(&mut y, &mut st.y_new);
                let (first, rest) = st.k.split_at_mut(1);
                std::mem::swap(&mut first[0], &mut rest[5]);

                let guard_hit = abscissa > -cfg.guard_margin;
                if t == target || guard_hit {
                    let obs = model
                        .observe(&y)
                        .map_err(|e| FlowError::Inadmissible(e.0))?;
                    traj.push(t, &y, &obs);
                    if guard_hit {
                        traj.terminal_status = TerminalStatus::GuardStop;
                        return Ok(traj);
                    }
                    if obs.converged(cfg.atol) {
                        traj.terminal_status = TerminalStatus::Converged;
                        return Ok(traj);
                    }
                    if t >= cfg.t_end {
                        traj.terminal_status = TerminalStatus::ReachedTEnd;
                        return Ok(traj);
                    }
                    record_idx += 1;
                }
            }
            Ok((err, _)) => {
                let fac11 = err.powf(EXPO);
                h_prop = h / (1.0 / FAC_MIN).min(fac11 / SAFETY);
                rejected_last = true;
            }
        }
    }
    traj.terminal_status = TerminalStatus::IntegratorFailure;
    Ok(traj)
}
