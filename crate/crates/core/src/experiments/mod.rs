//! Experiment orchestration: config-driven runs, the benchmark comparisons
//! and the scalar demonstrations, with CSV/JSON export.

pub mod config;
pub mod io;
pub mod presets;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use config::{load_config, ExperimentConfig, FlowKind, InitBlock, InitialPoint, OutputBlock, OutputFormat, SystemBlock};
pub use io::TrajectoryTable;

use crate::error::{ExperimentError, FlowError};
use crate::flow::{self, IntegratorConfig, TerminalStatus, Trajectory};
use crate::linalg::{self, Mat};
use crate::lqr::{self, LtiSystem, ScalarProblem};
use crate::overparam::{self, FactoredGain};
use crate::pli::{self, ProfileFit};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_SEED: u64 = 2024;
pub const COMPARISON_HORIZON: f64 = 20.0;
pub const SADDLE_HORIZON: f64 = 200.0;
pub const DEFAULT_SADDLE_SCALE: f64 = 1e-3;
/// Target number of recorded points per run.
const RECORD_POINTS: f64 = 400.0;
const WEIGHTS_NOTE: &str = "weights default to Q = R = Sigma = I when not given";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub final_gap: f64,
    pub t_end_reached: f64,
    pub terminal_status: TerminalStatus,
    pub profile: Option<ProfileFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_error: Option<String>,
    pub invariant_max_drift: Option<f64>,
    pub config_echo: ExperimentConfig,
    pub notes: String,
    pub code_version: String,
    pub seed_echo: Option<u64>,
}

/// One integrated run with its summary.
#[derive(Debug, Clone)]
pub struct LegResult {
    pub trajectory: Trajectory,
    pub summary: RunSummary,
}

impl LegResult {
    fn new(label: &str, trajectory: Trajectory, config: ExperimentConfig, seed: Option<u64>) -> Self {
        let (profile, profile_error) = match pli::classify_profile(&trajectory, config.integrator.atol) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let summary = RunSummary {
            label: label.to_string(),
            final_gap: trajectory.final_gap(),
            t_end_reached: trajectory.times.last().copied().unwrap_or(0.0),
            terminal_status: trajectory.terminal_status,
            profile,
            profile_error,
            invariant_max_drift: trajectory.max_invariant_drift(),
            config_echo: config,
            notes: WEIGHTS_NOTE.to_string(),
            code_version: CODE_VERSION.to_string(),
            seed_echo: seed,
        };
        Self { trajectory, summary }
    }

    pub fn table(&self) -> TrajectoryTable {
        TrajectoryTable::from_trajectory(&self.trajectory, self.summary.config_echo.output.stride)
    }
}

/// Writes `<label>.csv` and `<label>.summary.json` under `out_dir`.
pub fn write_outputs(leg: &LegResult, out_dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let formats = &leg.summary.config_echo.output.formats;
    if formats.contains(&OutputFormat::Csv) {
        io::write_trajectory_csv(&leg.table(), &out_dir.join(format!("{}.csv", leg.summary.label)))?;
    }
    if formats.contains(&OutputFormat::Json) {
        io::write_json(&leg.summary, &out_dir.join(format!("{}.summary.json", leg.summary.label)))?;
    }
    Ok(())
}

/// Runs `run`, and if it converged with too few recorded points, runs it
/// again on `[0, t_conv]` with a finer stride.
fn with_resolution<F>(cfg: &IntegratorConfig, run: F) -> Result<(Trajectory, IntegratorConfig), FlowError>
where
    F: Fn(&IntegratorConfig) -> Result<Trajectory, FlowError>,
{
    let traj = run(cfg)?;
    let usable = traj.gaps.iter().filter(|g| **g > cfg.atol).count();
    let t_last = traj.times.last().copied().unwrap_or(0.0);
    if traj.terminal_status == TerminalStatus::Converged && usable < 200 && t_last > 0.0 {
        let finer = cfg.with_horizon(t_last, t_last / RECORD_POINTS);
        return Ok((run(&finer)?, finer));
    }
    Ok((traj, *cfg))
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    linalg::to_rows(m)
}

fn preset_config(preset: &str, init: InitBlock, integrator: IntegratorConfig) -> ExperimentConfig {
    ExperimentConfig {
        system: SystemBlock {
            preset: Some(preset.to_string()),
            ..SystemBlock::default()
        },
        init,
        integrator,
        output: OutputBlock::default(),
    }
}

fn gain_init(k: &Mat) -> InitBlock {
    InitBlock {
        gain: Some(rows(k)),
        ..InitBlock::default()
    }
}

fn factor_init(fg: &FactoredGain) -> InitBlock {
    InitBlock {
        k1: Some(rows(fg.k1())),
        k2: Some(rows(fg.k2())),
        ..InitBlock::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `G1` from `K⁻(0)`.
    Stable,
    /// `G2` from `K⁺(0)`.
    Unstable,
}

impl Variant {
    pub fn preset(self) -> &'static str {
        match self {
            Variant::Stable => "G1",
            Variant::Unstable => "G2",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Variant::Stable => "fig2a",
            Variant::Unstable => "fig2b",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub standard: LegResult,
    pub factored: LegResult,
}

pub fn comparison_integrator() -> IntegratorConfig {
    IntegratorConfig::default().with_horizon(COMPARISON_HORIZON, COMPARISON_HORIZON / RECORD_POINTS)
}

/// Standard versus factored flow on a preset from its printed initial gain.
/// The factors come from the seeded factorization of that same gain, so both
/// legs start at the same cost. Legs run concurrently.
pub fn run_fig_comparison(variant: Variant, out_dir: Option<&Path>, seed: u64) -> Result<Comparison, ExperimentError> {
    let name = variant.preset();
    let sys = presets::system(name).expect("preset exists");
    let k0 = presets::initial_gain(name).expect("preset exists");
    let abscissa = linalg::spectral_abscissa(&sys.closed_loop(&k0))?;
    if abscissa >= 0.0 {
        return Err(ExperimentError::Check(format!(
            "preset gain for {name} is not stabilizing (abscissa {abscissa:.3e})"
        )));
    }
    let (_, j_min) = lqr::lqr_optimum(&sys)?;
    let fg0 = overparam::remark2_factorize(&k0, presets::KAPPA, seed)?;
    let cfg = comparison_integrator();

    let (std_run, fac_run) = std::thread::scope(|s| {
        let a = s.spawn(|| with_resolution(&cfg, |c| flow::flow_standard(&sys, &k0, c, j_min)));
        let b = s.spawn(|| with_resolution(&cfg, |c| flow::flow_factored(&sys, &fg0, c, j_min)));
        (a.join().expect("leg panicked"), b.join().expect("leg panicked"))
    });
    let (st, st_cfg) = std_run?;
    let (ft, ft_cfg) = fac_run?;
    let label = variant.label();
    let standard = LegResult::new(&format!("{label}_standard"), st, preset_config(name, gain_init(&k0), st_cfg), None);
    let factored = LegResult::new(
        &format!("{label}_factored"),
        ft,
        preset_config(name, factor_init(&fg0), ft_cfg),
        Some(seed),
    );
    if let Some(dir) = out_dir {
        write_outputs(&standard, dir)?;
        write_outputs(&factored, dir)?;
    }
    Ok(Comparison { standard, factored })
}

pub fn saddle_integrator() -> IntegratorConfig {
    IntegratorConfig::default().with_horizon(SADDLE_HORIZON, SADDLE_HORIZON / RECORD_POINTS)
}

/// Seeded `k0_scale · N(0, 1)` gain of the `G1` shape.
pub fn saddle_initial_gain(k0_scale: f64, seed: u64) -> Mat {
    let k = presets::k_minus0();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(k.nrows(), k.ncols(), |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        k0_scale * z
    })
}

/// Factored flow on `G1` from a balanced factorization of a tiny gain, next
/// to the standard flow from the same gain.
pub fn run_saddle(out_dir: Option<&Path>, k0_scale: f64, seed: u64) -> Result<Comparison, ExperimentError> {
    let sys = presets::g1();
    let k0 = saddle_initial_gain(k0_scale, seed);
    let fg0 = overparam::balanced_factorize(&k0, presets::KAPPA)?;
    let (_, j_min) = lqr::lqr_optimum(&sys)?;
    let cfg = saddle_integrator();
    let (std_run, fac_run) = std::thread::scope(|s| {
        let a = s.spawn(|| flow::flow_standard(&sys, &k0, &cfg, j_min));
        let b = s.spawn(|| flow::flow_factored(&sys, &fg0, &cfg, j_min));
        (a.join().expect("leg panicked"), b.join().expect("leg panicked"))
    });
    let standard = LegResult::new("fig3_standard", std_run?, preset_config("G1", gain_init(&k0), cfg), Some(seed));
    let factored = LegResult::new("fig3_factored", fac_run?, preset_config("G1", factor_init(&fg0), cfg), Some(seed));
    if let Some(dir) = out_dir {
        write_outputs(&standard, dir)?;
        write_outputs(&factored, dir)?;
    }
    Ok(Comparison { standard, factored })
}

/// One row of the rate table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuRow {
    pub c: f64,
    pub gamma: f64,
    pub mu_gamma: f64,
    pub mu_lower_bound: f64,
}

pub const TABLE_C: [f64; 8] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
pub const TABLE_GAMMA: [f64; 9] = [0.25, 0.5, 1.0, 2.0, 4.0, 4.5, 6.0, 8.0, 16.0];

pub fn mu_table(p: &ScalarProblem) -> Vec<MuRow> {
    let mut out = Vec::new();
    for &gamma in TABLE_GAMMA.iter().filter(|g| **g > (4.0 * p.a).max(0.0)) {
        let lb = pli::mu_lower_bound(p, gamma).expect("gamma filtered");
        for &c in &TABLE_C {
            out.push(MuRow {
                c,
                gamma,
                mu_gamma: pli::mu_gamma(p, c, gamma).expect("gamma filtered"),
                mu_lower_bound: lb,
            });
        }
    }
    out
}

pub fn write_mu_table(rows: &[MuRow], path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let err = |e: csv::Error| ExperimentError::Csv(e.to_string());
    w.write_record(["c", "gamma", "mu_gamma", "mu_lower_bound"]).map_err(err)?;
    for r in rows {
        w.write_record([r.c, r.gamma, r.mu_gamma, r.mu_lower_bound].map(|v| format!("{v:.16e}")))
            .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Csv(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Scalar problem as a 1×1 system config.
fn scalar_config(p: &ScalarProblem, init: InitBlock, integrator: IntegratorConfig) -> ExperimentConfig {
    ExperimentConfig {
        system: SystemBlock {
            a: Some(vec![vec![p.a]]),
            b: Some(vec![vec![1.0]]),
            q: Some(vec![vec![p.q]]),
            r: Some(vec![vec![p.r]]),
            sigma: Some(vec![vec![1.0]]),
            ..SystemBlock::default()
        },
        init,
        integrator,
        output: OutputBlock::default(),
    }
}

/// Horizon long enough for the standard scalar flow to cross its linear
/// phase: the gap falls at rate `∇J² ≤ r²/4`.
pub fn scalar_integrator(p: &ScalarProblem, k0: f64) -> Result<IntegratorConfig, ExperimentError> {
    let gap0 = lqr::scalar_gap(p, k0)?;
    let t_end = (8.0 * gap0 / (p.r * p.r) + 60.0).ceil();
    Ok(IntegratorConfig::default().with_horizon(t_end, t_end / 2000.0))
}

#[derive(Debug, Clone)]
pub struct ScalarDemo {
    pub legs: Vec<LegResult>,
    pub table: Vec<MuRow>,
}

pub const DEMO_KAPPA: usize = 2;
pub const DEMO_IMBALANCE: f64 = 4.0;

/// Standard, factored (`c = 0` and `c = 4`) and, for `a > 0`,
/// reparameterized scalar flows, all from cost `J(k0)`.
pub fn run_scalar_demo(p: &ScalarProblem, k0: f64, out_dir: Option<&Path>) -> Result<ScalarDemo, ExperimentError> {
    let cfg = scalar_integrator(p, k0)?;
    let mut legs = Vec::new();

    let (t, c) = with_resolution(&cfg, |c| flow::flow_scalar_standard(p, k0, c))?;
    legs.push(LegResult::new(
        "scalar_standard",
        t,
        scalar_config(p, InitBlock { gain: Some(vec![vec![k0]]), ..InitBlock::default() }, c),
        None,
    ));
    for (label, imb) in [("scalar_factored_c0", 0.0), ("scalar_factored_c4", DEMO_IMBALANCE)] {
        let fg = FactoredGain::scalar_with_imbalance(k0, imb, DEMO_KAPPA)?;
        let (t, c) = with_resolution(&cfg, |c| flow::flow_scalar_factored(p, &fg, c))?;
        legs.push(LegResult::new(label, t, scalar_config(p, factor_init(&fg), c), None));
    }
    if p.a > 0.0 {
        let root = k0.sqrt();
        let (t, c) = with_resolution(&cfg, |c| flow::scalar_flow_reparam(p, root, c))?;
        let init = InitBlock {
            gain: Some(vec![vec![root]]),
            flow: Some(FlowKind::Reparam),
            ..InitBlock::default()
        };
        legs.push(LegResult::new("scalar_reparam", t, scalar_config(p, init, c), None));
    }
    let table = mu_table(p);
    if let Some(dir) = out_dir {
        for leg in &legs {
            write_outputs(leg, dir)?;
        }
        write_mu_table(&table, &dir.join("mu_table.csv"))?;
    }
    Ok(ScalarDemo { legs, table })
}

/// Scalar problem behind a 1×1 system with `b = Σ = 1`, if it is one.
fn as_scalar(sys: &LtiSystem) -> Option<ScalarProblem> {
    if sys.n_states() == 1 && sys.n_inputs() == 1 && sys.b()[(0, 0)] == 1.0 && sys.sigma()[(0, 0)] == 1.0 {
        ScalarProblem::new(sys.a()[(0, 0)], sys.q()[(0, 0)], sys.r()[(0, 0)]).ok()
    } else {
        None
    }
}

/// Runs the flow described by `cfg`; outputs go to `out_dir` (or the
/// config's own directory) unless both are absent.
pub fn simulate(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<LegResult, ExperimentError> {
    cfg.validate()?;
    let sys = cfg.build_system()?;
    let init = cfg.initial_point(&sys)?;
    let integ = &cfg.integrator;
    let scalar = as_scalar(&sys);
    let kind = cfg.flow_kind();
    let traj = match (kind, &init, scalar) {
        (FlowKind::Reparam, InitialPoint::Gain(k), Some(p)) => flow::scalar_flow_reparam(&p, k[(0, 0)], integ)?,
        (FlowKind::Reparam, _, _) => {
            return Err(ExperimentError::Config(
                "init.flow = \"reparam\" needs a scalar system (b = sigma = 1) and a 1x1 gain".into(),
            ))
        }
        (FlowKind::Standard, InitialPoint::Gain(k), Some(p)) => flow::flow_scalar_standard(&p, k[(0, 0)], integ)?,
        (FlowKind::Standard, InitialPoint::Gain(k), None) => {
            let (_, j_min) = lqr::lqr_optimum(&sys)?;
            flow::flow_standard(&sys, k, integ, j_min)?
        }
        (FlowKind::Factored, InitialPoint::Factors(fg), Some(p)) if fg.k1().ncols() == 1 => {
            flow::flow_scalar_factored(&p, fg, integ)?
        }
        (FlowKind::Factored, InitialPoint::Factors(fg), _) => {
            let (_, j_min) = lqr::lqr_optimum(&sys)?;
            flow::flow_factored(&sys, fg, integ, j_min)?
        }
        (FlowKind::Factored, InitialPoint::Gain(k), _) => {
            let (_, j_min) = lqr::lqr_optimum(&sys)?;
            let fg = overparam::balanced_factorize(k, k.nrows().max(k.ncols()))?;
            flow::flow_factored(&sys, &fg, integ, j_min)?
        }
        (FlowKind::Standard, InitialPoint::Factors(fg), _) => {
            let (_, j_min) = lqr::lqr_optimum(&sys)?;
            flow::flow_standard(&sys, &overparam::compose(fg), integ, j_min)?
        }
    };
    let leg = LegResult::new("trajectory", traj, cfg.clone(), cfg.seed());
    let dir = out_dir.map(Path::to_path_buf).or_else(|| cfg.output.directory.as_ref().map(Into::into));
    if let Some(dir) = dir {
        write_outputs(&leg, &dir)?;
    }
    Ok(leg)
}
