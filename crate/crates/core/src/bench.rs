//! Propagator benchmarking: wall time and final-probability accuracy of each
//! integrator configuration against a high-precision Crank-Nicolson
//! reference, on one fixed collision problem.
//!
//! Rows run sequentially (never inside a worker pool) so timings do not
//! interfere. Absolute times are machine-bound; the portable claims are the
//! error bound and the speed ordering.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::potmodel::DiabaticModel;
use crate::propagators::{
    propagate, AmplitudeState, Method, PropagateOptions, PropagatorConfig, SpectralBoundsMode,
};
use crate::report;
use crate::scattering::{build_path, CollisionHamiltonian, CollisionOptions};
use crate::trajectory::{CollisionGeometry, TrajectoryKind};

/// A benchmark problem: one trajectory, many integrator configurations.
pub struct BenchCase<'a> {
    pub model: &'a DiabaticModel,
    pub geom: CollisionGeometry,
    pub initial_channel: usize,
    pub kind: TrajectoryKind,
    pub configs: Vec<PropagatorConfig>,
    /// High-precision Crank-Nicolson reference; its step must be at least
    /// 100x finer than the finest fixed-step candidate.
    pub reference: PropagatorConfig,
    pub repetitions: usize,
    pub opts: CollisionOptions,
}

impl BenchCase<'_> {
    fn validate(&self) -> Result<()> {
        if self.repetitions < 3 {
            return Err(Error::model("benchmark needs at least 3 repetitions"));
        }
        if self.reference.method != Method::CrankNicolson
            || self.reference.local_error_bound.is_some()
        {
            return Err(Error::model("reference must be fixed-step Crank-Nicolson"));
        }
        // Self-comparison rows (the reference run as its own candidate) are
        // exempt from the tightness requirement.
        let finest_candidate = self
            .configs
            .iter()
            .filter(|c| c.local_error_bound.is_none() && **c != self.reference)
            .map(|c| c.dt)
            .fold(f64::INFINITY, f64::min);
        if self.reference.dt * 100.0 > finest_candidate {
            return Err(Error::model(
                "reference step must be at least 100x tighter than the candidates",
            ));
        }
        Ok(())
    }
}

/// One benchmark row.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub label: String,
    pub method: Method,
    pub preconditioned: bool,
    pub bounds_mode: SpectralBoundsMode,
    /// "dt=..." or "tol=..."
    pub step_policy: String,
    pub wall_median_s: f64,
    pub wall_spread_s: f64,
    pub max_rel_error: f64,
    pub steps: u64,
    /// err ≤ 2% gate.
    pub passed: bool,
    /// Set when the configuration aborted instead of finishing.
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub reference_label: String,
    pub reference_wall_s: f64,
    pub reference_probs: Vec<f64>,
    pub machine: String,
}

impl BenchReport {
    /// Fastest configuration that both finished and met the 2% bound.
    pub fn fastest_passing(&self) -> Option<&BenchRow> {
        self.rows
            .iter()
            .filter(|r| r.passed && r.failure.is_none())
            .min_by(|a, b| a.wall_median_s.partial_cmp(&b.wall_median_s).unwrap())
    }

    pub fn row(&self, label: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// The standard benchmark grid: fixed steps with and without precondition,
/// plus the adaptive Fehlberg and double-step diagonalization variants with
/// exact and estimated eigenvalue bounds.
pub fn standard_configs() -> Vec<PropagatorConfig> {
    vec![
        PropagatorConfig::fixed(Method::CrankNicolson, 0.001),
        PropagatorConfig::fixed(Method::Chebyshev, 0.001),
        PropagatorConfig::fixed(Method::Rk4, 0.001),
        PropagatorConfig::fixed(Method::Diagonalization, 0.2),
        PropagatorConfig::fixed(Method::CrankNicolson, 0.05).with_precondition(true),
        PropagatorConfig::fixed(Method::Rk4, 0.1).with_precondition(true),
        PropagatorConfig::fixed(Method::Diagonalization, 0.2).with_precondition(true),
        PropagatorConfig::adaptive(Method::FehlbergRk, 1e-4, 0.01)
            .with_precondition(true)
            .with_bounds_mode(SpectralBoundsMode::Exact),
        PropagatorConfig::adaptive(Method::Diagonalization, 1e-4, 0.05)
            .with_precondition(true)
            .with_bounds_mode(SpectralBoundsMode::Exact),
        PropagatorConfig::adaptive(Method::FehlbergRk, 1e-4, 0.01)
            .with_precondition(true)
            .with_bounds_mode(SpectralBoundsMode::Gershgorin),
    ]
}

/// Run the benchmark: a reference pass, then each configuration timed over
/// `repetitions` runs (after one warm-up) on the same trajectory.
pub fn run_bench(case: &BenchCase<'_>) -> Result<BenchReport> {
    case.validate()?;
    let r_start = crate::scattering::resolve_start_radius(case.model, &case.opts);
    let path = build_path(
        case.model,
        case.geom,
        case.initial_channel,
        case.kind,
        r_start,
        &case.opts.radial,
    )?;
    let sampler = CollisionHamiltonian::new(case.model, &path, case.initial_channel);
    let n = case.model.n_channels();
    let t_end = path.t_end();
    let a0 = AmplitudeState::delta(n, case.initial_channel, -t_end).a;
    let popts = PropagateOptions {
        history_cap: 16, // timing runs do not need dense histories
        ..Default::default()
    };

    let t0 = Instant::now();
    let reference = propagate(&sampler, &a0, -t_end, t_end, &case.reference, &popts)?;
    let reference_wall_s = t0.elapsed().as_secs_f64();
    let reference_probs = reference.state.probabilities();

    let mut rows = Vec::with_capacity(case.configs.len());
    for cfg in &case.configs {
        let run_once = || -> Result<(f64, crate::propagators::Propagation)> {
            let t = Instant::now();
            let out = propagate(&sampler, &a0, -t_end, t_end, cfg, &popts)?;
            Ok((t.elapsed().as_secs_f64(), out))
        };
        // warm-up, also the failure probe
        let first = run_once();
        let (mut times, last) = match first {
            Ok((_, run)) => {
                let mut times = Vec::with_capacity(case.repetitions);
                let mut last = run;
                for _ in 0..case.repetitions {
                    let (dt, run) = run_once()?;
                    times.push(dt);
                    last = run;
                }
                (times, Some(last))
            }
            Err(e) => {
                rows.push(BenchRow {
                    label: cfg.label(),
                    method: cfg.method,
                    preconditioned: cfg.precondition,
                    bounds_mode: cfg.bounds_mode,
                    step_policy: step_policy(cfg),
                    wall_median_s: f64::NAN,
                    wall_spread_s: f64::NAN,
                    max_rel_error: f64::NAN,
                    steps: 0,
                    passed: false,
                    failure: Some(e.to_string()),
                });
                continue;
            }
        };
        let last = last.unwrap();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = times[times.len() / 2];
        let spread = times[times.len() - 1] - times[0];
        let probs = last.state.probabilities();
        let max_rel_error = probs
            .iter()
            .zip(&reference_probs)
            .map(|(p, r)| (p - r).abs() / r.abs().max(1e-300))
            .fold(0.0f64, f64::max);
        rows.push(BenchRow {
            label: cfg.label(),
            method: cfg.method,
            preconditioned: cfg.precondition,
            bounds_mode: cfg.bounds_mode,
            step_policy: step_policy(cfg),
            wall_median_s: median,
            wall_spread_s: spread,
            max_rel_error,
            steps: last.steps,
            passed: max_rel_error <= 0.02,
            failure: None,
        });
    }

    Ok(BenchReport {
        rows,
        reference_label: case.reference.label(),
        reference_wall_s,
        reference_probs,
        machine: machine_info(),
    })
}

fn step_policy(cfg: &PropagatorConfig) -> String {
    match cfg.local_error_bound {
        Some(tol) => format!("tol={tol:.0e}"),
        None => format!("dt={}", cfg.dt),
    }
}

fn machine_info() -> String {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get().to_string())
        .unwrap_or_else(|_| "?".into());
    format!(
        "os={} arch={} cpus={threads}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Table-shaped CSV: one row per configuration plus a machine-info header.
pub fn write_bench_csv(
    report: &BenchReport,
    path: impl AsRef<std::path::Path>,
    header: &[String],
) -> Result<()> {
    let mut head = vec![
        format!("machine: {}", report.machine),
        format!(
            "reference: {} ({:.3} s)",
            report.reference_label, report.reference_wall_s
        ),
    ];
    head.extend_from_slice(header);
    report::write_csv(
        path,
        &head,
        &[
            "method",
            "preconditioned",
            "bounds",
            "step_policy",
            "wall_median_s",
            "wall_spread_s",
            "max_rel_error",
            "steps",
            "passed",
            "failure",
        ],
        report.rows.iter().map(|r| {
            vec![
                r.method.to_string(),
                r.preconditioned.to_string(),
                match r.bounds_mode {
                    SpectralBoundsMode::Exact => "exact".into(),
                    SpectralBoundsMode::Gershgorin => "gershgorin".into(),
                },
                r.step_policy.clone(),
                format!("{:.6e}", r.wall_median_s),
                format!("{:.6e}", r.wall_spread_s),
                format!("{:.6e}", r.max_rel_error),
                r.steps.to_string(),
                r.passed.to_string(),
                r.failure.clone().unwrap_or_default(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potmodel::{build_analytic, AnalyticModel, GridSpec};

    fn small_case(model: &DiabaticModel, configs: Vec<PropagatorConfig>) -> BenchCase<'_> {
        BenchCase {
            model,
            geom: CollisionGeometry::new(0.5, 1.0, 5000.0).unwrap(),
            initial_channel: 0,
            kind: TrajectoryKind::StraightLine,
            configs,
            reference: PropagatorConfig::fixed(Method::CrankNicolson, 1e-4),
            repetitions: 3,
            opts: CollisionOptions {
                start_radius: Some(15.0),
                ..Default::default()
            },
        }
    }

    #[test]
    fn self_comparison_has_zero_error() {
        let model =
            build_analytic(&AnalyticModel::SyntheticN { n: 3, seed: 5 }, GridSpec::default())
                .unwrap();
        let case = small_case(&model, vec![PropagatorConfig::fixed(Method::CrankNicolson, 1e-4)]);
        let report = run_bench(&case).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].max_rel_error, 0.0);
        assert!(report.rows[0].passed);
    }

    #[test]
    fn error_columns_are_deterministic() {
        let model =
            build_analytic(&AnalyticModel::SyntheticN { n: 3, seed: 5 }, GridSpec::default())
                .unwrap();
        let configs = vec![
            PropagatorConfig::fixed(Method::Diagonalization, 0.2),
            PropagatorConfig::adaptive(Method::FehlbergRk, 1e-4, 0.01).with_precondition(true),
        ];
        let r1 = run_bench(&small_case(&model, configs.clone())).unwrap();
        let r2 = run_bench(&small_case(&model, configs)).unwrap();
        for (a, b) in r1.rows.iter().zip(&r2.rows) {
            assert_eq!(a.max_rel_error.to_bits(), b.max_rel_error.to_bits());
            assert_eq!(a.steps, b.steps);
        }
    }

    #[test]
    fn halving_fixed_steps_does_not_worsen_error() {
        let model =
            build_analytic(&AnalyticModel::SyntheticN { n: 3, seed: 5 }, GridSpec::default())
                .unwrap();
        let configs = vec![
            PropagatorConfig::fixed(Method::CrankNicolson, 0.04),
            PropagatorConfig::fixed(Method::CrankNicolson, 0.02),
            PropagatorConfig::fixed(Method::Rk4, 0.04),
            PropagatorConfig::fixed(Method::Rk4, 0.02),
        ];
        let report = run_bench(&small_case(&model, configs)).unwrap();
        assert!(report.rows[1].max_rel_error <= report.rows[0].max_rel_error + 1e-12);
        assert!(report.rows[3].max_rel_error <= report.rows[2].max_rel_error + 1e-12);
    }

    #[test]
    fn aborting_config_becomes_a_failed_row() {
        let model =
            build_analytic(&AnalyticModel::SyntheticN { n: 3, seed: 5 }, GridSpec::default())
                .unwrap();
        // RK4 at an absurd step blows up the norm guard
        let configs = vec![PropagatorConfig::fixed(Method::Rk4, 5.0)];
        let report = run_bench(&small_case(&model, configs)).unwrap();
        assert!(report.rows[0].failure.is_some());
        assert!(!report.rows[0].passed);
    }

    #[test]
    fn invariants_are_validated() {
        let model =
            build_analytic(&AnalyticModel::SyntheticN { n: 3, seed: 5 }, GridSpec::default())
                .unwrap();
        let mut case = small_case(&model, vec![PropagatorConfig::fixed(Method::Rk4, 0.001)]);
        case.repetitions = 2;
        assert!(run_bench(&case).is_err());

        let mut case = small_case(&model, vec![PropagatorConfig::fixed(Method::Rk4, 0.001)]);
        case.reference = PropagatorConfig::fixed(Method::CrankNicolson, 0.0001);
        // 0.0001 * 100 = 0.01 > 0.001: not 100x tighter than the candidate
        assert!(run_bench(&case).is_err());
    }
}
