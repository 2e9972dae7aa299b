//! Command-line front end: run | scan | xsec | ses | bench over a flat
//! key-value config. Exit codes: 0 success, 1 physics/convergence failure,
//! 2 configuration error.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use ccscatter::bench::{run_bench, standard_configs, write_bench_csv, BenchCase};
use ccscatter::potmodel::DiabaticModel;
use ccscatter::propagators::{Method, PropagatorConfig};
use ccscatter::report;
use ccscatter::scattering::{
    build_path, cross_sections_over_speeds, ehrenfest_relabel, impact_scan, run_collision,
    transition_gaps, write_history_csv, write_opacity_csv, write_xsec_csv, CollisionResult,
};
use ccscatter::sesmap::{
    run_ses, write_comparison_csv, write_device_hamiltonian_csv, write_device_prob_csv,
    write_mapping_csv, DeviceSpec, LambdaPolicy,
};
use ccscatter::trajectory::CollisionGeometry;
use clap::{Parser, Subcommand};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "ccscatter", version, about = "Semiclassical coupled-channel scattering simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file.
    #[arg(long, global = true, default_value = "run.cfg")]
    config: PathBuf,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker-pool size for impact-parameter scans.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Apply the Ehrenfest kinetic-energy relabeling to cross sections.
    #[arg(long, global = true)]
    ehrenfest: bool,

    /// Override the synthetic-potential seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Also write the classical trajectory (t, R, dR/dt) for single-geometry
    /// commands.
    #[arg(long, global = true)]
    dump_trajectory: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One collision: probability-vs-time history.
    Run,
    /// Opacity function P(b) at fixed speed.
    Scan,
    /// Integral cross sections over `geometry.v0_list`.
    Xsec,
    /// Map the collision onto the emulated SES device and compare.
    Ses,
    /// Propagator timing/accuracy benchmark.
    Bench,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("warning: could not size the worker pool: {e}");
        }
    }

    let cfg = match config::load(&cli.config, cli.out.as_deref(), cli.seed, cli.ehrenfest) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cfg.out_dir) {
        eprintln!("cannot create output directory: {e}");
        return ExitCode::from(2);
    }

    let result = match cli.command {
        Command::Run => cmd_run(&cfg, cli.dump_trajectory),
        Command::Scan => cmd_scan(&cfg),
        Command::Xsec => cmd_xsec(&cfg),
        Command::Ses => cmd_ses(&cfg, cli.dump_trajectory),
        Command::Bench => cmd_bench(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_physics() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn header(cfg: &RunConfig, command: &str) -> Vec<String> {
    vec![
        format!("ccscatter {}", env!("CARGO_PKG_VERSION")),
        format!("command = {command}"),
        format!("config_hash = {}", cfg.config_hash),
        format!("potential = {}", cfg.source_desc),
    ]
}

fn geometry(cfg: &RunConfig, v0: f64) -> ccscatter::Result<CollisionGeometry> {
    CollisionGeometry::new(v0, cfg.b, cfg.mu)
}

fn dump_trajectory(
    cfg: &RunConfig,
    model: &DiabaticModel,
    result: &CollisionResult,
    path: PathBuf,
) -> ccscatter::Result<()> {
    let traj = build_path(
        model,
        result.geom,
        result.initial_channel,
        result.kind,
        result.start_radius,
        &cfg.copts.radial,
    )?;
    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(traj.radii.iter().zip(&traj.speeds))
        .map(|(t, (r, v))| vec![report::num(*t), report::num(*r), report::num(*v)])
        .collect();
    report::write_csv(
        path,
        &header(cfg, "trajectory"),
        &["t_au", "R_bohr", "dRdt_au"],
        rows,
    )
}

fn cmd_run(cfg: &RunConfig, dump: bool) -> ccscatter::Result<()> {
    let v0 = cfg.v0_list[0];
    let res = run_collision(
        &cfg.model,
        geometry(cfg, v0)?,
        cfg.initial_channel,
        cfg.kind,
        &cfg.prop,
        &cfg.copts,
    )?;
    let mut head = header(cfg, "run");
    head.push(format!("v0_au = {v0}"));
    head.push(format!("b_bohr = {}", cfg.b));
    head.push(format!("mu_au = {}", cfg.mu));
    head.push(format!("trajectory = {}", res.kind));
    head.push(format!("propagator = {}", cfg.prop.label()));
    head.push(format!("converged = {}", res.converged));
    write_history_csv(&res, cfg.out_dir.join("history.csv"), &head)?;
    if dump {
        dump_trajectory(cfg, &cfg.model, &res, cfg.out_dir.join("trajectory.csv"))?;
    }
    println!("final probabilities (initial channel {}):", res.initial_channel + 1);
    for (f, p) in res.final_probs.iter().enumerate() {
        println!("  P_{}{} = {p:.6e}", res.initial_channel + 1, f + 1);
    }
    println!(
        "history: {} samples over t = [{:.3}, {:.3}] a.u. -> {}",
        res.history.len(),
        res.history.first().map(|(t, _)| *t).unwrap_or(0.0),
        res.history.last().map(|(t, _)| *t).unwrap_or(0.0),
        cfg.out_dir.join("history.csv").display()
    );
    Ok(())
}

fn cmd_scan(cfg: &RunConfig) -> ccscatter::Result<()> {
    let v0 = cfg.v0_list[0];
    let table = impact_scan(
        &cfg.model,
        v0,
        cfg.mu,
        cfg.initial_channel,
        cfg.kind,
        &cfg.prop,
        &cfg.copts,
        &cfg.sopts,
    )?;
    write_opacity_csv(&table, cfg.out_dir.join("opacity.csv"), &header(cfg, "scan"))?;
    println!(
        "opacity scan: {} rows, b_max = {} bohr{} -> {}",
        table.rows.len(),
        table.b_max,
        if table.truncated { " (truncated at cap)" } else { "" },
        cfg.out_dir.join("opacity.csv").display()
    );
    Ok(())
}

fn cmd_xsec(cfg: &RunConfig) -> ccscatter::Result<()> {
    let mut table = cross_sections_over_speeds(
        &cfg.model,
        &cfg.v0_list,
        cfg.mu,
        cfg.initial_channel,
        cfg.kind,
        &cfg.prop,
        &cfg.copts,
        &cfg.sopts,
    )?;
    if cfg.ehrenfest {
        let gaps = transition_gaps(&cfg.model, cfg.initial_channel);
        table = ehrenfest_relabel(&table, &gaps)?;
    }
    let mut head = header(cfg, "xsec");
    head.push(format!("ehrenfest = {}", cfg.ehrenfest));
    write_xsec_csv(&table, cfg.out_dir.join("xsec.csv"), &head)?;
    println!(
        "cross sections at {} speeds -> {}",
        table.rows.len(),
        cfg.out_dir.join("xsec.csv").display()
    );
    Ok(())
}

fn cmd_ses(cfg: &RunConfig, dump: bool) -> ccscatter::Result<()> {
    let device = DeviceSpec::new(cfg.g_max_mhz, cfg.t_meas_ns, cfg.model.n_channels())?;
    let v0 = cfg.v0_list[0];
    let run = run_ses(
        &cfg.model,
        geometry(cfg, v0)?,
        cfg.initial_channel,
        cfg.kind,
        &device,
        &cfg.prop,
        &cfg.device_prop,
        &LambdaPolicy::default(),
        &cfg.copts,
        cfg.mapping_samples,
    )?;
    let head = header(cfg, "ses");
    write_mapping_csv(&run.mapping, cfg.out_dir.join("ses_mapping.csv"), &head)?;
    {
        // the device-frame element traces need the same physical sampler
        let path = build_path(
            &cfg.model,
            run.classical.geom,
            cfg.initial_channel,
            cfg.kind,
            run.classical.start_radius,
            &cfg.copts.radial,
        )?;
        let sampler = ccscatter::scattering::CollisionHamiltonian::new(
            &cfg.model,
            &path,
            cfg.initial_channel,
        );
        write_device_hamiltonian_csv(
            &run.mapping,
            &sampler,
            cfg.out_dir.join("ses_hamiltonian.csv"),
            &head,
        )?;
    }
    write_device_prob_csv(&run, cfg.out_dir.join("ses_probabilities.csv"), &head)?;
    write_comparison_csv(&run, cfg.out_dir.join("ses_comparison.csv"), &head)?;
    if dump {
        dump_trajectory(cfg, &cfg.model, &run.classical, cfg.out_dir.join("trajectory.csv"))?;
    }

    println!("classical vs SES-device probabilities (g_max = {} MHz):", cfg.g_max_mhz);
    println!("  transition   classical      device      rel_error");
    for c in &run.comparison {
        println!(
            "  P_{}{}      {:.6e}  {:.6e}  {:.3}%",
            run.classical.initial_channel + 1,
            c.channel + 1,
            c.p_classical,
            c.p_device,
            c.rel_error * 100.0
        );
    }
    println!(
        "  t_qc = {:.2} ns, t_qu = t_qc + t_meas = {:.2} ns",
        run.t_qc_ns, run.t_qu_ns
    );
    Ok(())
}

fn cmd_bench(cfg: &RunConfig) -> ccscatter::Result<()> {
    let configs = match cfg.bench.grid.as_str() {
        "standard" => standard_configs(),
        // a fast sanity grid for smoke tests
        "quick" => vec![
            PropagatorConfig::fixed(Method::CrankNicolson, 0.01),
            PropagatorConfig::fixed(Method::Diagonalization, 0.2),
            PropagatorConfig::adaptive(Method::FehlbergRk, 1e-4, 0.01).with_precondition(true),
        ],
        other => {
            return Err(ccscatter::Error::model(format!(
                "unknown bench grid `{other}` (want standard|quick)"
            )))
        }
    };
    let case = BenchCase {
        model: &cfg.model,
        geom: geometry(cfg, cfg.v0_list[0])?,
        initial_channel: cfg.initial_channel,
        kind: cfg.kind,
        configs,
        reference: PropagatorConfig::fixed(Method::CrankNicolson, cfg.bench.reference_dt),
        repetitions: cfg.bench.repetitions,
        opts: cfg.copts.clone(),
    };
    let report = run_bench(&case)?;
    write_bench_csv(&report, cfg.out_dir.join("bench.csv"), &header(cfg, "bench"))?;
    println!(
        "reference {} finished in {:.3} s; machine: {}",
        report.reference_label, report.reference_wall_s, report.machine
    );
    println!("  {:<52} {:>12} {:>12} {:>8}", "configuration", "median_s", "max_rel_err", "pass");
    for row in &report.rows {
        match &row.failure {
            Some(msg) => println!("  {:<52} {:>12} {:>12} {:>8}  [{msg}]", row.label, "-", "-", "fail"),
            None => println!(
                "  {:<52} {:>12.6} {:>12.3e} {:>8}",
                row.label,
                row.wall_median_s,
                row.max_rel_error,
                if row.passed { "yes" } else { "NO" }
            ),
        }
    }
    if let Some(best) = report.fastest_passing() {
        println!("fastest passing configuration: {}", best.label);
    }
    Ok(())
}
