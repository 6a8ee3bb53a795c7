//! Subcommands of the `clqr` binary.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure or
//! non-convergence, 3 rank condition violated without `--force-minnorm`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use clqr_core::analysis::{cost_report, optimal_gain};
use clqr_core::benchmarks::{
    assemble_report, evaluate_row, gen_consensus, prepare_experiment, validate_n_hat_list,
    Benchmark, ExperimentRow, SweepContext,
};
use clqr_core::lti_sim::{
    exploration_noise, impulse_responses, simulate, LtiSystem, SnapshotRecord, TimeGrid,
};
use clqr_core::policy::{run_off_policy, run_preconditioned, PolicySettings, ResidualCheck};
use clqr_core::precondition::{
    build_data_matrices, deflate_from_snapshots, empirical_gramian, fit_projection_from_snapshots,
    ProjectionMatrix,
};
use clqr_core::{DMatrix, DVector};

use crate::clock::InstantClock;
use crate::config::RunConfig;
use crate::formats::{
    read_json, read_matrix_csv, write_json, write_matrix_csv, write_report_csv, write_timings_csv,
    write_trajectory_csv, CostReportFile, ExperimentReportFile, GramianFile, PolicyReport,
    ProjectionFile, SystemFile,
};
use crate::manifest::{OutputDir, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Rank(String),
}

impl Failure {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Usage(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Rank(_) => 3,
        }
    }
}

impl From<clqr_core::Error> for Failure {
    fn from(e: clqr_core::Error) -> Self {
        use clqr_core::Error as E;
        match e {
            E::Dimension(_) | E::InvalidArgument(_) => Failure::Usage(e.to_string()),
            E::RankDeficient { .. } => Failure::Rank(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    /// Results were written but the run did not converge or stabilize.
    Unconverged,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Unconverged => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "clqr",
    version,
    about = "Data-driven LQR with snapshot compression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one exploratory run and export the trajectory, the plant and
    /// its empirical gramian.
    Simulate(Common),
    /// Learn a gain for one compression order.
    Learn(LearnArgs),
    /// Learn and evaluate gains over a list of compression orders.
    Sweep(SweepArgs),
    /// Evaluate a gain against the plant model.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for the graph, weights, initial state and noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (must not exist or be empty).
    #[arg(long)]
    pub out: PathBuf,
    /// Semi-stable eigenvector: `ones` or a JSON array file.
    #[arg(long, value_name = "PATH|ones")]
    pub semistable_vec: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct Tuning {
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Continue with minimum-norm solutions when the rank condition fails.
    #[arg(long)]
    pub force_minnorm: bool,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub tuning: Tuning,
    #[arg(long)]
    pub n_hat: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub tuning: Tuning,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_hat_list: Vec<usize>,
    /// Evaluate rows on several threads (timings then include contention).
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Gain CSV: `m x n`, or `m x n̂` together with `--projection`.
    #[arg(long)]
    pub gain: PathBuf,
    #[arg(long)]
    pub projection: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<ExitStatus, Failure> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Learn(args) => cmd_learn(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Analyze(args) => cmd_analyze(&args),
    }
}

struct Setup {
    cfg: RunConfig,
    bench: Benchmark,
    hash: String,
}

fn setup(common: &Common, tuning: Option<&Tuning>) -> Result<Setup, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.experiment = cfg.experiment.with_seed(seed);
    }
    if let Some(t) = tuning {
        if let Some(k) = t.kappa {
            cfg.experiment.kappa = k;
        }
        if let Some(k) = t.max_iter {
            cfg.experiment.max_iter = k;
        }
        cfg.experiment.force_minnorm |= t.force_minnorm;
    }
    let mut bench = match &cfg.model {
        Some(path) => {
            let file: SystemFile = read_json(path)?;
            Benchmark {
                sys: file.system()?,
                weights: file.weights()?,
                x0: file.x0()?,
            }
        }
        None => gen_consensus(&cfg.experiment.consensus)?,
    };
    if let Some(spec) = &common.semistable_vec {
        let n = bench.sys.n();
        let v = if spec == "ones" {
            DVector::from_element(n, 1.0)
        } else {
            DVector::from_vec(read_json::<Vec<f64>>(Path::new(spec))?)
        };
        bench.sys = LtiSystem::new(bench.sys.a().clone(), bench.sys.b().clone(), Some(v))?;
    }
    let hash = cfg.hash();
    Ok(Setup { cfg, bench, hash })
}

fn manifest(command: &str, common: &Common, s: &Setup) -> RunManifest {
    RunManifest::new(
        command,
        common.config.as_deref(),
        &common.out,
        common.seed,
        s.hash.clone(),
    )
}

fn collect(s: &Setup) -> Result<SnapshotRecord, Failure> {
    let e = &s.cfg.experiment;
    let noise = exploration_noise(&e.noise, s.bench.sys.m())?;
    let grid = TimeGrid::uniform(e.sampling.dt, e.sampling.intervals, e.sampling.substeps)?;
    Ok(simulate(&s.bench.sys, &noise, &s.bench.x0, &grid)?)
}

fn settings(s: &Setup) -> PolicySettings {
    let e = &s.cfg.experiment;
    PolicySettings {
        kappa: e.kappa,
        max_iter: e.max_iter,
        force_minnorm: e.force_minnorm,
        lstsq_rtol: e.lstsq_rtol,
        ..PolicySettings::default()
    }
}

fn cmd_simulate(args: &Common) -> Result<ExitStatus, Failure> {
    let s = setup(args, None)?;
    let record = collect(&s)?;
    let sampling = s.cfg.experiment.sampling;
    let directions: Vec<DVector<f64>> = s
        .bench
        .sys
        .b()
        .column_iter()
        .map(|c| c.into_owned())
        .collect();
    let responses = impulse_responses(
        &s.bench.sys,
        &directions,
        sampling.dt * sampling.intervals as f64,
        sampling.dt / sampling.substeps as f64,
    )?;
    let gramian = empirical_gramian(&responses.iter().collect::<Vec<_>>())?;

    let out = OutputDir::create(
        &args.out,
        manifest("simulate", args, &s),
        &["system.json", "trajectory.csv", "gramian.json"],
    )?;
    write_json(
        &out.path("system.json"),
        &SystemFile::from_system(&s.bench.sys).with_cost(&s.bench.weights, &s.bench.x0),
    )?;
    write_trajectory_csv(&out.path("trajectory.csv"), &record)?;
    write_json(
        &out.path("gramian.json"),
        &GramianFile::from_gramian(&gramian),
    )?;
    out.commit()?;
    Ok(ExitStatus::Success)
}

fn cmd_learn(args: &LearnArgs) -> Result<ExitStatus, Failure> {
    let s = setup(&args.common, Some(&args.tuning))?;
    let sys = &s.bench.sys;
    let n = sys.n();
    let v = sys.semistable_eigvec();
    let limit = if v.is_some() { n - 1 } else { n };
    if args.n_hat == 0 || args.n_hat > limit {
        return Err(Failure::Usage(format!("--n-hat must be in 1..={limit}")));
    }
    let record = collect(&s)?;
    let snapshots = record.coarse_states();
    let clock = InstantClock::new();
    let mut settings = settings(&s);

    let (p, result) = match v {
        None if args.n_hat == n => {
            let data = build_data_matrices(&record, None)?;
            if settings.force_minnorm {
                settings.residual_check = ResidualCheck::Off;
            }
            (
                ProjectionMatrix::identity(n),
                run_off_policy(&data, &s.bench.weights, &settings, &clock)?,
            )
        }
        _ => {
            let t0 = std::time::Instant::now();
            let p = match v {
                Some(v) => deflate_from_snapshots(&snapshots, v, args.n_hat)?,
                None => fit_projection_from_snapshots(&snapshots, args.n_hat)?,
            };
            let fit_ms = t0.elapsed().as_secs_f64() * 1e3;
            let mut r = run_preconditioned(&record, &p, &s.bench.weights, &settings, &clock)?;
            r.preconditioning_ms += fit_ms;
            (p, r)
        }
    };

    let out = OutputDir::create(
        &args.common.out,
        manifest("learn", &args.common, &s),
        &[
            "gain.csv",
            "reduced_gain.csv",
            "projection.json",
            "policy.json",
        ],
    )?;
    write_matrix_csv(&out.path("gain.csv"), &result.lifted_gain)?;
    write_matrix_csv(&out.path("reduced_gain.csv"), result.final_gain())?;
    write_json(
        &out.path("projection.json"),
        &ProjectionFile::from_projection(&p),
    )?;
    write_json(
        &out.path("policy.json"),
        &PolicyReport::from_result(&result),
    )?;
    out.commit()?;
    if !result.converged {
        log::warn!(
            "policy iteration stopped after {} iterations without converging",
            result.iter_count
        );
        return Ok(ExitStatus::Unconverged);
    }
    Ok(ExitStatus::Success)
}

fn evaluate_rows(
    ctx: &SweepContext,
    list: &[usize],
    parallel: bool,
) -> Result<Vec<ExperimentRow>, Failure> {
    let results: Vec<clqr_core::Result<ExperimentRow>> = if parallel {
        let workers = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(list.len())
            .max(1);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        let clock = InstantClock::new();
                        list.iter()
                            .skip(w)
                            .step_by(workers)
                            .map(|&k| evaluate_row(ctx, k, &clock))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    } else {
        let clock = InstantClock::new();
        list.iter().map(|&k| evaluate_row(ctx, k, &clock)).collect()
    };
    results
        .into_iter()
        .map(|r| r.map_err(Failure::from))
        .collect()
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitStatus, Failure> {
    let s = setup(&args.common, Some(&args.tuning))?;
    let mut experiment = s.cfg.experiment.clone();
    experiment.lstsq_rtol = settings(&s).lstsq_rtol;
    let ctx = prepare_experiment(s.bench.clone(), &experiment)?;
    let list = validate_n_hat_list(&ctx, &args.n_hat_list)?;
    let rows = evaluate_rows(&ctx, &list, args.parallel)?;
    let report = assemble_report(&ctx, rows)?;

    let out = OutputDir::create(
        &args.common.out,
        manifest("sweep", &args.common, &s),
        &["report.json", "report.csv", "timings.csv"],
    )?;
    write_json(
        &out.path("report.json"),
        &ExperimentReportFile::from_report(&report, &s.hash),
    )?;
    write_report_csv(&out.path("report.csv"), &report)?;
    write_timings_csv(&out.path("timings.csv"), &report)?;
    out.commit()?;
    if report.rows.iter().any(|r| r.converged && r.j.is_finite()) {
        Ok(ExitStatus::Success)
    } else {
        Ok(ExitStatus::Unconverged)
    }
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<ExitStatus, Failure> {
    let s = setup(&args.common, None)?;
    let sys = &s.bench.sys;
    let (n, m) = (sys.n(), sys.m());
    let gain = read_matrix_csv(&args.gain)?;
    let record = collect(&s)?;
    let snapshots = record.coarse_states();

    let (p, f_hat) = match &args.projection {
        Some(path) => {
            let p = read_json::<ProjectionFile>(path)?.projection()?;
            if p.n() != n || gain.shape() != (m, p.n_hat()) {
                return Err(Failure::Usage(format!(
                    "gain is {}x{} but the projection expects {m}x{} on n = {n}",
                    gain.nrows(),
                    gain.ncols(),
                    p.n_hat()
                )));
            }
            (p, gain)
        }
        None => {
            if gain.shape() != (m, n) {
                return Err(Failure::Usage(format!(
                    "gain is {}x{}, expected {m}x{n}",
                    gain.nrows(),
                    gain.ncols()
                )));
            }
            match sys.semistable_eigvec() {
                Some(v) => {
                    let p = deflate_from_snapshots(&snapshots, v, n - 1)?;
                    let f_hat: DMatrix<f64> = &gain * p.matrix().transpose();
                    if (&f_hat * p.matrix() - &gain).norm() > 1e-8 * gain.norm().max(1.0) {
                        return Err(Failure::Usage(
                            "gain does not annihilate the semi-stable vector".into(),
                        ));
                    }
                    (p, f_hat)
                }
                None => (ProjectionMatrix::identity(n), gain),
            }
        }
    };

    let optimal = optimal_gain(sys, &s.bench.weights)?;
    let report = cost_report(
        sys,
        &s.bench.weights,
        &p,
        &f_hat,
        &s.bench.x0,
        &optimal,
        Some(&snapshots),
    )?;

    let out = OutputDir::create(
        &args.common.out,
        manifest("analyze", &args.common, &s),
        &["cost_report.json"],
    )?;
    write_json(
        &out.path("cost_report.json"),
        &CostReportFile::from_report(&report),
    )?;
    out.commit()?;
    if report.j.is_finite() {
        Ok(ExitStatus::Success)
    } else {
        Ok(ExitStatus::Unconverged)
    }
}
