//! Benchmark plants and the end-to-end compression sweep.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analysis::{self, RiccatiSolution};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lti_sim::{
    exploration_noise, simulate, LtiSystem, NoiseConfig, SnapshotRecord, TimeGrid,
};
use crate::policy::{run_preconditioned, LqrWeights, PolicySettings, ResidualCheck};
use crate::precondition::{
    deflate_from_snapshots, epsilon_hat_from_snapshots, fit_projection_from_snapshots,
    ProjectionMatrix,
};
use crate::Clock;

const STREAM_GRAPH: u64 = 1;
const STREAM_WEIGHTS: u64 = 2;
const STREAM_X0: u64 = 3;
const STREAM_NOISE: u64 = 4;

fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// Seed for the exploration noise derived from a master seed.
pub fn noise_seed(seed: u64) -> u64 {
    stream(seed, STREAM_NOISE).random()
}

/// Two-area (or multi-area) weighted consensus network.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ConsensusConfig {
    pub area_sizes: Vec<usize>,
    pub inter_area_links: usize,
    /// Intra-area weights are drawn from `(lo, hi]`; equal bounds give a
    /// constant weight.
    pub intra_weight_range: [f64; 2],
    pub inter_weight: f64,
    /// Explicit inter-area node pairs; seeded random pairs when absent.
    pub inter_area_pairs: Option<Vec<(usize, usize)>>,
    /// Edges added per new node in preferential attachment.
    pub attachment: usize,
    pub actuated_nodes: Vec<usize>,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            area_sizes: alloc::vec![30, 120],
            inter_area_links: 4,
            intra_weight_range: [0.0, 0.5],
            inter_weight: 0.1,
            inter_area_pairs: None,
            attachment: 2,
            actuated_nodes: alloc::vec![0, 1],
            alpha: 50.0,
            seed: 1,
        }
    }
}

/// A generated plant with its cost weights and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub sys: LtiSystem,
    pub weights: LqrWeights,
    pub x0: DVector<f64>,
}

/// Preferential-attachment edges on `k` nodes: a complete seed graph on
/// `attachment + 1` nodes, then each new node links to `attachment` distinct
/// existing nodes chosen with probability proportional to degree.
fn barabasi_albert(k: usize, attachment: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let core = (attachment + 1).min(k);
    let mut edges = Vec::new();
    let mut ends = Vec::new();
    for i in 0..core {
        for j in i + 1..core {
            edges.push((i, j));
            ends.extend([i, j]);
        }
    }
    for new in core..k {
        let mut targets: Vec<usize> = Vec::with_capacity(attachment);
        while targets.len() < attachment.min(new) {
            let t = if ends.is_empty() {
                rng.random_range(0..new)
            } else {
                ends[rng.random_range(0..ends.len())]
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            edges.push((t, new));
            ends.extend([t, new]);
        }
    }
    edges
}

fn draw_weight(range: [f64; 2], rng: &mut ChaCha8Rng) -> f64 {
    let [lo, hi] = range;
    if lo == hi {
        lo
    } else {
        // uniform on (lo, hi]
        hi - (hi - lo) * rng.random::<f64>()
    }
}

/// Weights are snapped to a 2⁻⁴⁰ grid so that row sums cancel exactly.
fn laplacian(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    const GRID: f64 = (1u64 << 40) as f64;
    let mut l = DMatrix::zeros(n, n);
    for &(i, j, w) in edges {
        let w = libm::round(w * GRID) / GRID;
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    l
}

fn check_connected(l: &DMatrix<f64>) -> Result<()> {
    let ev = l.clone().symmetric_eigenvalues();
    let scale = ev.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    let zeros = ev.iter().filter(|&&x| x.abs() <= 1e-9 * scale).count();
    if zeros != 1 {
        return Err(Error::InvalidArgument(format!(
            "graph has {zeros} connected components"
        )));
    }
    Ok(())
}

type Edge = (usize, usize, f64);

fn weighted_graph(
    sizes: &[usize],
    attachment: usize,
    range: [f64; 2],
    links: usize,
    pairs: Option<&[(usize, usize)]>,
    inter_weight: f64,
    seed: u64,
) -> Result<(usize, Vec<Edge>)> {
    let mut graph_rng = stream(seed, STREAM_GRAPH);
    let mut weight_rng = stream(seed, STREAM_WEIGHTS);
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut n = 0;
    for &s in sizes {
        offsets.push(n);
        n += s;
    }
    let mut edges = Vec::new();
    for (area, &size) in sizes.iter().enumerate() {
        for (i, j) in barabasi_albert(size, attachment, &mut graph_rng) {
            let w = draw_weight(range, &mut weight_rng);
            edges.push((offsets[area] + i, offsets[area] + j, w));
        }
    }
    match pairs {
        Some(pairs) => {
            for &(i, j) in pairs {
                if i >= n || j >= n || i == j {
                    return Err(Error::InvalidArgument(format!(
                        "bad inter-area pair ({i}, {j})"
                    )));
                }
                edges.push((i, j, inter_weight));
            }
        }
        None if sizes.len() > 1 => {
            let mut used: Vec<(usize, usize)> = Vec::new();
            let mut l = 0;
            let mut attempts = 0;
            while l < links {
                let a = l % (sizes.len() - 1);
                let i = offsets[a] + graph_rng.random_range(0..sizes[a]);
                let j = offsets[a + 1] + graph_rng.random_range(0..sizes[a + 1]);
                attempts += 1;
                if used.contains(&(i, j)) && attempts < 100 * links {
                    continue;
                }
                used.push((i, j));
                edges.push((i, j, inter_weight));
                l += 1;
            }
        }
        None => {}
    }
    Ok((n, edges))
}

fn unit_x0(n: usize, v: &DVector<f64>, seed: u64) -> DVector<f64> {
    let mut rng = stream(seed, STREAM_X0);
    let mut x: DVector<f64> = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let vn = v / v.norm();
    x -= &vn * vn.dot(&x);
    let norm = x.norm();
    x / norm
}

/// Consensus dynamics `ẋ = −Lx + Bu` on a weighted multi-area graph, with
/// `xᵀQx = α Σ_i (x_1 − x_i)²`, `R = I`, and a unit initial state orthogonal
/// to the consensus direction.
pub fn gen_consensus(cfg: &ConsensusConfig) -> Result<Benchmark> {
    if cfg.area_sizes.is_empty() || cfg.area_sizes.contains(&0) {
        return Err(Error::InvalidArgument(
            "every area needs at least one node".into(),
        ));
    }
    let [lo, hi] = cfg.intra_weight_range;
    if !(lo >= 0.0 && hi > 0.0 && lo <= hi) || !(cfg.inter_weight > 0.0) || !(cfg.alpha > 0.0) {
        return Err(Error::InvalidArgument(
            "weights and alpha must be positive".into(),
        ));
    }
    let (n, edges) = weighted_graph(
        &cfg.area_sizes,
        cfg.attachment,
        cfg.intra_weight_range,
        cfg.inter_area_links,
        cfg.inter_area_pairs.as_deref(),
        cfg.inter_weight,
        cfg.seed,
    )?;
    if cfg.actuated_nodes.is_empty() || cfg.actuated_nodes.iter().any(|&i| i >= n) {
        return Err(Error::InvalidArgument("actuated nodes out of range".into()));
    }
    let l = laplacian(n, &edges);
    check_connected(&l)?;
    let m = cfg.actuated_nodes.len();
    let b = DMatrix::from_fn(
        n,
        m,
        |i, c| if cfg.actuated_nodes[c] == i { 1.0 } else { 0.0 },
    );
    let mut q = DMatrix::zeros(n, n);
    q[(0, 0)] = cfg.alpha * (n - 1) as f64;
    for i in 1..n {
        q[(0, i)] = -cfg.alpha;
        q[(i, 0)] = -cfg.alpha;
        q[(i, i)] = cfg.alpha;
    }
    let ones = DVector::from_element(n, 1.0);
    let sys = LtiSystem::new(-l, b, Some(ones.clone()))?;
    let weights = LqrWeights::new(q, DMatrix::identity(m, m))?;
    Ok(Benchmark {
        x0: unit_x0(n, &ones, cfg.seed),
        sys,
        weights,
    })
}

/// Damped second-order network `θ̈ = −Lθ − Dθ̇ + Bu` with state `[θ; θ̇]`.
///
/// The zero mode is `v = [1; 0]`; `Q = diag(0, I)` penalizes only the
/// frequency deviations. Inputs act on the listed nodes' accelerations.
pub fn gen_oscillator_semistable(
    k_nodes: usize,
    coupling_range: [f64; 2],
    damping_range: [f64; 2],
    actuated: &[usize],
    seed: u64,
) -> Result<Benchmark> {
    if k_nodes < 2 {
        return Err(Error::InvalidArgument(
            "need at least two oscillators".into(),
        ));
    }
    if actuated.is_empty() || actuated.iter().any(|&i| i >= k_nodes) {
        return Err(Error::InvalidArgument("actuated nodes out of range".into()));
    }
    if !(coupling_range[0] >= 0.0 && coupling_range[1] > 0.0 && damping_range[0] > 0.0) {
        return Err(Error::InvalidArgument(
            "coupling and damping must be positive".into(),
        ));
    }
    let (_, edges) = weighted_graph(&[k_nodes], 2, coupling_range, 0, None, 1.0, seed)?;
    let l = laplacian(k_nodes, &edges);
    let mut rng = stream(seed, STREAM_WEIGHTS + 16);
    let n = 2 * k_nodes;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..k_nodes {
        a[(i, k_nodes + i)] = 1.0;
        a[(k_nodes + i, k_nodes + i)] = -draw_weight(damping_range, &mut rng);
        for j in 0..k_nodes {
            a[(k_nodes + i, j)] = -l[(i, j)];
        }
    }
    let m = actuated.len();
    let b = DMatrix::from_fn(
        n,
        m,
        |i, c| if i == k_nodes + actuated[c] { 1.0 } else { 0.0 },
    );
    let v = DVector::from_fn(n, |i, _| if i < k_nodes { 1.0 } else { 0.0 });
    let sys = LtiSystem::new(a, b, Some(v.clone()))?;
    let q = DMatrix::from_fn(n, n, |i, j| if i == j && i >= k_nodes { 1.0 } else { 0.0 });
    let weights = LqrWeights::new(q, DMatrix::identity(m, m))?;
    Ok(Benchmark {
        x0: unit_x0(n, &v, seed),
        sys,
        weights,
    })
}

/// Coarse sampling `t_j = dt·j`, `j = 0..=intervals`, each refined into
/// `substeps` integration steps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SamplingConfig {
    pub dt: f64,
    pub intervals: usize,
    pub substeps: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            intervals: 2000,
            substeps: 10,
        }
    }
}

/// Full description of a compression sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ExperimentConfig {
    pub consensus: ConsensusConfig,
    pub noise: NoiseConfig,
    pub sampling: SamplingConfig,
    pub kappa: f64,
    pub max_iter: usize,
    /// Continue with minimum-norm solutions when the rank condition fails.
    pub force_minnorm: bool,
    /// Evaluate the model-based `ε` and the small-gain test per row.
    pub model_epsilon: bool,
    /// Relative pivot cutoff of the minimum-norm least-squares solve.
    pub lstsq_rtol: f64,
}

impl ExperimentConfig {
    /// Default settings with every random stream derived from `seed`.
    pub fn seeded(seed: u64) -> Self {
        Self::default().with_seed(seed)
    }

    /// Sets the graph seed and derives the noise seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.consensus.seed = seed;
        self.noise.seed = noise_seed(seed);
        self
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let cfg = Self {
            consensus: ConsensusConfig::default(),
            noise: NoiseConfig::default(),
            sampling: SamplingConfig::default(),
            kappa: 0.01,
            max_iter: 50,
            force_minnorm: true,
            model_epsilon: true,
            lstsq_rtol: 1e-10,
        };
        let seed = cfg.consensus.seed;
        cfg.with_seed(seed)
    }
}

/// One learned controller in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub n_hat: usize,
    pub iterations: usize,
    pub converged: bool,
    pub learn_time_ms: f64,
    pub preconditioning_ms: f64,
    pub timings_ms: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Achieved cost; `+∞` for an unstable closed loop or a failed run.
    pub j: f64,
    pub eps_hat: f64,
    pub eps: Option<f64>,
    pub certified: Option<bool>,
    /// `‖(A − BF)v‖` for the lifted gain.
    pub kernel_residual: f64,
    pub closed_loop_dominant: Vec<Complex64>,
    pub rank: usize,
    pub rank_required: usize,
    pub lifted_gain: Option<DMatrix<f64>>,
    pub error: Option<String>,
}

/// Sweep results over `n̂`, with the optimal reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Sorted by `n_hat`.
    pub rows: Vec<ExperimentRow>,
    pub j_opt: f64,
    pub open_loop_dominant: Vec<Complex64>,
    pub optimal_closed_loop_dominant: Vec<Complex64>,
    /// Singular values of the deflated snapshot matrix.
    pub singular_values: Vec<f64>,
    /// `‖X‖_F` of the (deflated) snapshot matrix.
    pub snapshot_norm: f64,
    pub seed: u64,
    pub noise_seed: u64,
}

impl ExperimentReport {
    /// Smallest `n̂` whose `ε̂` is below `1e-2·‖X‖_F`.
    pub fn knee(&self) -> Option<&ExperimentRow> {
        self.rows
            .iter()
            .find(|r| r.eps_hat < 1e-2 * self.snapshot_norm)
    }

    pub fn row(&self, n_hat: usize) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.n_hat == n_hat)
    }
}

/// Everything shared by the rows of a sweep: the plant, one data record and
/// the optimal reference.
#[derive(Debug, Clone)]
pub struct SweepContext {
    pub bench: Benchmark,
    pub record: SnapshotRecord,
    pub snapshots: DMatrix<f64>,
    pub optimal: RiccatiSolution,
    pub config: ExperimentConfig,
}

fn dominant(ev: Vec<Complex64>) -> Vec<Complex64> {
    ev.into_iter().take(5).collect()
}

/// Collects one exploratory run of `bench` and the model-based reference.
pub fn prepare_experiment(bench: Benchmark, cfg: &ExperimentConfig) -> Result<SweepContext> {
    let noise = exploration_noise(&cfg.noise, bench.sys.m())?;
    let s = cfg.sampling;
    let grid = TimeGrid::uniform(s.dt, s.intervals, s.substeps)?;
    let record = simulate(&bench.sys, &noise, &bench.x0, &grid)?;
    let snapshots = record.coarse_states();
    let optimal = analysis::optimal_gain(&bench.sys, &bench.weights)?;
    Ok(SweepContext {
        bench,
        record,
        snapshots,
        optimal,
        config: cfg.clone(),
    })
}

/// Generates the consensus plant and collects one exploratory run.
pub fn prepare_case1(cfg: &ExperimentConfig) -> Result<SweepContext> {
    prepare_experiment(gen_consensus(&cfg.consensus)?, cfg)
}

fn fit(ctx: &SweepContext, n_hat: usize) -> Result<ProjectionMatrix> {
    match ctx.bench.sys.semistable_eigvec() {
        Some(v) => deflate_from_snapshots(&ctx.snapshots, v, n_hat),
        None => fit_projection_from_snapshots(&ctx.snapshots, n_hat),
    }
}

fn failed_row(n_hat: usize, eps_hat: f64, err: &Error) -> ExperimentRow {
    ExperimentRow {
        n_hat,
        iterations: 0,
        converged: false,
        learn_time_ms: 0.0,
        preconditioning_ms: 0.0,
        timings_ms: Vec::new(),
        residuals: Vec::new(),
        j: f64::INFINITY,
        eps_hat,
        eps: None,
        certified: None,
        kernel_residual: f64::NAN,
        closed_loop_dominant: Vec::new(),
        rank: 0,
        rank_required: 0,
        lifted_gain: None,
        error: Some(err.to_string()),
    }
}

/// Learns and evaluates the controller for one `n̂`. Learning failures are
/// recorded in the row rather than returned.
pub fn evaluate_row(ctx: &SweepContext, n_hat: usize, clock: &dyn Clock) -> Result<ExperimentRow> {
    let sys = &ctx.bench.sys;
    let t0 = clock.now_ms();
    let p = fit(ctx, n_hat)?;
    let fit_ms = clock.now_ms() - t0;
    let eps_hat = epsilon_hat_from_snapshots(&ctx.snapshots, &p)?;
    let settings = PolicySettings {
        kappa: ctx.config.kappa,
        max_iter: ctx.config.max_iter,
        force_minnorm: ctx.config.force_minnorm,
        residual_check: ResidualCheck::Off,
        lstsq_rtol: ctx.config.lstsq_rtol,
        ..PolicySettings::default()
    };
    let res = match run_preconditioned(&ctx.record, &p, &ctx.bench.weights, &settings, clock) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("n_hat = {n_hat}: {e}");
            return Ok(failed_row(n_hat, eps_hat, &e));
        }
    };
    let lifted = &res.lifted_gain;
    let j = analysis::lqr_cost(sys, lifted, &ctx.bench.weights, &ctx.bench.x0)?;
    let acl = sys.a() - sys.b() * lifted;
    let kernel_residual = sys.semistable_eigvec().map_or(0.0, |v| (&acl * v).norm());
    let (eps, certified) = if ctx.config.model_epsilon {
        match analysis::small_gain_certificate(sys, &p, res.final_gain(), &ctx.bench.x0) {
            Ok(c) => (Some(c.lhs), Some(c.certified)),
            Err(Error::NotHurwitz { .. }) => (
                analysis::epsilon_bound(sys, &ctx.bench.x0, &p).ok(),
                Some(false),
            ),
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };
    Ok(ExperimentRow {
        n_hat,
        iterations: res.iter_count,
        converged: res.converged,
        learn_time_ms: res.learn_time_ms() + fit_ms,
        preconditioning_ms: res.preconditioning_ms + fit_ms,
        timings_ms: res.timings_ms.clone(),
        residuals: res.residuals.clone(),
        j,
        eps_hat,
        eps,
        certified,
        kernel_residual,
        closed_loop_dominant: dominant(analysis::spectrum(&acl)?),
        rank: res.rank.rank,
        rank_required: res.rank.required,
        lifted_gain: Some(res.lifted_gain.clone()),
        error: None,
    })
}

/// Assembles a report from evaluated rows.
pub fn assemble_report(
    ctx: &SweepContext,
    mut rows: Vec<ExperimentRow>,
) -> Result<ExperimentReport> {
    rows.sort_by_key(|r| r.n_hat);
    let sys = &ctx.bench.sys;
    let x0 = &ctx.bench.x0;
    let xs = match sys.semistable_eigvec() {
        Some(v) => linalg::orthonormal_complement(v)? * &ctx.snapshots,
        None => ctx.snapshots.clone(),
    };
    let optimal_cl = sys.a() - sys.b() * &ctx.optimal.f;
    Ok(ExperimentReport {
        rows,
        j_opt: x0.dot(&(&ctx.optimal.w * x0)),
        open_loop_dominant: dominant(analysis::spectrum(sys.a())?),
        optimal_closed_loop_dominant: dominant(analysis::spectrum(&optimal_cl)?),
        singular_values: linalg::singular_values(&xs)?,
        snapshot_norm: xs.norm(),
        seed: ctx.config.consensus.seed,
        noise_seed: ctx.config.noise.seed,
    })
}

/// Sorted, deduplicated `n̂` values, each in `1..=n` (`1..=n−1` when the
/// plant is semi-stable).
pub fn validate_n_hat_list(ctx: &SweepContext, n_hat_list: &[usize]) -> Result<Vec<usize>> {
    if n_hat_list.is_empty() {
        return Err(Error::InvalidArgument("empty n_hat list".into()));
    }
    let n = ctx.bench.sys.n();
    let limit = if ctx.bench.sys.semistable_eigvec().is_some() {
        n - 1
    } else {
        n
    };
    let mut list = n_hat_list.to_vec();
    list.sort_unstable();
    list.dedup();
    if let Some(&bad) = list.iter().find(|&&k| k == 0 || k > limit) {
        return Err(Error::InvalidArgument(format!(
            "n_hat = {bad} outside 1..={limit}"
        )));
    }
    Ok(list)
}

/// Evaluates every `n̂` serially on the shared data.
pub fn run_sweep(
    ctx: &SweepContext,
    n_hat_list: &[usize],
    clock: &dyn Clock,
) -> Result<ExperimentReport> {
    let rows = validate_n_hat_list(ctx, n_hat_list)?
        .into_iter()
        .map(|k| evaluate_row(ctx, k, clock))
        .collect::<Result<Vec<_>>>()?;
    assemble_report(ctx, rows)
}

/// Case 1 protocol: one noisy run of the consensus network, then for each
/// `n̂` a deflated projection, compressed policy iteration, and model-based
/// evaluation of the lifted gain.
pub fn run_case1(
    cfg: &ExperimentConfig,
    n_hat_list: &[usize],
    clock: &dyn Clock,
) -> Result<ExperimentReport> {
    run_sweep(&prepare_case1(cfg)?, n_hat_list, clock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn four_cycle_spectrum() {
        let cfg = ConsensusConfig {
            area_sizes: alloc::vec![2, 2],
            intra_weight_range: [1.0, 1.0],
            inter_weight: 1.0,
            inter_area_pairs: Some(alloc::vec![(0, 2), (1, 3)]),
            inter_area_links: 2,
            actuated_nodes: alloc::vec![0],
            ..ConsensusConfig::default()
        };
        let b = gen_consensus(&cfg).unwrap();
        let mut ev: Vec<f64> = b
            .sys
            .a()
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (got, want) in ev.iter().zip([0.0, -2.0, -2.0, -4.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn full_scale_consensus_invariants() {
        let b = gen_consensus(&ConsensusConfig::default()).unwrap();
        let n = b.sys.n();
        assert_eq!(n, 150);
        let ones = DVector::from_element(n, 1.0);
        assert_eq!((b.sys.a() * &ones).amax(), 0.0);
        assert_eq!((b.weights.q() * &ones).amax(), 0.0);
        assert!(b.x0.dot(&ones).abs() < 1e-12);
        assert_relative_eq!(b.x0.norm(), 1.0, epsilon = 1e-14);
        let ev = b.sys.a().clone().symmetric_eigenvalues();
        assert_eq!(ev.iter().filter(|&&x| x > -1e-10).count(), 1);
        // xᵀQx = α Σ (x_1 − x_i)²
        let x = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
        let direct: f64 = (1..n).map(|i| 50.0 * (x[0] - x[i]).powi(2)).sum();
        assert_relative_eq!(x.dot(&(b.weights.q() * &x)), direct, max_relative = 1e-12);
    }

    #[test]
    fn consensus_is_deterministic() {
        let a = gen_consensus(&ConsensusConfig::default()).unwrap();
        let b = gen_consensus(&ConsensusConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = gen_consensus(&ConsensusConfig {
            seed: 2,
            ..ConsensusConfig::default()
        })
        .unwrap();
        assert_ne!(a.sys, c.sys);
    }

    #[test]
    fn two_node_oscillator_modes() {
        let (k, d) = (1.5, 0.4);
        let b = gen_oscillator_semistable(2, [k, k], [d, d], &[0], 3).unwrap();
        let v = b.sys.semistable_eigvec().unwrap().clone();
        assert!((b.sys.a() * &v).norm() < 1e-12);
        assert!((b.weights.q() * &v).norm() < 1e-12);
        let ev = linalg::eigenvalues(b.sys.a()).unwrap();
        // s² + d s + 2k = 0
        let disc = num_complex::Complex64::new(d * d - 8.0 * k, 0.0).sqrt();
        for root in [(-d + disc) / 2.0, (-d - disc) / 2.0] {
            assert!(ev.iter().any(|z| (z - root).norm() < 1e-10));
        }
    }
}
