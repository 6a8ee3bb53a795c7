//! Ground-truth simulation of `ẋ = Ax + Bu` and exploration-signal design.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::linalg;

/// Continuous-time plant `ẋ = Ax + Bu`, optionally with one known
/// semi-stable direction `v` (`Av = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    semistable_eigvec: Option<DVector<f64>>,
}

impl LtiSystem {
    /// Validated constructor: checks shapes and the spectrum (Hurwitz, or
    /// a single simple zero eigenvalue along `v` with the rest stable).
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, v: Option<DVector<f64>>) -> Result<Self> {
        let sys = Self::new_unchecked(a, b, v)?;
        sys.check_spectrum()?;
        Ok(sys)
    }

    /// Shape checks only. Useful for deliberately unstable test plants.
    pub fn new_unchecked(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        v: Option<DVector<f64>>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return dim_err(format!("A is {}x{}, expected square", n, a.ncols()));
        }
        if b.nrows() != n {
            return dim_err(format!("B has {} rows, A has {}", b.nrows(), n));
        }
        if let Some(v) = &v {
            if v.len() != n {
                return dim_err(format!(
                    "semi-stable vector has length {}, expected {n}",
                    v.len()
                ));
            }
        }
        Ok(Self {
            a,
            b,
            semistable_eigvec: v,
        })
    }

    fn check_spectrum(&self) -> Result<()> {
        let eig = linalg::eigenvalues(&self.a)?;
        match &self.semistable_eigvec {
            None => {
                let max_real = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
                if max_real >= 0.0 {
                    return Err(Error::NotHurwitz { max_real });
                }
            }
            Some(v) => {
                let scale = self.a.norm() * v.norm();
                if (&self.a * v).norm() > 1e-10 * scale {
                    return Err(Error::InvalidArgument("A v is not zero".into()));
                }
                let zeros = eig.iter().filter(|z| z.norm() <= 1e-8).count();
                if zeros != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "expected one zero eigenvalue, found {zeros}"
                    )));
                }
                let max_real = eig
                    .iter()
                    .filter(|z| z.norm() > 1e-8)
                    .map(|z| z.re)
                    .fold(f64::NEG_INFINITY, f64::max);
                if max_real >= 0.0 {
                    return Err(Error::NotHurwitz { max_real });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn semistable_eigvec(&self) -> Option<&DVector<f64>> {
        self.semistable_eigvec.as_ref()
    }
}

/// One sinusoidal component `amplitude · sin(frequency · t + phase)` on an
/// input channel.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tone {
    pub channel: usize,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// Sum of tones gated by an activity window `[start, end]`.
///
/// Values are right-continuous at the window edges: the signal is on at
/// `start` and off at `end`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SignalGenerator {
    pub inputs: usize,
    pub tones: Vec<Tone>,
    pub window: [f64; 2],
    pub seed: Option<u64>,
}

fn edge_tol(t: f64) -> f64 {
    1e-12 * t.abs().max(1.0)
}

impl SignalGenerator {
    pub fn zero(inputs: usize) -> Self {
        Self {
            inputs,
            tones: Vec::new(),
            window: [0.0, 0.0],
            seed: None,
        }
    }

    /// Constant `value` on one channel during `window`.
    pub fn constant(inputs: usize, channel: usize, value: f64, window: [f64; 2]) -> Self {
        let tone = Tone {
            channel,
            amplitude: value,
            frequency: 0.0,
            phase: core::f64::consts::FRAC_PI_2,
        };
        Self {
            inputs,
            tones: alloc::vec![tone],
            window,
            seed: None,
        }
    }

    /// `beta · Σ_k sin(w_k t)` on every listed channel, with explicit
    /// frequencies.
    pub fn sines(
        inputs: usize,
        channels: &[usize],
        beta: f64,
        frequencies: &[f64],
        window: [f64; 2],
    ) -> Self {
        let tones = channels
            .iter()
            .flat_map(|&channel| {
                frequencies.iter().map(move |&frequency| Tone {
                    channel,
                    amplitude: beta,
                    frequency,
                    phase: 0.0,
                })
            })
            .collect();
        Self {
            inputs,
            tones,
            window,
            seed: None,
        }
    }

    /// Frequencies driving `channel`, in generation order.
    pub fn frequencies(&self, channel: usize) -> Vec<f64> {
        self.tones
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.frequency)
            .collect()
    }

    fn active_right(&self, t: f64) -> bool {
        let [s, e] = self.window;
        t >= s - edge_tol(s) && t < e - edge_tol(e)
    }

    fn active_left(&self, t: f64) -> bool {
        let [s, e] = self.window;
        t > s + edge_tol(s) && t <= e + edge_tol(e)
    }

    fn tones_into(&self, t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for tone in &self.tones {
            out[tone.channel] += tone.amplitude * libm::sin(tone.frequency * t + tone.phase);
        }
    }

    fn gated_into(&self, t: f64, active: bool, out: &mut [f64]) {
        if active {
            self.tones_into(t, out);
        } else {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
    }

    /// Signal value at `t` (right limit at the window edges).
    pub fn value(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.inputs);
        self.gated_into(t, self.active_right(t), out.as_mut_slice());
        out
    }

    /// Left limit of the signal at `t`.
    pub fn left_value(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.inputs);
        self.gated_into(t, self.active_left(t), out.as_mut_slice());
        out
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.inputs != m {
            return dim_err(format!(
                "signal has {} channels, system has {m} inputs",
                self.inputs
            ));
        }
        if let Some(t) = self.tones.iter().find(|t| t.channel >= m) {
            return dim_err(format!("tone on channel {} but only {m} inputs", t.channel));
        }
        Ok(())
    }
}

/// Sum-of-sines exploration signal settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct NoiseConfig {
    pub num_sines: usize,
    pub beta: f64,
    pub freq_range: [f64; 2],
    pub window: [f64; 2],
    pub seed: u64,
    /// Driven channels; all inputs when absent.
    #[cfg_attr(feature = "serde", serde(default))]
    pub channels: Option<Vec<usize>>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            num_sines: 400,
            beta: 0.05,
            freq_range: [-20.0, 20.0],
            window: [0.0, 1.0],
            seed: 0,
            channels: None,
        }
    }
}

/// Draws `num_sines` frequencies uniformly from `freq_range` for each driven
/// channel (independently per channel) and returns the gated sum of sines.
pub fn exploration_noise(cfg: &NoiseConfig, inputs: usize) -> Result<SignalGenerator> {
    let [lo, hi] = cfg.freq_range;
    let [start, end] = cfg.window;
    if cfg.num_sines == 0 {
        return Err(Error::InvalidArgument(
            "num_sines must be at least 1".into(),
        ));
    }
    if !(lo < hi) {
        return Err(Error::InvalidArgument("empty frequency range".into()));
    }
    if !(cfg.beta > 0.0) {
        return Err(Error::InvalidArgument(
            "noise amplitude must be positive".into(),
        ));
    }
    if !(start < end) {
        return Err(Error::InvalidArgument("empty noise window".into()));
    }
    let channels: Vec<usize> = match &cfg.channels {
        Some(c) => c.clone(),
        None => (0..inputs).collect(),
    };
    if let Some(&c) = channels.iter().find(|&&c| c >= inputs) {
        return dim_err(format!("noise channel {c} out of range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tones = Vec::with_capacity(channels.len() * cfg.num_sines);
    for &channel in &channels {
        for _ in 0..cfg.num_sines {
            tones.push(Tone {
                channel,
                amplitude: cfg.beta,
                frequency: rng.random_range(lo..hi),
                phase: 0.0,
            });
        }
    }
    Ok(SignalGenerator {
        inputs,
        tones,
        window: cfg.window,
        seed: Some(cfg.seed),
    })
}

/// Fine integration grid with a designated subset of coarse sample points.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    fine: Vec<f64>,
    coarse_index: Vec<usize>,
}

impl TimeGrid {
    /// `intervals` coarse steps of length `dt`, each split into `substeps`
    /// fine steps, starting at 0.
    pub fn uniform(dt: f64, intervals: usize, substeps: usize) -> Result<Self> {
        if !(dt > 0.0) || intervals == 0 || substeps == 0 {
            return Err(Error::InvalidArgument(
                "grid needs dt > 0, at least one interval and one substep".into(),
            ));
        }
        let h = dt / substeps as f64;
        let fine = (0..=intervals * substeps).map(|i| i as f64 * h).collect();
        let coarse_index = (0..=intervals).map(|j| j * substeps).collect();
        Ok(Self { fine, coarse_index })
    }

    /// Arbitrary grid. `coarse_index` must start at 0, end at the last fine
    /// point, and be strictly increasing.
    pub fn new(fine: Vec<f64>, coarse_index: Vec<usize>) -> Result<Self> {
        if fine.len() < 2 || fine[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "fine grid must start at 0 with 2+ points".into(),
            ));
        }
        if fine.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "fine grid not strictly increasing".into(),
            ));
        }
        if coarse_index.len() < 2
            || coarse_index[0] != 0
            || *coarse_index.last().unwrap() != fine.len() - 1
            || coarse_index.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidArgument(
                "invalid coarse sample indices".into(),
            ));
        }
        Ok(Self { fine, coarse_index })
    }

    pub fn fine_times(&self) -> &[f64] {
        &self.fine
    }

    /// Position of each coarse sample within the fine grid.
    pub fn coarse_indices(&self) -> &[usize] {
        &self.coarse_index
    }

    pub fn coarse_times(&self) -> Vec<f64> {
        self.coarse_index.iter().map(|&i| self.fine[i]).collect()
    }

    /// Number of coarse intervals `N`.
    pub fn intervals(&self) -> usize {
        self.coarse_index.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.fine.last().unwrap()
    }
}

/// States and inputs sampled on a [`TimeGrid`] during one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    grid: TimeGrid,
    states: DMatrix<f64>,
    inputs: DMatrix<f64>,
    x0: DVector<f64>,
    /// Left limits of the input at fine points where it jumps.
    input_jumps: Vec<(usize, DVector<f64>)>,
}

impl SnapshotRecord {
    pub fn from_parts(
        grid: TimeGrid,
        states: DMatrix<f64>,
        inputs: DMatrix<f64>,
        input_jumps: Vec<(usize, DVector<f64>)>,
    ) -> Result<Self> {
        let f = grid.fine.len();
        if states.ncols() != f || inputs.ncols() != f {
            return dim_err("state/input columns must match the fine grid");
        }
        if input_jumps
            .iter()
            .any(|(i, u)| *i >= f || u.len() != inputs.nrows())
        {
            return dim_err("input jump out of range");
        }
        let x0 = states.column(0).into_owned();
        Ok(Self {
            grid,
            states,
            inputs,
            x0,
            input_jumps,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `n x F` states on the fine grid.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    /// `m x F` inputs on the fine grid (right limits).
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    pub fn m(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn input_jumps(&self) -> &[(usize, DVector<f64>)] {
        &self.input_jumps
    }

    /// Input at fine index `i`, taking the left limit when `left` is set.
    pub fn input_at(&self, i: usize, left: bool) -> DVector<f64> {
        if left {
            if let Some((_, u)) = self.input_jumps.iter().find(|(k, _)| *k == i) {
                return u.clone();
            }
        }
        self.inputs.column(i).into_owned()
    }

    /// Snapshot matrix `X = [x(t_0), …, x(t_N)]` on the coarse samples.
    pub fn coarse_states(&self) -> DMatrix<f64> {
        let idx = self.grid.coarse_indices();
        DMatrix::from_fn(self.n(), idx.len(), |r, c| self.states[(r, idx[c])])
    }
}

#[allow(clippy::too_many_arguments)]
fn rk4_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    u: &SignalGenerator,
    active: bool,
    t: f64,
    h: f64,
    x: &DVector<f64>,
    ubuf: &mut DVector<f64>,
) -> DVector<f64> {
    let mut rhs = |t: f64, x: &DVector<f64>| {
        let mut dx = a * x;
        if active {
            u.tones_into(t, ubuf.as_mut_slice());
            dx.gemv(1.0, b, ubuf, 1.0);
        }
        dx
    };
    let k1 = rhs(t, x);
    let k2 = rhs(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Classical fixed-step RK4 on the fine grid.
///
/// Steps that straddle an edge of the input window are split there, so the
/// switching instants are resolved exactly.
pub fn simulate(
    sys: &LtiSystem,
    u: &SignalGenerator,
    x0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<SnapshotRecord> {
    let (n, m) = (sys.n(), sys.m());
    if x0.len() != n {
        return dim_err(format!("x0 has length {}, expected {n}", x0.len()));
    }
    u.validate(m)?;
    let times = grid.fine_times();
    let f = times.len();
    let mut states = DMatrix::zeros(n, f);
    let mut inputs = DMatrix::zeros(m, f);
    let mut jumps = Vec::new();
    let mut ubuf = DVector::zeros(m);
    let mut x = x0.clone();
    states.set_column(0, &x);
    let has_tones = !u.tones.is_empty();

    for i in 0..f {
        let t = times[i];
        inputs.set_column(i, &u.value(t));
        if has_tones {
            let left = u.left_value(t);
            if i > 0 && left != inputs.column(i) {
                jumps.push((i, left));
            }
        }
        if i + 1 == f {
            break;
        }
        let t1 = times[i + 1];
        let mut cuts = alloc::vec![t];
        if has_tones {
            for e in u.window {
                if e > t + edge_tol(e) && e < t1 - edge_tol(e) {
                    cuts.push(e);
                }
            }
            cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
        }
        cuts.push(t1);
        for w in cuts.windows(2) {
            let active = has_tones && u.active_right(0.5 * (w[0] + w[1]));
            x = rk4_step(
                sys.a(),
                sys.b(),
                u,
                active,
                w[0],
                w[1] - w[0],
                &x,
                &mut ubuf,
            );
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: t1 });
        }
        states.set_column(i + 1, &x);
    }
    Ok(SnapshotRecord {
        grid: grid.clone(),
        states,
        inputs,
        x0: x0.clone(),
        input_jumps: jumps,
    })
}

/// Zero-input responses from each initial direction, over `horizon` seconds.
///
/// An impulse through input column `B_i` is the same as starting from
/// `x0 + B_i`, so passing the columns of `B` gives the input-to-state
/// impulse responses. Coarse samples are spaced `10 · fine_step` apart.
pub fn impulse_responses(
    sys: &LtiSystem,
    directions: &[DVector<f64>],
    horizon: f64,
    fine_step: f64,
) -> Result<Vec<SnapshotRecord>> {
    if directions.is_empty() {
        return Err(Error::InvalidArgument("no impulse directions".into()));
    }
    if !(horizon > 0.0) || !(fine_step > 0.0) {
        return Err(Error::InvalidArgument(
            "horizon and step must be positive".into(),
        ));
    }
    let substeps = 10;
    let dt = fine_step * substeps as f64;
    let intervals = libm::ceil(horizon / dt - 1e-9).max(1.0) as usize;
    let grid = TimeGrid::uniform(dt, intervals, substeps)?;
    let zero = SignalGenerator::zero(sys.m());
    directions
        .iter()
        .map(|d| simulate(sys, &zero, d, &grid))
        .collect()
}
