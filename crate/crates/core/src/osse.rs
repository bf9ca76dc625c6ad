//! Identical-twin experiments: a truth run, noisy synthetic observations of
//! it, and a filter run started from a wrong initial guess with wrong
//! parameters.
//!
//! Truth and filter members are advanced leg by leg over the same output
//! grid with the same step size, so a filter run whose guess equals the truth
//! reproduces the truth bit for bit.

use nalgebra::{DMatrix, DVector};

use crate::enkf::{self, FilterConfig, ObservationSet, Propagator};
use crate::error::{Error, Result};
use crate::model::{self, GlacierState, ModelParams, TimePoint, H_DISPLAY_SCALE, L_DISPLAY_SCALE};
use crate::rng::{fill_standard_normal, substream, Purpose};

/// Closed interval of model years.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start - 1e-9 && t <= self.end + 1e-9
    }
}

/// `start, start + interval, ...` up to and including `end`; the last step is
/// shortened if `interval` does not divide the window.
pub fn output_grid(window: Window, interval: f64) -> Result<Vec<f64>> {
    if !(interval > 0.0) || !(window.end >= window.start) {
        return Err(Error::InvalidParameter("output grid needs interval > 0 and end >= start".into()));
    }
    let steps = (window.end - window.start) / interval;
    let full = if (steps - steps.round()).abs() < 1e-9 * steps.max(1.0) {
        steps.round() as usize
    } else {
        steps.floor() as usize
    };
    let mut grid: Vec<f64> = (0..=full).map(|k| window.start + k as f64 * interval).collect();
    let last = *grid.last().unwrap();
    if (window.end - last).abs() <= 1e-9 * window.end.abs().max(1.0) {
        *grid.last_mut().unwrap() = window.end;
    } else {
        grid.push(window.end);
    }
    Ok(grid)
}

fn grid_index(grid: &[f64], t: f64) -> Option<usize> {
    let tol = 1e-9 * t.abs().max(1.0);
    let i = grid.partition_point(|g| *g < t - tol);
    (i < grid.len() && (grid[i] - t).abs() <= tol).then_some(i)
}

/// Glacier dynamics as a filter propagator over `(H, L)` state vectors.
#[derive(Debug, Clone)]
pub struct GlacierPropagator {
    pub params: ModelParams,
    pub dt: f64,
}

impl Propagator for GlacierPropagator {
    fn propagate(&self, state: &mut [f64], t0: f64, t1: f64) -> Result<()> {
        let s = model::advance(t0, t1, GlacierState::from_slice(state), &self.params, self.dt)?;
        state[0] = s.thickness;
        state[1] = s.length;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRun {
    pub params: ModelParams,
    pub grid: Vec<f64>,
    /// State at each output time.
    pub states: Vec<GlacierState>,
    /// Every integration step, including the start.
    pub series: Vec<TimePoint>,
}

impl TruthRun {
    /// Truth state at `t`, interpolated linearly between integration steps.
    pub fn state_at(&self, t: f64) -> Option<GlacierState> {
        if let Some(i) = grid_index(&self.grid, t) {
            return Some(self.states[i]);
        }
        let j = self.series.partition_point(|p| p.t < t);
        if j == 0 || j >= self.series.len() {
            return None;
        }
        let (a, b) = (&self.series[j - 1], &self.series[j]);
        let w = (t - a.t) / (b.t - a.t);
        Some(GlacierState::new(
            a.state.thickness + w * (b.state.thickness - a.state.thickness),
            a.state.length + w * (b.state.length - a.state.length),
        ))
    }
}

pub fn make_truth(p_true: &ModelParams, window: Window, dt: f64, output_interval: f64) -> Result<TruthRun> {
    p_true.validate()?;
    let grid = output_grid(window, output_interval)?;
    let s0 = p_true.initial_state();
    let mut states = vec![s0];
    let mut series = vec![TimePoint {
        t: grid[0],
        state: s0,
        flux: model::flux_diagnostics(&s0, p_true)?,
    }];
    let mut s = s0;
    for leg in grid.windows(2) {
        let pts = model::integrate(leg[0], leg[1], s, p_true, dt)?;
        s = pts.last().unwrap().state;
        states.push(s);
        series.extend_from_slice(&pts[1..]);
    }
    Ok(TruthRun {
        params: p_true.clone(),
        grid,
        states,
        series,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSchedule {
    /// Strictly increasing observation years.
    pub times: Vec<f64>,
    /// Per-component noise standard deviation as a fraction of the truth.
    pub rel_noise: [f64; 2],
    /// Per-component minimum noise standard deviation, SI units.
    pub abs_floor: [f64; 2],
}

impl ObservationSchedule {
    pub fn new(times: Vec<f64>, rel_noise: [f64; 2], abs_floor: [f64; 2]) -> Self {
        Self {
            times,
            rel_noise,
            abs_floor,
        }
    }

    pub fn validate(&self, window: Window) -> Result<()> {
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("schedule times must be strictly increasing".into()));
        }
        if let Some(t) = self.times.iter().find(|t| !window.contains(**t)) {
            return Err(Error::InvalidParameter(format!("observation time {t} outside the run window")));
        }
        if self.rel_noise.iter().chain(&self.abs_floor).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("observation noise must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn sigma(&self, truth: &GlacierState) -> [f64; 2] {
        let x = truth.as_array();
        [0, 1].map(|k| (self.rel_noise[k] * x[k].abs()).max(self.abs_floor[k]))
    }
}

/// One noisy identity observation of `(H, L)` per scheduled time, with
/// `R = diag(sigma^2)`. Draws use substream `(seed, synthetic, time index)`.
pub fn synthesize_observations(truth: &TruthRun, schedule: &ObservationSchedule, seed: u64) -> Result<Vec<ObservationSet>> {
    let window = Window::new(truth.grid[0], *truth.grid.last().unwrap());
    schedule.validate(window)?;
    schedule
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let x = truth
                .state_at(t)
                .ok_or_else(|| Error::InvalidParameter(format!("no truth at t = {t}")))?;
            let sigma = schedule.sigma(&x);
            let mut z = [0.0; 2];
            let mut rng = substream(seed, Purpose::SyntheticObservation, k as u64, 0);
            fill_standard_normal(&mut rng, &mut z);
            let xa = x.as_array();
            let y = DVector::from_fn(2, |i, _| xa[i] + sigma[i] * z[i]);
            let r = DMatrix::from_fn(2, 2, |i, j| if i == j { sigma[i] * sigma[i] } else { 0.0 });
            Ok(ObservationSet::identity(y, r, t))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinSetup {
    pub truth_params: ModelParams,
    pub guess_params: ModelParams,
    pub window: Window,
    pub dt: f64,
    pub output_interval: f64,
    pub filter: FilterConfig,
    /// Initial ensemble standard deviation as a fraction of the guess state.
    pub initial_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub t: f64,
    pub truth: GlacierState,
    /// Ensemble mean after any analysis at `t`.
    pub analysis: GlacierState,
    pub forecast: GlacierState,
    pub observation: Option<GlacierState>,
    /// Diagonal of the ensemble covariance after any analysis, m².
    pub cov_diag: [f64; 2],
    pub analysed: bool,
    pub members: Option<Vec<GlacierState>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    /// Parameters of the model that produced the analysis trajectory.
    pub filter_params: ModelParams,
}

impl RunRecord {
    pub fn analysis_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().filter(|r| r.analysed).map(|r| r.t)
    }

    pub fn row_at(&self, t: f64) -> Option<&RunRow> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.rows.iter().find(|r| (r.t - t).abs() <= tol)
    }
}

fn state_of(v: &DVector<f64>) -> GlacierState {
    GlacierState::new(v[0], v[1])
}

/// Runs a twin experiment and assembles the per-time record.
pub fn run_twin(setup: &TwinSetup, schedule: &ObservationSchedule, keep_members: bool) -> Result<RunRecord> {
    setup.guess_params.validate()?;
    let truth = make_truth(&setup.truth_params, setup.window, setup.dt, setup.output_interval)?;
    run_twin_with_truth(setup, &truth, schedule, keep_members)
}

/// [`run_twin`] against a precomputed truth (shared across sweep jobs).
pub fn run_twin_with_truth(
    setup: &TwinSetup,
    truth: &TruthRun,
    schedule: &ObservationSchedule,
    keep_members: bool,
) -> Result<RunRecord> {
    setup.guess_params.validate()?;
    if !(setup.initial_spread >= 0.0) {
        return Err(Error::InvalidParameter("initial spread >= 0".into()));
    }
    let observations = synthesize_observations(truth, schedule, setup.filter.seed)?;
    for o in &observations {
        if grid_index(&truth.grid, o.t).is_none() {
            return Err(Error::InvalidParameter(format!(
                "observation time {} is not on the output grid",
                o.t
            )));
        }
    }
    let guess = setup.guess_params.initial_state().as_array();
    let spread = guess.map(|v| setup.initial_spread * v.abs());
    let ensemble = enkf::init_ensemble(&guess, &spread, truth.grid[0], &setup.filter)?;
    let propagator = GlacierPropagator {
        params: setup.guess_params.clone(),
        dt: setup.dt,
    };
    let cycles = enkf::assimilation_cycle(ensemble, &propagator, &truth.grid, &observations, &setup.filter, keep_members)?;

    let mut obs_iter = observations.iter().peekable();
    let rows = cycles
        .into_iter()
        .zip(&truth.states)
        .map(|(c, truth_state)| {
            let tol = 1e-9 * c.t.abs().max(1.0);
            let observation = obs_iter
                .next_if(|o| (o.t - c.t).abs() <= tol)
                .map(|o| state_of(&o.y));
            RunRow {
                t: c.t,
                truth: *truth_state,
                analysis: state_of(&c.mean),
                forecast: state_of(&c.forecast_mean),
                observation,
                cov_diag: [c.covariance[(0, 0)], c.covariance[(1, 1)]],
                analysed: c.analysed,
                members: c.members.map(|m| m.column_iter().map(|col| GlacierState::new(col[0], col[1])).collect()),
            }
        })
        .collect();
    Ok(RunRecord {
        rows,
        filter_params: setup.guess_params.clone(),
    })
}

/// Componentwise `(x - x_a)^2` in display units.
pub fn square_difference_states(truth: &GlacierState, analysis: &GlacierState) -> [f64; 2] {
    let dh = (truth.thickness - analysis.thickness) / H_DISPLAY_SCALE;
    let dl = (truth.length - analysis.length) / L_DISPLAY_SCALE;
    [dh * dh, dl * dl]
}

pub fn square_difference(record: &RunRecord, t: f64) -> Result<[f64; 2]> {
    let row = record
        .row_at(t)
        .ok_or_else(|| Error::InvalidParameter(format!("no record at t = {t}")))?;
    Ok(square_difference_states(&row.truth, &row.analysis))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub msd_h: f64,
    pub msd_l: f64,
    pub window: Window,
}

/// Mean of the square difference over every record time inside `window`.
pub fn mean_square_difference(record: &RunRecord, window: Window) -> Result<Metrics> {
    let mut sum = [0.0; 2];
    let mut count = 0usize;
    for row in record.rows.iter().filter(|r| window.contains(r.t)) {
        let d = square_difference_states(&row.truth, &row.analysis);
        sum[0] += d[0];
        sum[1] += d[1];
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidParameter("MSD window contains no record times".into()));
    }
    Ok(Metrics {
        msd_h: sum[0] / count as f64,
        msd_l: sum[1] / count as f64,
        window,
    })
}
