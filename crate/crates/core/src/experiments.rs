//! Studies built on the twin harness: parameter sensitivity, ensemble-size
//! and observation-frequency sweeps, and the best / worse / projection runs.
//!
//! Sweep jobs are independent `(axis value, seed)` pairs run on the rayon
//! pool. Each job's randomness comes only from its own seed, and results are
//! gathered in input order, so output does not depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{self, GlacierState, ModelParams, H_DISPLAY_SCALE, L_DISPLAY_SCALE};
use crate::osse::{self, mean_square_difference, ObservationSchedule, RunRecord, TruthRun, TwinSetup, Window};

/// Start of the post-satellite era used by the scheme studies.
pub const POST_ERA_START: f64 = 1950.0;
/// End of the pre-satellite era.
pub const PRE_ERA_END: f64 = 1900.0;
/// Last observation year of the projection run.
pub const PROJECTION_CUTOFF: f64 = 2022.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Era {
    Pre1900,
    Post1950,
    Composite,
    Custom,
}

impl Era {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pre1900" => Some(Self::Pre1900),
            "post1950" => Some(Self::Post1950),
            "composite" => Some(Self::Composite),
            "custom" => Some(Self::Custom),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Pre1900 => "pre1900",
            Self::Post1950 => "post1950",
            Self::Composite => "composite",
            Self::Custom => "custom",
        }
    }
}

/// Regular observation scheme. Ranges are half-open, `[start, end)`, so
/// 19-yearly over `[0, 1900)` gives 100 observations and yearly over
/// `[1950, 2300)` gives 350.
///
/// * `Pre1900`: every `interval` years on `[start, min(end, 1900))`.
/// * `Post1950`: every `interval` years on `[max(start, 1950), end)`.
/// * `Composite`: the `Pre1900` part plus yearly on `[1950, end)`.
/// * `Custom`: every `interval` years on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeSpec {
    pub era: Era,
    pub interval: f64,
    pub start: f64,
    pub end: f64,
}

fn regular(start: f64, end: f64, interval: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let t = start + k as f64 * interval;
        if t >= end - 1e-9 {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

impl SchemeSpec {
    pub fn new(era: Era, interval: f64, start: f64, end: f64) -> Self {
        Self {
            era,
            interval,
            start,
            end,
        }
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.start < self.end) {
            return Err(Error::InvalidParameter("scheme start < end".into()));
        }
        if !(self.interval >= dt) {
            return Err(Error::InvalidParameter("scheme interval >= dt".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        match self.era {
            Era::Pre1900 => regular(self.start, self.end.min(PRE_ERA_END), self.interval),
            Era::Post1950 => regular(self.start.max(POST_ERA_START), self.end, self.interval),
            Era::Composite => {
                let mut t = regular(self.start, PRE_ERA_END, self.interval);
                t.extend(regular(POST_ERA_START, self.end, 1.0));
                t
            }
            Era::Custom => regular(self.start, self.end, self.interval),
        }
    }

    /// Window over which a run with this scheme is scored.
    pub fn scoring_window(&self, run: Window) -> Window {
        match self.era {
            Era::Pre1900 => Window::new(run.start, PRE_ERA_END),
            Era::Post1950 => Window::new(POST_ERA_START, run.end),
            Era::Composite | Era::Custom => run,
        }
    }
}

/// 19-yearly before 1900 and yearly from 1950 to 2300.
pub fn best_scheme() -> SchemeSpec {
    SchemeSpec::new(Era::Composite, 19.0, 0.0, 2300.0)
}

/// Every 200 years from year 200 until 2000, then yearly to 2300.
pub fn worse_scheme_times() -> Vec<f64> {
    let mut t = regular(200.0, 2000.0, 200.0);
    t.extend(regular(2000.0, 2300.0, 1.0));
    t
}

/// Observation noise applied to every synthetic observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub rel_noise: [f64; 2],
    pub abs_floor: [f64; 2],
}

impl NoiseModel {
    pub fn schedule(&self, times: Vec<f64>) -> ObservationSchedule {
        ObservationSchedule::new(times, self.rel_noise, self.abs_floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: f64,
    pub msd_h: f64,
    pub msd_l: f64,
    pub seeds: usize,
    pub msd_h_iqr: f64,
    pub msd_l_iqr: f64,
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

fn summarize(axis: f64, metrics: &[(f64, f64)]) -> SweepResult {
    let h: Vec<f64> = metrics.iter().map(|m| m.0).collect();
    let l: Vec<f64> = metrics.iter().map(|m| m.1).collect();
    SweepResult {
        axis,
        msd_h: median(&h),
        msd_l: median(&l),
        seeds: metrics.len(),
        msd_h_iqr: quantile(&h, 0.75) - quantile(&h, 0.25),
        msd_l_iqr: quantile(&l, 0.75) - quantile(&l, 0.25),
    }
}

/// Twin run for one seed, scored on `score`.
fn scored_run(
    setup: &TwinSetup,
    truth: &TruthRun,
    schedule: &ObservationSchedule,
    seed: u64,
    size: usize,
    score: Window,
) -> Result<(f64, f64)> {
    let mut s = setup.clone();
    s.filter.seed = seed;
    s.filter.size = size;
    let rec = osse::run_twin_with_truth(&s, truth, schedule, false)?;
    let m = mean_square_difference(&rec, score)?;
    Ok((m.msd_h, m.msd_l))
}

/// Runs every `(axis, seed)` job and summarises per axis value. `job` maps an
/// axis index and a seed to that run's `(msd_H, msd_L)`.
fn sweep<F>(axis: &[f64], seeds: &[u64], job: F) -> Result<Vec<SweepResult>>
where
    F: Fn(usize, u64) -> Result<(f64, f64)> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..axis.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, s)| job(i, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(results
        .chunks(seeds.len())
        .zip(axis)
        .map(|(chunk, &a)| summarize(a, chunk))
        .collect())
}

/// Median MSD over `seeds` for each ensemble size, using `schedule` scored
/// over the whole run window.
pub fn ensemble_size_sweep(
    setup: &TwinSetup,
    schedule: &ObservationSchedule,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepResult>> {
    if let Some(n) = sizes.iter().find(|n| **n < 2) {
        return Err(Error::InvalidParameter(format!("ensemble size {n} < 2")));
    }
    let truth = osse::make_truth(&setup.truth_params, setup.window, setup.dt, setup.output_interval)?;
    let axis: Vec<f64> = sizes.iter().map(|n| *n as f64).collect();
    sweep(&axis, seeds, |i, seed| {
        scored_run(setup, &truth, schedule, seed, sizes[i], setup.window)
    })
}

/// Median in-era MSD over `seeds` for each observation interval of `era`.
pub fn scheme_sweep(
    setup: &TwinSetup,
    noise: &NoiseModel,
    era: Era,
    intervals: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepResult>> {
    let specs: Vec<SchemeSpec> = intervals
        .iter()
        .map(|&iv| SchemeSpec::new(era, iv, setup.window.start, setup.window.end))
        .collect();
    for s in &specs {
        s.validate(setup.dt)?;
    }
    let truth = osse::make_truth(&setup.truth_params, setup.window, setup.dt, setup.output_interval)?;
    sweep(intervals, seeds, |i, seed| {
        let spec = &specs[i];
        let schedule = noise.schedule(spec.times());
        scored_run(setup, &truth, &schedule, seed, setup.filter.size, spec.scoring_window(setup.window))
    })
}

/// Relative band around the largest-ensemble MSD that defines the plateau.
pub const PLATEAU_BAND: f64 = 1.2;

/// First ensemble size whose median MSD is within `band` of the largest
/// size's median, for H and L together.
pub fn plateau_entry(results: &[SweepResult], band: f64) -> Option<f64> {
    let reference = results.iter().max_by(|a, b| a.axis.total_cmp(&b.axis))?;
    results
        .iter()
        .find(|r| r.msd_h <= band * reference.msd_h && r.msd_l <= band * reference.msd_l)
        .map(|r| r.axis)
}

/// `sqrt(MSD) / mean(truth)` per component over `window`, the relative RMS
/// error used for the 5% scheme threshold.
pub fn relative_rms_error(record: &RunRecord, window: Window) -> Result<[f64; 2]> {
    let m = mean_square_difference(record, window)?;
    let rows: Vec<_> = record.rows.iter().filter(|r| window.contains(r.t)).collect();
    let n = rows.len() as f64;
    let mean_h = rows.iter().map(|r| r.truth.thickness / H_DISPLAY_SCALE).sum::<f64>() / n;
    let mean_l = rows.iter().map(|r| r.truth.length / L_DISPLAY_SCALE).sum::<f64>() / n;
    Ok([m.msd_h.sqrt() / mean_h, m.msd_l.sqrt() / mean_l])
}

pub const DEFAULT_RUN_SIZE: usize = 10;

pub fn best_run(setup: &TwinSetup, noise: &NoiseModel) -> Result<RunRecord> {
    let mut s = setup.clone();
    s.filter.size = DEFAULT_RUN_SIZE;
    osse::run_twin(&s, &noise.schedule(best_scheme().times()), false)
}

pub fn worse_run(setup: &TwinSetup, noise: &NoiseModel) -> Result<RunRecord> {
    let mut s = setup.clone();
    s.filter.size = DEFAULT_RUN_SIZE;
    osse::run_twin(&s, &noise.schedule(worse_scheme_times()), false)
}

/// Best scheme with no observation after 2022, then a free ensemble forecast
/// to the end of the window.
pub fn projection_run(setup: &TwinSetup, noise: &NoiseModel) -> Result<RunRecord> {
    let mut s = setup.clone();
    s.filter.size = DEFAULT_RUN_SIZE;
    let times = best_scheme()
        .times()
        .into_iter()
        .filter(|t| *t <= PROJECTION_CUTOFF)
        .collect();
    osse::run_twin(&s, &noise.schedule(times), false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub truth: GlacierState,
    pub analysis: GlacierState,
    pub forecast: GlacierState,
}

/// Record rows at every multiple of `every` years.
pub fn checkpoints(record: &RunRecord, every: f64) -> Vec<Checkpoint> {
    record
        .rows
        .iter()
        .filter(|r| (r.t / every - (r.t / every).round()).abs() < 1e-9)
        .map(|r| Checkpoint {
            t: r.t,
            truth: r.truth,
            analysis: r.analysis,
            forecast: r.forecast,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensitivityCategory {
    /// `smb_o`, `smb_1`, `smb_f`.
    Smb,
    /// `H_o`, `L_o`, `b_x`.
    Initial,
    /// `sill_min`, `sill_max`, `sill_slope`.
    Sill,
    /// `b_x` alone, initial state held fixed.
    SlopeOnly,
}

impl SensitivityCategory {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "smb" => Some(Self::Smb),
            "initial" => Some(Self::Initial),
            "sill" => Some(Self::Sill),
            "slope" => Some(Self::SlopeOnly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Smb => "smb",
            Self::Initial => "initial",
            Self::Sill => "sill",
            Self::SlopeOnly => "slope",
        }
    }

    pub fn members(self) -> &'static [&'static str] {
        match self {
            Self::Smb => &["smb_o", "smb_1", "smb_f"],
            Self::Initial => &["H_o", "L_o", "b_x"],
            Self::Sill => &["sill_min", "sill_max", "sill_slope"],
            Self::SlopeOnly => &["b_x"],
        }
    }

    /// Scales every member of the category by `factor`. `gamma` and `omega`
    /// are left at their base values.
    pub fn apply(self, base: &ModelParams, factor: f64) -> ModelParams {
        let mut p = base.clone();
        match self {
            Self::Smb => {
                p.smb_o *= factor;
                p.smb_1 *= factor;
                p.smb_f *= factor;
            }
            Self::Initial => {
                p.h_o *= factor;
                p.l_o *= factor;
                p.b_x *= factor;
            }
            Self::Sill => {
                p.sill_min *= factor;
                p.sill_max *= factor;
                p.sill_slope *= factor;
            }
            Self::SlopeOnly => p.b_x *= factor,
        }
        p
    }
}

/// The three categories that partition the nine table parameters.
pub const CATEGORIES: [SensitivityCategory; 3] = [
    SensitivityCategory::Smb,
    SensitivityCategory::Initial,
    SensitivityCategory::Sill,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySample {
    pub id: usize,
    pub factor: f64,
    /// `None` when the run left the model's domain.
    pub states: Option<Vec<GlacierState>>,
    pub error: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    pub category: SensitivityCategory,
    pub grid: Vec<f64>,
    pub samples: Vec<SensitivitySample>,
    /// `max - min` of H and L across successful samples at each grid time, m.
    pub spread: Vec<[f64; 2]>,
}

impl SensitivityResult {
    pub fn failed(&self) -> usize {
        self.samples.iter().filter(|s| s.states.is_none()).count()
    }

    /// Time-averaged H and L spread, m.
    pub fn mean_spread(&self) -> [f64; 2] {
        let n = self.spread.len() as f64;
        let sum = self.spread.iter().fold([0.0; 2], |a, s| [a[0] + s[0], a[1] + s[1]]);
        [sum[0] / n, sum[1] / n]
    }
}

/// Evenly spaced factors over `[1 - scale, 1 + scale]`.
pub fn factor_grid(n_samples: usize, scale: f64) -> Vec<f64> {
    (0..n_samples)
        .map(|i| 1.0 - scale + 2.0 * scale * i as f64 / (n_samples - 1) as f64)
        .collect()
}

/// Jointly scales a category's parameters over a factor grid and re-runs the
/// model for each factor. Samples that leave the model's domain are kept as
/// failures.
pub fn sensitivity_sweep(
    base: &ModelParams,
    category: SensitivityCategory,
    n_samples: usize,
    scale: f64,
    window: Window,
    dt: f64,
    output_interval: f64,
) -> Result<SensitivityResult> {
    if n_samples < 2 {
        return Err(Error::InvalidParameter("sensitivity needs n_samples >= 2".into()));
    }
    if !(0.0..1.0).contains(&scale) {
        return Err(Error::InvalidParameter("sensitivity scale in [0, 1)".into()));
    }
    base.validate()?;
    let grid = osse::output_grid(window, output_interval)?;
    let factors = factor_grid(n_samples, scale);
    let samples: Vec<SensitivitySample> = factors
        .par_iter()
        .enumerate()
        .map(|(id, &factor)| {
            let p = category.apply(base, factor);
            let run = p
                .validate()
                .and_then(|_| osse::make_truth(&p, window, dt, output_interval));
            match run {
                Ok(truth) => SensitivitySample {
                    id,
                    factor,
                    states: Some(truth.states),
                    error: None,
                },
                Err(e) => SensitivitySample {
                    id,
                    factor,
                    states: None,
                    error: Some(e),
                },
            }
        })
        .collect();
    let ok: Vec<&Vec<GlacierState>> = samples.iter().filter_map(|s| s.states.as_ref()).collect();
    let spread = (0..grid.len())
        .map(|k| {
            if ok.is_empty() {
                return [0.0, 0.0];
            }
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for s in &ok {
                let x = s[k].as_array();
                for c in 0..2 {
                    lo[c] = lo[c].min(x[c]);
                    hi[c] = hi[c].max(x[c]);
                }
            }
            [hi[0] - lo[0], hi[1] - lo[1]]
        })
        .collect();
    Ok(SensitivityResult {
        category,
        grid,
        samples,
        spread,
    })
}

/// Mean slope of H over `[a, b]` on a truth run, m/yr.
pub fn mean_thickness_slope(truth: &TruthRun, a: f64, b: f64) -> Option<f64> {
    let ha = truth.state_at(a)?.thickness;
    let hb = truth.state_at(b)?.thickness;
    Some((hb - ha) / (b - a))
}

/// Integrates the truth parameters with constant `smb_o` forcing.
pub fn equilibrium_drift(p: &ModelParams, years: f64, dt: f64) -> Result<[f64; 2]> {
    let mut q = p.clone();
    q.smb_1 = q.smb_o;
    q.smb_f = q.smb_o;
    let s0 = q.initial_state();
    let s1 = model::advance(0.0, years, s0, &q, dt)?;
    Ok([
        ((s1.thickness - s0.thickness) / s0.thickness).abs(),
        ((s1.length - s0.length) / s0.length).abs(),
    ])
}
