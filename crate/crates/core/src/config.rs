//! Run configuration: a TOML file with `[true]`, `[inaccurate]`, `[filter]`,
//! `[schedule]` and `[run]` sections. Every key is optional; omitted keys take
//! the defaults below. Unknown keys are rejected.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::enkf::FilterConfig;
use crate::experiments::{self, Era, NoiseModel, SchemeSpec, SensitivityCategory};
use crate::model::{self, ModelParams};
use crate::osse::{ObservationSchedule, TwinSetup, Window};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    smb_o: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smb_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smb_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    h_o: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_o: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sill_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sill_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sill_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_mid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_end: Option<f64>,
}

impl ModelSection {
    fn full(p: &ModelParams) -> Self {
        Self {
            smb_o: Some(p.smb_o),
            smb_1: Some(p.smb_1),
            smb_f: Some(p.smb_f),
            h_o: Some(p.h_o),
            l_o: Some(p.l_o),
            b_x: Some(p.b_x),
            sill_min: Some(p.sill_min),
            sill_max: Some(p.sill_max),
            sill_slope: Some(p.sill_slope),
            b0: Some(p.b0),
            lambda: Some(p.lambda),
            n: Some(p.n),
            beta: Some(p.beta),
            gamma: Some(p.gamma),
            omega: Some(p.omega),
            t_mid: Some(p.t_mid),
            t_end: Some(p.t_end),
        }
    }

    /// Overlays the given keys on `base`, then calibrates `gamma` and `omega`
    /// on the resulting initial state unless both were given.
    fn resolve(&self, base: &ModelParams, section: &str) -> ConfigResult<ModelParams> {
        let mut p = base.clone();
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.smb_o, self.smb_o);
        set(&mut p.smb_1, self.smb_1);
        set(&mut p.smb_f, self.smb_f);
        set(&mut p.h_o, self.h_o);
        set(&mut p.l_o, self.l_o);
        set(&mut p.b_x, self.b_x);
        set(&mut p.sill_min, self.sill_min);
        set(&mut p.sill_max, self.sill_max);
        set(&mut p.sill_slope, self.sill_slope);
        set(&mut p.b0, self.b0);
        set(&mut p.lambda, self.lambda);
        set(&mut p.n, self.n);
        set(&mut p.beta, self.beta);
        set(&mut p.t_mid, self.t_mid);
        set(&mut p.t_end, self.t_end);
        let invalid = |e: crate::Error| ConfigError::Validation(format!("[{section}] {e}"));
        if self.gamma.is_none() || self.omega.is_none() {
            p.validate_geometry().map_err(invalid)?;
            p = model::calibrate_constants(&p).map_err(invalid)?;
        }
        set(&mut p.gamma, self.gamma);
        set(&mut p.omega, self.omega);
        p.validate().map_err(invalid)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inflation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_noise_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_noise_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_spread: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    interval: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rel_noise_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rel_noise_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    abs_floor_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    abs_floor_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep_era: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep_intervals: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_interval: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    display_units: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ensemble_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ensemble_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sensitivity_category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sensitivity_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sensitivity_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    widths_km: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    glacier_count: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default, rename = "true")]
    truth: ModelSection,
    #[serde(default)]
    inaccurate: ModelSection,
    #[serde(default)]
    filter: FilterSection,
    #[serde(default)]
    schedule: ScheduleSection,
    #[serde(default)]
    run: RunSection,
}

/// Observation schedule selected for `assimilate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Best,
    Worse,
    None,
    Regular(SchemeSpec),
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Best => "best",
            Self::Worse => "worse",
            Self::None => "none",
            Self::Regular(s) => s.era.name(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        match self {
            Self::Best => experiments::best_scheme().times(),
            Self::Worse => experiments::worse_scheme_times(),
            Self::None => Vec::new(),
            Self::Regular(s) => s.times(),
        }
    }
}

pub const DEFAULT_REL_NOISE: f64 = 0.03;
pub const DEFAULT_MODEL_NOISE: [f64; 2] = [10.0, 1000.0];
pub const DEFAULT_INITIAL_SPREAD: f64 = 0.02;
pub const DEFAULT_SEEDS: usize = 10;
pub const DEFAULT_SWEEP_INTERVALS: [f64; 5] = [1.0, 5.0, 19.0, 50.0, 100.0];

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSettings {
    pub size: usize,
    pub inflation: f64,
    /// Standard deviation of the additive model noise, m, per component.
    pub model_noise: [f64; 2],
    /// Initial ensemble spread as a fraction of the initial state.
    pub initial_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSettings {
    pub scheme: Scheme,
    pub interval: f64,
    pub start: f64,
    pub end: f64,
    pub noise: NoiseModel,
    pub sweep_era: Era,
    pub sweep_intervals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub window: Window,
    pub dt: f64,
    pub output_interval: f64,
    pub seed: u64,
    pub seeds: usize,
    pub out_dir: PathBuf,
    pub display_units: bool,
    pub ensemble_min: usize,
    pub ensemble_max: usize,
    pub sensitivity_category: SensitivityCategory,
    pub sensitivity_samples: usize,
    pub sensitivity_scale: f64,
    pub widths_km: Vec<f64>,
    pub glacier_count: u32,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub truth: ModelParams,
    pub guess: ModelParams,
    pub filter: FilterSettings,
    pub schedule: ScheduleSettings,
    pub run: RunSettings,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

fn era_from(s: &str) -> ConfigResult<Era> {
    Era::parse(s).ok_or_else(|| invalid(format!("unknown era `{s}`")))
}

pub fn parse_config(text: &str) -> ConfigResult<RunConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    resolve(&file)
}

fn resolve(file: &ConfigFile) -> ConfigResult<RunConfig> {
    let truth = file.truth.resolve(&ModelParams::true_column(), "true")?;
    let guess = file.inaccurate.resolve(&ModelParams::inaccurate_column(), "inaccurate")?;

    let f = &file.filter;
    let filter = FilterSettings {
        size: f.size.unwrap_or(experiments::DEFAULT_RUN_SIZE),
        inflation: f.inflation.unwrap_or(1.0),
        model_noise: [
            f.model_noise_h.unwrap_or(DEFAULT_MODEL_NOISE[0]),
            f.model_noise_l.unwrap_or(DEFAULT_MODEL_NOISE[1]),
        ],
        initial_spread: f.initial_spread.unwrap_or(DEFAULT_INITIAL_SPREAD),
    };
    if filter.size < 2 {
        return Err(invalid("[filter] size >= 2"));
    }
    if !(filter.inflation >= 1.0) {
        return Err(invalid("[filter] inflation >= 1"));
    }
    if !filter.model_noise.iter().all(|q| *q >= 0.0) {
        return Err(invalid("[filter] model noise >= 0"));
    }
    if !(filter.initial_spread >= 0.0) {
        return Err(invalid("[filter] initial_spread >= 0"));
    }

    let r = &file.run;
    let run = RunSettings {
        window: Window::new(r.start.unwrap_or(0.0), r.end.unwrap_or(truth.t_end)),
        dt: r.dt.unwrap_or(0.1),
        output_interval: r.output_interval.unwrap_or(1.0),
        seed: r.seed.unwrap_or(0),
        seeds: r.seeds.unwrap_or(DEFAULT_SEEDS),
        out_dir: r.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        display_units: r.display_units.unwrap_or(true),
        ensemble_min: r.ensemble_min.unwrap_or(2),
        ensemble_max: r.ensemble_max.unwrap_or(75),
        sensitivity_category: match &r.sensitivity_category {
            None => SensitivityCategory::Sill,
            Some(s) => SensitivityCategory::parse(s)
                .ok_or_else(|| invalid(format!("[run] unknown sensitivity category `{s}`")))?,
        },
        sensitivity_samples: r.sensitivity_samples.unwrap_or(9),
        sensitivity_scale: r.sensitivity_scale.unwrap_or(0.10),
        widths_km: r
            .widths_km
            .clone()
            .unwrap_or_else(|| crate::slr::STUDY_WIDTHS_KM.to_vec()),
        glacier_count: r.glacier_count.unwrap_or(1),
    };
    if !(run.window.start < run.window.end) {
        return Err(invalid("[run] start < end"));
    }
    if !(run.dt > 0.0 && run.dt <= run.output_interval) {
        return Err(invalid("[run] 0 < dt <= output_interval"));
    }
    let legs = (run.window.end - run.window.start) / run.output_interval;
    if (legs - legs.round()).abs() > 1e-9 {
        return Err(invalid("[run] output_interval must divide the run window"));
    }
    if run.seeds == 0 {
        return Err(invalid("[run] seeds >= 1"));
    }
    if !(2 <= run.ensemble_min && run.ensemble_min <= run.ensemble_max) {
        return Err(invalid("[run] 2 <= ensemble_min <= ensemble_max"));
    }
    if run.sensitivity_samples < 2 {
        return Err(invalid("[run] sensitivity_samples >= 2"));
    }
    if !(0.0..1.0).contains(&run.sensitivity_scale) {
        return Err(invalid("[run] sensitivity_scale in [0, 1)"));
    }
    if run.widths_km.is_empty() || !run.widths_km.iter().all(|w| *w > 0.0) {
        return Err(invalid("[run] widths_km non-empty and > 0"));
    }
    if run.glacier_count == 0 {
        return Err(invalid("[run] glacier_count >= 1"));
    }

    let s = &file.schedule;
    let interval = s.interval.unwrap_or(1.0);
    let start = s.start.unwrap_or(run.window.start);
    let end = s.end.unwrap_or(run.window.end);
    let scheme = match s.scheme.as_deref().unwrap_or("best") {
        "best" => Scheme::Best,
        "worse" => Scheme::Worse,
        "none" => Scheme::None,
        other => {
            let spec = SchemeSpec::new(era_from(other)?, interval, start, end);
            spec.validate(run.dt).map_err(|e| invalid(format!("[schedule] {e}")))?;
            Scheme::Regular(spec)
        }
    };
    let noise = NoiseModel {
        rel_noise: [
            s.rel_noise_h.unwrap_or(DEFAULT_REL_NOISE),
            s.rel_noise_l.unwrap_or(DEFAULT_REL_NOISE),
        ],
        abs_floor: [s.abs_floor_h.unwrap_or(0.0), s.abs_floor_l.unwrap_or(0.0)],
    };
    let sweep_era = era_from(s.sweep_era.as_deref().unwrap_or("post1950"))?;
    let sweep_intervals = s
        .sweep_intervals
        .clone()
        .unwrap_or_else(|| DEFAULT_SWEEP_INTERVALS.to_vec());
    if sweep_intervals.is_empty() || !sweep_intervals.iter().all(|i| *i >= run.dt) {
        return Err(invalid("[schedule] sweep_intervals non-empty and >= dt"));
    }
    let schedule = ScheduleSettings {
        scheme,
        interval,
        start,
        end,
        noise,
        sweep_era,
        sweep_intervals,
    };
    if !noise.rel_noise.iter().chain(&noise.abs_floor).all(|x| *x >= 0.0) {
        return Err(invalid("[schedule] noise levels >= 0"));
    }
    ObservationSchedule::new(scheme.times(), noise.rel_noise, noise.abs_floor)
        .validate(run.window)
        .map_err(|e| invalid(format!("[schedule] {e}")))?;

    Ok(RunConfig {
        truth,
        guess,
        filter,
        schedule,
        run,
    })
}

impl RunConfig {
    pub fn defaults() -> Self {
        parse_config("").expect("defaults are valid")
    }

    /// Re-validates after fields have been changed in place, for example by
    /// command-line overrides.
    pub fn revalidate(&self) -> ConfigResult<Self> {
        resolve(&self.to_file())
    }

    fn to_file(&self) -> ConfigFile {
        let (scheme, era_spec) = match self.schedule.scheme {
            Scheme::Regular(s) => (s.era.name().to_string(), Some(s)),
            other => (other.name().to_string(), None),
        };
        let s = &self.schedule;
        let r = &self.run;
        ConfigFile {
            truth: ModelSection::full(&self.truth),
            inaccurate: ModelSection::full(&self.guess),
            filter: FilterSection {
                size: Some(self.filter.size),
                inflation: Some(self.filter.inflation),
                model_noise_h: Some(self.filter.model_noise[0]),
                model_noise_l: Some(self.filter.model_noise[1]),
                initial_spread: Some(self.filter.initial_spread),
            },
            schedule: ScheduleSection {
                scheme: Some(scheme),
                interval: Some(era_spec.map_or(s.interval, |e| e.interval)),
                start: Some(era_spec.map_or(s.start, |e| e.start)),
                end: Some(era_spec.map_or(s.end, |e| e.end)),
                rel_noise_h: Some(s.noise.rel_noise[0]),
                rel_noise_l: Some(s.noise.rel_noise[1]),
                abs_floor_h: Some(s.noise.abs_floor[0]),
                abs_floor_l: Some(s.noise.abs_floor[1]),
                sweep_era: Some(s.sweep_era.name().to_string()),
                sweep_intervals: Some(s.sweep_intervals.clone()),
            },
            run: RunSection {
                start: Some(r.window.start),
                end: Some(r.window.end),
                dt: Some(r.dt),
                output_interval: Some(r.output_interval),
                seed: Some(r.seed),
                seeds: Some(r.seeds),
                out_dir: Some(r.out_dir.clone()),
                display_units: Some(r.display_units),
                ensemble_min: Some(r.ensemble_min),
                ensemble_max: Some(r.ensemble_max),
                sensitivity_category: Some(r.sensitivity_category.name().to_string()),
                sensitivity_samples: Some(r.sensitivity_samples),
                sensitivity_scale: Some(r.sensitivity_scale),
                widths_km: Some(r.widths_km.clone()),
                glacier_count: Some(r.glacier_count),
            },
        }
    }

    /// The resolved configuration with every key written out.
    pub fn emit(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes")
    }

    pub fn filter_config(&self) -> FilterConfig {
        let mut cfg = FilterConfig::new(self.filter.size, self.run.seed, 2);
        cfg.inflation = self.filter.inflation;
        let [qh, ql] = self.filter.model_noise;
        cfg.model_noise_cov = DMatrix::from_row_slice(2, 2, &[qh * qh, 0.0, 0.0, ql * ql]);
        cfg
    }

    pub fn twin_setup(&self) -> TwinSetup {
        TwinSetup {
            truth_params: self.truth.clone(),
            guess_params: self.guess.clone(),
            window: self.run.window,
            dt: self.run.dt,
            output_interval: self.run.output_interval,
            filter: self.filter_config(),
            initial_spread: self.filter.initial_spread,
        }
    }

    pub fn observation_schedule(&self) -> ObservationSchedule {
        self.schedule.noise.schedule(self.schedule.scheme.times())
    }

    /// Seeds used by the sweeps, counting up from the run seed.
    pub fn sweep_seeds(&self) -> Vec<u64> {
        (0..self.run.seeds as u64).map(|k| self.run.seed.wrapping_add(k)).collect()
    }
}
