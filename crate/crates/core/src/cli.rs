//! Subcommand dispatch: runs one experiment from a [`RunConfig`] and writes
//! its CSVs, the resolved configuration and a manifest into the output
//! directory.

use std::fs;
use std::io;
use std::path::Path;

use crate::artifact::{self, Cell, Manifest, Schema};
use crate::config::{ConfigError, RunConfig};
use crate::experiments;
use crate::model::{GlacierState, H_DISPLAY_SCALE, L_DISPLAY_SCALE};
use crate::osse::{self, RunRecord, TruthRun};
use crate::slr;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.toml";

/// Year-2300 values of the reference projection table, display units.
pub const REFERENCE_PROJECTION: [f64; 2] = [2.0219, 3.6438];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Truth,
    Assimilate,
    SweepEnsemble,
    SweepScheme,
    Sensitivity,
    Project,
    Slr,
}

impl Subcommand {
    pub const NAMES: [&'static str; 7] = [
        "truth",
        "assimilate",
        "sweep-ensemble",
        "sweep-scheme",
        "sensitivity",
        "project",
        "slr",
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "truth" => Self::Truth,
            "assimilate" => Self::Assimilate,
            "sweep-ensemble" => Self::SweepEnsemble,
            "sweep-scheme" => Self::SweepScheme,
            "sensitivity" => Self::Sensitivity,
            "project" => Self::Project,
            "slr" => Self::Slr,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown subcommand `{0}`")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] crate::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 2,
            Self::Model(_) | Self::Io(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Config(_) => "config",
            Self::Model(_) => "runtime",
            Self::Io(_) => "io",
        }
    }
}

struct Units {
    display: bool,
}

impl Units {
    fn state(&self, s: &GlacierState) -> [f64; 2] {
        if self.display {
            let (h, l) = s.to_display();
            [h, l]
        } else {
            s.as_array()
        }
    }

    fn variance(&self, v: [f64; 2]) -> [f64; 2] {
        if self.display {
            [v[0] / H_DISPLAY_SCALE.powi(2), v[1] / L_DISPLAY_SCALE.powi(2)]
        } else {
            v
        }
    }
}

fn truth_rows(truth: &TruthRun, u: &Units) -> Vec<Vec<Cell>> {
    truth
        .grid
        .iter()
        .zip(&truth.states)
        .map(|(&t, s)| {
            let [h, l] = u.state(s);
            vec![Some(t), Some(h), Some(l), None, None, None, None, None, None]
        })
        .collect()
}

fn record_rows(record: &RunRecord, u: &Units) -> Vec<Vec<Cell>> {
    record
        .rows
        .iter()
        .map(|r| {
            let [ht, lt] = u.state(&r.truth);
            let [ha, la] = u.state(&r.analysis);
            let obs = r.observation.map(|o| u.state(&o));
            let [phh, pll] = u.variance(r.cov_diag);
            vec![
                Some(r.t),
                Some(ht),
                Some(lt),
                Some(ha),
                Some(la),
                obs.map(|o| o[0]),
                obs.map(|o| o[1]),
                Some(phh),
                Some(pll),
            ]
        })
        .collect()
}

fn sweep_rows(results: &[experiments::SweepResult]) -> Vec<Vec<Cell>> {
    results
        .iter()
        .map(|r| {
            vec![
                Some(r.axis),
                Some(r.msd_h),
                Some(r.msd_l),
                Some(r.seeds as f64),
                Some(r.msd_h_iqr),
                Some(r.msd_l_iqr),
            ]
        })
        .collect()
}

fn slr_rows(s: &slr::SlrSeries) -> Vec<Vec<Cell>> {
    s.rows
        .iter()
        .map(|r| {
            vec![
                Some(r.t),
                Some(r.interior_flux),
                Some(r.grounding_flux),
                Some(r.dv_km3),
                Some(r.vcum_km3),
                Some(r.slr_mm),
            ]
        })
        .collect()
}

fn end_state(record: &RunRecord) -> (GlacierState, GlacierState) {
    let last = record.rows.last().expect("run records are never empty");
    (last.truth, last.analysis)
}

fn note_projection(m: &mut Manifest, record: &RunRecord) {
    let (truth, analysis) = end_state(record);
    let (th, tl) = truth.to_display();
    let (ah, al) = analysis.to_display();
    let [rh, rl] = REFERENCE_PROJECTION;
    m.note("end_year", record.rows.last().map_or(0.0, |r| r.t));
    m.note("projected_H_end", ah);
    m.note("projected_L_end", al);
    m.note("truth_H_end", th);
    m.note("truth_L_end", tl);
    m.note("reference_H_2300", rh);
    m.note("reference_L_2300", rl);
    m.note("projected_vs_reference_H", (ah - rh) / rh);
    m.note("projected_vs_reference_L", (al - rl) / rl);
    m.note("truth_vs_reference_H", (th - rh) / rh);
    m.note("truth_vs_reference_L", (tl - rl) / rl);
    m.note("projected_vs_truth_H", (ah - th) / th);
    m.note("projected_vs_truth_L", (al - tl) / tl);
}

fn width_label(w: f64) -> String {
    format!("{w}").replace('.', "p")
}

/// Runs `sub` and writes everything into `cfg.run.out_dir`. The input
/// configuration file is never touched.
pub fn run_subcommand(sub: Subcommand, cfg: &RunConfig) -> Result<Manifest, CliError> {
    let out = cfg.run.out_dir.as_path();
    fs::create_dir_all(out)?;
    let mut m = Manifest::new(sub.name());
    let resolved = cfg.emit();
    let resolved_path = out.join(RESOLVED_CONFIG_FILE);
    artifact::write_atomic(&resolved_path, resolved.as_bytes())?;
    m.add_file(&resolved_path, "config", resolved.as_bytes());
    m.note("seed", cfg.run.seed);
    m.note("dt", cfg.run.dt);
    m.note("display_units", cfg.run.display_units);

    let units = Units {
        display: cfg.run.display_units,
    };
    let setup = cfg.twin_setup();
    let csv = |name: &str, schema: Schema, rows: &[Vec<Cell>], m: &mut Manifest| -> io::Result<()> {
        let a = artifact::emit_csv(&out.join(name), schema, rows)?;
        log::info!("wrote {} ({} rows)", a.path.display(), a.rows);
        m.add(&a);
        Ok(())
    };

    match sub {
        Subcommand::Truth => {
            let truth = osse::make_truth(&cfg.truth, cfg.run.window, cfg.run.dt, cfg.run.output_interval)?;
            csv("truth.csv", Schema::RunRecord, &truth_rows(&truth, &units), &mut m)?;
        }
        Subcommand::Assimilate => {
            let schedule = cfg.observation_schedule();
            m.note("scheme", cfg.schedule.scheme.name());
            m.note("observations", schedule.times.len());
            let record = osse::run_twin(&setup, &schedule, false)?;
            let msd = osse::mean_square_difference(&record, cfg.run.window)?;
            m.note("msd_H", msd.msd_h);
            m.note("msd_L", msd.msd_l);
            csv("assimilate.csv", Schema::RunRecord, &record_rows(&record, &units), &mut m)?;
        }
        Subcommand::SweepEnsemble => {
            let sizes: Vec<usize> = (cfg.run.ensemble_min..=cfg.run.ensemble_max).collect();
            let results =
                experiments::ensemble_size_sweep(&setup, &cfg.observation_schedule(), &sizes, &cfg.sweep_seeds())?;
            if let Some(n) = experiments::plateau_entry(&results, experiments::PLATEAU_BAND) {
                m.note("plateau_entry", n);
            }
            csv("sweep-ensemble.csv", Schema::Sweep, &sweep_rows(&results), &mut m)?;
        }
        Subcommand::SweepScheme => {
            let results = experiments::scheme_sweep(
                &setup,
                &cfg.schedule.noise,
                cfg.schedule.sweep_era,
                &cfg.schedule.sweep_intervals,
                &cfg.sweep_seeds(),
            )?;
            m.note("era", cfg.schedule.sweep_era.name());
            csv("sweep-scheme.csv", Schema::Sweep, &sweep_rows(&results), &mut m)?;
        }
        Subcommand::Sensitivity => {
            let r = experiments::sensitivity_sweep(
                &cfg.truth,
                cfg.run.sensitivity_category,
                cfg.run.sensitivity_samples,
                cfg.run.sensitivity_scale,
                cfg.run.window,
                cfg.run.dt,
                cfg.run.output_interval,
            )?;
            let mut rows = Vec::new();
            for s in &r.samples {
                let Some(states) = &s.states else { continue };
                for (&t, st) in r.grid.iter().zip(states) {
                    let [h, l] = units.state(st);
                    rows.push(vec![Some(t), Some(s.id as f64), Some(s.factor), Some(h), Some(l)]);
                }
            }
            let [sh, sl] = r.mean_spread();
            m.note("category", r.category.name());
            m.note("failed_samples", r.failed());
            m.note("mean_spread_H_m", sh);
            m.note("mean_spread_L_m", sl);
            csv("sensitivity.csv", Schema::Sensitivity, &rows, &mut m)?;
        }
        Subcommand::Project => {
            let record = experiments::projection_run(&setup, &cfg.schedule.noise)?;
            note_projection(&mut m, &record);
            csv("project.csv", Schema::RunRecord, &record_rows(&record, &units), &mut m)?;
        }
        Subcommand::Slr => {
            let record = experiments::projection_run(&setup, &cfg.schedule.noise)?;
            let fluxes = slr::record_fluxes(&record)?;
            m.note("caveat", slr::REGIONAL_CAVEAT);
            for w in &cfg.run.widths_km {
                let s = slr::accumulate(&fluxes, *w, cfg.run.glacier_count)?;
                let label = width_label(*w);
                m.note(&format!("slr_mm_end_w{label}km"), s.final_slr_mm());
                m.note(
                    &format!("regional_slr_mm_end_w{label}km"),
                    slr::regional_estimate(&s, slr::GREENLAND_GLACIER_COUNT),
                );
                csv(&format!("slr-w{label}km.csv"), Schema::Slr, &slr_rows(&s), &mut m)?;
            }
        }
    }

    let manifest = m.render();
    artifact::write_atomic(&out.join(MANIFEST_FILE), manifest.as_bytes())?;
    Ok(m)
}

/// Parses the config at `path`, applies command-line overrides and runs.
pub fn run_from_path(
    sub: &str,
    path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    dt: Option<f64>,
) -> Result<Manifest, CliError> {
    let sub = Subcommand::parse(sub).ok_or_else(|| CliError::Usage(sub.to_string()))?;
    let text = fs::read_to_string(path).map_err(|e| {
        ConfigError::Validation(format!("cannot read {}: {e}", path.display()))
    })?;
    let mut cfg = crate::config::parse_config(&text)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(o) = out {
        cfg.run.out_dir = o.to_path_buf();
    }
    if let Some(d) = dt {
        cfg.run.dt = d;
    }
    let cfg = cfg.revalidate()?;
    run_subcommand(sub, &cfg)
}
