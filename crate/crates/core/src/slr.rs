//! Grounding-zone volume change and its sea-level equivalent.
//!
//! The grounding-zone volume changes at `W (Q - Qg)` for a glacier of width
//! `W`. A retreating glacier has `Q < Qg`; the cumulative series here track
//! the volume lost, `-W (Q - Qg)` summed step by step with a left-rectangle
//! rule from zero, so that retreat gives a positive sea-level contribution.

use crate::error::{Error, Result};
use crate::model::{self, FluxDiagnostics};
use crate::osse::RunRecord;

/// Ice volume, km³, equivalent to 1 mm of global sea level.
pub const KM3_PER_MM: f64 = 394.67;

/// Number of marine-terminating glaciers used for the regional scaling.
pub const GREENLAND_GLACIER_COUNT: u32 = 733;

/// Caveat attached to any estimate scaled by a glacier count.
pub const REGIONAL_CAVEAT: &str =
    "regional estimate treats every glacier as identical to the modelled one, including its width";

/// Widths, km, of the standard width study.
pub const STUDY_WIDTHS_KM: [f64; 3] = [5.0, 50.0, 100.0];

const M3_PER_KM3: f64 = 1.0e9;

/// `W (Q - Qg)` in km³/yr for fluxes in m²/yr and width in km.
pub fn volume_rate(interior_flux: f64, grounding_flux: f64, width_km: f64) -> Result<f64> {
    if !(width_km > 0.0) {
        return Err(Error::InvalidParameter("width W > 0".into()));
    }
    Ok(width_km * 1.0e3 * (interior_flux - grounding_flux) / M3_PER_KM3)
}

pub fn to_sea_level_mm(volume_km3: f64) -> f64 {
    volume_km3 / KM3_PER_MM
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlrRow {
    pub t: f64,
    pub interior_flux: f64,
    pub grounding_flux: f64,
    /// Volume lost over the step ending at `t`, km³.
    pub dv_km3: f64,
    pub vcum_km3: f64,
    pub slr_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlrSeries {
    pub rows: Vec<SlrRow>,
    pub width_km: f64,
    pub glacier_count: u32,
}

impl SlrSeries {
    pub fn final_slr_mm(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.slr_mm)
    }

    pub fn final_volume_km3(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.vcum_km3)
    }
}

/// Quadrature rule for [`accumulate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    LeftRectangle,
    Trapezoid,
}

/// Cumulative volume and sea-level series over a time-ordered flux series,
/// left-rectangle rule.
pub fn accumulate(series: &[(f64, FluxDiagnostics)], width_km: f64, glacier_count: u32) -> Result<SlrSeries> {
    accumulate_with(series, width_km, glacier_count, Rule::LeftRectangle)
}

pub fn accumulate_with(
    series: &[(f64, FluxDiagnostics)],
    width_km: f64,
    glacier_count: u32,
    rule: Rule,
) -> Result<SlrSeries> {
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidParameter("flux series must be strictly time-ordered".into()));
    }
    volume_rate(0.0, 0.0, width_km)?;
    let mut rows = Vec::with_capacity(series.len());
    let mut vcum = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for &(t, f) in series {
        let rate = -volume_rate(f.interior_flux, f.grounding_flux, width_km)?;
        let dv = match prev {
            None => 0.0,
            Some((t_prev, rate_prev)) => match rule {
                Rule::LeftRectangle => rate_prev * (t - t_prev),
                Rule::Trapezoid => 0.5 * (rate_prev + rate) * (t - t_prev),
            },
        };
        vcum += dv;
        rows.push(SlrRow {
            t,
            interior_flux: f.interior_flux,
            grounding_flux: f.grounding_flux,
            dv_km3: dv,
            vcum_km3: vcum,
            slr_mm: to_sea_level_mm(vcum) * glacier_count as f64,
        });
        prev = Some((t, rate));
    }
    Ok(SlrSeries {
        rows,
        width_km,
        glacier_count,
    })
}

/// Final sea-level contribution of `glacier_count` identical glaciers.
pub fn regional_estimate(series: &SlrSeries, glacier_count: u32) -> f64 {
    to_sea_level_mm(series.final_volume_km3()) * glacier_count as f64
}

/// Fluxes along the analysis-mean trajectory of a run, evaluated with the
/// parameters of the model that produced it.
pub fn record_fluxes(record: &RunRecord) -> Result<Vec<(f64, FluxDiagnostics)>> {
    record
        .rows
        .iter()
        .map(|r| Ok((r.t, model::flux_diagnostics(&r.analysis, &record.filter_params)?)))
        .collect()
}

pub fn width_study(series: &[(f64, FluxDiagnostics)], widths_km: &[f64]) -> Result<Vec<SlrSeries>> {
    widths_km.iter().map(|&w| accumulate(series, w, 1)).collect()
}
