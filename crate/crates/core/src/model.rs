//! Two-stage marine-terminating glacier model.
//!
//! The state is the mean thickness `H` of the interior box and the length `L`
//! of the glacier (the grounding-line position). Both evolve under
//!
//! ```text
//! dH/dt = P - Qg/L - H/(hg L) (Q - Qg)
//! dL/dt = (Q - Qg) / hg
//! ```
//!
//! with flotation thickness `hg = -lambda b(L)`, interior flux
//! `Q = gamma H^(2n+1) / L^n` and grounding-line flux `Qg = omega hg^beta`.
//!
//! Everything inside this module runs in SI metres and years. [`ModelParams`]
//! keeps the table ("display") units for the initial state and sill
//! positions; the `*_m` accessors convert.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metres per display unit of thickness (km).
pub const H_DISPLAY_SCALE: f64 = 1.0e3;
/// Metres per display unit of length (100 km).
pub const L_DISPLAY_SCALE: f64 = 1.0e5;
/// Metres per km, used for sill positions.
pub const KM: f64 = 1.0e3;

/// Seawater over glacial ice density.
pub const DEFAULT_LAMBDA: f64 = 1028.0 / 917.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlacierState {
    /// Ice thickness, m.
    pub thickness: f64,
    /// Glacier length, m.
    pub length: f64,
}

impl GlacierState {
    pub fn new(thickness: f64, length: f64) -> Self {
        Self { thickness, length }
    }

    pub fn from_display(h: f64, l: f64) -> Self {
        Self::new(h * H_DISPLAY_SCALE, l * L_DISPLAY_SCALE)
    }

    /// `(H [km], L [100 km])`
    pub fn to_display(self) -> (f64, f64) {
        (
            self.thickness / H_DISPLAY_SCALE,
            self.length / L_DISPLAY_SCALE,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.thickness.is_finite()
            && self.length.is_finite()
            && self.thickness > 0.0
            && self.length > 0.0
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.thickness, self.length]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(x[0], x[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative {
    pub d_thickness: f64,
    pub d_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FluxDiagnostics {
    /// Grounding-line (flotation) thickness, m.
    pub grounding_thickness: f64,
    /// Interior flux, m²/yr.
    pub interior_flux: f64,
    /// Grounding-line flux, m²/yr.
    pub grounding_flux: f64,
}

/// Forcing, geometry and physical constants.
///
/// `h_o`, `l_o`, `sill_min` and `sill_max` are in table units (km, 100 km,
/// km, km). Slopes are dimensionless, `b0` is in metres, SMB in m/yr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub smb_o: f64,
    pub smb_1: f64,
    pub smb_f: f64,
    pub h_o: f64,
    pub l_o: f64,
    pub b_x: f64,
    pub sill_min: f64,
    pub sill_max: f64,
    pub sill_slope: f64,
    pub b0: f64,
    pub lambda: f64,
    pub n: f64,
    pub beta: f64,
    pub gamma: f64,
    pub omega: f64,
    pub t_mid: f64,
    pub t_end: f64,
}

impl ModelParams {
    /// Uncalibrated parameter set; `gamma` and `omega` are NaN until
    /// [`calibrate_constants`] runs.
    #[allow(clippy::too_many_arguments)]
    pub fn uncalibrated(
        smb: [f64; 3],
        h_o: f64,
        l_o: f64,
        b_x: f64,
        sill_min: f64,
        sill_max: f64,
        sill_slope: f64,
    ) -> Self {
        Self {
            smb_o: smb[0],
            smb_1: smb[1],
            smb_f: smb[2],
            h_o,
            l_o,
            b_x,
            sill_min,
            sill_max,
            sill_slope,
            b0: 0.0,
            lambda: DEFAULT_LAMBDA,
            n: 3.0,
            beta: 4.0,
            gamma: f64::NAN,
            omega: f64::NAN,
            t_mid: 1950.0,
            t_end: 2300.0,
        }
    }

    /// The parameter table used for the truth simulation, calibrated.
    pub fn true_column() -> Self {
        let p = Self::uncalibrated([0.3, 0.15, 0.0], 2.18, 4.44, -0.001, 415.0, 425.0, 0.01);
        calibrate_constants(&p).expect("default truth parameters are marine")
    }

    /// The perturbed "initial guess" parameters, calibrated on their own
    /// initial state.
    pub fn inaccurate_column() -> Self {
        let p = Self::uncalibrated([0.35, 0.15, 0.0], 2.3, 4.6, -0.001, 415.0, 425.0, 0.008);
        calibrate_constants(&p).expect("default inaccurate parameters are marine")
    }

    pub fn initial_state(&self) -> GlacierState {
        GlacierState::from_display(self.h_o, self.l_o)
    }

    pub fn sill_min_m(&self) -> f64 {
        self.sill_min * KM
    }

    pub fn sill_max_m(&self) -> f64 {
        self.sill_max * KM
    }

    /// Checks every parameter invariant except the calibrated constants,
    /// which [`validate`](Self::validate) also covers.
    pub fn validate_geometry(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        let all = [
            self.smb_o,
            self.smb_1,
            self.smb_f,
            self.h_o,
            self.l_o,
            self.b_x,
            self.sill_min,
            self.sill_max,
            self.sill_slope,
            self.b0,
            self.lambda,
            self.n,
            self.beta,
            self.t_mid,
            self.t_end,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.sill_min >= self.sill_max {
            return bad("sill_min < sill_max");
        }
        if self.b_x < 0.0 && self.sill_slope <= 0.0 {
            return bad("sill_slope > 0 while b_x < 0");
        }
        if self.lambda <= 1.0 {
            return bad("lambda > 1");
        }
        if self.n < 1.0 {
            return bad("n >= 1");
        }
        if self.beta < 1.0 {
            return bad("beta >= 1");
        }
        if self.smb_o < 0.0 || self.smb_1 < 0.0 || self.smb_f < 0.0 {
            return bad("smb values >= 0");
        }
        if self.h_o <= 0.0 || self.l_o <= 0.0 {
            return bad("H_o > 0 and L_o > 0");
        }
        if !(0.0 < self.t_mid && self.t_mid < self.t_end) {
            return bad("0 < t_mid < t_end");
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_geometry()?;
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidParameter("gamma > 0".into()));
        }
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::InvalidParameter("omega > 0".into()));
        }
        Ok(())
    }
}

/// `x^e`, using `powi` when the exponent is a small integer.
#[inline]
fn pow(x: f64, e: f64) -> f64 {
    if e == e.trunc() && e.abs() <= 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// Piecewise-linear bed: slope `b_x` up to the sill, `sill_slope` across it,
/// then `b_x` again. Positions are metres from the divide.
pub fn bed_elevation(x: f64, p: &ModelParams) -> f64 {
    let x_min = p.sill_min_m();
    let x_max = p.sill_max_m();
    if x <= x_min {
        return p.b0 + p.b_x * x;
    }
    let b_min = p.b0 + p.b_x * x_min;
    if x <= x_max {
        return b_min + p.sill_slope * (x - x_min);
    }
    let b_max = b_min + p.sill_slope * (x_max - x_min);
    b_max + p.b_x * (x - x_max)
}

pub fn grounding_thickness(length: f64, p: &ModelParams) -> Result<f64> {
    let bed = bed_elevation(length, p);
    let hg = -p.lambda * bed;
    if bed >= 0.0 || !(hg > 0.0) {
        return Err(Error::NonMarineBed { length, bed });
    }
    Ok(hg)
}

pub fn interior_flux(s: &GlacierState, p: &ModelParams) -> f64 {
    p.gamma * pow(s.thickness, 2.0 * p.n + 1.0) / pow(s.length, p.n)
}

pub fn grounding_flux(hg: f64, p: &ModelParams) -> f64 {
    p.omega * pow(hg, p.beta)
}

/// Surface mass balance, linear between `(0, smb_o)`, `(t_mid, smb_1)` and
/// `(t_end, smb_f)`; held constant outside `[0, t_end]`.
pub fn smb_forcing(t: f64, p: &ModelParams) -> f64 {
    if t <= 0.0 {
        p.smb_o
    } else if t <= p.t_mid {
        p.smb_o + (p.smb_1 - p.smb_o) * (t / p.t_mid)
    } else if t <= p.t_end {
        p.smb_1 + (p.smb_f - p.smb_1) * ((t - p.t_mid) / (p.t_end - p.t_mid))
    } else {
        p.smb_f
    }
}

pub fn flux_diagnostics(s: &GlacierState, p: &ModelParams) -> Result<FluxDiagnostics> {
    let hg = grounding_thickness(s.length, p)?;
    Ok(FluxDiagnostics {
        grounding_thickness: hg,
        interior_flux: interior_flux(s, p),
        grounding_flux: grounding_flux(hg, p),
    })
}

pub fn tendency(t: f64, s: &GlacierState, p: &ModelParams) -> Result<(Derivative, FluxDiagnostics)> {
    let diag = flux_diagnostics(s, p)?;
    let FluxDiagnostics {
        grounding_thickness: hg,
        interior_flux: q,
        grounding_flux: qg,
    } = diag;
    let smb = smb_forcing(t, p);
    let imbalance = q - qg;
    let d = Derivative {
        d_thickness: smb - qg / s.length - s.thickness / (hg * s.length) * imbalance,
        d_length: imbalance / hg,
    };
    Ok((d, diag))
}

fn check(t: f64, s: GlacierState) -> Result<GlacierState> {
    if s.is_valid() {
        Ok(s)
    } else {
        Err(Error::StateBlowup {
            t,
            thickness: s.thickness,
            length: s.length,
        })
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step(t: f64, s: &GlacierState, dt: f64, p: &ModelParams) -> Result<GlacierState> {
    let at = |s: GlacierState, k: &Derivative, h: f64| {
        GlacierState::new(s.thickness + h * k.d_thickness, s.length + h * k.d_length)
    };
    let half = 0.5 * dt;
    let (k1, _) = tendency(t, s, p)?;
    let (k2, _) = tendency(t + half, &check(t, at(*s, &k1, half))?, p)?;
    let (k3, _) = tendency(t + half, &check(t, at(*s, &k2, half))?, p)?;
    let (k4, _) = tendency(t + dt, &check(t, at(*s, &k3, dt))?, p)?;
    let sixth = dt / 6.0;
    let next = GlacierState::new(
        s.thickness
            + sixth * (k1.d_thickness + 2.0 * k2.d_thickness + 2.0 * k3.d_thickness + k4.d_thickness),
        s.length + sixth * (k1.d_length + 2.0 * k2.d_length + 2.0 * k3.d_length + k4.d_length),
    );
    check(t + dt, next)
}

/// Sets `gamma` and `omega` so that the initial state is an exact equilibrium
/// under the initial SMB.
pub fn calibrate_constants(p: &ModelParams) -> Result<ModelParams> {
    p.validate_geometry()?;
    let s0 = p.initial_state();
    let hg = grounding_thickness(s0.length, p)?;
    let p0 = p.smb_o;
    let mut out = p.clone();
    out.gamma = p0 * pow(s0.length, p.n + 1.0) / pow(s0.thickness, 2.0 * p.n + 1.0);
    out.omega = p0 * s0.length / pow(hg, p.beta);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePoint {
    pub t: f64,
    pub state: GlacierState,
    pub flux: FluxDiagnostics,
}

/// Fixed-step march from `t0` to `t1`. Step `i` starts at `t0 + i dt`; a final
/// partial step lands exactly on `t1`. `visit` sees every step end.
fn march(
    t0: f64,
    t1: f64,
    s0: GlacierState,
    p: &ModelParams,
    dt: f64,
    mut visit: impl FnMut(f64, &GlacierState) -> Result<()>,
) -> Result<GlacierState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("dt > 0".into()));
    }
    if t1 < t0 {
        return Err(Error::InvalidParameter("t1 >= t0".into()));
    }
    let span = t1 - t0;
    let ratio = span / dt;
    let mut full = ratio.round();
    if (ratio - full).abs() > 1e-9 * ratio.max(1.0) {
        full = ratio.floor();
    }
    let full = full as u64;
    let mut s = s0;
    let mut t = t0;
    for i in 0..full {
        let t_start = t0 + i as f64 * dt;
        let t_stop = if i + 1 == full && t0 + full as f64 * dt >= t1 - 1e-9 * dt {
            t1
        } else {
            t0 + (i + 1) as f64 * dt
        };
        s = rk4_step(t_start, &s, t_stop - t_start, p)?;
        t = t_stop;
        visit(t, &s)?;
    }
    if t < t1 {
        s = rk4_step(t, &s, t1 - t, p)?;
        visit(t1, &s)?;
    }
    Ok(s)
}

/// Integrates and records state and fluxes at `t0` and after every step.
pub fn integrate(
    t0: f64,
    t1: f64,
    s0: GlacierState,
    p: &ModelParams,
    dt: f64,
) -> Result<Vec<TimePoint>> {
    let mut out = vec![TimePoint {
        t: t0,
        state: s0,
        flux: flux_diagnostics(&s0, p)?,
    }];
    march(t0, t1, s0, p, dt, |t, s| {
        out.push(TimePoint {
            t,
            state: *s,
            flux: flux_diagnostics(s, p)?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Same arithmetic as [`integrate`] without recording.
pub fn advance(t0: f64, t1: f64, s0: GlacierState, p: &ModelParams, dt: f64) -> Result<GlacierState> {
    march(t0, t1, s0, p, dt, |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bed_params() -> ModelParams {
        let mut p = ModelParams::uncalibrated([0.3, 0.15, 0.0], 2.18, 4.44, -0.001, 415.0, 425.0, 0.01);
        p.gamma = 1.0;
        p.omega = 1.0;
        p
    }

    #[test]
    fn bed_segments() {
        let p = bed_params();
        assert_eq!(bed_elevation(0.0, &p), 0.0);
        assert_relative_eq!(bed_elevation(415e3, &p), -415.0, max_relative = 1e-14);
        assert_relative_eq!(bed_elevation(425e3, &p), -315.0, max_relative = 1e-14);
        assert_relative_eq!(bed_elevation(444e3, &p), -334.0, max_relative = 1e-14);
    }

    #[test]
    fn bed_is_continuous_at_sill_edges() {
        let p = bed_params();
        for x in [p.sill_min_m(), p.sill_max_m()] {
            let left = bed_elevation(x * (1.0 - 1e-15), &p);
            let right = bed_elevation(x * (1.0 + 1e-15), &p);
            assert!((left - right).abs() < 1e-9, "{left} vs {right}");
        }
    }

    #[test]
    fn grounding_thickness_cases() {
        let mut p = bed_params();
        p.lambda = 1.12;
        p.b0 = -1000.0;
        assert_relative_eq!(grounding_thickness(0.0, &p).unwrap(), 1120.0, max_relative = 1e-14);

        let p = bed_params();
        let hg = grounding_thickness(444e3, &p).unwrap();
        assert_relative_eq!(hg, 334.0 * DEFAULT_LAMBDA, max_relative = 1e-12);
        assert!((hg - 374.4).abs() < 0.05);

        let mut p = bed_params();
        p.b0 = 5.0;
        assert!(matches!(grounding_thickness(0.0, &p), Err(Error::NonMarineBed { .. })));
    }

    #[test]
    fn flux_laws() {
        let mut p = bed_params();
        p.n = 3.0;
        assert_eq!(interior_flux(&GlacierState::new(1.0, 1.0), &p), 1.0);
        p.gamma = 2.0;
        p.n = 1.0;
        assert_eq!(interior_flux(&GlacierState::new(2.0, 2.0), &p), 8.0);
        assert_eq!(interior_flux(&GlacierState::new(0.0, 2.0), &p), 0.0);

        p.omega = 1.0;
        assert_eq!(grounding_flux(1.0, &p), 1.0);
        p.omega = 0.5;
        p.beta = 4.0;
        assert_eq!(grounding_flux(2.0, &p), 8.0);
        p.omega = 3.0;
        p.beta = 4.75;
        assert_eq!(grounding_flux(1.0, &p), 3.0);
    }

    #[test]
    fn smb_breakpoints() {
        let p = bed_params();
        assert_eq!(smb_forcing(0.0, &p), 0.3);
        assert_eq!(smb_forcing(1950.0, &p), 0.15);
        assert_relative_eq!(smb_forcing(975.0, &p), 0.225, max_relative = 1e-14);
        assert_eq!(smb_forcing(2300.0, &p), 0.0);
    }

    #[test]
    fn balanced_fluxes_freeze_length() {
        let mut p = bed_params();
        p.b0 = -100.0;
        let s = GlacierState::new(1.0, 1.0);
        let hg = grounding_thickness(s.length, &p).unwrap();
        p.gamma = grounding_flux(hg, &p);
        let (d, f) = tendency(0.0, &s, &p).unwrap();
        assert_eq!(f.interior_flux, f.grounding_flux);
        assert_eq!(d.d_length, 0.0);
        assert_eq!(d.d_thickness, smb_forcing(0.0, &p) - f.grounding_flux / s.length);

        p.omega *= 0.5;
        let (d, f) = tendency(0.0, &s, &p).unwrap();
        assert!(f.interior_flux > f.grounding_flux);
        assert!(d.d_length > 0.0);
    }

    #[test]
    fn calibrated_truth_is_equilibrium() {
        let p = ModelParams::true_column();
        let (d, _) = tendency(0.0, &p.initial_state(), &p).unwrap();
        assert!(d.d_thickness.abs() < 1e-12, "{}", d.d_thickness);
        assert!(d.d_length.abs() < 1e-12 * p.initial_state().length);
        assert!(p.gamma.is_finite() && p.gamma > 0.0);
        assert!(p.omega.is_finite() && p.omega > 0.0);
    }

    #[test]
    fn calibration_unit_case() {
        let mut p = bed_params();
        p.smb_o = 1.0;
        p.h_o = 1.0 / H_DISPLAY_SCALE;
        p.l_o = 1.0 / L_DISPLAY_SCALE;
        p.b0 = -1.0;
        let c = calibrate_constants(&p).unwrap();
        assert_relative_eq!(c.gamma, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn steady_state_step_is_identity() {
        let mut p = ModelParams::true_column();
        p.smb_1 = p.smb_o;
        p.smb_f = p.smb_o;
        let s = p.initial_state();
        let next = rk4_step(0.0, &s, 0.1, &p).unwrap();
        assert_relative_eq!(next.thickness, s.thickness, max_relative = 1e-14);
        assert_relative_eq!(next.length, s.length, max_relative = 1e-14);
    }

    #[test]
    fn small_step_matches_tendency() {
        let p = ModelParams::true_column();
        let s = GlacierState::new(2100.0, 4.3e5);
        let (d, _) = tendency(1000.0, &s, &p).unwrap();
        let dt = 1e-4;
        let next = rk4_step(1000.0, &s, dt, &p).unwrap();
        assert_relative_eq!((next.thickness - s.thickness) / dt, d.d_thickness, max_relative = 1e-4);
        assert_relative_eq!((next.length - s.length) / dt, d.d_length, max_relative = 1e-4);
    }

    #[test]
    fn integrate_lands_on_endpoint() {
        let p = ModelParams::true_column();
        let s0 = p.initial_state();
        let single = integrate(5.0, 5.0, s0, &p, 0.1).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].state, s0);

        let series = integrate(0.0, 1.05, s0, &p, 0.1).unwrap();
        assert_eq!(series.len(), 12);
        assert_eq!(series.last().unwrap().t, 1.05);
        let end = advance(0.0, 1.05, s0, &p, 0.1).unwrap();
        assert_eq!(end, series.last().unwrap().state);
    }

    #[test]
    fn non_marine_bed_is_reported() {
        let mut p = ModelParams::true_column();
        p.b0 = 1000.0;
        assert!(matches!(
            calibrate_constants(&p),
            Err(Error::NonMarineBed { .. })
        ));
    }

    #[test]
    fn validation_rejects_inverted_sill() {
        let mut p = ModelParams::true_column();
        p.sill_min = 430.0;
        assert!(p.validate().is_err());
    }
}
