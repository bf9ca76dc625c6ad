mod common;

use glacier_da::experiments;
use glacier_da::model::{self, GlacierState, ModelParams};
use proptest::prelude::*;

fn params(h_o: f64, l_o: f64, b_x: f64, sill_min: f64, width: f64, sill_slope: f64) -> ModelParams {
    ModelParams::uncalibrated([0.3, 0.15, 0.0], h_o, l_o, b_x, sill_min, sill_min + width, sill_slope)
}

proptest! {
    #[test]
    fn bed_is_continuous_everywhere(
        b_x in -0.01f64..-1e-4,
        sill_min in 300.0f64..500.0,
        width in 1.0f64..50.0,
        sill_slope in -0.02f64..0.02,
        x_km in 0.0f64..800.0,
    ) {
        let p = params(2.0, 4.0, b_x, sill_min, width, sill_slope);
        let x = x_km * 1e3;
        let eps = 1e-3;
        let jump = (model::bed_elevation(x + eps, &p) - model::bed_elevation(x - eps, &p)).abs();
        prop_assert!(jump <= 2.0 * eps * b_x.abs().max(sill_slope.abs()) + 1e-9);
    }

    #[test]
    fn calibration_makes_any_marine_start_stationary(
        h_o in 1.5f64..3.0,
        l_o in 3.5f64..5.0,
        b_x in -0.003f64..-5e-4,
    ) {
        let p = model::calibrate_constants(&params(h_o, l_o, b_x, 415.0, 10.0, 0.01)).unwrap();
        let s = p.initial_state();
        let (d, f) = model::tendency(0.0, &s, &p).unwrap();
        prop_assert!((f.interior_flux - f.grounding_flux).abs() <= 1e-9 * f.grounding_flux);
        prop_assert!(d.d_thickness.abs() <= 1e-12 * s.thickness);
        prop_assert!(d.d_length.abs() <= 1e-12 * s.length);
    }

    #[test]
    fn display_units_round_trip(h in 1.0f64..5000.0, l in 1.0f64..1e6) {
        let s = GlacierState::new(h, l);
        let (hd, ld) = s.to_display();
        let back = GlacierState::from_display(hd, ld);
        prop_assert!((back.thickness - h).abs() <= 1e-12 * h);
        prop_assert!((back.length - l).abs() <= 1e-12 * l);
    }

    #[test]
    fn forcing_stays_between_breakpoints(t in -100.0f64..2500.0) {
        let p = ModelParams::true_column();
        let smb = model::smb_forcing(t, &p);
        prop_assert!((p.smb_f..=p.smb_o).contains(&smb));
    }
}

#[test]
fn rk4_is_fourth_order_on_truth() {
    let p = ModelParams::true_column();
    let s0 = p.initial_state();
    let end = |dt: f64| model::advance(0.0, 2300.0, s0, &p, dt).unwrap();
    let (a, b, c) = (end(2.0), end(1.0), end(0.5));
    let oh = common::convergence_order(a.thickness, b.thickness, c.thickness);
    let ol = common::convergence_order(a.length, b.length, c.length);
    assert!(oh >= 3.8 && ol >= 3.8, "orders {oh} {ol}");
}

#[test]
fn time_shift_of_constant_forcing_is_irrelevant() {
    let mut p = ModelParams::true_column();
    p.smb_1 = p.smb_o;
    p.smb_f = p.smb_o;
    let mut s = p.initial_state();
    s.thickness *= 0.95;
    let a = model::advance(0.0, 50.0, s, &p, 0.1).unwrap();
    let b = model::advance(100.0, 150.0, s, &p, 0.1).unwrap();
    assert!((a.thickness - b.thickness).abs() < 1e-9 * a.thickness);
    assert!((a.length - b.length).abs() < 1e-9 * a.length);
}

#[test]
fn perturbed_state_relaxes_toward_equilibrium() {
    let mut p = ModelParams::true_column();
    p.smb_1 = p.smb_o;
    p.smb_f = p.smb_o;
    let eq = p.initial_state();
    let s = GlacierState::new(eq.thickness * 1.01, eq.length);
    let later = model::advance(0.0, 2000.0, s, &p, 0.1).unwrap();
    assert!((later.thickness - eq.thickness).abs() < (s.thickness - eq.thickness).abs());
}

#[test]
fn truth_declines_faster_after_mid_year() {
    let p = ModelParams::true_column();
    let truth = glacier_da::osse::make_truth(&p, glacier_da::osse::Window::new(0.0, 2300.0), 0.1, 1.0).unwrap();
    let before = experiments::mean_thickness_slope(&truth, 0.0, 1950.0).unwrap();
    let after = experiments::mean_thickness_slope(&truth, 1950.0, 2300.0).unwrap();
    assert!(truth.states.last().unwrap().thickness < truth.states[0].thickness);
    assert!(after < before, "slopes {before} {after}");
}

#[test]
fn equilibrium_holds_for_five_centuries() {
    let drift = experiments::equilibrium_drift(&ModelParams::true_column(), 500.0, 0.1).unwrap();
    assert!(drift[0] < 1e-6 && drift[1] < 1e-6, "{drift:?}");
}
