mod common;

use common::{config_path, mc_aperture_fraction, mc_rect_fraction};
use cryoscan_core::config::SystemConfig;
use cryoscan_core::device::{
    background_power, delta_s21, masked_power, s21_magnitude, thermal_relax, BackgroundModel, DeviceState, Hole,
    MaskPattern, MkidParams, Rect,
};
use cryoscan_core::optics::BeamSpot;
use cryoscan_core::scan::{execute, ExecOptions};
use cryoscan_core::vector::Vec2;
use cryoscan_core::VoltageCoord;
use proptest::prelude::*;

fn active() -> Rect<f64> {
    Rect::new(Vec2::new(-15.0, -15.0), Vec2::new(15.0, 15.0)).unwrap()
}

fn spot(x: f64, y: f64, a: f64, b: f64, theta: f64) -> BeamSpot<f64> {
    BeamSpot {
        center: Vec2::new(x, y),
        sigma_major_um: a,
        sigma_minor_um: b,
        orientation: theta,
        total_power: 1.0,
        wavelength_nm: 950.0,
    }
}

proptest! {
    #[test]
    fn s21_stays_in_unit_interval(df in -9.0f64..9.0, load in 0.0f64..1e-8) {
        let p = MkidParams::<f64>::default();
        let f = p.f0_hz + df * p.linewidth_hz();
        let s = s21_magnitude(f, &p, load).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn delta_is_monotone(a in 0.0f64..5e-9, b in 0.0f64..5e-9) {
        let p = MkidParams::<f64>::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(delta_s21(&p, hi).unwrap() >= delta_s21(&p, lo).unwrap());
        prop_assert!(delta_s21(&p, lo).unwrap() >= 0.0);
    }

    #[test]
    fn relaxation_is_a_semigroup(a in 0.0f64..30.0, b in 0.0f64..30.0, load in 0.0f64..1e-8) {
        let p = MkidParams::<f64>::default();
        let s = DeviceState { absorbed_power: load, time: 0.0, baseline_s21: 0.4 };
        let two = thermal_relax(&thermal_relax(&s, a, &p), b, &p);
        let one = thermal_relax(&s, a + b, &p);
        prop_assert!((two.absorbed_power - one.absorbed_power).abs() <= 1e-9 * load.max(1e-30));
        prop_assert!((two.time - one.time).abs() <= 1e-9);
    }

    #[test]
    fn masked_power_conserves_energy(
        x in -16.0f64..16.0, y in -16.0f64..16.0, a in 10.0f64..80.0, ratio in 0.3f64..1.0, theta in 0.0f64..3.2
    ) {
        let s = spot(x, y, a, a * ratio, theta);
        let holes = vec![
            Hole { center: Vec2::new(0.0, 0.0), radius: 0.3 },
            Hole { center: Vec2::new(5.0, -3.0), radius: 0.05 },
        ];
        let masks = [MaskPattern::open(active()), MaskPattern::screen(holes, active()).unwrap()];
        for m in &masks {
            let (t, b) = masked_power(&s, m);
            prop_assert!(t >= 0.0 && b >= -1e-12);
            prop_assert!(((t + b) - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn resonance_closed_form() {
    let p = MkidParams::<f64>::default();
    let depth = 1.0 - p.loaded_q() / p.qc;
    assert!((s21_magnitude(p.f0_hz, &p, 0.0).unwrap() - depth).abs() < 1e-15);
    let edge = p.f0_hz + 9.999 * p.linewidth_hz();
    assert!(s21_magnitude(edge, &p, 0.0).unwrap() > 0.99);
    assert!(s21_magnitude(p.f0_hz + 11.0 * p.linewidth_hz(), &p, 0.0).is_err());
    assert!(s21_magnitude(p.f0_hz, &p, 1e-10).unwrap() > depth);
    assert_eq!(delta_s21(&p, 0.0).unwrap(), 0.0);
    assert!(delta_s21(&p, -1.0).is_err());
}

#[test]
fn response_grows_across_a_responsivity_sweep() {
    for k in 1..=10 {
        let p = MkidParams {
            freq_responsivity_hz_per_w: -2.0e12 * k as f64,
            ..MkidParams::default()
        };
        let mut last = 0.0;
        for i in 1..=20 {
            let d = delta_s21(&p, i as f64 * 1e-10).unwrap();
            assert!(d > last);
            last = d;
        }
    }
}

#[test]
fn relaxation_examples() {
    let p = MkidParams::<f64>::default();
    let s = DeviceState { absorbed_power: 1.0, time: 0.0, baseline_s21: 0.4 };
    assert_eq!(thermal_relax(&s, 0.0, &p), s);
    assert!((thermal_relax(&s, 20.0, &p).absorbed_power - (-5.0f64).exp()).abs() < 1e-15);
    assert!(thermal_relax(&s, 20.0, &p).absorbed_power < 0.01);
}

#[test]
fn background_examples() {
    let v = VoltageCoord::new(0.2, -0.4).unwrap();
    assert_eq!(background_power(1e-6, &v, &BackgroundModel::default()).unwrap(), 0.0);
    let bg = BackgroundModel { coupling: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], scale: 0.01 };
    assert!((background_power(1e-6, &v, &bg).unwrap() - 1e-8).abs() < 1e-20);
    assert!(background_power(-1.0, &v, &bg).is_err());
}

#[test]
fn masked_power_matches_monte_carlo_on_boundaries() {
    let holes = vec![Hole { center: Vec2::new(2.0, 2.0), radius: 0.3 }];
    let screen = MaskPattern::screen(holes, active()).unwrap();
    let cases = [
        spot(2.3, 2.0, 42.5, 42.5, 0.0),
        spot(2.0, 2.31, 60.0, 20.0, 1.1),
        spot(2.2, 2.2, 42.5, 30.0, 0.4),
        spot(1.7, 2.0, 20.0, 20.0, 0.0),
    ];
    for (k, s) in cases.iter().enumerate() {
        let (t, _) = masked_power(s, &screen);
        let mc = mc_aperture_fraction(s, (2.0, 2.0), 0.3, 500, k as u64);
        assert!((t - mc).abs() < 1e-3, "case {k}: {t} vs {mc}");
    }
    // Open plate: spot straddling the active-region corner.
    let open = MaskPattern::open(Rect::new(Vec2::new(11.0, 8.0), Vec2::new(16.0, 12.0)).unwrap());
    let s = spot(11.02, 8.01, 50.0, 25.0, 0.6);
    let (t, _) = masked_power(&s, &open);
    let mc = mc_rect_fraction(&s, (11.0, 8.0), (16.0, 12.0), 500, 3);
    assert!((t - mc).abs() < 1e-3, "{t} vs {mc}");
}

#[test]
fn far_from_every_hole_nothing_passes() {
    let holes = vec![Hole { center: Vec2::new(0.0, 0.0), radius: 0.3 }];
    let screen = MaskPattern::screen(holes, active()).unwrap();
    // 10σ from the rim.
    let (t, b) = masked_power(&spot(0.3 + 0.425, 0.0, 42.5, 42.5, 0.0), &screen);
    assert!(t < 1e-10 && (b - 1.0).abs() < 1e-10);
}

#[test]
fn mask_validation() {
    let h = |x: f64, r: f64| Hole { center: Vec2::new(x, 0.0), radius: r };
    assert!(MaskPattern::screen(vec![], active()).is_err());
    assert!(MaskPattern::screen(vec![h(0.0, 0.5), h(0.8, 0.5)], active()).is_err());
    assert!(MaskPattern::screen(vec![h(14.9, 0.5)], active()).is_err());
    assert!(MaskPattern::screen(vec![h(0.0, -0.1)], active()).is_err());
}

#[test]
fn open_plate_response_ordering() {
    let (cfg, plan) = SystemConfig::load(config_path()).unwrap().preset("open-plate").unwrap();
    let d = |x: f64, y: f64| {
        let il = cfg
            .params
            .illumination(&VoltageCoord::new(x, y).unwrap(), plan.source.wavelength_nm, plan.source.power_w)
            .unwrap();
        delta_s21(&cfg.params.mkid, il.absorbed_w).unwrap()
    };
    let (a, b, c) = (d(0.9, 0.65), d(0.3, 0.3), d(0.25, 0.15));
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn screen_plate_hole_signal_dominates_background() {
    let (cfg, plan) = SystemConfig::load(config_path()).unwrap().preset("fig5-screenplate").unwrap();
    let map = execute(&plan, &mut cfg.twin().unwrap(), &ExecOptions::default()).unwrap();
    let (mut hole, mut off) = (f64::INFINITY, 0.0f64);
    for s in &map.samples {
        let il = cfg.params.illumination(&s.v, plan.source.wavelength_nm, plan.source.power_w).unwrap();
        if il.through_w > 0.99 * plan.source.power_w {
            hole = hole.min(s.delta);
        } else if il.through_w < 1e-6 * plan.source.power_w {
            off = off.max(s.delta.abs());
        }
    }
    assert!(hole.is_finite() && hole > 10.0 * off, "hole {hole} vs off {off}");
}
