use cryoscan_core::steering::{
    coord_to_tilt, drive_to_normalized, normalized_to_drive, power_report, saturation, saturation_inverse,
    ElectricalConfig, VoltageCoord,
};
use cryoscan_core::DriveVoltages;
use proptest::prelude::*;

fn at_pf(cable_pf: f64) -> ElectricalConfig<f64> {
    ElectricalConfig {
        cable_capacitance: cable_pf * 1e-12,
        ..ElectricalConfig::default()
    }
}

fn unit() -> impl Strategy<Value = f64> {
    -1.0f64..=1.0
}

proptest! {
    #[test]
    fn drive_round_trip(vx in unit(), vy in unit()) {
        let c = ElectricalConfig::default();
        let v = VoltageCoord::new(vx, vy).unwrap();
        let d = normalized_to_drive(&v, &c).unwrap();
        let back = drive_to_normalized(&d, &c);
        prop_assert!((back.vx - vx).abs() <= 1e-12 && (back.vy - vy).abs() <= 1e-12);
        let [xp, xm, yp, ym] = d.channels();
        prop_assert!((xp + xm - 180.0).abs() < 1e-9 && (yp + ym - 180.0).abs() < 1e-9);
        prop_assert!(d.channels().iter().all(|&u| (0.0..=180.0).contains(&u)));
    }

    #[test]
    fn tilt_is_odd_monotone_and_bounded(a in unit(), b in unit(), pf in 0.0f64..200.0) {
        let c = at_pf(pf);
        let tilt = |x: f64| coord_to_tilt(&VoltageCoord::new(x, x).unwrap(), &c);
        let (ta, tb) = (tilt(a), tilt(b));
        prop_assert!((tilt(-a).tilt_x + ta.tilt_x).abs() <= 1e-15);
        prop_assert!((tilt(-a).tilt_y + ta.tilt_y).abs() <= 1e-15);
        if a < b {
            prop_assert!(ta.tilt_x <= tb.tilt_x && ta.tilt_y <= tb.tilt_y);
        }
        prop_assert!(ta.tilt_x.abs() <= c.theta_max[0] * (1.0 + 1e-15));
        prop_assert!(ta.tilt_y.abs() <= c.theta_max[1] * (1.0 + 1e-15));
    }

    #[test]
    fn within_budget_the_chain_is_linear(a in unit(), pf in 0.0f64..=30.0) {
        let c = at_pf(pf);
        let t = coord_to_tilt(&VoltageCoord::new(a, -a).unwrap(), &c);
        prop_assert!((t.tilt_x - a * c.theta_max[0]).abs() <= 1e-12);
        prop_assert!((t.tilt_y + a * c.theta_max[1]).abs() <= 1e-12);
    }

    #[test]
    fn saturation_inverts(g in unit(), k in 0.0f64..6.0) {
        let v = saturation_inverse(g, k);
        prop_assert!((saturation(v, k) - g).abs() <= 1e-10);
    }

    #[test]
    fn energy_never_decreases(targets in prop::collection::vec((unit(), unit(), 0.01f64..2.0), 1..30)) {
        let c = ElectricalConfig::default();
        let mut s = cryoscan_core::MirrorState::new(&c);
        let mut last = 0.0;
        for (vx, vy, dt) in targets {
            s.step(&VoltageCoord::new(vx, vy).unwrap(), dt, &c, false).unwrap();
            prop_assert!(s.energy_dissipated >= last);
            last = s.energy_dissipated;
        }
    }
}

#[test]
fn drive_and_tilt_examples() {
    let c = ElectricalConfig::default();
    let d = normalized_to_drive(&VoltageCoord::new(1.0, 0.0).unwrap(), &c).unwrap();
    assert_eq!(d.channels(), [180.0, 0.0, 90.0, 90.0]);
    assert!(normalized_to_drive(&VoltageCoord { vx: 1.2, vy: 0.0 }, &c).is_err());
    assert!(VoltageCoord::new(1.2, 0.0).is_err());

    // 90 pF cable: excess ratio 3, κ = 3.
    let c = at_pf(90.0);
    assert!((c.kappa()[0] - 3.0).abs() < 1e-12);
    let t = coord_to_tilt(&VoltageCoord::new(0.5, 0.0).unwrap(), &c);
    let expect = c.theta_max[0] * (1.5f64).tanh() / 3f64.tanh();
    assert!((t.tilt_x - expect).abs() < 1e-15);
}

#[test]
fn idle_energy_is_exact() {
    let c = ElectricalConfig::default();
    let mut s = cryoscan_core::MirrorState::new(&c);
    let v = VoltageCoord::origin();
    for _ in 0..7 {
        s.step(&v, 0.5, &c, false).unwrap();
    }
    let expected = (0..7).fold(0.0, |acc, _| acc + 0.5 * c.resting_power);
    assert_eq!(s.energy_dissipated, expected);
    assert!((power_report(&s, 3.5).unwrap() - 0.99e-6).abs() < 1e-18);
}

#[test]
fn same_commands_same_energy() {
    let run = || {
        let c = ElectricalConfig::default();
        let mut s = cryoscan_core::MirrorState::new(&c);
        for k in 0..50 {
            let x = ((k * 37) % 21) as f64 / 10.0 - 1.0;
            s.step(&VoltageCoord::new(x, -x * 0.5).unwrap(), 0.1, &c, false).unwrap();
        }
        (s.energy_dissipated.to_bits(), s.clock.to_bits())
    };
    assert_eq!(run(), run());
}

#[test]
fn raw_channel_drive_switching_energy() {
    let c = ElectricalConfig::default();
    let mut s = cryoscan_core::MirrorState::new(&c);
    let hi = DriveVoltages::new(180.0, 90.0, 90.0, 90.0, 180.0).unwrap();
    s.step_channels(hi, 1.0, &c).unwrap();
    // ½ · 20 pF · (90 V)².
    let expected = 0.5 * 20e-12 * 90.0 * 90.0 + c.resting_power;
    assert!((s.energy_dissipated - expected).abs() < 1e-18);
    assert!(DriveVoltages::new(181.0, 0.0, 0.0, 0.0, 180.0).is_err());
}

#[test]
fn f32_instantiation() {
    let c = cryoscan_core::ElectricalConfigF32::default();
    let t = coord_to_tilt(&cryoscan_core::VoltageCoordF32::new(0.25, -1.0).unwrap(), &c);
    assert!((t.tilt_x - 0.25 * c.theta_max[0]).abs() < 1e-7);
    assert!((t.tilt_y + c.theta_max[1]).abs() < 1e-7);
}
