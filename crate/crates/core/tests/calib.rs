mod common;

use common::{config_path, oracle_trace};
use cryoscan_core::calib::image::{render_gaussian, GaussianFrame, IntensityImage};
use cryoscan_core::calib::{
    detect_holes, distortion_metrics, fit_mapping, fit_spot, invert_mapping, Blob, FitOptions, MappingModel,
};
use cryoscan_core::config::SystemConfig;
use cryoscan_core::device::{Hole, MaskPattern};
use cryoscan_core::optics::{spot_profile, SpotModelConfig};
use cryoscan_core::scan::{execute, plan_grid, ExecOptions, ResponseMap, SourceSetting, Timing};
use cryoscan_core::steering::coord_to_tilt;
use cryoscan_core::twin::Twin;
use cryoscan_core::vector::Vec2;
use cryoscan_core::{Error, VoltageCoord};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn frame(sa: f64, sb: f64, theta: f64) -> GaussianFrame {
    GaussianFrame {
        width: 128,
        height: 128,
        pitch_um: 5.0,
        cx: 63.3,
        cy: 64.6,
        sigma_major_um: sa,
        sigma_minor_um: sb,
        orientation: theta,
        amplitude: 30000.0,
        offset: 200.0,
    }
}

fn angle_diff(a: f64, b: f64) -> f64 {
    // Orientation is defined modulo π.
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

fn blob_at(vx: f64, vy: f64) -> Blob {
    Blob {
        centroid: VoltageCoord { vx, vy },
        weight: 1.0,
        second_moments: [1e-4, 0.0, 1e-4],
        pixels: 9,
    }
}

fn grid_model(kappa: [f64; 2]) -> MappingModel {
    MappingModel {
        affine: [15.2, 0.4, -0.3, 14.8],
        offset: [0.2, -0.1],
        kappa,
        residual_rms_mm: 0.0,
        provenance: String::new(),
    }
}

/// Voltage command that the oracle trace sends to `target` (linear chain).
fn oracle_command(cfg: &SystemConfig, target: Vec2<f64>) -> VoltageCoord {
    let p = &cfg.params;
    let f = |v: &VoltageCoord| {
        let (x, y) = oracle_trace(&coord_to_tilt(v, &p.electrical), &p.layout);
        (x - target.x, y - target.y)
    };
    let mut v = VoltageCoord { vx: target.x / 15.0, vy: target.y / 15.0 };
    for _ in 0..20 {
        let (r0x, r0y) = f(&v);
        let h = 1e-7;
        let (ax, ay) = f(&VoltageCoord { vx: v.vx + h, vy: v.vy });
        let (bx, by) = f(&VoltageCoord { vx: v.vx, vy: v.vy + h });
        let (j11, j21, j12, j22) = ((ax - r0x) / h, (ay - r0y) / h, (bx - r0x) / h, (by - r0y) / h);
        let det = j11 * j22 - j12 * j21;
        v.vx -= (j22 * r0x - j12 * r0y) / det;
        v.vy -= (-j21 * r0x + j11 * r0y) / det;
    }
    v
}

fn run(name: &str) -> (SystemConfig, ResponseMap) {
    let (cfg, plan) = SystemConfig::load(config_path()).unwrap().preset(name).unwrap();
    let map = execute(&plan, &mut cfg.twin().unwrap(), &ExecOptions::default()).unwrap();
    (cfg, map)
}

#[test]
fn exact_circular_spot_gives_four_sigma() {
    let fit = fit_spot(&render_gaussian(&frame(42.5, 42.5, 0.0), |_| 0.0)).unwrap();
    assert!((fit.diameter_major_um - 170.0).abs() < 0.85, "{fit:?}");
    assert!((fit.diameter_minor_um - 170.0).abs() < 0.85, "{fit:?}");
}

#[test]
fn rotated_ellipse_round_trip() {
    let theta = 30f64.to_radians();
    let fit = fit_spot(&render_gaussian(&frame(50.0, 25.0, theta), |_| 0.0)).unwrap();
    assert!((fit.spot.sigma_major_um / 50.0 - 1.0).abs() < 0.02, "{fit:?}");
    assert!((fit.spot.sigma_minor_um / 25.0 - 1.0).abs() < 0.02, "{fit:?}");
    assert!(angle_diff(fit.spot.orientation, theta) < 2f64.to_radians(), "{fit:?}");
}

#[test]
fn broadband_spot_is_about_170_um() {
    let spot = spot_profile(Vec2::new(0.0, 0.0), 950.0, &SpotModelConfig::default(), 1.0).unwrap();
    let img = render_gaussian(&frame(spot.sigma_major_um, spot.sigma_minor_um, spot.orientation), |_| 0.0);
    let fit = fit_spot(&img).unwrap();
    assert!((fit.diameter_major_um - 170.0).abs() < 0.85);
}

#[test]
fn spot_fit_rejects_flat_and_clipped_frames() {
    let flat = IntensityImage::new(32, 32, 5.0, vec![100.0; 32 * 32]).unwrap();
    assert!(fit_spot(&flat).is_err());
    let mut clipped = render_gaussian(&frame(42.5, 42.5, 0.0), |_| 0.0);
    let peak = clipped.values.iter().cloned().fold(0.0, f64::max);
    let cap = peak * 0.6;
    for v in &mut clipped.values {
        *v = v.min(cap);
    }
    clipped.saturation_level = Some(cap);
    assert!(fit_spot(&clipped).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spot_fit_ignores_intensity_scale(c in 0.01f64..50.0, theta in 0.0f64..3.1) {
        let img = render_gaussian(&frame(48.0, 30.0, theta), |_| 0.0);
        let mut scaled = img.clone();
        for v in &mut scaled.values {
            *v *= c;
        }
        let (a, b) = (fit_spot(&img).unwrap(), fit_spot(&scaled).unwrap());
        prop_assert!((a.diameter_major_um - b.diameter_major_um).abs() < 1e-6 * a.diameter_major_um);
        prop_assert!((a.diameter_minor_um - b.diameter_minor_um).abs() < 1e-6 * a.diameter_minor_um);
        prop_assert!(angle_diff(a.spot.orientation, b.spot.orientation) < 1e-6);
        prop_assert!(a.spot.center.distance(b.spot.center) < 1e-9);
    }

    #[test]
    fn invert_round_trip(vx in -1.0f64..=1.0, vy in -1.0f64..=1.0, kx in 0.0f64..4.0, ky in 0.0f64..4.0) {
        let m = grid_model([kx, ky]);
        let v = VoltageCoord::new(vx, vy).unwrap();
        let back = invert_mapping(&m, m.predict(&v)).unwrap();
        prop_assert!((back.vx - vx).abs() < 1e-6 && (back.vy - vy).abs() < 1e-6, "{:?} vs {:?}", back, v);
    }
}

#[test]
fn invert_examples() {
    let m = grid_model([2.0, 3.0]);
    let v = invert_mapping(&m, m.predict(&VoltageCoord::origin())).unwrap();
    assert!(v.vx.abs() < 1e-9 && v.vy.abs() < 1e-9);

    let lin = grid_model([0.0, 0.0]);
    let t = Vec2::new(3.0, -4.0);
    let [a, b, c, d] = lin.affine;
    let (rx, ry) = (t.x - lin.offset[0], t.y - lin.offset[1]);
    let det = a * d - b * c;
    let expect = ((d * rx - b * ry) / det, (-c * rx + a * ry) / det);
    let got = invert_mapping(&lin, t).unwrap();
    assert!((got.vx - expect.0).abs() < 1e-12 && (got.vy - expect.1).abs() < 1e-12);

    match invert_mapping(&m, Vec2::new(100.0, 0.0)) {
        Err(Error::Unreachable { nearest_x_mm, .. }) => assert!(nearest_x_mm < 20.0),
        other => panic!("expected unreachable, got {other:?}"),
    }
}

#[test]
fn single_hole_map_has_one_blob() {
    let (_, map) = run("fig5-linear");
    assert_eq!(detect_holes(&map, 0.5).unwrap().len(), 1);
}

#[test]
fn zero_map_has_no_blobs() {
    let plan = plan_grid([0.0, 1.0], [0.0, 1.0], 5, 5, Timing::default(), SourceSetting { wavelength_nm: 950.0, power_w: 0.0 }).unwrap();
    let (cfg, _) = SystemConfig::load(config_path()).unwrap().preset("fig5-linear").unwrap();
    let mut map = execute(&plan, &mut cfg.twin().unwrap(), &ExecOptions::default()).unwrap();
    for s in &mut map.samples {
        s.delta = 0.0;
    }
    assert!(detect_holes(&map, 0.5).unwrap().is_empty());
}

#[test]
fn two_holes_two_blobs_at_their_traced_commands() {
    let (mut cfg, _) = SystemConfig::load(config_path()).unwrap().preset("fig5-linear").unwrap();
    let holes = [Vec2::new(-6.0, -4.0), Vec2::new(6.0, 5.0)];
    cfg.params.mask = MaskPattern::screen(
        holes.iter().map(|&c| Hole { center: c, radius: 1.5 }).collect(),
        cfg.params.mask.active,
    )
    .unwrap();
    let plan = plan_grid([-1.0, 1.0], [-1.0, 1.0], 41, 41, Timing::default(), SourceSetting { wavelength_nm: 950.0, power_w: 1e-9 }).unwrap();
    let mut twin = Twin::new(cfg.params.clone(), 5).unwrap();
    let map = execute(&plan, &mut twin, &ExecOptions::default()).unwrap();
    let blobs = detect_holes(&map, 0.5).unwrap();
    assert_eq!(blobs.len(), 2);
    for h in holes {
        let want = oracle_command(&cfg, h);
        let best = blobs.iter().map(|b| b.centroid.distance(&want)).fold(f64::INFINITY, f64::min);
        assert!(best <= plan.step(), "hole {h:?}: nearest blob {best} from {want:?}");
    }
}

#[test]
fn offset_does_not_change_blobs() {
    let (_, map) = run("fig5-linear");
    let mut shifted = map.clone();
    for s in &mut shifted.samples {
        s.delta += 0.37;
    }
    let (a, b) = (detect_holes(&map, 0.5).unwrap(), detect_holes(&shifted, 0.5).unwrap());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.pixels, y.pixels);
        assert!(x.centroid.distance(&y.centroid) < 1e-12);
        assert!((x.weight - y.weight).abs() < 1e-9 * x.weight);
        for (p, q) in x.second_moments.iter().zip(&y.second_moments) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn distortion_linear_versus_saturating() {
    let (_, lin) = run("fig5-linear");
    let (_, sat) = run("fig5-screenplate");
    let e_lin = distortion_metrics(&detect_holes(&lin, 0.5).unwrap()[0]).unwrap();
    let e_sat = distortion_metrics(&detect_holes(&sat, 0.5).unwrap()[0]).unwrap();
    assert!(e_lin.eccentricity < 0.2, "{e_lin:?}");
    assert!(e_sat.eccentricity > 0.5, "{e_sat:?}");
    // The hole sits towards +x, where the x axis is compressed: elongated along vx.
    assert!(e_sat.elongation_axis.abs() < 30f64.to_radians(), "{e_sat:?}");
}

#[test]
fn disc_raster_is_round() {
    let blob = Blob { centroid: VoltageCoord::origin(), weight: 1.0, second_moments: [2e-3, 0.0, 2e-3], pixels: 40 };
    assert!(distortion_metrics(&blob).unwrap().eccentricity < 1e-12);
    let single = Blob { pixels: 1, ..blob };
    assert!(matches!(distortion_metrics(&single), Err(Error::UndefinedMoments)));
}

#[test]
fn pure_affine_data_is_recovered() {
    let m = grid_model([0.0, 0.0]);
    let mut blobs = Vec::new();
    let mut holes = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            let v = VoltageCoord::new(-0.5 + 0.5 * i as f64, -0.4 + 0.45 * j as f64).unwrap();
            blobs.push(blob_at(v.vx, v.vy));
            holes.push(m.predict(&v));
        }
    }
    let fit = fit_mapping(&blobs, &holes, &FitOptions { fit_kappa: false, ..FitOptions::default() }).unwrap();
    for (a, b) in fit.model.affine.iter().zip(&m.affine) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(fit.model.residual_rms_mm < 1e-9);

    let line: Vec<_> = (0..4).map(|i| blob_at(0.2 * i as f64, 0.2 * i as f64)).collect();
    let line_holes: Vec<_> = (0..4).map(|i| Vec2::new(3.0 * i as f64, 3.0 * i as f64)).collect();
    assert!(fit_mapping(&line, &line_holes, &FitOptions::default()).is_err());
}

#[test]
fn saturating_three_by_three_recovers_kappa() {
    let (cfg, map) = run("screen-3x3");
    let blobs = detect_holes(&map, 0.5).unwrap();
    let holes: Vec<_> = cfg.params.mask.holes.iter().map(|h| h.center).collect();
    let fit = fit_mapping(&blobs, &holes, &FitOptions::default()).unwrap();
    assert_eq!(fit.matches.len(), 9);
    for k in fit.model.kappa {
        assert!((k / 3.0 - 1.0).abs() < 0.1, "{:?}", fit.model);
    }
    assert!(fit.model.residual_rms_mm < 0.1);
}

#[test]
fn residual_vanishes_with_noise() {
    let truth = grid_model([1.0, 2.0]);
    let mut v = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            v.push(VoltageCoord::new(-0.8 + 0.4 * i as f64, -0.8 + 0.4 * j as f64).unwrap());
        }
    }
    let blobs: Vec<_> = v.iter().map(|p| blob_at(p.vx, p.vy)).collect();
    let residual = |sigma: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let holes: Vec<_> = v
            .iter()
            .map(|p| {
                let q = truth.predict(p);
                let (nx, ny): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                Vec2::new(q.x + sigma * nx, q.y + sigma * ny)
            })
            .collect();
        fit_mapping(&blobs, &holes, &FitOptions::default()).unwrap().model.residual_rms_mm
    };
    let (r0, r1, r2) = (residual(0.0), residual(0.01), residual(0.05));
    assert!(r0 < 1e-6, "{r0}");
    assert!(r0 < r1 && r1 < r2, "{r0} {r1} {r2}");
}
