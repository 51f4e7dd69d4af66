//! The `cryoscan` command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cryoscan_core::calib::{detect_holes, fit_mapping, invert_mapping, load_pgm, FitOptions, MappingModel};
use cryoscan_core::config::{parse_hole_list, SystemConfig};
use cryoscan_core::mapfile::{load_map, save_map};
use cryoscan_core::scan::{execute, ExecOptions};
use cryoscan_core::Vec2;
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::session::{Session, SessionOptions};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "cryoscan", version, about = "Beam-steering twin: simulate scans, fit spots, calibrate, steer, serve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a preset scan on the twin and write the response map.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        /// Noise seed; defaults to the config's `noise_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Measure inside instability regions instead of skipping them.
        #[arg(long)]
        allow_unstable: bool,
    },
    /// Fit the beam spot in a 16-bit PGM frame.
    FitSpot {
        image: PathBuf,
        /// Pixel pitch; read from `<image>.pitch` when omitted.
        #[arg(long)]
        pitch_um: Option<f64>,
    },
    /// Fit a voltage→position model from a screen-plate response map.
    Calibrate {
        map: PathBuf,
        /// Hole list: `x_mm y_mm radius_mm` per line.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hole threshold as a fraction of the map's range.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Fit the affine part only.
        #[arg(long)]
        no_kappa: bool,
    },
    /// Voltage command that lands the beam at a device-plane point.
    Steer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, num_args = 2, value_names = ["X", "Y"], allow_negative_numbers = true)]
        to_mm: Vec<f64>,
    },
    /// Serve the HTTP API for one session.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Wall-clock pause after each scan point, ms.
        #[arg(long, default_value_t = 0)]
        pace_ms: u64,
    },
}

fn print_json(v: &serde_json::Value) {
    use std::io::Write;
    // A closed pipe (e.g. `| head`) is not an error worth panicking over.
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("value serializes"));
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            preset,
            out,
            seed,
            allow_unstable,
        } => {
            let base = SystemConfig::load(&config)?;
            let (cfg, plan) = base.preset(&preset)?;
            let mut twin = cfg.twin()?;
            if let Some(s) = seed {
                twin.reseed(s);
            }
            let opts = ExecOptions {
                allow_unstable,
                config_hash: cfg.hash.clone(),
                session_id: cfg.session_id(),
            };
            let map = execute(&plan, &mut twin, &opts)?;
            save_map(&map, &out)?;
            print_json(&json!({
                "out": out,
                "points": map.samples.len(),
                "config_hash": cfg.hash,
                "seed": map.metadata.seed,
                "session_id": map.metadata.session_id,
            }));
        }
        Command::FitSpot { image, pitch_um } => {
            let img = load_pgm(&image, pitch_um)?;
            let fit = cryoscan_core::calib::fit_spot(&img)?;
            print_json(&json!({
                "center_mm": [fit.spot.center.x, fit.spot.center.y],
                "diameter_major_um": fit.diameter_major_um,
                "diameter_minor_um": fit.diameter_minor_um,
                "orientation_deg": fit.spot.orientation.to_degrees(),
                "background": fit.background,
                "amplitude": fit.amplitude,
            }));
        }
        Command::Calibrate {
            map,
            mask,
            out,
            threshold,
            no_kappa,
        } => {
            let m = load_map(&map)?;
            let text = std::fs::read_to_string(&mask).map_err(cryoscan_core::Error::from)?;
            let holes: Vec<Vec2> = parse_hole_list(&text)?
                .into_iter()
                .map(|[x, y, _]| Vec2::new(x, y))
                .collect();
            let blobs = detect_holes(&m, threshold)?;
            let opts = FitOptions {
                fit_kappa: !no_kappa,
                ..FitOptions::default()
            };
            let mut fit = fit_mapping(&blobs, &holes, &opts)?;
            fit.model.provenance = m.metadata.config_hash.clone();
            fit.model.save(&out)?;
            print_json(&json!({
                "out": out,
                "blobs": blobs.len(),
                "matched": fit.matches.len(),
                "kappa": fit.model.kappa,
                "residual_rms_um": fit.model.residual_rms_mm * 1e3,
            }));
        }
        Command::Steer { model, to_mm } => {
            let model = MappingModel::load(&model)?;
            let target = Vec2::new(to_mm[0], to_mm[1]);
            let v = invert_mapping(&model, target)?;
            let p = model.predict(&v);
            print_json(&json!({ "vx": v.vx, "vy": v.vy, "predicted_mm": [p.x, p.y] }));
        }
        Command::Serve {
            config,
            port,
            host,
            pace_ms,
        } => {
            let cfg = SystemConfig::load(&config)?;
            let session = Session::new(
                cfg,
                SessionOptions {
                    point_delay: std::time::Duration::from_millis(pace_ms),
                },
            )?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Fault(e.to_string()))?;
            rt.block_on(serve(session, &host, port))?;
        }
    }
    Ok(())
}

async fn serve(session: Session, host: &str, port: u16) -> Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .map_err(|e| ServiceError::Fault(format!("bind {host}:{port}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| ServiceError::Fault(e.to_string()))?;
    eprintln!("cryoscan: session {} listening on http://{addr}", session.id());
    axum::serve(listener, crate::http::router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Fault(e.to_string()))
}

/// Runs the CLI and maps the outcome to the documented exit codes.
pub fn main_with(cli: Cli) -> ExitCode {
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cryoscan: {e}");
            if let ServiceError::Core(cryoscan_core::Error::Unreachable {
                nearest_x_mm,
                nearest_y_mm,
                ..
            }) = &e
            {
                print_json(&json!({ "error": "unreachable", "nearest_mm": [nearest_x_mm, nearest_y_mm] }));
            }
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}
