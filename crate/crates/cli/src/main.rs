use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use dtreg_core::fields::GridSpec;
use dtreg_core::flow::{build_h_and_inverse, det_identity_report, flow_map};
use dtreg_core::io;
use dtreg_core::objective::{minimize, ObjectiveConfig, Status};
use dtreg_core::phantom::{phantom, smooth_velocity, PhantomKind, PhantomParams};
use dtreg_core::reorient::fs_transform;
use dtreg_core::verify::{self, Suite};
use dtreg_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_BUDGET: u8 = 2;

#[derive(Parser)]
#[command(
    name = "dtreg",
    version,
    about = "Diffeomorphic registration of diffusion-tensor images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic tensor image.
    Phantom {
        #[arg(long)]
        kind: PhantomKind,
        /// Grid size as NX,NY,NZ.
        #[arg(long, value_parser = parse_triple::<usize>)]
        dims: [usize; 3],
        #[arg(long, value_parser = parse_triple::<f64>, default_value = "1,1,1")]
        spacing: [f64; 3],
        #[arg(long, default_value_t = PhantomParams::default().max_aniso)]
        max_aniso: f64,
        #[arg(long, value_parser = parse_triple::<f64>, default_value = "1,0,0")]
        direction: [f64; 3],
        #[arg(long, default_value_t = PhantomParams::default().radius)]
        radius: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tensor of the uniform kind as XX,XY,XZ,YY,YZ,ZZ.
        #[arg(long, value_parser = parse_tensor)]
        tensor: Option<[f64; 6]>,
        /// Transport the phantom through a smooth flow with this peak speed.
        #[arg(long)]
        warp: Option<f64>,
        /// RK4 steps for the warp.
        #[arg(long, default_value_t = ObjectiveConfig::default().nsteps_flow)]
        nsteps: usize,
        /// Where to write the warp velocity.
        #[arg(long, requires = "warp")]
        out_velocity: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register a floating image onto a target.
    Register {
        #[arg(long)]
        floating: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// JSON configuration; defaults apply to omitted keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_velocity: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
    },
    /// Transport an image through the flow of a velocity field.
    Apply {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        velocity: PathBuf,
        #[arg(long, default_value_t = ObjectiveConfig::default().nsteps_flow)]
        nsteps: usize,
        /// Also write the inverse deformation and its Jacobians.
        #[arg(long)]
        out_deformation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the determinant identity of a flow over the whole grid.
    Flow {
        #[arg(long)]
        velocity: PathBuf,
        #[arg(long, default_value_t = 64)]
        nsteps: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the built-in property suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, n: usize) -> Result<Vec<T>, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(format!("expected {n} comma-separated values, got {:?}", s));
    }
    parts
        .iter()
        .map(|p| p.parse::<T>().map_err(|_| format!("cannot parse {p:?}")))
        .collect()
}

fn parse_triple<T: std::str::FromStr + Copy>(s: &str) -> Result<[T; 3], String> {
    let v = parse_list::<T>(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

fn parse_tensor(s: &str) -> Result<[f64; 6], String> {
    let v = parse_list::<f64>(s, 6)?;
    Ok(std::array::from_fn(|i| v[i]))
}

fn write_json(path: &std::path::Path, value: &serde_json::Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

fn run(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Phantom {
            kind,
            dims,
            spacing,
            max_aniso,
            direction,
            radius,
            noise,
            seed,
            tensor,
            warp,
            nsteps,
            out_velocity,
            out,
        } => {
            let defaults = PhantomParams::default();
            let params = PhantomParams {
                tensor: tensor.unwrap_or(defaults.tensor),
                max_aniso,
                direction,
                radius,
                noise,
                seed,
                ..defaults
            };
            let grid = GridSpec::new(dims, spacing)?;
            let mut img = phantom(kind, grid, &params)?;
            if let Some(speed) = warp {
                if !(speed >= 0.0 && speed.is_finite()) {
                    return Err(Error::BadParams("warp must be a nonnegative speed".into()));
                }
                let v = smooth_velocity(grid, speed)?;
                let pair = build_h_and_inverse(&v, nsteps)?;
                img = fs_transform(&img, &pair.h, pair.jacobian_field())?.image;
                if let Some(path) = out_velocity {
                    io::write_velocity(&v, path)?;
                }
            }
            io::write_tensor_image(&img, out)?;
            Ok(0)
        }
        Command::Register {
            floating,
            target,
            config,
            out_velocity,
            out_report,
        } => {
            let cfg = match config {
                Some(p) => ObjectiveConfig::from_json(&fs::read_to_string(p)?)?,
                None => ObjectiveConfig::default(),
            };
            let t = io::read_tensor_image(floating)?;
            let d = io::read_tensor_image(target)?;
            let (v, report) = minimize(&t, &d, &cfg)?;
            io::write_velocity(&v, out_velocity)?;
            write_json(&out_report, &json!({ "config": cfg, "report": report }))?;
            Ok(match report.status {
                Status::Converged => 0,
                Status::BudgetExhausted => EXIT_BUDGET,
            })
        }
        Command::Apply {
            image,
            velocity,
            nsteps,
            out_deformation,
            out,
        } => {
            let t = io::read_tensor_image(image)?;
            let v = io::read_velocity(velocity)?;
            let pair = build_h_and_inverse(&v, nsteps)?;
            let moved = fs_transform(&t, &pair.h, pair.jacobian_field())?;
            io::write_tensor_image(&moved.image, out)?;
            if let Some(path) = out_deformation {
                io::write_deformation(&pair.h_inv, path)?;
            }
            Ok(0)
        }
        Command::Flow {
            velocity,
            nsteps,
            report,
        } => {
            let v = io::read_velocity(velocity)?;
            let fr = flow_map(&v, 0.0, v.grid().tau, nsteps)?;
            let rep = det_identity_report(&fr);
            write_json(
                &report,
                &json!({
                    "nsteps": nsteps,
                    "max_rel_error": rep.max_rel_error,
                    "mean_rel_error": rep.mean_rel_error,
                    "min_det": fr.min_det(),
                }),
            )?;
            Ok(0)
        }
        Command::Verify { suite, seed } => {
            let results = verify::run(suite, seed)?;
            let mut ok = true;
            for r in &results {
                ok &= r.passed;
                println!(
                    "{} {}: {} residual={:e} threshold={:e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.suite,
                    r.name,
                    r.residual,
                    r.threshold
                );
            }
            Ok(if ok { 0 } else { EXIT_FAILURE })
        }
    }
}

/// One line, `error kind=<Kind>: <message>`.
fn report_error(kind: &str, msg: &str) {
    let flat = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={kind}: {flat}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            report_error("Usage", first.trim_start_matches("error: "));
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
