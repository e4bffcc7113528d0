//! `photonbench` command line.
//!
//! Exit status: 0 on success, 2 for usage and validation errors, 1 for
//! runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use photonbench::analysis::{fit_beam_waist, fit_g2, BeamFitConfig};
use photonbench::correlator::{normalize, HistogramSpec};
use photonbench::emitter_sample::{generate_sample, SampleField, SampleSpec};
use photonbench::io::{
    histogram_to_csv, histogram_to_json, read_histogram, read_zscan_csv, scan_sidecar_json, scan_to_csv, scan_to_json,
    to_pretty_json, write_pbtg, BeamReport, G2Report, HistogramDocument, HistogramMeta,
};
use photonbench::profile::InstrumentProfile;
use photonbench::scan_engine::{run_hbt, run_scan, HbtConfig, ScanConfig, Session};
use photonbench::{Error, Result};
use serde_json::{json, Value};
use std::sync::atomic::AtomicBool;

use crate::api::{router, AppState};
use crate::error::error_code;
use crate::workspace::Workspace;
use crate::{correlate_files, prepare_session, Format, SessionOptions, API_SCHEMA, DEFAULT_PORT};

#[derive(Debug, Parser)]
#[command(name = "photonbench", version, about = "Virtual confocal single-photon microscope")]
pub struct Cli {
    /// Seed for the session and, unless --sample is given, the sample layout.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// reference, lowcost or a path to a TOML profile.
    #[arg(long, global = true, default_value = "reference")]
    pub profile: String,
    /// Output file; the format follows the extension (.csv or JSON).
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Print a machine-readable summary (and errors) as JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulated acquisition.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Cross-correlate two tag files into a normalized g² histogram.
    Correlate(CorrelateArgs),
    /// Fit a histogram or a z-scan.
    #[command(subcommand)]
    Fit(Fit),
    /// Sample generation.
    #[command(subcommand)]
    Sample(SampleCmd),
    /// Start the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct AcquisitionArgs {
    /// Sample JSON to load instead of generating one from --seed.
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// Brighter emitters with proportionally more background; same signal fraction.
    #[arg(long)]
    pub demo_fast: bool,
    /// Disable actuator drift.
    #[arg(long)]
    pub no_drift: bool,
    /// Laser power (mW).
    #[arg(long)]
    pub power: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Simulate {
    /// Raster scan; writes a scan JSON, or CSV plus a `.meta.json` sidecar.
    Scan {
        #[command(flatten)]
        acq: AcquisitionArgs,
        /// Scan extent in µm: `W` or `W,H`.
        #[arg(long, value_delimiter = ',', num_args = 1..=2)]
        extent: Option<Vec<f64>>,
        /// Pixels: `N` or `NX,NY`.
        #[arg(long, value_delimiter = ',', num_args = 1..=2)]
        resolution: Option<Vec<usize>>,
        /// Scan center in µm: `X,Y`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        center: Option<Vec<f64>>,
        /// Dwell per pixel (ms).
        #[arg(long)]
        integration_ms: Option<f64>,
        /// Focus offset (µm).
        #[arg(long)]
        z: Option<f64>,
    },
    /// HBT acquisition with the beam parked at (x, y).
    Hbt {
        #[command(flatten)]
        acq: AcquisitionArgs,
        /// Beam x position (µm)
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        /// Beam y position (µm)
        #[arg(long, allow_negative_numbers = true)]
        y: f64,
        /// Simulated duration (s).
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// Histogram bin width (ps)
        #[arg(long, default_value_t = 200)]
        bin_width_ps: u64,
        /// Number of bins (even)
        #[arg(long, default_value_t = 1000)]
        bins: usize,
        /// Also write the raw tags to `<PREFIX>_a.pbtg` and `<PREFIX>_b.pbtg`.
        #[arg(long)]
        tags_out: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Channel A tag file (PBTG or CSV).
    #[arg(long)]
    pub a: PathBuf,
    /// Channel B tag file.
    #[arg(long)]
    pub b: PathBuf,
    /// Histogram bin width (ps)
    #[arg(long, default_value_t = 200)]
    pub bin_width_ps: u64,
    /// Number of bins (even)
    #[arg(long, default_value_t = 1000)]
    pub bins: usize,
    /// Acquisition span (ps); defaults to the later of the two last tags.
    #[arg(long)]
    pub duration_ps: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Fit {
    /// Antibunching fit of a histogram (JSON or CSV).
    G2 {
        /// Histogram file
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Beam-waist fit of a z-scan CSV (`z_um,radius_um`).
    Beam {
        /// Z-scan CSV
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 532.0)]
        wavelength_nm: f64,
        #[arg(long, default_value_t = 1.0)]
        m_squared: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum SampleCmd {
    /// Random diamond field; --seed picks the layout.
    Generate {
        /// Field size in µm: `W` or `W,H`.
        #[arg(long, value_delimiter = ',', num_args = 1..=2)]
        field: Option<Vec<f64>>,
        /// Lower-left corner in µm: `X,Y`.
        #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
        origin: Option<Vec<f64>>,
        /// Diamonds per 100 µm².
        #[arg(long)]
        density: Option<f64>,
        /// Minimum diamond spacing (µm)
        #[arg(long)]
        min_spacing: Option<f64>,
        /// Fraction of diamonds holding exactly one emitter.
        #[arg(long)]
        fraction_single: Option<f64>,
        /// Fraction of emitters in the negative charge state.
        #[arg(long)]
        charge_mix: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    /// TCP port
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    /// Data directory; defaults to $PHOTONBENCH_WORKSPACE, then ./photonbench-data.
    #[arg(long)]
    pub workspace: Option<PathBuf>,
    /// Directory of static console assets served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

/// What a command produced: artifacts written and a summary for the user.
struct Outcome {
    /// Artifact text destined for stdout when no `--out` was given.
    stdout: Option<String>,
    summary: Value,
    message: String,
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let json_mode = cli.json;
    match execute(cli) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            if let Some(text) = outcome.stdout {
                let _ = stdout.write_all(text.as_bytes());
            } else if json_mode {
                let mut summary = outcome.summary;
                summary["schema"] = API_SCHEMA.into();
                let _ = writeln!(stdout, "{summary}");
            } else if !outcome.message.is_empty() {
                let _ = writeln!(stdout, "{}", outcome.message);
            }
            0
        }
        Err(e) => {
            let code = if e.is_validation() { 2 } else { 1 };
            if json_mode {
                let body = json!({
                    "schema": API_SCHEMA,
                    "code": error_code(&e),
                    "message": e.to_string(),
                    "field": e.field(),
                });
                println!("{body}");
            } else {
                eprintln!("photonbench: {e}");
            }
            code
        }
    }
}

fn execute(cli: Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate(Simulate::Scan {
            acq,
            extent,
            resolution,
            center,
            integration_ms,
            z,
        }) => {
            let mut config = ScanConfig::default();
            if let Some(v) = extent {
                config.extent = pair(v);
            }
            if let Some(v) = resolution {
                config.resolution = pair(v);
            }
            if let Some(v) = center {
                config.center = pair(v);
            }
            if let Some(v) = integration_ms {
                config.integration_time_ms = *v;
            }
            if let Some(v) = acq.power {
                config.laser_power_mw = v;
            }
            if let Some(v) = z {
                config.z_offset = *v;
            }
            simulate_scan(&cli, acq, &config)
        }
        Command::Simulate(Simulate::Hbt {
            acq,
            x,
            y,
            duration,
            bin_width_ps,
            bins,
            tags_out,
        }) => {
            let config = HbtConfig {
                position: [*x, *y],
                duration_s: *duration,
                spec: HistogramSpec {
                    bin_width_ps: *bin_width_ps,
                    bin_count: *bins,
                },
                laser_power_mw: acq.power,
                keep_tags: tags_out.is_some(),
                ..HbtConfig::default()
            };
            simulate_hbt(&cli, acq, &config, tags_out.as_deref())
        }
        Command::Correlate(args) => correlate_cmd(&cli, args),
        Command::Fit(Fit::G2 { input }) => {
            let doc = read_histogram(&read_text(input)?)?;
            let mut h = doc.histogram;
            if h.normalized.is_none() {
                h = normalize(&h)?;
            }
            let report = G2Report::new(fit_g2(&h)?);
            let text = to_pretty_json(&report)?;
            let message = format!(
                "g2(0) = {:.3} ± {:.3}, tau = {:.2} ns, verdict: {:?}",
                report.fit.g2_zero, report.fit.g2_zero_sigma, report.fit.tau_anti, report.verdict
            );
            let summary = json!({ "command": "fit g2", "verdict": report.verdict, "g2_zero": report.fit.g2_zero });
            emit(&cli, text, summary, message)
        }
        Command::Fit(Fit::Beam {
            input,
            wavelength_nm,
            m_squared,
        }) => {
            let samples = read_zscan_csv(&read_text(input)?)?;
            let config = BeamFitConfig {
                wavelength_nm: *wavelength_nm,
                m_squared: *m_squared,
            };
            let report = BeamReport::new(fit_beam_waist(&samples, &config)?);
            let text = to_pretty_json(&report)?;
            let message = format!("w0 = {:.4} ± {:.4} µm", report.fit.w0, report.fit.w0_uncertainty);
            let summary = json!({ "command": "fit beam", "w0": report.fit.w0 });
            emit(&cli, text, summary, message)
        }
        Command::Sample(SampleCmd::Generate {
            field,
            origin,
            density,
            min_spacing,
            fraction_single,
            charge_mix,
        }) => {
            let mut spec = SampleSpec {
                rng_seed: cli.seed,
                ..SampleSpec::default()
            };
            if let Some(v) = field {
                spec.field_size = pair(v);
            }
            if let Some(v) = origin {
                spec.field_origin = pair(v);
            }
            if let Some(v) = density {
                spec.target_density = *v;
            }
            if let Some(v) = min_spacing {
                spec.min_spacing = *v;
            }
            if let Some(v) = fraction_single {
                spec.fraction_single = *v;
            }
            if let Some(v) = charge_mix {
                spec.charge_state_mix = *v;
            }
            let sample = generate_sample(&spec)?;
            let message = format!(
                "{} emitters in {} diamonds ({:.2} per 100 µm²)",
                sample.emitters.len(),
                sample.diamond_count,
                sample.achieved_density
            );
            let summary = json!({
                "command": "sample generate",
                "emitters": sample.emitters.len(),
                "diamonds": sample.diamond_count,
            });
            emit(&cli, sample.to_json()?, summary, message)
        }
        Command::Serve(args) => serve_cmd(args),
    }
}

/// Expand `[v]` to `[v, v]`.
fn pair<T: Copy>(v: &[T]) -> [T; 2] {
    [v[0], *v.get(1).unwrap_or(&v[0])]
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_file(path: &str, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io_error(Path::new(path), e))
}

/// Write `text` to `--out`, or hand it back for stdout.
fn emit(cli: &Cli, text: String, mut summary: Value, message: String) -> Result<Outcome> {
    match &cli.out {
        Some(path) => {
            write_file(path, text.as_bytes())?;
            summary["outputs"] = json!([path]);
            Ok(Outcome {
                stdout: None,
                summary,
                message,
            })
        }
        None => Ok(Outcome {
            stdout: Some(text),
            summary,
            message,
        }),
    }
}

fn session_for(cli: &Cli, acq: &AcquisitionArgs) -> Result<Session> {
    let profile = InstrumentProfile::resolve(&cli.profile)?;
    let sample = match &acq.sample {
        Some(path) => SampleField::from_json(&read_text(path)?)?,
        None => generate_sample(&SampleSpec {
            rng_seed: cli.seed,
            ..SampleSpec::default()
        })?,
    };
    let options = SessionOptions {
        demo_fast: acq.demo_fast,
        drift: !acq.no_drift,
    };
    prepare_session("cli", profile, sample, cli.seed, &options)
}

/// `scan.csv` → `scan.meta.json`
pub fn sidecar_path(csv_path: &str) -> String {
    let stem = csv_path.strip_suffix(".csv").or_else(|| csv_path.strip_suffix(".CSV")).unwrap_or(csv_path);
    format!("{stem}.meta.json")
}

fn simulate_scan(cli: &Cli, acq: &AcquisitionArgs, config: &ScanConfig) -> Result<Outcome> {
    let mut session = session_for(cli, acq)?;
    let img = run_scan(&mut session, config, &AtomicBool::new(false), |_| {})?;
    let spots = photonbench::scan_engine::find_spots(&img, crate::api::SPOT_SNR);
    let message = format!(
        "{}×{} scan, {} counts total, {} spots",
        img.cols(),
        img.rows(),
        img.counts.iter().sum::<u64>(),
        spots.len()
    );
    let mut summary = json!({ "command": "simulate scan", "spots": spots, "total_counts": img.counts.iter().sum::<u64>() });
    match cli.out.as_deref() {
        Some(path) if Format::from_path(path) == Format::Csv => {
            let meta = sidecar_path(path);
            write_file(path, scan_to_csv(&img).as_bytes())?;
            write_file(&meta, scan_sidecar_json(&img)?.as_bytes())?;
            summary["outputs"] = json!([path, meta]);
            Ok(Outcome {
                stdout: None,
                summary,
                message,
            })
        }
        _ => emit(cli, scan_to_json(&img)?, summary, message),
    }
}

fn simulate_hbt(cli: &Cli, acq: &AcquisitionArgs, config: &HbtConfig, tags_out: Option<&str>) -> Result<Outcome> {
    let mut session = session_for(cli, acq)?;
    let r = run_hbt(&mut session, config, &AtomicBool::new(false), |_| {})?;
    let mut outputs = Vec::new();
    if let (Some(prefix), Some([a, b])) = (tags_out, &r.tags) {
        for (stream, suffix) in [(a, "_a.pbtg"), (b, "_b.pbtg")] {
            let path = format!("{prefix}{suffix}");
            write_file(&path, &write_pbtg(stream))?;
            outputs.push(path);
        }
    }
    let fit = fit_g2::<f64>(&r.histogram);
    let (message, fit_summary) = match &fit {
        Ok(f) => {
            let report = G2Report::new(f.clone());
            (
                format!(
                    "{} coincidences, g2(0) = {:.3} ± {:.3}, verdict: {:?}",
                    r.histogram.total(),
                    f.g2_zero,
                    f.g2_zero_sigma,
                    report.verdict
                ),
                json!(report),
            )
        }
        Err(e) => (format!("{} coincidences, fit failed: {e}", r.histogram.total()), Value::Null),
    };
    let mut summary = json!({
        "command": "simulate hbt",
        "coincidences": r.histogram.total(),
        "n_a": r.histogram.n_a,
        "n_b": r.histogram.n_b,
        "fit": fit_summary,
    });
    let text = match cli.out.as_deref().map(Format::from_path) {
        Some(Format::Csv) => histogram_to_csv(&r.histogram),
        _ => {
            let meta = HistogramMeta {
                position: Some(r.position),
                requested_duration_s: Some(r.requested_duration_s),
                achieved_duration_s: r.achieved_duration_s,
                incomplete: r.incomplete,
            };
            histogram_to_json(&HistogramDocument::new(r.histogram.clone(), Some(meta)))?
        }
    };
    let mut outcome = emit(cli, text, summary.take(), message)?;
    if let Some(list) = outcome.summary.get_mut("outputs").and_then(Value::as_array_mut) {
        list.extend(outputs.into_iter().map(Value::from));
    } else if !outputs.is_empty() {
        outcome.summary["outputs"] = json!(outputs);
    }
    Ok(outcome)
}

fn correlate_cmd(cli: &Cli, args: &CorrelateArgs) -> Result<Outcome> {
    let spec = HistogramSpec {
        bin_width_ps: args.bin_width_ps,
        bin_count: args.bins,
    };
    let a = std::fs::read(&args.a).map_err(|e| io_error(&args.a, e))?;
    let b = std::fs::read(&args.b).map_err(|e| io_error(&args.b, e))?;
    // `--out json` / `--out csv` pick a format for stdout
    let (format, path) = match cli.out.as_deref() {
        Some(v) if Format::parse(v).is_ok() => (Format::parse(v)?, None),
        Some(p) => (Format::from_path(p), Some(p)),
        None => (Format::Json, None),
    };
    let text = correlate_files(&a, &b, &spec, args.duration_ps, format)?;
    let summary = json!({ "command": "correlate", "format": format });
    match path {
        Some(p) => {
            write_file(p, text.as_bytes())?;
            let mut summary = summary;
            summary["outputs"] = json!([p]);
            Ok(Outcome {
                stdout: None,
                summary,
                message: format!("wrote {p}"),
            })
        }
        None => Ok(Outcome {
            stdout: Some(text),
            summary,
            message: String::new(),
        }),
    }
}

fn serve_cmd(args: &ServeArgs) -> Result<Outcome> {
    let workspace = Workspace::resolve(args.workspace.clone());
    std::fs::create_dir_all(workspace.root()).map_err(|e| io_error(workspace.root(), e))?;
    let addr = SocketAddr::new(args.bind, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = crate::api::bind(addr).await?;
        eprintln!(
            "photonbench listening on http://{} (workspace {})",
            listener.local_addr()?,
            workspace.root().display()
        );
        let app = router(AppState::new(workspace), args.static_dir.clone());
        crate::api::serve(listener, app).await
    })?;
    Ok(Outcome {
        stdout: None,
        summary: json!({ "command": "serve" }),
        message: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_next_to_csv() {
        assert_eq!(sidecar_path("out/scan.csv"), "out/scan.meta.json");
        assert_eq!(sidecar_path("scan"), "scan.meta.json");
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "photonbench",
            "simulate",
            "hbt",
            "--x",
            "10.2",
            "--y",
            "-4.7",
            "--duration",
            "5",
            "--seed",
            "9",
            "--profile",
            "lowcost",
        ])
        .unwrap();
        assert_eq!(cli.seed, 9);
        assert_eq!(cli.profile, "lowcost");
        match cli.command {
            Command::Simulate(Simulate::Hbt { x, y, duration, .. }) => assert_eq!((x, y, duration), (10.2, -4.7, 5.0)),
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["photonbench", "--bogus"]), 2);
        assert_eq!(run(["photonbench", "correlate", "--a", "x"]), 2);
        assert_eq!(run(["photonbench", "--help"]), 0);
    }

    #[test]
    fn pair_expands_scalars() {
        assert_eq!(pair(&[3.0]), [3.0, 3.0]);
        assert_eq!(pair(&[3, 4]), [3, 4]);
    }
}
