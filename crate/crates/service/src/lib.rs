//! Command-line front end and local HTTP API for the photonbench virtual
//! microscope. Sessions, scans and HBT runs live in memory; every result is
//! also written as flat files under a workspace directory.

pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;
pub mod workspace;

use photonbench::correlator::{correlate, normalize, HistogramSpec};
use photonbench::detection::TagStream;
use photonbench::emitter_sample::SampleField;
use photonbench::io::{histogram_to_csv, histogram_to_json, read_tag_bytes, HistogramDocument};
use photonbench::profile::{InstrumentProfile, DEMO_FAST_FACTOR};
use photonbench::scan_engine::Session;
use photonbench::{Error, Result};
use serde::{Deserialize, Serialize};

/// Version tag carried by every API response body.
pub const API_SCHEMA: &str = "photonbench/1";
/// Environment variable naming the data directory.
pub const WORKSPACE_ENV: &str = "PHOTONBENCH_WORKSPACE";
pub const DEFAULT_PORT: u16 = 8077;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::validation("format", format!("expected json or csv, got {other:?}"))),
        }
    }

    /// Guess from a file name; anything but `.csv` is JSON.
    pub fn from_path(path: &str) -> Self {
        if path.to_ascii_lowercase().ends_with(".csv") {
            Format::Csv
        } else {
            Format::Json
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Format::Json => "application/json",
            Format::Csv => "text/csv",
        }
    }
}

/// Acquisition options shared by the CLI and the session endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionOptions {
    /// Scale emitter brightness, autofluorescence and dark counts so that
    /// acquisitions finish sooner at the same signal fraction.
    pub demo_fast: bool,
    pub drift: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            demo_fast: false,
            drift: true,
        }
    }
}

/// Build a session after applying the demo and drift options.
pub fn prepare_session(
    id: impl Into<String>,
    mut profile: InstrumentProfile,
    mut sample: SampleField,
    seed: u64,
    options: &SessionOptions,
) -> Result<Session> {
    if options.demo_fast && !profile.demo_fast {
        profile = profile.with_demo_fast(DEMO_FAST_FACTOR);
        sample.scale_brightness(DEMO_FAST_FACTOR);
    }
    if !options.drift {
        profile.actuator.drift_rate_rms = 0.0;
    }
    Session::new(id, profile, sample, seed)
}

/// Parse one tag stream from PBTG or CSV bytes. A CSV holding several
/// channels yields its first channel.
pub fn read_single_stream(bytes: &[u8], field: &str) -> Result<TagStream> {
    let mut streams = read_tag_bytes(bytes, None).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{field}: {m}")),
        other => other,
    })?;
    if streams.is_empty() {
        return Err(Error::validation(field, "no tags"));
    }
    Ok(streams.swap_remove(0))
}

/// Correlate two tag files and render the normalized histogram. The CLI and
/// the upload endpoint both go through here so their outputs match byte for
/// byte.
pub fn correlate_files(
    a: &[u8],
    b: &[u8],
    spec: &HistogramSpec,
    duration_ps: Option<u64>,
    format: Format,
) -> Result<String> {
    let mut a = read_single_stream(a, "a")?;
    let mut b = read_single_stream(b, "b")?;
    let duration = match duration_ps {
        Some(d) => {
            let last = a.timestamps.last().max(b.timestamps.last()).copied().unwrap_or(0);
            if d < last {
                return Err(Error::validation("duration_ps", "shorter than the last tag"));
            }
            d
        }
        None => a.duration.max(b.duration),
    };
    a.duration = duration;
    b.duration = duration;
    let h = normalize(&correlate(&a, &b, spec)?)?;
    match format {
        Format::Json => histogram_to_json(&HistogramDocument::new(h, None)),
        Format::Csv => Ok(histogram_to_csv(&h)),
    }
}
