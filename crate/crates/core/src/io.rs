//! File formats. Every writer is deterministic and every reader accepts
//! exactly what the writer produces, so export → import → export is
//! byte-identical.
//!
//! * PBTG tag files: `b"PBTG"`, version `u16`, channel `u16`, count `u64`,
//!   then `count` picosecond timestamps as `u64`, all little-endian.
//! * Tag CSV: header `channel,timestamp_ps`, one tag per row.
//! * Histograms: JSON document, or CSV `tau_ps,counts,g2` with a `#` metadata line.
//! * Scans: CSV count matrix plus a JSON sidecar, or a single JSON document.

use crate::analysis::{BeamWaistFit, G2Fit, Verdict};
use crate::correlator::{CorrelationHistogram, HistogramSpec};
use crate::detection::TagStream;
use crate::error::{Error, Result};
use crate::scan_engine::{DriftSample, ScanConfig, ScanImage, SCAN_SCHEMA};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PBTG_MAGIC: &[u8; 4] = b"PBTG";
pub const PBTG_VERSION: u16 = 1;
const PBTG_HEADER: usize = 16;
pub const HISTOGRAM_SCHEMA: &str = "photonbench.histogram/1";
pub const FIT_SCHEMA: &str = "photonbench.fit/1";
pub const TAG_CSV_HEADER: &str = "channel,timestamp_ps";
pub const HISTOGRAM_CSV_HEADER: &str = "tau_ps,counts,g2";

pub fn write_pbtg(stream: &TagStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(PBTG_HEADER + 8 * stream.timestamps.len());
    out.extend_from_slice(PBTG_MAGIC);
    out.extend_from_slice(&PBTG_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.channel.to_le_bytes());
    out.extend_from_slice(&(stream.timestamps.len() as u64).to_le_bytes());
    for t in &stream.timestamps {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

pub fn is_pbtg(bytes: &[u8]) -> bool {
    bytes.starts_with(PBTG_MAGIC)
}

/// Parse a PBTG file. The format carries no duration; it defaults to the
/// last timestamp.
pub fn read_pbtg(bytes: &[u8], duration: Option<u64>) -> Result<TagStream> {
    if bytes.len() < PBTG_HEADER || !is_pbtg(bytes) {
        return Err(Error::Format("not a PBTG tag file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PBTG_VERSION {
        return Err(Error::Format(format!("unsupported PBTG version {version}")));
    }
    let channel = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[PBTG_HEADER..];
    if (body.len() as u64) != count.saturating_mul(8) {
        return Err(Error::Format(format!(
            "PBTG header announces {count} tags but the body holds {} bytes",
            body.len()
        )));
    }
    let timestamps: Vec<u64> = body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    finish_stream(channel, timestamps, duration)
}

fn finish_stream(channel: u16, timestamps: Vec<u64>, duration: Option<u64>) -> Result<TagStream> {
    let last = timestamps.last().copied().unwrap_or(0);
    let stream = TagStream::new(channel, timestamps, duration.unwrap_or(last));
    stream.validate()?;
    Ok(stream)
}

pub fn write_tags_csv(streams: &[&TagStream]) -> String {
    let rows: usize = streams.iter().map(|s| s.len()).sum();
    let mut out = String::with_capacity(TAG_CSV_HEADER.len() + 1 + rows * 16);
    out.push_str(TAG_CSV_HEADER);
    out.push('\n');
    for s in streams {
        for t in &s.timestamps {
            out.push_str(&format!("{},{}\n", s.channel, t));
        }
    }
    out
}

/// Parse tag CSV into one stream per channel, in order of first appearance.
pub fn read_tags_csv(text: &str, duration: Option<u64>) -> Result<Vec<TagStream>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TAG_CSV_HEADER => {}
        _ => return Err(Error::Format(format!("tag CSV must start with {TAG_CSV_HEADER:?}"))),
    }
    let mut channels: Vec<(u16, Vec<u64>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (c, t) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("line {}: expected channel,timestamp_ps", i + 2)))?;
        let c: u16 = c
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad channel {c:?}", i + 2)))?;
        let t: u64 = t
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad timestamp {t:?}", i + 2)))?;
        match channels.iter_mut().find(|(ch, _)| *ch == c) {
            Some((_, v)) => v.push(t),
            None => channels.push((c, vec![t])),
        }
    }
    channels
        .into_iter()
        .map(|(c, v)| finish_stream(c, v, duration))
        .collect()
}

/// Read a tag file in either format, sniffing the PBTG magic.
pub fn read_tag_bytes(bytes: &[u8], duration: Option<u64>) -> Result<Vec<TagStream>> {
    if is_pbtg(bytes) {
        Ok(vec![read_pbtg(bytes, duration)?])
    } else {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("tag file is neither PBTG nor UTF-8 CSV".into()))?;
        read_tags_csv(text, duration)
    }
}

pub fn read_tag_file(path: &Path, duration: Option<u64>) -> Result<Vec<TagStream>> {
    read_tag_bytes(&std::fs::read(path)?, duration)
}

/// Acquisition context stored next to a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requested_duration_s: Option<f64>,
    pub achieved_duration_s: f64,
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramDocument {
    pub schema: String,
    pub histogram: CorrelationHistogram,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<HistogramMeta>,
}

impl HistogramDocument {
    pub fn new(histogram: CorrelationHistogram, meta: Option<HistogramMeta>) -> Self {
        HistogramDocument {
            schema: HISTOGRAM_SCHEMA.into(),
            histogram,
            meta,
        }
    }
}

pub fn histogram_to_json(doc: &HistogramDocument) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

pub fn histogram_from_json(text: &str) -> Result<HistogramDocument> {
    let doc: HistogramDocument = serde_json::from_str(text)?;
    if doc.schema != HISTOGRAM_SCHEMA {
        return Err(Error::Format(format!("unsupported histogram schema {:?}", doc.schema)));
    }
    validate_histogram(&doc.histogram)?;
    Ok(doc)
}

fn validate_histogram(h: &CorrelationHistogram) -> Result<()> {
    h.spec.validate()?;
    if h.counts.len() != h.spec.bin_count {
        return Err(Error::Format(format!(
            "{} counts for {} bins",
            h.counts.len(),
            h.spec.bin_count
        )));
    }
    if let Some(n) = &h.normalized {
        if n.len() != h.spec.bin_count {
            return Err(Error::Format("normalized length differs from bin count".into()));
        }
    }
    Ok(())
}

pub fn histogram_to_csv(h: &CorrelationHistogram) -> String {
    let mut out = format!(
        "# bin_width_ps={},bin_count={},n_a={},n_b={},duration_ps={}\n{HISTOGRAM_CSV_HEADER}\n",
        h.spec.bin_width_ps, h.spec.bin_count, h.n_a, h.n_b, h.duration
    );
    for k in 0..h.spec.bin_count {
        let g2 = h.normalized.as_ref().map(|n| n[k].to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", h.spec.bin_start_ps(k), h.counts[k], g2));
    }
    out
}

pub fn histogram_from_csv(text: &str) -> Result<CorrelationHistogram> {
    let mut lines = text.lines();
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Format("histogram CSV must start with a '# ' metadata line".into()))?;
    let field = |name: &str| -> Result<u64> {
        meta.split(',')
            .find_map(|kv| kv.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::Format(format!("histogram CSV metadata lacks {name}")))?
            .parse()
            .map_err(|_| Error::Format(format!("histogram CSV metadata: bad {name}")))
    };
    let spec = HistogramSpec {
        bin_width_ps: field("bin_width_ps")?,
        bin_count: field("bin_count")? as usize,
    };
    spec.validate()?;
    let (n_a, n_b, duration) = (field("n_a")?, field("n_b")?, field("duration_ps")?);
    if lines.next().map(str::trim) != Some(HISTOGRAM_CSV_HEADER) {
        return Err(Error::Format(format!("expected header {HISTOGRAM_CSV_HEADER:?}")));
    }
    let mut counts = Vec::with_capacity(spec.bin_count);
    let mut g2 = Vec::with_capacity(spec.bin_count);
    let mut any_g2 = false;
    for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!("row {k}: expected 3 columns")));
        }
        let tau: i64 = cols[0].parse().map_err(|_| Error::Format(format!("row {k}: bad tau")))?;
        if k >= spec.bin_count || tau != spec.bin_start_ps(k) {
            return Err(Error::Format(format!("row {k}: delay {tau} ps does not match the bin layout")));
        }
        counts.push(cols[1].parse().map_err(|_| Error::Format(format!("row {k}: bad count")))?);
        if !cols[2].is_empty() {
            any_g2 = true;
            g2.push(cols[2].parse().map_err(|_| Error::Format(format!("row {k}: bad g2")))?);
        }
    }
    if counts.len() != spec.bin_count || (any_g2 && g2.len() != spec.bin_count) {
        return Err(Error::Format("histogram CSV row count does not match bin_count".into()));
    }
    Ok(CorrelationHistogram {
        spec,
        counts,
        n_a,
        n_b,
        duration,
        normalized: any_g2.then_some(g2),
    })
}

/// Parse a histogram from either JSON or CSV.
pub fn read_histogram(text: &str) -> Result<HistogramDocument> {
    if text.trim_start().starts_with('{') {
        histogram_from_json(text)
    } else {
        Ok(HistogramDocument::new(histogram_from_csv(text)?, None))
    }
}

/// Scan metadata written next to the CSV count matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSidecar {
    pub schema: String,
    pub config: ScanConfig,
    pub profile: String,
    pub pixel_pitch: [f64; 2],
    pub origin: [f64; 2],
    pub started_at: f64,
    pub wall_duration: f64,
    pub drift_log: Vec<DriftSample>,
    pub rows_completed: usize,
    pub incomplete: bool,
}

pub fn scan_to_csv(img: &ScanImage) -> String {
    let mut out = String::with_capacity(img.counts.len() * 4);
    for r in 0..img.rows() {
        let row: Vec<String> = img.row(r).iter().map(u64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn scan_sidecar(img: &ScanImage) -> ScanSidecar {
    ScanSidecar {
        schema: img.schema.clone(),
        config: img.config.clone(),
        profile: img.profile.clone(),
        pixel_pitch: img.pixel_pitch,
        origin: img.origin,
        started_at: img.started_at,
        wall_duration: img.wall_duration,
        drift_log: img.drift_log.clone(),
        rows_completed: img.rows_completed,
        incomplete: img.incomplete,
    }
}

pub fn scan_sidecar_json(img: &ScanImage) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&scan_sidecar(img))?;
    s.push('\n');
    Ok(s)
}

pub fn scan_from_csv(csv: &str, sidecar_json: &str) -> Result<ScanImage> {
    let meta: ScanSidecar = serde_json::from_str(sidecar_json)?;
    let mut counts = Vec::with_capacity(meta.config.pixel_count());
    for (r, line) in csv.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let before = counts.len();
        for v in line.split(',') {
            counts.push(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Format(format!("scan row {r}: bad count {v:?}")))?,
            );
        }
        if counts.len() - before != meta.config.resolution[0] {
            return Err(Error::Format(format!("scan row {r}: wrong number of columns")));
        }
    }
    let img = ScanImage {
        schema: meta.schema,
        counts,
        config: meta.config,
        profile: meta.profile,
        pixel_pitch: meta.pixel_pitch,
        origin: meta.origin,
        started_at: meta.started_at,
        wall_duration: meta.wall_duration,
        drift_log: meta.drift_log,
        rows_completed: meta.rows_completed,
        incomplete: meta.incomplete,
    };
    img.validate()?;
    Ok(img)
}

pub fn scan_to_json(img: &ScanImage) -> Result<String> {
    let mut s = serde_json::to_string(img)?;
    s.push('\n');
    Ok(s)
}

pub fn scan_from_json(text: &str) -> Result<ScanImage> {
    let img: ScanImage = serde_json::from_str(text)?;
    if img.schema != SCAN_SCHEMA {
        return Err(Error::Format(format!("unsupported scan schema {:?}", img.schema)));
    }
    img.validate()?;
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Report {
    pub schema: String,
    pub kind: String,
    pub fit: G2Fit<f64>,
    pub verdict: Verdict,
}

impl G2Report {
    pub fn new(fit: G2Fit<f64>) -> Self {
        let verdict = crate::analysis::classify_single_emitter(&fit);
        G2Report {
            schema: FIT_SCHEMA.into(),
            kind: "g2".into(),
            fit,
            verdict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamReport {
    pub schema: String,
    pub kind: String,
    pub fit: BeamWaistFit<f64>,
}

impl BeamReport {
    pub fn new(fit: BeamWaistFit<f64>) -> Self {
        BeamReport {
            schema: FIT_SCHEMA.into(),
            kind: "beam".into(),
            fit,
        }
    }
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// z-scan samples from CSV `z_um,radius_um` (header optional).
pub fn read_zscan_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((z, r)) = line.split_once(',') else {
            return Err(Error::Format(format!("line {}: expected z_um,radius_um", i + 1)));
        };
        match (z.trim().parse::<f64>(), r.trim().parse::<f64>()) {
            (Ok(z), Ok(r)) => out.push((z, r)),
            _ if i == 0 => continue,
            _ => return Err(Error::Format(format!("line {}: bad number", i + 1))),
        }
    }
    Ok(out)
}

pub fn write_zscan_csv(samples: &[(f64, f64)]) -> String {
    let mut out = String::from("z_um,radius_um\n");
    for (z, r) in samples {
        out.push_str(&format!("{z},{r}\n"));
    }
    out
}
