//! File formats: CSV for recordings, frames, labels, estimates, and training
//! logs; JSON for models and evaluation reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so writing
//! and re-reading any of these files reproduces the numbers bit for bit.
//! Model and report files carry a format version and are rejected when the
//! version is unknown. Model files also embed provenance (seed, config,
//! input digests, toolkit version) so a result can be traced to its inputs;
//! deliberately no timestamps, which would break byte-identical reruns.

use crate::eval::{LatencyStats, ParityFit, ResidualStats, TestComparison};
use crate::hybrid::{Estimate, HybridModel};
use crate::inverse::LabeledDataset;
use crate::lstm::TrainLog;
use crate::lugre::LuGreParams;
use crate::signal::{KinematicFrame, TimeSeries};
use crate::Matrix;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Version stamped into model and report files.
pub const FORMAT_VERSION: u32 = 1;

/// Why a file could not be written or understood.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unexpected header: expected \"{expected}\", got \"{got}\"")]
    Header { expected: String, got: String },

    #[error("unsupported format version {got} (this build reads {supported})")]
    UnsupportedVersion { got: u32, supported: u32 },

    #[error("wrong model kind: expected \"{expected}\", got \"{got}\"")]
    WrongKind { expected: String, got: String },

    #[error("json error")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Invalid(#[from] crate::Error),
}

/// Result alias for this module.
pub type IoResult<T> = std::result::Result<T, FormatError>;

/// SHA-256 of a file's bytes, lowercase hex.
pub fn sha256_hex(path: impl AsRef<Path>) -> IoResult<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Where a result came from: inputs, seed, configuration, toolkit build.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// The configuration the artifact was produced with, as free-form JSON.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<serde_json::Value>,
    /// Digests of the files the artifact was derived from.
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    /// Provenance naming only the running toolkit build.
    #[must_use]
    pub fn toolkit() -> Self {
        Self {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: None,
            inputs: Vec::new(),
        }
    }
}

/// One input file and its content digest.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

/// Writes provenance next to a data file as `<file>.provenance.json`.
pub fn write_provenance_sidecar(
    data_path: impl AsRef<Path>,
    provenance: &Provenance,
) -> IoResult<()> {
    let mut path = data_path.as_ref().as_os_str().to_owned();
    path.push(".provenance.json");
    write_json_file(path, provenance)
}

/// Reads a provenance sidecar written by [`write_provenance_sidecar`].
pub fn read_provenance_sidecar(data_path: impl AsRef<Path>) -> IoResult<Provenance> {
    let mut path = data_path.as_ref().as_os_str().to_owned();
    path.push(".provenance.json");
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
}

fn write_json_file(path: impl AsRef<Path>, value: &impl serde::Serialize) -> IoResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------

fn check_header(line: &str, expected: &str) -> IoResult<()> {
    if line.trim_end() != expected {
        return Err(FormatError::Header {
            expected: expected.to_string(),
            got: line.trim_end().to_string(),
        });
    }
    Ok(())
}

fn parse_fields(line: &str, n: usize, line_no: usize) -> IoResult<Vec<f64>> {
    let fields: Vec<&str> = line.trim_end().split(',').collect();
    if fields.len() != n {
        return Err(FormatError::Parse {
            line: line_no,
            message: format!("expected {n} fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>().map_err(|e| FormatError::Parse {
                line: line_no,
                message: format!("\"{f}\": {e}"),
            })
        })
        .collect()
}

/// Iterates the lines that remain after the header was consumed, paired
/// with their 1-based file line numbers. Blank lines are allowed.
fn data_lines(
    reader: impl BufRead,
) -> impl Iterator<Item = std::io::Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 2, l))),
            Err(e) => Some(Err(e)),
        })
}

const DATASET_HEADER: &str = "t,x_p,p1,p2";
const DATASET_HEADER_TRUTH: &str = "t,x_p,p1,p2,f_true";
const LABELED_HEADER: &str = "t,x_p,p1,p2,v,f,included";
const FRAMES_HEADER: &str = "t,x_p,v,a,p1,p2";
const ESTIMATES_HEADER: &str = "t,f_est";
const TRAIN_LOG_HEADER: &str = "epoch,train_mae,val_mae";

/// Writes a measurement recording (`t,x_p,p1,p2[,f_true]`).
pub fn write_dataset_csv(path: impl AsRef<Path>, series: &TimeSeries<f64>) -> IoResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    match series.f_true() {
        Some(f_true) => {
            writeln!(w, "{DATASET_HEADER_TRUTH}")?;
            for k in 0..series.len() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    series.t()[k],
                    series.x_p()[k],
                    series.p1()[k],
                    series.p2()[k],
                    f_true[k]
                )?;
            }
        }
        None => {
            writeln!(w, "{DATASET_HEADER}")?;
            for k in 0..series.len() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    series.t()[k],
                    series.x_p()[k],
                    series.p1()[k],
                    series.p2()[k]
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a recording written by [`write_dataset_csv`]; the ground-truth
/// column is detected from the header.
pub fn read_dataset_csv(path: impl AsRef<Path>) -> IoResult<TimeSeries<f64>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let has_truth = match header.trim_end() {
        DATASET_HEADER => false,
        DATASET_HEADER_TRUTH => true,
        got => {
            return Err(FormatError::Header {
                expected: format!("{DATASET_HEADER} or {DATASET_HEADER_TRUTH}"),
                got: got.to_string(),
            })
        }
    };
    let n_fields = if has_truth { 5 } else { 4 };
    let mut t = Vec::new();
    let mut x_p = Vec::new();
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    let mut f_true = Vec::new();
    for item in data_lines(reader) {
        let (line_no, line) = item?;
        let v = parse_fields(&line, n_fields, line_no)?;
        t.push(v[0]);
        x_p.push(v[1]);
        p1.push(v[2]);
        p2.push(v[3]);
        if has_truth {
            f_true.push(v[4]);
        }
    }
    // Grid problems are caught here so they cite the offending file line;
    // the series constructor checks them again by sample index.
    if t.len() >= 2 {
        let dt = t[1] - t[0];
        for k in 1..t.len() {
            let step = t[k] - t[k - 1];
            if step <= 0.0 {
                return Err(FormatError::Parse {
                    line: k + 2,
                    message: format!("timestamp {} does not increase past {}", t[k], t[k - 1]),
                });
            }
            if (step - dt).abs() > crate::signal::GRID_TOLERANCE {
                return Err(FormatError::Parse {
                    line: k + 2,
                    message: format!("time step {step} deviates from the grid spacing {dt}"),
                });
            }
        }
    }
    let f_true = has_truth.then_some(f_true);
    Ok(TimeSeries::new(t, x_p, p1, p2, f_true)?)
}

/// Writes filtered kinematic frames (`t,x_p,v,a,p1,p2`).
pub fn write_frames_csv(path: impl AsRef<Path>, frames: &[KinematicFrame<f64>]) -> IoResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{FRAMES_HEADER}")?;
    for f in frames {
        writeln!(w, "{},{},{},{},{},{}", f.t, f.x_p, f.v, f.a, f.p1, f.p2)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads frames written by [`write_frames_csv`].
pub fn read_frames_csv(path: impl AsRef<Path>) -> IoResult<Vec<KinematicFrame<f64>>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    check_header(&header, FRAMES_HEADER)?;
    let mut frames = Vec::new();
    for item in data_lines(reader) {
        let (line_no, line) = item?;
        let v = parse_fields(&line, 6, line_no)?;
        frames.push(KinematicFrame {
            t: v[0],
            x_p: v[1],
            v: v[2],
            a: v[3],
            p1: v[4],
            p2: v[5],
        });
    }
    Ok(frames)
}

/// Writes a labeled dataset (`t,x_p,p1,p2,v,f,included`).
pub fn write_labeled_csv(path: impl AsRef<Path>, data: &LabeledDataset<f64>) -> IoResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{LABELED_HEADER}")?;
    for k in 0..data.len() {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            data.t[k],
            data.x_p[k],
            data.features.get(k, 0),
            data.features.get(k, 1),
            data.features.get(k, 2),
            data.target[k],
            u8::from(data.included[k])
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a labeled dataset written by [`write_labeled_csv`].
pub fn read_labeled_csv(path: impl AsRef<Path>) -> IoResult<LabeledDataset<f64>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    check_header(&header, LABELED_HEADER)?;
    let mut t = Vec::new();
    let mut x_p = Vec::new();
    let mut features = Matrix::zeros(0, 3);
    let mut target = Vec::new();
    let mut included = Vec::new();
    for item in data_lines(reader) {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 7 {
            return Err(FormatError::Parse {
                line: line_no,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let nums = parse_fields(&fields[..6].join(","), 6, line_no)?;
        let inc = match fields[6] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(FormatError::Parse {
                    line: line_no,
                    message: format!("\"{other}\" is not a 0/1 inclusion flag"),
                })
            }
        };
        t.push(nums[0]);
        x_p.push(nums[1]);
        features.push_row(&[nums[2], nums[3], nums[4]])?;
        target.push(nums[5]);
        included.push(inc);
    }
    if t.len() < 2 {
        return Err(FormatError::Invalid(crate::Error::InsufficientData(
            "a labeled dataset needs at least 2 rows".into(),
        )));
    }
    let dt = t[1] - t[0];
    for k in 1..t.len() {
        let step = t[k] - t[k - 1];
        if (step - dt).abs() > 1e-9 * (1.0 + t[k].abs()) {
            return Err(FormatError::Parse {
                line: k + 2,
                message: format!("time step {step} deviates from the grid spacing {dt}"),
            });
        }
    }
    Ok(LabeledDataset {
        t,
        x_p,
        features,
        target,
        included,
        dt,
    })
}

/// Writes friction estimates (`t,f_est`).
pub fn write_estimates_csv(path: impl AsRef<Path>, estimates: &[Estimate<f64>]) -> IoResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{ESTIMATES_HEADER}")?;
    for e in estimates {
        writeln!(w, "{},{}", e.t, e.value)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(t, f_est)` pairs written by [`write_estimates_csv`].
pub fn read_estimates_csv(path: impl AsRef<Path>) -> IoResult<Vec<(f64, f64)>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    check_header(&header, ESTIMATES_HEADER)?;
    let mut out = Vec::new();
    for item in data_lines(reader) {
        let (line_no, line) = item?;
        let v = parse_fields(&line, 2, line_no)?;
        out.push((v[0], v[1]));
    }
    Ok(out)
}

/// Writes per-epoch training losses (`epoch,train_mae,val_mae`).
pub fn write_train_log_csv(path: impl AsRef<Path>, log: &TrainLog<f64>) -> IoResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{TRAIN_LOG_HEADER}")?;
    for e in &log.epochs {
        writeln!(w, "{},{},{}", e.epoch, e.train_mae, e.val_mae)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(epoch, train_mae, val_mae)` rows written by
/// [`write_train_log_csv`].
pub fn read_train_log_csv(path: impl AsRef<Path>) -> IoResult<Vec<(usize, f64, f64)>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    check_header(&header, TRAIN_LOG_HEADER)?;
    let mut out = Vec::new();
    for item in data_lines(reader) {
        let (line_no, line) = item?;
        let v = parse_fields(&line, 3, line_no)?;
        if v[0] < 0.0 || v[0].fract() != 0.0 {
            return Err(FormatError::Parse {
                line: line_no,
                message: format!("\"{}\" is not an epoch index", v[0]),
            });
        }
        out.push((v[0] as usize, v[1], v[2]));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Model and report JSON
// ---------------------------------------------------------------------------

const KIND_HYBRID: &str = "hybrid";
const KIND_LUGRE: &str = "lugre";

/// Versioned envelope around a serialized model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelFile<P> {
    pub kind: String,
    pub format_version: u32,
    pub provenance: Provenance,
    pub payload: P,
}

fn read_model_file<P: serde::de::DeserializeOwned>(
    path: impl AsRef<Path>,
    kind: &str,
) -> IoResult<ModelFile<P>> {
    // Probe the envelope first so version/kind mismatches surface as such
    // rather than as payload parse errors.
    #[derive(serde::Deserialize)]
    struct Probe {
        kind: String,
        format_version: u32,
    }
    let bytes = fs::read(path)?;
    let probe: Probe = serde_json::from_slice(&bytes)?;
    if probe.format_version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            got: probe.format_version,
            supported: FORMAT_VERSION,
        });
    }
    if probe.kind != kind {
        return Err(FormatError::WrongKind {
            expected: kind.to_string(),
            got: probe.kind,
        });
    }
    Ok(serde_json::from_slice(&bytes)?)
}

/// Writes a trained hybrid model with its provenance.
pub fn write_hybrid_model(
    path: impl AsRef<Path>,
    model: &HybridModel<f64>,
    provenance: &Provenance,
) -> IoResult<()> {
    model.check()?;
    write_json_file(
        path,
        &ModelFile {
            kind: KIND_HYBRID.to_string(),
            format_version: FORMAT_VERSION,
            provenance: provenance.clone(),
            payload: model,
        },
    )
}

/// Reads and validates a hybrid model file.
pub fn read_hybrid_model(path: impl AsRef<Path>) -> IoResult<(HybridModel<f64>, Provenance)> {
    let file: ModelFile<HybridModel<f64>> = read_model_file(path, KIND_HYBRID)?;
    file.payload.check()?;
    Ok((file.payload, file.provenance))
}

/// Writes identified friction-model parameters with their provenance.
pub fn write_lugre_model(
    path: impl AsRef<Path>,
    params: &LuGreParams<f64>,
    provenance: &Provenance,
) -> IoResult<()> {
    params.validate()?;
    write_json_file(
        path,
        &ModelFile {
            kind: KIND_LUGRE.to_string(),
            format_version: FORMAT_VERSION,
            provenance: provenance.clone(),
            payload: params,
        },
    )
}

/// Reads and validates a friction-model parameter file.
pub fn read_lugre_model(path: impl AsRef<Path>) -> IoResult<(LuGreParams<f64>, Provenance)> {
    let file: ModelFile<LuGreParams<f64>> = read_model_file(path, KIND_LUGRE)?;
    file.payload.validate()?;
    Ok((file.payload, file.provenance))
}

/// Everything the `evaluate` workflow produces, in one versioned file.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    /// Per-recording hybrid vs baseline scores.
    #[serde(default)]
    pub comparisons: Vec<TestComparison<f64>>,
    /// Residual diagnostics of the hybrid estimator over all scored rows.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual: Option<ResidualStats<f64>>,
    /// Predicted-vs-actual line fit over all scored rows.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub parity: Option<ParityFit<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hybrid_latency: Option<LatencyStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline_latency: Option<LatencyStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub provenance: Option<Provenance>,
}

impl EvaluationReport {
    /// Empty report at the current format version.
    #[must_use]
    pub fn new() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            ..Self::default()
        }
    }
}

/// Writes an evaluation report.
pub fn write_report(path: impl AsRef<Path>, report: &EvaluationReport) -> IoResult<()> {
    write_json_file(path, report)
}

/// Reads an evaluation report, rejecting unknown versions.
pub fn read_report(path: impl AsRef<Path>) -> IoResult<EvaluationReport> {
    let bytes = fs::read(path)?;
    let report: EvaluationReport = serde_json::from_slice(&bytes)?;
    if report.format_version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            got: report.format_version,
            supported: FORMAT_VERSION,
        });
    }
    Ok(report)
}
