//! Artifact persistence: CSV tables for plotting, JSON envelopes for
//! structured results, and a content hash tying every file to the
//! configuration that produced it.
//!
//! Every artifact embeds the producing configuration's hash — CSV files in
//! a `#` comment preamble, JSON files in an envelope field — so downstream
//! consumers can refuse to combine results from different configurations.
//! Readers verify the hash when one is expected.

use crate::harness::{ExperimentPlan, Record, SampleSet};
use crate::pde::FieldGrid;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv failure on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("json failure on {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(
        "configuration hash mismatch in {path}: file carries {embedded}, \
         expected {expected}"
    )]
    HashMismatch {
        path: PathBuf,
        embedded: String,
        expected: String,
    },
    #[error("required artifact {path} is missing ({needed_for})")]
    MissingArtifact { path: PathBuf, needed_for: String },
    #[error("malformed artifact {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("sample records are inconsistent: {0}")]
    Samples(#[from] crate::harness::HarnessError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> IoError + '_ {
    move |source| IoError::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// Hex SHA-256 of the canonical (compact JSON) serialization of a value.
/// Identical configurations hash identically regardless of the text file
/// formatting they were parsed from.
pub fn artifact_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_vec(value).expect("serializable artifact");
    let digest = Sha256::digest(&canonical);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fails unless `path` exists; `needed_for` names the consumer so the error
/// tells the user which step to run first.
pub fn require_artifact(path: &Path, needed_for: &str) -> Result<(), IoError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(IoError::MissingArtifact {
            path: path.to_path_buf(),
            needed_for: needed_for.to_string(),
        })
    }
}

// ---------------------------------------------------------------------------
// JSON envelopes
// ---------------------------------------------------------------------------

/// Wrapper adding schema identity and config provenance to a JSON payload.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub config_hash: String,
    pub payload: T,
}

/// Writes `payload` as a pretty-printed JSON envelope.
pub fn write_json<T: Serialize>(
    path: &Path,
    schema: &str,
    config_hash: &str,
    payload: &T,
) -> Result<(), IoError> {
    let envelope = Envelope {
        schema: schema.to_string(),
        config_hash: config_hash.to_string(),
        payload,
    };
    let text = serde_json::to_string_pretty(&envelope).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Reads a JSON envelope, checking the schema and (when given) the hash.
pub fn read_json<T: DeserializeOwned>(
    path: &Path,
    schema: &str,
    expected_hash: Option<&str>,
) -> Result<Envelope<T>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let envelope: Envelope<T> = serde_json::from_str(&text).map_err(json_err(path))?;
    if envelope.schema != schema {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            message: format!("schema {:?}, expected {schema:?}", envelope.schema),
        });
    }
    if let Some(expected) = expected_hash {
        if envelope.config_hash != expected {
            return Err(IoError::HashMismatch {
                path: path.to_path_buf(),
                embedded: envelope.config_hash,
                expected: expected.to_string(),
            });
        }
    }
    Ok(envelope)
}

// ---------------------------------------------------------------------------
// CSV with a hash-bearing comment preamble
// ---------------------------------------------------------------------------

const HASH_PREFIX: &str = "# config-hash: ";

fn open_csv_writer(
    path: &Path,
    schema: &str,
    config_hash: &str,
) -> Result<csv::Writer<fs::File>, IoError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    writeln!(file, "# {schema}").map_err(io_err(path))?;
    writeln!(file, "{HASH_PREFIX}{config_hash}").map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

/// The `config-hash` comment carried in a CSV preamble.
pub fn read_csv_hash(path: &Path) -> Result<String, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix(HASH_PREFIX))
        .map(str::to_string)
        .ok_or_else(|| IoError::Format {
            path: path.to_path_buf(),
            message: "no config-hash comment in the preamble".to_string(),
        })
}

fn check_csv_hash(path: &Path, expected: Option<&str>) -> Result<String, IoError> {
    let embedded = read_csv_hash(path)?;
    if let Some(expected) = expected {
        if embedded != expected {
            return Err(IoError::HashMismatch {
                path: path.to_path_buf(),
                embedded,
                expected: expected.to_string(),
            });
        }
    }
    Ok(embedded)
}

fn open_csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file))
}

// ---------------------------------------------------------------------------
// Sample sets
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    replica: u64,
    time: f64,
    observable: String,
    value: f64,
}

/// Writes an ensemble as `<stem>.csv` (one record per row) plus
/// `<stem>.meta.json` (the plan); both carry the config hash.
pub fn write_sample_set(
    stem: &Path,
    samples: &SampleSet,
    config_hash: &str,
) -> Result<(), IoError> {
    let csv_path = stem.with_extension("csv");
    let mut writer = open_csv_writer(&csv_path, "ssep.sample-set.v1", config_hash)?;
    for r in &samples.records {
        writer
            .serialize(RecordRow {
                replica: r.replica,
                time: r.time,
                observable: r.observable.to_string(),
                value: r.value,
            })
            .map_err(csv_err(&csv_path))?;
    }
    writer.flush().map_err(io_err(&csv_path))?;
    write_json(
        &stem.with_extension("meta.json"),
        "ssep.sample-set-meta.v1",
        config_hash,
        &samples.plan,
    )
}

/// Reads an ensemble back, re-checking record uniqueness and, when given,
/// the config hash on both files.
pub fn read_sample_set(stem: &Path, expected_hash: Option<&str>) -> Result<SampleSet, IoError> {
    let csv_path = stem.with_extension("csv");
    let meta_path = stem.with_extension("meta.json");
    let meta: Envelope<ExperimentPlan> =
        read_json(&meta_path, "ssep.sample-set-meta.v1", expected_hash)?;
    let embedded = check_csv_hash(&csv_path, expected_hash)?;
    if embedded != meta.config_hash {
        return Err(IoError::HashMismatch {
            path: csv_path,
            embedded,
            expected: meta.config_hash,
        });
    }
    let mut records = Vec::new();
    let mut reader = open_csv_reader(&csv_path)?;
    for row in reader.deserialize::<RecordRow>() {
        let row = row.map_err(csv_err(&csv_path))?;
        let observable = row.observable.parse().map_err(|e| IoError::Format {
            path: csv_path.clone(),
            message: e,
        })?;
        records.push(Record {
            replica: row.replica,
            time: row.time,
            observable,
            value: row.value,
        });
    }
    Ok(SampleSet::new(meta.payload, records)?)
}

// ---------------------------------------------------------------------------
// Field grids
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FieldRow {
    time: f64,
    x: i64,
    rho_discrete: f64,
    rho_exact: f64,
    chi: f64,
}

/// Sidecar metadata persisted alongside the per-site field table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldGridMeta {
    pub n: u32,
    pub delta: f64,
    pub window_lo: i64,
    pub window_hi: i64,
    pub requested_times: Vec<f64>,
    pub times: Vec<f64>,
    /// Macroscopic tagged path per time, when the grid carries one.
    pub lln: Option<Vec<f64>>,
}

/// Writes a field grid as `<stem>.csv` (one row per time × site) plus
/// `<stem>.meta.json`.
pub fn write_field_grid(stem: &Path, grid: &FieldGrid, config_hash: &str) -> Result<(), IoError> {
    let csv_path = stem.with_extension("csv");
    let mut writer = open_csv_writer(&csv_path, "ssep.field-grid.v1", config_hash)?;
    for (ti, &t) in grid.times.iter().enumerate() {
        for (si, x) in grid.sites().enumerate() {
            writer
                .serialize(FieldRow {
                    time: t,
                    x,
                    rho_discrete: grid.rho_discrete[ti][si],
                    rho_exact: grid.rho_exact[ti][si],
                    chi: grid.chi[ti][si],
                })
                .map_err(csv_err(&csv_path))?;
        }
    }
    writer.flush().map_err(io_err(&csv_path))?;
    let meta = FieldGridMeta {
        n: grid.n,
        delta: grid.delta,
        window_lo: grid.window.lo,
        window_hi: grid.window.hi,
        requested_times: grid.requested_times.clone(),
        times: grid.times.clone(),
        lln: grid.lln.clone(),
    };
    write_json(
        &stem.with_extension("meta.json"),
        "ssep.field-grid-meta.v1",
        config_hash,
        &meta,
    )
}

// ---------------------------------------------------------------------------
// Theory tables
// ---------------------------------------------------------------------------

/// One theoretical covariance with its quadrature error estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub pair: String,
    pub s: f64,
    pub t: f64,
    pub value: f64,
    pub quad_error: f64,
}

pub fn write_theory_table(
    path: &Path,
    rows: &[TheoryRow],
    config_hash: &str,
) -> Result<(), IoError> {
    let mut writer = open_csv_writer(path, "ssep.theory-table.v1", config_hash)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err(path))?;
    }
    writer.flush().map_err(io_err(path))
}

pub fn read_theory_table(
    path: &Path,
    expected_hash: Option<&str>,
) -> Result<Vec<TheoryRow>, IoError> {
    check_csv_hash(path, expected_hash)?;
    let mut reader = open_csv_reader(path)?;
    reader
        .deserialize::<TheoryRow>()
        .map(|row| row.map_err(csv_err(path)))
        .collect()
}

// ---------------------------------------------------------------------------
// Convergence tables
// ---------------------------------------------------------------------------

pub fn write_convergence_table(
    path: &Path,
    rows: &[crate::pde::ConvergenceRow],
    config_hash: &str,
) -> Result<(), IoError> {
    let mut writer = open_csv_writer(path, "ssep.convergence-table.v1", config_hash)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err(path))?;
    }
    writer.flush().map_err(io_err(path))
}

pub fn read_convergence_table(
    path: &Path,
    expected_hash: Option<&str>,
) -> Result<Vec<crate::pde::ConvergenceRow>, IoError> {
    check_csv_hash(path, expected_hash)?;
    let mut reader = open_csv_reader(path)?;
    reader
        .deserialize::<crate::pde::ConvergenceRow>()
        .map(|row| row.map_err(csv_err(path)))
        .collect()
}

// ---------------------------------------------------------------------------
// Verdict summaries
// ---------------------------------------------------------------------------

/// One pass/fail line in a merged report: which artifact it came from, what
/// was checked, and the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub source: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn write_verdict_table(
    path: &Path,
    rows: &[VerdictRow],
    config_hash: &str,
) -> Result<(), IoError> {
    let mut writer = open_csv_writer(path, "ssep.verdict-table.v1", config_hash)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err(path))?;
    }
    writer.flush().map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Covariance reports
// ---------------------------------------------------------------------------

/// Writes a covariance report as a JSON envelope plus a flat CSV of the
/// per-pair entries for plotting.
pub fn write_covariance_report(
    stem: &Path,
    report: &crate::harness::CovarianceReport,
    config_hash: &str,
) -> Result<(), IoError> {
    write_json(
        &stem.with_extension("json"),
        "ssep.covariance-report.v1",
        config_hash,
        report,
    )?;
    let csv_path = stem.with_extension("csv");
    let mut writer = open_csv_writer(&csv_path, "ssep.covariance-report.v1", config_hash)?;
    writer
        .write_record([
            "pair",
            "s",
            "t",
            "empirical",
            "standard_error",
            "theoretical",
            "z_score",
            "verdict",
        ])
        .map_err(csv_err(&csv_path))?;
    for e in &report.entries {
        let option = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        writer
            .write_record([
                e.pair.clone(),
                e.s.to_string(),
                e.t.to_string(),
                e.empirical.to_string(),
                e.standard_error.to_string(),
                option(e.theoretical),
                option(e.z_score),
                e.verdict.map_or(String::new(), |v| v.to_string()),
            ])
            .map_err(csv_err(&csv_path))?;
    }
    writer.flush().map_err(io_err(&csv_path))
}

pub fn read_covariance_report(
    stem: &Path,
    expected_hash: Option<&str>,
) -> Result<crate::harness::CovarianceReport, IoError> {
    let envelope: Envelope<crate::harness::CovarianceReport> = read_json(
        &stem.with_extension("json"),
        "ssep.covariance-report.v1",
        expected_hash,
    )?;
    Ok(envelope.payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_experiment, ExecMode, Observable, ObservableSpec, WindowChoice};
    use crate::lattice::Window;
    use crate::pde;
    use crate::profile::Profile;

    fn sample_plan() -> ExperimentPlan {
        ExperimentPlan {
            profile: Profile::Constant { value: 0.5 },
            n: 4,
            times: vec![0.0, 0.1],
            observables: vec![
                ObservableSpec::Current,
                ObservableSpec::Correlations { sites: vec![-1, 0] },
            ],
            replicas: 3,
            replica_offset: 0,
            seed: 11,
            window: WindowChoice::Explicit { lo: -10, hi: 10 },
            bond_offset: 0.0,
            conditioned: false,
        }
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let plan = sample_plan();
        let h1 = artifact_hash(&plan);
        let h2 = artifact_hash(&plan);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        let mut other = plan;
        other.seed += 1;
        assert_ne!(h1, artifact_hash(&other));
    }

    #[test]
    fn sample_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let plan = sample_plan();
        let samples = run_experiment(&plan, ExecMode::Sequential).unwrap();
        let hash = artifact_hash(&plan);
        let stem = dir.path().join("samples");
        write_sample_set(&stem, &samples, &hash).unwrap();
        let back = read_sample_set(&stem, Some(&hash)).unwrap();
        assert_eq!(back, samples);
        assert_eq!(
            back.values(Observable::Current, 0.1).unwrap(),
            samples.values(Observable::Current, 0.1).unwrap()
        );
    }

    #[test]
    fn mismatched_hash_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let plan = sample_plan();
        let samples = run_experiment(&plan, ExecMode::Sequential).unwrap();
        let stem = dir.path().join("samples");
        write_sample_set(&stem, &samples, "aaaa").unwrap();
        let err = read_sample_set(&stem, Some("bbbb")).unwrap_err();
        assert!(matches!(err, IoError::HashMismatch { .. }), "{err}");
        // Without an expectation the embedded hash is accepted as-is.
        assert!(read_sample_set(&stem, None).is_ok());
    }

    #[test]
    fn csv_preamble_is_commented_and_recoverable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theory.csv");
        let rows = vec![TheoryRow {
            pair: "current×current".to_string(),
            s: 0.25,
            t: 1.0,
            value: 0.1234,
            quad_error: 1e-9,
        }];
        write_theory_table(&path, &rows, "cafe").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# ssep.theory-table.v1\n# config-hash: cafe\n"));
        assert_eq!(read_csv_hash(&path).unwrap(), "cafe");
        assert_eq!(read_theory_table(&path, Some("cafe")).unwrap(), rows);
    }

    #[test]
    fn field_grid_round_trips_through_csv_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let profile = Profile::Constant { value: 0.25 };
        let grid = pde::build_field_grid(&profile, 4, Window::new(-6, 6), &[0.0, 0.2], None, false)
            .unwrap();
        let stem = dir.path().join("grid");
        write_field_grid(&stem, &grid, "beef").unwrap();
        let meta: Envelope<FieldGridMeta> = read_json(
            &stem.with_extension("meta.json"),
            "ssep.field-grid-meta.v1",
            Some("beef"),
        )
        .unwrap();
        assert_eq!(meta.payload.n, 4);
        assert_eq!(meta.payload.window_lo, -6);
        assert!(meta.payload.lln.is_none());
        let hash = read_csv_hash(&stem.with_extension("csv")).unwrap();
        assert_eq!(hash, "beef");
    }

    #[test]
    fn covariance_report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let report = crate::harness::CovarianceReport {
            entries: vec![crate::harness::ReportEntry {
                pair: "tagged×tagged".to_string(),
                s: 0.25,
                t: 1.0,
                empirical: 0.5,
                standard_error: 0.01,
                theoretical: Some(0.49),
                z_score: Some(1.0),
                verdict: Some(true),
            }],
            moments: vec![],
            k_sigma: Some(4.0),
            bias_allowance: Some(0.125),
            passed: Some(true),
        };
        let stem = dir.path().join("report");
        write_covariance_report(&stem, &report, "feed").unwrap();
        let back = read_covariance_report(&stem, Some("feed")).unwrap();
        assert_eq!(back, report);
        let err = read_covariance_report(&stem, Some("dead")).unwrap_err();
        assert!(matches!(err, IoError::HashMismatch { .. }));
    }

    #[test]
    fn convergence_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            pde::ConvergenceRow {
                n: 16,
                realized_time: 0.5,
                sup_error: 1.2e-3,
            },
            pde::ConvergenceRow {
                n: 32,
                realized_time: 0.5,
                sup_error: 3.1e-4,
            },
        ];
        let path = dir.path().join("convergence.csv");
        write_convergence_table(&path, &rows, "abcd").unwrap();
        let back = read_convergence_table(&path, Some("abcd")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].n, 32);
        assert_eq!(back[1].sup_error, 3.1e-4);
        let err = read_convergence_table(&path, Some("ffff")).unwrap_err();
        assert!(matches!(err, IoError::HashMismatch { .. }));
    }

    #[test]
    fn verdict_table_quotes_commas_in_details() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![VerdictRow {
            source: "verify".to_string(),
            name: "particle-conservation".to_string(),
            passed: true,
            detail: "max |ΔN| = 0, over 8 replicas".to_string(),
        }];
        let path = dir.path().join("verdicts.csv");
        write_verdict_table(&path, &rows, "0042").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"max |ΔN| = 0, over 8 replicas\""));
        assert_eq!(read_csv_hash(&path).unwrap(), "0042");
    }

    #[test]
    fn missing_artifact_error_names_the_file() {
        let err =
            require_artifact(Path::new("/nonexistent/never.csv"), "the compare step").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("never.csv"), "{text}");
        assert!(text.contains("compare"), "{text}");
    }

    #[test]
    fn json_schema_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_json(&path, "ssep.a.v1", "00", &vec![1, 2, 3]).unwrap();
        let err = read_json::<Vec<i32>>(&path, "ssep.b.v1", None).unwrap_err();
        assert!(matches!(err, IoError::Format { .. }));
    }
}
