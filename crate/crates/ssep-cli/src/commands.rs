//! The six operations behind the subcommands.
//!
//! Each operation takes the validated config plus its hash, writes artifacts
//! into the configured output directory, prints a human-readable summary,
//! and returns whether every verdict it produced passed (operations that
//! produce no verdicts return `true`).  Runtime failures — missing upstream
//! artifacts, hash mismatches, simulation or quadrature errors — surface as
//! [`CmdError`] and map to exit code 3.

use crate::config::{PairKind, RunConfig};
use ssep::gauss::{self, KernelContext};
use ssep::harness::{
    self, CovarianceReport, ExecMode, ObsAt, Observable, PairRequest, TheoryValue,
};
use ssep::io::{self, TheoryRow, VerdictRow};
use ssep::pde;
use ssep::verify::{self, VerificationReport};
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CmdError {
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error(transparent)]
    Pde(#[from] pde::PdeError),
    #[error(transparent)]
    Gauss(#[from] gauss::GaussError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("cannot create output directory {path}: {source}")]
    OutDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot configure the thread pool: {0}")]
    Threads(String),
    #[error(
        "theory table contains unsupported pair label {0:?} \
         (expected \"current×current\" or \"tagged×tagged\")"
    )]
    UnknownPair(String),
}

/// Resolves `--threads` into an execution mode, sizing the global worker
/// pool when an explicit count above one is requested.  One thread selects
/// the sequential path, which is bitwise-reproducible independent of any
/// pool scheduling (the parallel path is too, by per-replica streams, but
/// the sequential path also removes the pool entirely).
pub fn install_threads(threads: Option<u32>) -> Result<ExecMode, CmdError> {
    match threads {
        Some(1) => Ok(ExecMode::Sequential),
        Some(k) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k as usize)
                .build_global()
                .map_err(|e| CmdError::Threads(e.to_string()))?;
            Ok(ExecMode::Parallel)
        }
        None => Ok(ExecMode::Parallel),
    }
}

fn ensure_out(cfg: &RunConfig) -> Result<PathBuf, CmdError> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|source| CmdError::OutDir {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate(cfg: &RunConfig, hash: &str, mode: ExecMode) -> Result<bool, CmdError> {
    let out = ensure_out(cfg)?;
    let plan = cfg.plan();
    let started = Instant::now();
    let samples = harness::run_experiment(&plan, mode)?;
    let stem = out.join("samples");
    io::write_sample_set(&stem, &samples, hash)?;
    println!(
        "simulate: {} replicas × {} times on N = {} ({} records) in {:.1} s",
        plan.replicas,
        plan.times.len(),
        plan.n,
        samples.records.len(),
        started.elapsed().as_secs_f64()
    );
    println!(
        "  wrote {} and {}",
        stem.with_extension("csv").display(),
        stem.with_extension("meta.json").display()
    );
    Ok(true)
}

// ---------------------------------------------------------------------------
// pde
// ---------------------------------------------------------------------------

pub fn run_pde(cfg: &RunConfig, hash: &str) -> Result<bool, CmdError> {
    let out = ensure_out(cfg)?;
    let plan = cfg.plan();
    let window = plan.resolved_window();
    let delta = cfg.pde.delta_n2 / (f64::from(plan.n) * f64::from(plan.n));
    let with_lln = cfg.plan.observables.tagged || cfg.plan.observables.tagged_position;
    let grid = pde::build_field_grid(
        &cfg.plan.profile,
        plan.n,
        window,
        &cfg.plan.times,
        Some(delta),
        with_lln,
    )?;
    for (i, &t) in grid.times.iter().enumerate() {
        let sup = grid.rho_discrete[i]
            .iter()
            .zip(&grid.rho_exact[i])
            .map(|(d, e)| (d - e).abs())
            .fold(0.0_f64, f64::max);
        println!("pde: t = {t:.4}  sup |ρ_N − ρ| = {sup:.3e}");
    }
    let stem = out.join("field");
    io::write_field_grid(&stem, &grid, hash)?;

    let rows = pde::convergence_check(
        &cfg.plan.profile,
        cfg.pde.convergence_time,
        &cfg.pde.convergence_sizes,
    )?;
    for row in &rows {
        println!(
            "pde: convergence N = {:>4}  t = {:.4}  sup error = {:.3e}",
            row.n, row.realized_time, row.sup_error
        );
    }
    let conv_path = out.join("convergence.csv");
    io::write_convergence_table(&conv_path, &rows, hash)?;
    println!(
        "  wrote {}, {} and {}",
        stem.with_extension("csv").display(),
        stem.with_extension("meta.json").display(),
        conv_path.display()
    );
    Ok(true)
}

// ---------------------------------------------------------------------------
// theory
// ---------------------------------------------------------------------------

fn pair_label(kind: PairKind) -> &'static str {
    match kind {
        PairKind::Current => "current×current",
        PairKind::Tagged => "tagged×tagged",
    }
}

pub fn theory(cfg: &RunConfig, hash: &str) -> Result<bool, CmdError> {
    let out = ensure_out(cfg)?;
    let ctx = KernelContext::new(cfg.plan.profile.clone())?
        .with_quad_tol(cfg.theory.quad_tol)
        .with_truncation_radius(cfg.theory.truncation_radius);
    let mut rows = Vec::new();
    for p in &cfg.theory.pairs {
        let cv = match p.kind {
            PairKind::Current => gauss::current_covariance(&ctx, p.s, p.t, cfg.plan.bond_offset)?,
            PairKind::Tagged => gauss::tagged_covariance(&ctx, p.s, p.t)?,
        };
        println!(
            "theory: {} ({}, {}) = {:.8e}  (quadrature error ≤ {:.1e})",
            pair_label(p.kind),
            p.s,
            p.t,
            cv.value,
            cv.quad_error
        );
        rows.push(TheoryRow {
            pair: pair_label(p.kind).to_string(),
            s: p.s,
            t: p.t,
            value: cv.value,
            quad_error: cv.quad_error,
        });
    }
    if rows.is_empty() {
        println!("theory: no pairs configured ([[theory.pairs]]); wrote an empty table");
    }
    let path = out.join("theory.csv");
    io::write_theory_table(&path, &rows, hash)?;
    println!("  wrote {}", path.display());
    Ok(true)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

pub fn compare(cfg: &RunConfig, hash: &str) -> Result<bool, CmdError> {
    let out = ensure_out(cfg)?;
    let samples_stem = out.join("samples");
    let theory_path = out.join("theory.csv");
    io::require_artifact(
        &samples_stem.with_extension("csv"),
        "the comparison (run `ssep simulate` first)",
    )?;
    io::require_artifact(
        &samples_stem.with_extension("meta.json"),
        "the comparison (run `ssep simulate` first)",
    )?;
    io::require_artifact(&theory_path, "the comparison (run `ssep theory` first)")?;

    let samples = io::read_sample_set(&samples_stem, Some(hash))?;
    let rows = io::read_theory_table(&theory_path, Some(hash))?;
    if let Some(bad) = rows
        .iter()
        .find(|r| r.pair != pair_label(PairKind::Current) && r.pair != pair_label(PairKind::Tagged))
    {
        return Err(CmdError::UnknownPair(bad.pair.clone()));
    }

    let groups = [
        (
            PairKind::Current,
            Observable::Current,
            cfg.compare.k_sigma,
            "compare-current",
        ),
        (
            PairKind::Tagged,
            Observable::Tagged,
            cfg.compare.k_sigma_tagged,
            "compare-tagged",
        ),
    ];
    let allowance = harness::bias_allowance(cfg.compare.bias_coefficient, cfg.plan.n);
    let mut all_ok = true;
    let mut any = false;
    for (kind, observable, k_sigma, stem) in groups {
        let group: Vec<&TheoryRow> = rows.iter().filter(|r| r.pair == pair_label(kind)).collect();
        if group.is_empty() {
            continue;
        }
        any = true;
        let pairs: Vec<PairRequest> = group
            .iter()
            .map(|r| PairRequest::new(ObsAt::new(observable, r.s), ObsAt::new(observable, r.t)))
            .collect();
        let mut singles: Vec<ObsAt> = Vec::new();
        for r in &group {
            for time in [r.s, r.t] {
                if !singles.iter().any(|o| o.time == time) {
                    singles.push(ObsAt::new(observable, time));
                }
            }
        }
        let skeleton = harness::estimate_moments(&samples, &pairs, &singles)?;
        let theory: Vec<TheoryValue> = group
            .iter()
            .map(|r| TheoryValue {
                pair: r.pair.clone(),
                s: r.s,
                t: r.t,
                value: r.value,
            })
            .collect();
        let report = harness::compare(skeleton, &theory, k_sigma, allowance)?;
        for e in &report.entries {
            println!(
                "compare: {} {} ({}, {})  empirical {:.6e}  theory {:.6e}  z = {:.2}",
                if e.verdict == Some(true) {
                    "PASS"
                } else {
                    "FAIL"
                },
                e.pair,
                e.s,
                e.t,
                e.empirical,
                e.theoretical.unwrap_or(f64::NAN),
                e.z_score.unwrap_or(f64::NAN),
            );
        }
        io::write_covariance_report(&out.join(stem), &report, hash)?;
        all_ok &= report.passed == Some(true);
    }
    if !any {
        println!("compare: the theory table has no rows; nothing to judge");
    }
    Ok(all_ok)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

pub fn run_verify(cfg: &RunConfig, hash: &str) -> Result<bool, CmdError> {
    let out = ensure_out(cfg)?;
    let started = Instant::now();
    let report = verify::run_invariant_suite(cfg.plan.seed, cfg.plan.replicas);
    for check in &report.checks {
        println!(
            "verify: {} {} — {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    println!(
        "verify: {} of {} checks passed in {:.1} s",
        report.checks.iter().filter(|c| c.passed).count(),
        report.checks.len(),
        started.elapsed().as_secs_f64()
    );
    let path = out.join("verify.json");
    io::write_json(&path, "ssep.verification.v1", hash, &report)?;
    println!("  wrote {}", path.display());
    Ok(report.passed)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct ReportSections {
    verify: VerificationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    compare_current: Option<CovarianceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    compare_tagged: Option<CovarianceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    convergence: Option<Vec<pde::ConvergenceRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theory: Option<Vec<TheoryRow>>,
}

#[derive(serde::Serialize)]
struct ReportPayload {
    all_passed: bool,
    verdicts: Vec<VerdictRow>,
    sections: ReportSections,
}

fn covariance_verdicts(source: &str, report: &CovarianceReport, rows: &mut Vec<VerdictRow>) {
    for e in &report.entries {
        rows.push(VerdictRow {
            source: source.to_string(),
            name: format!("{} ({}, {})", e.pair, e.s, e.t),
            passed: e.verdict == Some(true),
            detail: format!(
                "empirical {:.6e}, theory {:.6e}, |z| gate {}",
                e.empirical,
                e.theoretical.unwrap_or(f64::NAN),
                report.k_sigma.map_or(String::new(), |k| k.to_string()),
            ),
        });
    }
}

/// Merges every artifact in the output directory into one report.  The
/// verification report and at least one covariance comparison are required;
/// the convergence and theory tables are joined when present.  Every input
/// must carry this run's config hash.
pub fn report(cfg: &RunConfig, hash: &str) -> Result<bool, CmdError> {
    let out = ensure_out(cfg)?;
    let verify_path = out.join("verify.json");
    io::require_artifact(&verify_path, "the report (run `ssep verify` first)")?;
    let current_stem = out.join("compare-current");
    let tagged_stem = out.join("compare-tagged");
    if !current_stem.with_extension("json").exists() && !tagged_stem.with_extension("json").exists()
    {
        io::require_artifact(
            &current_stem.with_extension("json"),
            "the report (run `ssep compare` first)",
        )?;
    }

    let verify_report: VerificationReport =
        io::read_json(&verify_path, "ssep.verification.v1", Some(hash))?.payload;
    let compare_current = if current_stem.with_extension("json").exists() {
        Some(io::read_covariance_report(&current_stem, Some(hash))?)
    } else {
        None
    };
    let compare_tagged = if tagged_stem.with_extension("json").exists() {
        Some(io::read_covariance_report(&tagged_stem, Some(hash))?)
    } else {
        None
    };
    let conv_path = out.join("convergence.csv");
    let convergence = if conv_path.exists() {
        Some(io::read_convergence_table(&conv_path, Some(hash))?)
    } else {
        None
    };
    let theory_path = out.join("theory.csv");
    let theory = if theory_path.exists() {
        Some(io::read_theory_table(&theory_path, Some(hash))?)
    } else {
        None
    };

    let mut verdicts = Vec::new();
    for check in &verify_report.checks {
        verdicts.push(VerdictRow {
            source: "verify".to_string(),
            name: check.name.clone(),
            passed: check.passed,
            detail: check.detail.clone(),
        });
    }
    if let Some(r) = &compare_current {
        covariance_verdicts("compare-current", r, &mut verdicts);
    }
    if let Some(r) = &compare_tagged {
        covariance_verdicts("compare-tagged", r, &mut verdicts);
    }

    let all_passed = verdicts.iter().all(|v| v.passed);
    for v in &verdicts {
        println!(
            "report: {} [{}] {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.source,
            v.name
        );
    }
    println!(
        "report: {} of {} verdicts passed",
        verdicts.iter().filter(|v| v.passed).count(),
        verdicts.len()
    );

    let payload = ReportPayload {
        all_passed,
        verdicts,
        sections: ReportSections {
            verify: verify_report,
            compare_current,
            compare_tagged,
            convergence,
            theory,
        },
    };
    let wants = |f: &str| cfg.output.formats.iter().any(|x| x == f);
    if wants("json") {
        let path = out.join("report.json");
        io::write_json(&path, "ssep.report.v1", hash, &payload)?;
        println!("  wrote {}", path.display());
    }
    if wants("csv") {
        let path = out.join("report.csv");
        io::write_verdict_table(&path, &payload.verdicts, hash)?;
        println!("  wrote {}", path.display());
    }
    Ok(all_passed)
}
