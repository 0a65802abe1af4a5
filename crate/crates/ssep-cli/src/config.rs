//! Versioned TOML run configuration.
//!
//! One file describes a whole run: the replica-ensemble plan, the
//! finite-difference controls, the quadrature controls for the covariance
//! formulas, the comparison gates, and the output layout.  Parsing either
//! returns a fully validated [`RunConfig`] or an error that lists **every**
//! violated constraint at once, each tagged with the config path that caused
//! it.  Unknown keys are rejected by the deserializer (with the offending
//! key in the message), so typos cannot silently fall back to defaults.
//!
//! The SHA-256 hash of the effective config (after command-line overrides)
//! is embedded in every artifact; downstream steps refuse inputs whose hash
//! does not match their own config.

use serde::{Deserialize, Serialize};
use ssep::harness::{ExperimentPlan, ObservableSpec, WindowChoice};
use ssep::profile::Profile;
use ssep::testfn::TestFn;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Schema identifier a config file must declare in its `schema` key.
pub const SCHEMA: &str = "ssep.run.v1";

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// Top-level run configuration (`schema = "ssep.run.v1"`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must equal [`SCHEMA`]; guards against feeding a future config format
    /// to an older binary.
    pub schema: String,
    pub plan: PlanSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// The replica-ensemble plan: what to simulate and what to record.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    /// Initial density profile, tagged by `kind` (`constant`, `linear-ramp`,
    /// `smoothstep`, `tanh-front`, `erf-front`, `tabulated`).
    pub profile: Profile,
    /// Scaling parameter `N` (sites per unit macroscopic length).
    pub n: u32,
    /// Observation times in macroscopic units, sorted, nonnegative.
    pub times: Vec<f64>,
    pub replicas: u64,
    pub seed: u64,
    /// First global replica id; lets disjoint half-ensembles share streams.
    #[serde(default)]
    pub replica_offset: u64,
    /// Simulation window override; defaults to the diffusive rule
    /// `[−L, L]`, `L = ⌈κ·N·√T⌉ + margin`.
    #[serde(default)]
    pub window: Option<WindowChoice>,
    /// Macroscopic position of the current-counting bond.
    #[serde(default)]
    pub bond_offset: f64,
    /// Condition the initial measure on an occupied origin and tag it
    /// (required by the tagged-particle observables).
    #[serde(default)]
    pub conditioned: bool,
    #[serde(default)]
    pub observables: ObservablesSection,
}

/// Which observable families to record; all default to off/empty.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservablesSection {
    /// Normalized centered current through the bond at `plan.bond_offset`.
    pub current: bool,
    /// Normalized tagged-particle fluctuation `(X_t − N·u_t)/√N`.
    pub tagged: bool,
    /// Raw macroscopic tagged position `X_t/N`.
    pub tagged_position: bool,
    /// Density fluctuation fields tested against ramp functions of the
    /// listed widths (each width `k` gives the ramp falling 1 → 0 over
    /// `[0, k]`).
    pub field_ramps: Vec<u32>,
    /// Density fluctuation fields tested against indicator functions of the
    /// listed intervals.
    pub field_indicators: Vec<(f64, f64)>,
    /// Centered occupancies at the listed sites (two-point correlations).
    pub correlation_sites: Vec<i64>,
    /// Bond martingale value and quadratic variation at the listed bonds.
    pub martingale_bonds: Vec<i64>,
    /// Block averages over the listed macroscopic intervals.
    pub blocks: Vec<(f64, f64)>,
    /// Current-vs-ramp-field discrepancies, one per ramp width.
    pub ramp_widths: Vec<u32>,
}

/// Finite-difference controls for the discrete density evolution.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    /// Stability ratio `δN²` for the explicit scheme.  Must satisfy
    /// `δN² ≤ 1/4` so each update stays a convex combination of neighboring
    /// site values (maximum principle and positivity).
    pub delta_n2: f64,
    /// Lattice sizes scanned by the mesh-convergence table.
    pub convergence_sizes: Vec<u32>,
    /// Time at which the convergence table compares against the continuum
    /// solution.
    pub convergence_time: f64,
}

impl Default for PdeSection {
    fn default() -> Self {
        PdeSection {
            delta_n2: 0.25,
            convergence_sizes: vec![16, 32, 64, 128],
            convergence_time: 0.5,
        }
    }
}

/// Quadrature controls for the closed-form covariance evaluations.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    /// Absolute tolerance for the adaptive quadrature.
    pub quad_tol: f64,
    /// Heat-kernel truncation radius in standard deviations.
    pub truncation_radius: f64,
    /// Covariance pairs to evaluate.
    pub pairs: Vec<PairSection>,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            quad_tol: 1e-8,
            truncation_radius: 8.0,
            pairs: Vec::new(),
        }
    }
}

/// One covariance to evaluate: `Cov(O_s, O_t)` for the chosen observable.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSection {
    pub kind: PairKind,
    pub s: f64,
    pub t: f64,
}

/// Observable family of a theory pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    /// Normalized current through the bond at `plan.bond_offset`.
    Current,
    /// Normalized tagged-particle fluctuation.
    Tagged,
}

/// Gates for judging empirical covariances against the formulas.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Standard-error multiple allowed for current covariances.
    pub k_sigma: f64,
    /// Standard-error multiple allowed for tagged covariances (wider: the
    /// tagged limit converges more slowly).
    pub k_sigma_tagged: f64,
    /// Finite-size slack coefficient `c` in the allowance `c/√N`.
    pub bias_coefficient: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            k_sigma: 3.0,
            k_sigma_tagged: 4.0,
            bias_coefficient: 1.0,
        }
    }
}

/// Where and in which formats artifacts are written.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; created if absent.
    pub dir: PathBuf,
    /// Formats for the merged report: any subset of `"json"`, `"csv"`.
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            formats: vec!["json".into(), "csv".into()],
        }
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// One violated constraint, located by its config path.
#[derive(Clone, Debug)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn render_violations(violations: &[Violation]) -> String {
    let mut out = format!("config violates {} constraint(s):", violations.len());
    for v in violations {
        out.push_str("\n  - ");
        out.push_str(&v.to_string());
    }
    out
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Syntax errors, type mismatches, missing required keys, and unknown
    /// keys; the deserializer message names the offending key and location.
    #[error("config does not match the schema: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config declares schema {found:?}; this binary reads {SCHEMA:?}")]
    Schema { found: String },
    #[error("{}", render_violations(.violations))]
    Invalid { violations: Vec<Violation> },
}

// ---------------------------------------------------------------------------
// Parsing and validation
// ---------------------------------------------------------------------------

/// Reads and fully validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Parses config text: syntax and unknown keys first, then the schema tag,
/// then every semantic constraint (collected, not short-circuited).
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text)?;
    if cfg.schema != SCHEMA {
        return Err(ConfigError::Schema { found: cfg.schema });
    }
    let violations = cfg.validate();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid { violations })
    }
}

impl RunConfig {
    /// Collects every violated constraint; empty means the config is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let push = |v: &mut Vec<Violation>, path: &str, message: String| {
            v.push(Violation {
                path: path.to_string(),
                message,
            });
        };

        // --- plan scalars the library does not re-check (finiteness) ---
        for (i, &t) in self.plan.times.iter().enumerate() {
            if !t.is_finite() {
                push(
                    &mut v,
                    &format!("plan.times[{i}]"),
                    format!("time {t} is not finite"),
                );
            }
        }
        if !self.plan.bond_offset.is_finite() {
            push(
                &mut v,
                "plan.bond_offset",
                "bond offset must be finite".into(),
            );
        }
        if let Some(WindowChoice::Rule { kappa, margin }) = self.plan.window {
            if !kappa.is_finite() || kappa <= 0.0 {
                push(
                    &mut v,
                    "plan.window.kappa",
                    format!("window factor must be positive, got {kappa}"),
                );
            }
            if margin < 0 {
                push(
                    &mut v,
                    "plan.window.margin",
                    format!("window margin must be nonnegative, got {margin}"),
                );
            }
        }

        // --- observable parameters that feed test-function constructors ---
        let obs = &self.plan.observables;
        let mut constructible = true;
        for (i, &k) in obs.field_ramps.iter().enumerate() {
            if k == 0 {
                push(
                    &mut v,
                    &format!("plan.observables.field_ramps[{i}]"),
                    "ramp width must be ≥ 1".into(),
                );
                constructible = false;
            }
        }
        for (i, &(a, b)) in obs.field_indicators.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                push(
                    &mut v,
                    &format!("plan.observables.field_indicators[{i}]"),
                    format!("indicator interval [{a}, {b}] must be finite and nonempty"),
                );
                constructible = false;
            }
        }
        for (i, &k) in obs.ramp_widths.iter().enumerate() {
            if k == 0 {
                push(
                    &mut v,
                    &format!("plan.observables.ramp_widths[{i}]"),
                    "ramp width must be ≥ 1".into(),
                );
                constructible = false;
            }
        }
        if !obs.ramp_widths.is_empty() && !obs.ramp_widths.windows(2).all(|w| w[0] < w[1]) {
            push(
                &mut v,
                "plan.observables.ramp_widths",
                "ramp widths must increase strictly".into(),
            );
            constructible = false;
        }

        // --- everything else plan-structural: delegate to the plan's own
        //     validator, which collects all problems, then relocate each ---
        if constructible {
            if let Err(e) = self.plan().validate() {
                let joined = e.to_string();
                let body = joined
                    .strip_prefix("invalid experiment configuration: ")
                    .unwrap_or(&joined);
                for problem in body.split("; ") {
                    push(&mut v, plan_problem_path(problem), problem.to_string());
                }
            }
        }

        // --- pde controls ---
        let pde = &self.pde;
        if !pde.delta_n2.is_finite() || pde.delta_n2 <= 0.0 {
            push(
                &mut v,
                "pde.delta_n2",
                format!("stability ratio must be positive, got {}", pde.delta_n2),
            );
        } else if pde.delta_n2 > 0.25 {
            push(
                &mut v,
                "pde.delta_n2",
                format!(
                    "δN² = {} violates the stability requirement δN² ≤ 1/4: beyond it the \
                     explicit update is no longer a convex combination of neighboring site \
                     values and the discrete maximum principle fails",
                    pde.delta_n2
                ),
            );
        }
        if pde.convergence_sizes.is_empty() {
            push(
                &mut v,
                "pde.convergence_sizes",
                "at least one lattice size is required".into(),
            );
        }
        for (i, &n) in pde.convergence_sizes.iter().enumerate() {
            if n == 0 {
                push(
                    &mut v,
                    &format!("pde.convergence_sizes[{i}]"),
                    "lattice size must be ≥ 1".into(),
                );
            }
        }
        if !pde.convergence_sizes.windows(2).all(|w| w[0] < w[1]) {
            push(
                &mut v,
                "pde.convergence_sizes",
                "sizes must increase strictly".into(),
            );
        }
        if !pde.convergence_time.is_finite() || pde.convergence_time <= 0.0 {
            push(
                &mut v,
                "pde.convergence_time",
                format!("must be a positive time, got {}", pde.convergence_time),
            );
        }

        // --- theory controls ---
        let th = &self.theory;
        if !th.quad_tol.is_finite() || th.quad_tol <= 0.0 || th.quad_tol > 1e-2 {
            push(
                &mut v,
                "theory.quad_tol",
                format!("must lie in (0, 0.01], got {}", th.quad_tol),
            );
        }
        if !th.truncation_radius.is_finite() || th.truncation_radius < 3.0 {
            push(
                &mut v,
                "theory.truncation_radius",
                format!(
                    "must be ≥ 3 standard deviations, got {}",
                    th.truncation_radius
                ),
            );
        }
        for (i, p) in th.pairs.iter().enumerate() {
            let path = format!("theory.pairs[{i}]");
            if !(p.s.is_finite() && p.t.is_finite() && p.s >= 0.0 && p.t >= 0.0) {
                push(
                    &mut v,
                    &path,
                    format!(
                        "times must be finite and nonnegative, got s = {}, t = {}",
                        p.s, p.t
                    ),
                );
            } else if p.s > p.t {
                push(
                    &mut v,
                    &path,
                    format!(
                        "covariance pairs need s ≤ t, got s = {} after t = {}",
                        p.s, p.t
                    ),
                );
            }
        }

        // --- comparison gates ---
        let cmp = &self.compare;
        if !cmp.k_sigma.is_finite() || cmp.k_sigma <= 0.0 {
            push(
                &mut v,
                "compare.k_sigma",
                format!("must be positive, got {}", cmp.k_sigma),
            );
        }
        if !cmp.k_sigma_tagged.is_finite() || cmp.k_sigma_tagged <= 0.0 {
            push(
                &mut v,
                "compare.k_sigma_tagged",
                format!("must be positive, got {}", cmp.k_sigma_tagged),
            );
        }
        if !cmp.bias_coefficient.is_finite() || cmp.bias_coefficient < 0.0 {
            push(
                &mut v,
                "compare.bias_coefficient",
                format!("must be nonnegative, got {}", cmp.bias_coefficient),
            );
        }

        // --- output layout ---
        if self.output.formats.is_empty() {
            push(
                &mut v,
                "output.formats",
                "at least one of \"json\", \"csv\" is required".into(),
            );
        }
        for (i, f) in self.output.formats.iter().enumerate() {
            if f != "json" && f != "csv" {
                push(
                    &mut v,
                    &format!("output.formats[{i}]"),
                    format!("unknown format {f:?} (expected \"json\" or \"csv\")"),
                );
            }
        }

        v
    }

    /// Expands the observable table into the harness's observable list.
    pub fn observables(&self) -> Vec<ObservableSpec> {
        let o = &self.plan.observables;
        let mut out = Vec::new();
        if o.current {
            out.push(ObservableSpec::Current);
        }
        if o.tagged {
            out.push(ObservableSpec::Tagged);
        }
        if o.tagged_position {
            out.push(ObservableSpec::TaggedPosition);
        }
        let mut functions: Vec<TestFn> = o.field_ramps.iter().map(|&k| TestFn::ramp(k)).collect();
        functions.extend(
            o.field_indicators
                .iter()
                .map(|&(a, b)| TestFn::indicator(a, b)),
        );
        if !functions.is_empty() {
            out.push(ObservableSpec::Fields { functions });
        }
        if !o.correlation_sites.is_empty() {
            out.push(ObservableSpec::Correlations {
                sites: o.correlation_sites.clone(),
            });
        }
        if !o.martingale_bonds.is_empty() {
            out.push(ObservableSpec::Martingales {
                bonds: o.martingale_bonds.clone(),
            });
        }
        if !o.blocks.is_empty() {
            out.push(ObservableSpec::Blocks {
                intervals: o.blocks.clone(),
            });
        }
        if !o.ramp_widths.is_empty() {
            out.push(ObservableSpec::RampDiscrepancies {
                widths: o.ramp_widths.clone(),
            });
        }
        out
    }

    /// Builds the executable experiment plan.
    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            profile: self.plan.profile.clone(),
            n: self.plan.n,
            times: self.plan.times.clone(),
            observables: self.observables(),
            replicas: self.plan.replicas,
            replica_offset: self.plan.replica_offset,
            seed: self.plan.seed,
            window: self.plan.window.unwrap_or_default(),
            bond_offset: self.plan.bond_offset,
            conditioned: self.plan.conditioned,
        }
    }

    /// Applies command-line overrides.  Must run **before** [`Self::hash`]:
    /// artifacts are keyed by the effective configuration.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        replicas: Option<u64>,
        out: Option<&Path>,
    ) {
        if let Some(seed) = seed {
            self.plan.seed = seed;
        }
        if let Some(replicas) = replicas {
            self.plan.replicas = replicas;
        }
        if let Some(out) = out {
            self.output.dir = out.to_path_buf();
        }
    }

    /// Hash of the effective config, embedded in every artifact.
    ///
    /// The output section is excluded: the hash identifies the scientific
    /// content of a run (plan, numerics, gates), so artifacts stay valid
    /// when a directory is renamed or the report format list changes.
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.output = OutputSection::default();
        ssep::io::artifact_hash(&keyed)
    }
}

/// Best-effort config path for a problem reported by the plan validator.
fn plan_problem_path(problem: &str) -> &'static str {
    if problem.starts_with("replicas") {
        "plan.replicas"
    } else if problem.starts_with("scaling parameter") {
        "plan.n"
    } else if problem.contains("observation time") || problem.starts_with("times") {
        "plan.times"
    } else if problem.starts_with("invalid profile") {
        "plan.profile"
    } else if problem.contains("conditioned") {
        "plan.conditioned"
    } else if problem.contains("window") {
        "plan.window"
    } else {
        "plan"
    }
}
