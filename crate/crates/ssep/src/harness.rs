//! Replica orchestration and statistical verdicts.
//!
//! [`run_experiment`] simulates an ensemble of independent replicas of the
//! exclusion process, snapshots the requested observables at the plan's
//! times, and re-checks the exact lattice identities at every snapshot —
//! a single violation aborts the whole ensemble with the offending
//! `(replica, time)`. Replicas draw from per-replica RNG streams keyed by
//! `(seed, replicaId)`, so results are independent of scheduling and of the
//! sequential/parallel execution mode.
//!
//! On top of the resulting [`SampleSet`] sit the estimators:
//! [`estimate_moments`] (means, covariances, higher moments, all with
//! jackknife standard errors), [`compare`] (verdicts against theoretical
//! covariances with a finite-size bias allowance), [`ramp_decay_test`]
//! (mean-square convergence of the ramp-field approximation to the
//! current), [`correlation_scan`] (two-point correlation scaling), and
//! [`hydro_check`] (block-average convergence to the hydrodynamic
//! profile).

use crate::lattice::{
    self, density_field, initial_density_field, replica_rng, LatticeError, SimState, Window,
};
use crate::pde::{self, DiscreteField, PdeError};
use crate::profile::Profile;
use crate::stats::{self, CovEstimate, MomentSummary, StatsError};
use crate::testfn::TestFn;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Replicas needed before jackknife standard errors are considered valid.
pub const MIN_REPLICAS_FOR_SE: u64 = 30;
/// Replicas needed before two-point correlations rise above shot noise.
pub const MIN_REPLICAS_FOR_CORRELATIONS: u64 = 10_000;
/// Default multiplier `c` in the finite-size bias allowance `c/√N`.
pub const DEFAULT_BIAS_COEFFICIENT: f64 = 1.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(
        "corrupted dynamics in replica {replica} at time {time}: {detail} \
         (an exact lattice identity failed)"
    )]
    CorruptedDynamics {
        replica: u64,
        time: f64,
        detail: String,
    },
    #[error("need at least {need} replicas for this estimator, got {got}")]
    SampleSize { got: u64, need: u64 },
    #[error("no theory/empirical match for key {key}")]
    KeyMismatch { key: String },
    #[error("invalid experiment configuration: {message}")]
    Configuration { message: String },
    #[error("sample sets cannot be merged: {message}")]
    MergeConflict { message: String },
    #[error("sample set has no records for observable {observable} at time {time}")]
    MissingObservable { observable: String, time: f64 },
    #[error("duplicate record for (replica {replica}, time {time}, {observable})")]
    DuplicateRecord {
        replica: u64,
        time: f64,
        observable: String,
    },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

// ---------------------------------------------------------------------------
// Plans and observables
// ---------------------------------------------------------------------------

/// How the simulation window is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WindowChoice {
    /// Symmetric window `[−L, L]`, `L = ⌈κ·N·√T⌉ + margin` with `T` the last
    /// observation time.
    Rule { kappa: f64, margin: i64 },
    /// Explicit, possibly asymmetric window.
    Explicit { lo: i64, hi: i64 },
}

impl WindowChoice {
    pub fn resolve(self, n: u32, t_max: f64) -> Window {
        match self {
            WindowChoice::Rule { kappa, margin } => Window::from_rule(kappa, n, t_max, margin),
            WindowChoice::Explicit { lo, hi } => Window::new(lo, hi),
        }
    }
}

impl Default for WindowChoice {
    fn default() -> Self {
        WindowChoice::Rule {
            kappa: lattice::DEFAULT_WINDOW_FACTOR,
            margin: lattice::DEFAULT_WINDOW_MARGIN,
        }
    }
}

/// Observable families that can be requested in a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservableSpec {
    /// Normalized centered current `Z_t` through the bond at the plan's
    /// macroscopic offset; centered by the discrete-mean current table.
    Current,
    /// Normalized tagged-particle fluctuation `W_t = (X_t − N·u_t)/√N`.
    Tagged,
    /// Raw macroscopic tagged position `X_t/N` (law-of-large-numbers view).
    TaggedPosition,
    /// Density fluctuation fields `Y_t(G)` for each listed test function.
    Fields { functions: Vec<TestFn> },
    /// Centered occupancies `η_t(x) − ρ^N_t(x)` at the listed sites, the raw
    /// material for two-point correlations.
    Correlations { sites: Vec<i64> },
    /// Bond martingale value and quadratic variation at the listed bonds.
    Martingales { bonds: Vec<i64> },
    /// Block averages `N^{−1}Σ_{a≤x/N≤b} η_t(x)` for each interval.
    Blocks { intervals: Vec<(f64, f64)> },
    /// Discrepancies between the normalized current and the ramp-field
    /// increment, one per ramp width.
    RampDiscrepancies { widths: Vec<u32> },
}

/// One concrete recorded observable; indices refer to the expanded lists in
/// the plan (fields, blocks) or to absolute lattice coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Observable {
    Current,
    Tagged,
    TaggedPosition,
    Field(u32),
    Site(i64),
    Martingale(i64),
    MartingaleQv(i64),
    Block(u32),
    RampDiscrepancy(u32),
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Current => write!(f, "current"),
            Observable::Tagged => write!(f, "tagged"),
            Observable::TaggedPosition => write!(f, "tagged-position"),
            Observable::Field(i) => write!(f, "field[{i}]"),
            Observable::Site(x) => write!(f, "site[{x}]"),
            Observable::Martingale(x) => write!(f, "martingale[{x}]"),
            Observable::MartingaleQv(x) => write!(f, "martingale-qv[{x}]"),
            Observable::Block(i) => write!(f, "block[{i}]"),
            Observable::RampDiscrepancy(n) => write!(f, "ramp[{n}]"),
        }
    }
}

impl FromStr for Observable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let indexed = |s: &str, prefix: &str| -> Option<Result<i64, String>> {
            s.strip_prefix(prefix)
                .and_then(|r| r.strip_suffix(']'))
                .map(|v| {
                    v.parse::<i64>()
                        .map_err(|e| format!("bad index in {s:?}: {e}"))
                })
        };
        match s {
            "current" => Ok(Observable::Current),
            "tagged" => Ok(Observable::Tagged),
            "tagged-position" => Ok(Observable::TaggedPosition),
            _ => {
                for (prefix, make) in [
                    (
                        "field[",
                        Box::new(|i: i64| Observable::Field(i as u32))
                            as Box<dyn Fn(i64) -> Observable>,
                    ),
                    ("site[", Box::new(Observable::Site)),
                    ("martingale[", Box::new(Observable::Martingale)),
                    ("martingale-qv[", Box::new(Observable::MartingaleQv)),
                    ("block[", Box::new(|i| Observable::Block(i as u32))),
                    ("ramp[", Box::new(|i| Observable::RampDiscrepancy(i as u32))),
                ] {
                    if let Some(v) = indexed(s, prefix) {
                        return v.map(&*make);
                    }
                }
                Err(format!("unknown observable label {s:?}"))
            }
        }
    }
}

/// Full description of a replica ensemble; hashing its serialized form
/// identifies every derived artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub profile: Profile,
    pub n: u32,
    /// Snapshot times, sorted, nonnegative (macroscopic seconds).
    pub times: Vec<f64>,
    pub observables: Vec<ObservableSpec>,
    pub replicas: u64,
    /// First global replica id; lets disjoint half-ensembles share streams.
    #[serde(default)]
    pub replica_offset: u64,
    pub seed: u64,
    #[serde(default)]
    pub window: WindowChoice,
    /// Macroscopic position of the current bond (`0` → the bond just left
    /// of the origin).
    #[serde(default)]
    pub bond_offset: f64,
    /// Condition the initial measure on an occupied origin and tag it.
    #[serde(default)]
    pub conditioned: bool,
}

/// Lattice bond carrying the current read at macroscopic offset `u`: the
/// bond `(x, x+1)` whose midpoint is nearest `u·N`; at `u = 0` this is the
/// bond just left of the origin, matching the counting identity.
pub fn bond_for_offset(u: f64, n: u32) -> i64 {
    (u * f64::from(n) - 0.5).round() as i64
}

impl ExperimentPlan {
    pub fn t_max(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn resolved_window(&self) -> Window {
        self.window.resolve(self.n, self.t_max())
    }

    fn field_functions(&self) -> Vec<TestFn> {
        let mut out = Vec::new();
        for spec in &self.observables {
            if let ObservableSpec::Fields { functions } = spec {
                out.extend(functions.iter().cloned());
            }
        }
        out
    }

    fn correlation_sites(&self) -> Vec<i64> {
        let mut out = Vec::new();
        for spec in &self.observables {
            if let ObservableSpec::Correlations { sites } = spec {
                out.extend_from_slice(sites);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn martingale_bonds(&self) -> Vec<i64> {
        let mut out = Vec::new();
        for spec in &self.observables {
            if let ObservableSpec::Martingales { bonds } = spec {
                out.extend_from_slice(bonds);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn block_intervals(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for spec in &self.observables {
            if let ObservableSpec::Blocks { intervals } = spec {
                out.extend_from_slice(intervals);
            }
        }
        out
    }

    fn ramp_widths(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for spec in &self.observables {
            if let ObservableSpec::RampDiscrepancies { widths } = spec {
                out.extend_from_slice(widths);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn wants(&self, probe: fn(&ObservableSpec) -> bool) -> bool {
        self.observables.iter().any(probe)
    }

    /// Checks every structural constraint and reports all violations at
    /// once, not just the first.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems: Vec<String> = Vec::new();
        if self.replicas < 2 {
            problems.push(format!("replicas must be ≥ 2, got {}", self.replicas));
        }
        if self.n < 1 {
            problems.push("scaling parameter N must be ≥ 1".to_string());
        }
        if self.times.is_empty() {
            problems.push("at least one observation time is required".to_string());
        }
        for pair in self.times.windows(2) {
            if pair[0] > pair[1] {
                problems.push(format!(
                    "times must be sorted: {} precedes {}",
                    pair[0], pair[1]
                ));
            }
        }
        if let Some(&t) = self.times.iter().find(|&&t| t < 0.0) {
            problems.push(format!("times must be nonnegative, got {t}"));
        }
        if let Err(e) = self.profile.validate() {
            problems.push(format!("invalid profile: {e}"));
        }
        let window = self.resolved_window();
        if !window.contains(0) {
            problems.push(format!(
                "window [{}, {}] must contain the origin",
                window.lo, window.hi
            ));
        }

        let wants_current = self.wants(|s| matches!(s, ObservableSpec::Current));
        let wants_tagged =
            self.wants(|s| matches!(s, ObservableSpec::Tagged | ObservableSpec::TaggedPosition));
        if wants_tagged && !self.conditioned {
            problems.push(
                "tagged observables require a conditioned initial measure \
                 (set conditioned = true)"
                    .to_string(),
            );
        }
        if wants_current {
            let b = bond_for_offset(self.bond_offset, self.n);
            if !window.contains(b) || !window.contains(b + 1) {
                problems.push(format!(
                    "current bond ({b}, {}) at offset {} lies outside the window \
                     [{}, {}]",
                    b + 1,
                    self.bond_offset,
                    window.lo,
                    window.hi
                ));
            }
        }
        let nf = f64::from(self.n);
        for (i, g) in self.field_functions().iter().enumerate() {
            if let Some((lo, hi)) = g.support() {
                let first = (lo * nf).ceil() as i64;
                let last = (hi * nf).ceil() as i64 - 1;
                if first < window.lo || last > window.hi {
                    problems.push(format!(
                        "support [{lo}, {hi}] of field function {i} needs sites \
                         [{first}, {last}], outside the window [{}, {}]",
                        window.lo, window.hi
                    ));
                }
            }
        }
        for n_ramp in self.ramp_widths() {
            let last = (f64::from(n_ramp) * nf).ceil() as i64 - 1;
            if window.lo > -1 || last > window.hi {
                problems.push(format!(
                    "ramp width {n_ramp} needs sites [−1, {last}], outside the \
                     window [{}, {}]",
                    window.lo, window.hi
                ));
            }
        }
        for x in self.correlation_sites() {
            if !window.contains(x) {
                problems.push(format!("correlation site {x} outside the window"));
            }
        }
        for b in self.martingale_bonds() {
            if !window.contains(b) || !window.contains(b + 1) {
                problems.push(format!(
                    "martingale bond ({b}, {}) outside the window",
                    b + 1
                ));
            }
        }
        for (a, b) in self.block_intervals() {
            if a >= b {
                problems.push(format!("block interval [{a}, {b}] is empty"));
            }
            let first = (a * nf).ceil() as i64;
            let last = (b * nf).ceil() as i64 - 1;
            if first < window.lo || last > window.hi {
                problems.push(format!(
                    "block [{a}, {b}] needs sites [{first}, {last}], outside the \
                     window [{}, {}]",
                    window.lo, window.hi
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Configuration {
                message: problems.join("; "),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Sample sets
// ---------------------------------------------------------------------------

/// One recorded value of one observable in one replica at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub replica: u64,
    pub time: f64,
    pub observable: Observable,
    pub value: f64,
}

/// All records of one ensemble, plus the plan that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub plan: ExperimentPlan,
    pub records: Vec<Record>,
}

impl SampleSet {
    /// Wraps records after checking the uniqueness invariant: every
    /// `(replica, time, observable)` key appears exactly once.
    pub fn new(plan: ExperimentPlan, records: Vec<Record>) -> Result<Self, HarnessError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert((r.replica, r.time.to_bits(), r.observable)) {
                return Err(HarnessError::DuplicateRecord {
                    replica: r.replica,
                    time: r.time,
                    observable: r.observable.to_string(),
                });
            }
        }
        Ok(SampleSet { plan, records })
    }

    pub fn replica_count(&self) -> u64 {
        self.plan.replicas
    }

    /// Values of one observable at one time, ordered by replica id; errors
    /// if the ensemble holds no such records.
    pub fn values(&self, observable: Observable, time: f64) -> Result<Vec<f64>, HarnessError> {
        let mut rows: Vec<(u64, f64)> = self
            .records
            .iter()
            .filter(|r| r.observable == observable && r.time == time)
            .map(|r| (r.replica, r.value))
            .collect();
        if rows.is_empty() {
            return Err(HarnessError::MissingObservable {
                observable: observable.to_string(),
                time,
            });
        }
        rows.sort_by_key(|&(replica, _)| replica);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }

    /// Merges two ensembles covering adjacent replica ranges of the same
    /// plan into one, preserving the uniqueness invariant.
    pub fn merge(self, other: SampleSet) -> Result<SampleSet, HarnessError> {
        let (lo, hi) = if self.plan.replica_offset <= other.plan.replica_offset {
            (self, other)
        } else {
            (other, self)
        };
        let mut lo_plan_shape = lo.plan.clone();
        let mut hi_plan_shape = hi.plan.clone();
        lo_plan_shape.replicas = 0;
        lo_plan_shape.replica_offset = 0;
        hi_plan_shape.replicas = 0;
        hi_plan_shape.replica_offset = 0;
        if lo_plan_shape != hi_plan_shape {
            return Err(HarnessError::MergeConflict {
                message: "plans differ beyond the replica range".to_string(),
            });
        }
        if lo.plan.replica_offset + lo.plan.replicas != hi.plan.replica_offset {
            return Err(HarnessError::MergeConflict {
                message: format!(
                    "replica ranges are not adjacent: [{}, {}) then [{}, {})",
                    lo.plan.replica_offset,
                    lo.plan.replica_offset + lo.plan.replicas,
                    hi.plan.replica_offset,
                    hi.plan.replica_offset + hi.plan.replicas
                ),
            });
        }
        let mut plan = lo.plan.clone();
        plan.replicas = lo.plan.replicas + hi.plan.replicas;
        let mut records = lo.records;
        records.extend(hi.records);
        SampleSet::new(plan, records)
    }
}

// ---------------------------------------------------------------------------
// Ensemble execution
// ---------------------------------------------------------------------------

/// Execution strategy. `Parallel` uses the rayon pool when the `parallel`
/// feature is enabled and silently degrades to sequential otherwise; both
/// modes produce bit-identical sample sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

/// Plan-level precomputation shared read-only by all replicas.
struct PlanContext {
    window: Window,
    /// Discrete mean-density rows; `row_index[i]` is the row for plan time
    /// `i`, `row_zero` the time-zero row. Present only when some observable
    /// needs deterministic centering.
    rho: Option<DiscreteField>,
    row_index: Vec<usize>,
    row_zero: usize,
    /// Bond and mean-current table for the `Current` observable.
    current_bond: i64,
    current_mean: Vec<f64>,
    /// Mean-current table for the ramp-identity bond `(−1, 0)`.
    ramp_mean: Vec<f64>,
    /// Macroscopic tagged path `u_t` per plan time.
    lln: Vec<f64>,
    fields: Vec<TestFn>,
    ramp_fns: Vec<(u32, TestFn)>,
    sites: Vec<i64>,
    martingale_bonds: Vec<i64>,
    blocks: Vec<(f64, f64)>,
    wants_current: bool,
    wants_tagged: bool,
    wants_tagged_position: bool,
}

impl PlanContext {
    fn build(plan: &ExperimentPlan) -> Result<Self, HarnessError> {
        let window = plan.resolved_window();
        let fields = plan.field_functions();
        let sites = plan.correlation_sites();
        let ramp_fns: Vec<(u32, TestFn)> = plan
            .ramp_widths()
            .into_iter()
            .map(|n| (n, TestFn::ramp(n)))
            .collect();
        let wants_current = plan.wants(|s| matches!(s, ObservableSpec::Current));
        let wants_tagged = plan.wants(|s| matches!(s, ObservableSpec::Tagged));
        let wants_tagged_position = plan.wants(|s| matches!(s, ObservableSpec::TaggedPosition));

        let needs_rho = !fields.is_empty() || !sites.is_empty() || !ramp_fns.is_empty();
        let (rho, row_index, row_zero) = if needs_rho {
            let mut grid_times: Vec<f64> = Vec::with_capacity(plan.times.len() + 1);
            grid_times.push(0.0);
            grid_times.extend_from_slice(&plan.times);
            grid_times.dedup();
            let field = pde::solve_discrete(&plan.profile, plan.n, window, &grid_times, None)?;
            let row_index: Vec<usize> = plan
                .times
                .iter()
                .map(|t| {
                    field
                        .requested_times
                        .iter()
                        .position(|rt| rt == t)
                        .expect("plan time present in the grid")
                })
                .collect();
            (Some(field), row_index, 0)
        } else {
            (None, vec![0; plan.times.len()], 0)
        };

        let current_bond = bond_for_offset(plan.bond_offset, plan.n);
        let current_mean = if wants_current {
            pde::mean_current_table(
                &plan.profile,
                plan.n,
                window,
                current_bond,
                &plan.times,
                None,
            )?
        } else {
            vec![0.0; plan.times.len()]
        };
        let ramp_mean = if ramp_fns.is_empty() {
            vec![0.0; plan.times.len()]
        } else if wants_current && current_bond == -1 {
            current_mean.clone()
        } else {
            pde::mean_current_table(&plan.profile, plan.n, window, -1, &plan.times, None)?
        };
        let lln = if wants_tagged || wants_tagged_position {
            pde::lln_path(&plan.profile, &plan.times)?
        } else {
            vec![0.0; plan.times.len()]
        };

        Ok(PlanContext {
            window,
            rho,
            row_index,
            row_zero,
            current_bond,
            current_mean,
            ramp_mean,
            lln,
            fields,
            ramp_fns,
            sites,
            martingale_bonds: plan.martingale_bonds(),
            blocks: plan.block_intervals(),
            wants_current,
            wants_tagged,
            wants_tagged_position,
        })
    }
}

/// Exact identities re-checked at every snapshot of every replica.
fn snapshot_checks(state: &SimState, replica: u64, time: f64) -> Result<(), HarnessError> {
    let window = state.window();
    let fail = |detail: String| HarnessError::CorruptedDynamics {
        replica,
        time,
        detail,
    };

    let count: i64 = state.occupancy().iter().map(|&b| i64::from(b)).sum();
    let count0: i64 = state
        .initial_occupancy()
        .iter()
        .map(|&b| i64::from(b))
        .sum();
    if count != count0 {
        return Err(fail(format!(
            "particle count {count} differs from initial {count0}"
        )));
    }
    if state.active_bonds() != state.rescan_active_bonds() {
        return Err(fail(
            "active-bond set disagrees with a full rescan".to_string(),
        ));
    }
    for x in (window.lo + 1)..window.hi {
        let lhs = state.current(x - 1).expect("interior bond tracked")
            - state.current(x).expect("interior bond tracked");
        let i = window.site_index(x);
        let rhs = i64::from(state.occupancy()[i]) - i64::from(state.initial_occupancy()[i]);
        if lhs != rhs {
            return Err(fail(format!("current conservation broken at site {x}")));
        }
    }
    if state.tagged_site().is_some() && window.lo <= -1 {
        for m in 1..=3i64.min(window.hi) {
            match state.tagged_identity_check(m) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(fail(format!(
                        "tagged counting identity failed at level {m}"
                    )));
                }
                Err(e) => return Err(fail(format!("counting identity unavailable: {e}"))),
            }
        }
    }
    Ok(())
}

fn simulate_replica(
    plan: &ExperimentPlan,
    ctx: &PlanContext,
    replica: u64,
) -> Result<Vec<Record>, HarnessError> {
    let mut rng = replica_rng(plan.seed, replica);
    let config = lattice::sample_initial(
        &plan.profile,
        plan.n,
        ctx.window,
        plan.conditioned,
        &mut rng,
    )?;
    let mut state = SimState::new(config, plan.n, rng);
    let nf = f64::from(plan.n);
    let sqrt_n = nf.sqrt();

    // Time-zero ramp fields, needed for the increment Y_t(G_n) − Y_0(G_n).
    let mut ramp_y0: Vec<f64> = Vec::with_capacity(ctx.ramp_fns.len());
    if !ctx.ramp_fns.is_empty() {
        let rho0 = ctx
            .rho
            .as_ref()
            .expect("centering grid present")
            .at(ctx.row_zero);
        for (_, g) in &ctx.ramp_fns {
            ramp_y0.push(initial_density_field(&state, g, rho0)?);
        }
    }

    let per_time = ctx.fields.len()
        + ctx.sites.len()
        + ctx.ramp_fns.len()
        + 2 * ctx.martingale_bonds.len()
        + ctx.blocks.len()
        + 4;
    let mut records = Vec::with_capacity(per_time * plan.times.len());

    for (ti, &t) in plan.times.iter().enumerate() {
        state.advance(t);
        state.flush_integrals();
        snapshot_checks(&state, replica, t)?;
        let rho_row = ctx.rho.as_ref().map(|f| f.at(ctx.row_index[ti]));
        let mut push = |observable: Observable, value: f64| {
            records.push(Record {
                replica,
                time: t,
                observable,
                value,
            });
        };

        if ctx.wants_current {
            let z = state.centered_current(ctx.current_bond, ctx.current_mean[ti])?;
            push(Observable::Current, z);
        }
        if ctx.wants_tagged || ctx.wants_tagged_position {
            let x_t = state.tagged_site().ok_or(LatticeError::NoTaggedParticle)?;
            if ctx.wants_tagged {
                push(Observable::Tagged, (x_t as f64 - nf * ctx.lln[ti]) / sqrt_n);
            }
            if ctx.wants_tagged_position {
                push(Observable::TaggedPosition, x_t as f64 / nf);
            }
        }
        if let Some(row) = rho_row {
            for (i, g) in ctx.fields.iter().enumerate() {
                push(Observable::Field(i as u32), density_field(&state, g, row)?);
            }
            for &x in &ctx.sites {
                let i = ctx.window.site_index(x);
                push(
                    Observable::Site(x),
                    f64::from(state.occupancy()[i]) - row[i],
                );
            }
            for (k, (width, g)) in ctx.ramp_fns.iter().enumerate() {
                let z = state.centered_current(-1, ctx.ramp_mean[ti])?;
                let y_t = density_field(&state, g, row)?;
                push(Observable::RampDiscrepancy(*width), z - (y_t - ramp_y0[k]));
            }
        }
        for &b in &ctx.martingale_bonds {
            push(Observable::Martingale(b), state.martingale_value(b)?);
            push(
                Observable::MartingaleQv(b),
                state.martingale_quadratic_variation(b)?,
            );
        }
        // Half-open site range [⌈aN⌉, ⌈bN⌉): the Riemann sum of the block
        // matches ∫_a^b exactly for constant densities.
        for (i, &(a, b)) in ctx.blocks.iter().enumerate() {
            let first = (a * nf).ceil() as i64;
            let last = (b * nf).ceil() as i64 - 1;
            let sum: i64 = (first..=last)
                .map(|x| i64::from(state.occupancy()[ctx.window.site_index(x)]))
                .sum();
            push(Observable::Block(i as u32), sum as f64 / nf);
        }
    }
    Ok(records)
}

/// Runs the full ensemble described by `plan`. Deterministic given
/// `(plan, seed)`: replica `i` draws from stream `replica_offset + i`
/// regardless of scheduling, and records are assembled in replica order.
pub fn run_experiment(plan: &ExperimentPlan, mode: ExecMode) -> Result<SampleSet, HarnessError> {
    plan.validate()?;
    let ctx = PlanContext::build(plan)?;
    let ids: Vec<u64> = (plan.replica_offset..plan.replica_offset + plan.replicas).collect();

    let per_replica: Vec<Vec<Record>> = match mode {
        ExecMode::Sequential => ids
            .iter()
            .map(|&r| simulate_replica(plan, &ctx, r))
            .collect::<Result<_, _>>()?,
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                ids.par_iter()
                    .map(|&r| simulate_replica(plan, &ctx, r))
                    .collect::<Result<_, _>>()?
            }
            #[cfg(not(feature = "parallel"))]
            {
                ids.iter()
                    .map(|&r| simulate_replica(plan, &ctx, r))
                    .collect::<Result<_, _>>()?
            }
        }
    };
    SampleSet::new(plan.clone(), per_replica.into_iter().flatten().collect())
}

// ---------------------------------------------------------------------------
// Moment estimation and verdicts
// ---------------------------------------------------------------------------

/// One observable at one time, the unit the estimators work on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsAt {
    pub observable: Observable,
    pub time: f64,
}

impl ObsAt {
    pub fn new(observable: Observable, time: f64) -> Self {
        ObsAt { observable, time }
    }
}

impl fmt::Display for ObsAt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.observable, self.time)
    }
}

/// A requested covariance between two observables; `a.time ≤ b.time`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRequest {
    pub a: ObsAt,
    pub b: ObsAt,
}

impl PairRequest {
    pub fn new(a: ObsAt, b: ObsAt) -> Self {
        if a.time <= b.time {
            PairRequest { a, b }
        } else {
            PairRequest { a: b, b: a }
        }
    }

    fn label(&self) -> String {
        format!("{}×{}", self.a.observable, self.b.observable)
    }
}

/// One theory-side covariance keyed like a report entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryValue {
    pub pair: String,
    pub s: f64,
    pub t: f64,
    pub value: f64,
}

/// One empirical (and, after [`compare`], theoretical) covariance entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub pair: String,
    pub s: f64,
    pub t: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub theoretical: Option<f64>,
    pub z_score: Option<f64>,
    pub verdict: Option<bool>,
}

/// Higher-moment summary of one observable at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub observable: String,
    pub time: f64,
    pub summary: MomentSummary,
}

/// Empirical covariances, per-observable moments, and — once compared —
/// verdicts against theory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub entries: Vec<ReportEntry>,
    pub moments: Vec<MomentEntry>,
    pub k_sigma: Option<f64>,
    pub bias_allowance: Option<f64>,
    /// `Some(all verdicts pass)` once theory has been joined in.
    pub passed: Option<bool>,
}

/// Finite-size slack `c/√N` granted on top of `k·SE` when comparing a
/// finite ensemble to a scaling-limit covariance.
pub fn bias_allowance(c: f64, n: u32) -> f64 {
    c / f64::from(n).sqrt()
}

/// Builds the empirical half of a covariance report: sample covariances
/// with jackknife standard errors for each requested pair, and moment
/// summaries for each single observable.
pub fn estimate_moments(
    samples: &SampleSet,
    pairs: &[PairRequest],
    singles: &[ObsAt],
) -> Result<CovarianceReport, HarnessError> {
    if samples.replica_count() < MIN_REPLICAS_FOR_SE {
        return Err(HarnessError::SampleSize {
            got: samples.replica_count(),
            need: MIN_REPLICAS_FOR_SE,
        });
    }
    let mut entries = Vec::with_capacity(pairs.len());
    for req in pairs {
        let a = samples.values(req.a.observable, req.a.time)?;
        let b = samples.values(req.b.observable, req.b.time)?;
        let CovEstimate { covariance, se, .. } = stats::covariance_estimate(&a, &b)?;
        entries.push(ReportEntry {
            pair: req.label(),
            s: req.a.time,
            t: req.b.time,
            empirical: covariance,
            standard_error: se,
            theoretical: None,
            z_score: None,
            verdict: None,
        });
    }
    let mut moments = Vec::with_capacity(singles.len());
    for obs in singles {
        let xs = samples.values(obs.observable, obs.time)?;
        moments.push(MomentEntry {
            observable: obs.observable.to_string(),
            time: obs.time,
            summary: stats::moment_summary(&xs)?,
        });
    }
    Ok(CovarianceReport {
        entries,
        moments,
        k_sigma: None,
        bias_allowance: None,
        passed: None,
    })
}

fn key_of(pair: &str, s: f64, t: f64) -> String {
    format!("({pair}, s = {s}, t = {t})")
}

/// Joins theoretical covariances onto an empirical report and issues
/// verdicts: pass iff `|empirical − theoretical| ≤ kSigma·SE + allowance`.
/// Every empirical entry must match exactly one theory value and vice
/// versa; any unmatched key is an error, not a silent skip.
pub fn compare(
    skeleton: CovarianceReport,
    theory: &[TheoryValue],
    k_sigma: f64,
    allowance: f64,
) -> Result<CovarianceReport, HarnessError> {
    assert!(k_sigma > 0.0 && allowance >= 0.0);
    let mut report = skeleton;
    let mut used = vec![false; theory.len()];
    for entry in &mut report.entries {
        let found = theory.iter().enumerate().find(|(i, tv)| {
            !used[*i] && tv.pair == entry.pair && tv.s == entry.s && tv.t == entry.t
        });
        let Some((i, tv)) = found else {
            return Err(HarnessError::KeyMismatch {
                key: key_of(&entry.pair, entry.s, entry.t),
            });
        };
        used[i] = true;
        let deviation = entry.empirical - tv.value;
        entry.theoretical = Some(tv.value);
        entry.z_score = Some(if entry.standard_error > 0.0 {
            deviation / entry.standard_error
        } else if deviation == 0.0 {
            0.0
        } else {
            f64::INFINITY * deviation.signum()
        });
        entry.verdict = Some(deviation.abs() <= k_sigma * entry.standard_error + allowance);
    }
    if let Some(i) = used.iter().position(|&u| !u) {
        return Err(HarnessError::KeyMismatch {
            key: key_of(&theory[i].pair, theory[i].s, theory[i].t),
        });
    }
    report.k_sigma = Some(k_sigma);
    report.bias_allowance = Some(allowance);
    report.passed = Some(report.entries.iter().all(|e| e.verdict == Some(true)));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Ramp decay test
// ---------------------------------------------------------------------------

/// Monte Carlo mean-square error of one ramp width.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RampDecayRow {
    pub width: u32,
    pub mse: f64,
    pub se: f64,
}

/// Decay of the ramp-approximation error with the ramp width.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RampDecayTable {
    pub time: f64,
    pub rows: Vec<RampDecayRow>,
    /// Smallest envelope constant `c₀` with every measured MSE below
    /// `t/n + c₀·t^{5/2}/n²`.
    pub fitted_c0: f64,
    pub strictly_decreasing: bool,
    /// Each consecutive width pair satisfies `MSE(next) ≤ 0.75·MSE(prev)`.
    pub geometric_decay: bool,
}

/// Measures how fast the ramp-field increment approximates the normalized
/// current as the ramp widens: simulates the plan with ramp-discrepancy
/// observables for `widths` and tabulates the MSE at the plan's last time.
pub fn ramp_decay_test(
    plan: &ExperimentPlan,
    widths: &[u32],
    mode: ExecMode,
) -> Result<RampDecayTable, HarnessError> {
    assert!(!widths.is_empty() && widths.windows(2).all(|w| w[0] < w[1]));
    let window = plan.resolved_window();
    let nf = f64::from(plan.n);
    let max_site = (f64::from(*widths.last().unwrap()) * nf).ceil() as i64 - 1;
    if window.lo > -1 || window.hi < max_site {
        return Err(HarnessError::Configuration {
            message: format!(
                "ramp widths up to {} need sites [−1, {max_site}], but the window \
                 is [{}, {}]",
                widths.last().unwrap(),
                window.lo,
                window.hi
            ),
        });
    }
    let mut ramp_plan = plan.clone();
    ramp_plan
        .observables
        .push(ObservableSpec::RampDiscrepancies {
            widths: widths.to_vec(),
        });
    let samples = run_experiment(&ramp_plan, mode)?;
    if samples.replica_count() < MIN_REPLICAS_FOR_SE {
        return Err(HarnessError::SampleSize {
            got: samples.replica_count(),
            need: MIN_REPLICAS_FOR_SE,
        });
    }
    let t = ramp_plan.t_max();
    let mut rows = Vec::with_capacity(widths.len());
    for &w in widths {
        let squares: Vec<f64> = samples
            .values(Observable::RampDiscrepancy(w), t)?
            .into_iter()
            .map(|d| d * d)
            .collect();
        let summary = stats::moment_summary(&squares)?;
        rows.push(RampDecayRow {
            width: w,
            mse: summary.mean,
            se: summary.se_mean,
        });
    }
    let fitted_c0 = rows
        .iter()
        .map(|r| (r.mse - t / f64::from(r.width)) * f64::from(r.width).powi(2) / t.powf(2.5))
        .fold(0.0f64, f64::max);
    let strictly_decreasing = rows.windows(2).all(|p| p[1].mse < p[0].mse);
    let geometric_decay = rows.windows(2).all(|p| p[1].mse <= 0.75 * p[0].mse);
    Ok(RampDecayTable {
        time: t,
        rows,
        fitted_c0,
        strictly_decreasing,
        geometric_decay,
    })
}

// ---------------------------------------------------------------------------
// Two-point correlation scan
// ---------------------------------------------------------------------------

/// One estimated two-point correlation `φ(s, t; x, y)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub x: i64,
    pub y: i64,
    pub s: f64,
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    /// `false` when the standard error exceeds the estimate's magnitude —
    /// the correlation is indistinguishable from shot noise.
    pub conclusive: bool,
}

/// Correlation estimates plus the scaled supremum statistic for one `N`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub n: u32,
    pub rows: Vec<CorrelationRow>,
    /// `sup |φ(t; x, y)| · N/√t` over the equal-time rows.
    pub sup_scaled: f64,
    /// Conclusiveness of the row achieving the supremum.
    pub sup_conclusive: bool,
}

/// Estimates two-point correlations `φ(s, t; x, y) = E[η̄_s(x)·η̄_t(y)]`
/// (centered by the deterministic discrete mean) over the requested site
/// pairs at the requested time pairs, within one ensemble — the same joint
/// law the two-time bound concerns. Noise-dominated rows are flagged
/// inconclusive rather than failed.
pub fn correlation_scan(
    plan: &ExperimentPlan,
    site_pairs: &[(i64, i64)],
    time_pairs: &[(f64, f64)],
    mode: ExecMode,
) -> Result<CorrelationTable, HarnessError> {
    assert!(
        site_pairs.iter().all(|&(x, y)| x != y),
        "equal-site pairs measure variance, not correlation"
    );
    assert!(time_pairs.iter().all(|&(s, t)| s <= t));
    if plan.replicas < MIN_REPLICAS_FOR_CORRELATIONS {
        return Err(HarnessError::SampleSize {
            got: plan.replicas,
            need: MIN_REPLICAS_FOR_CORRELATIONS,
        });
    }
    let mut sites: Vec<i64> = site_pairs.iter().flat_map(|&(x, y)| [x, y]).collect();
    sites.sort_unstable();
    sites.dedup();
    let mut times: Vec<f64> = time_pairs.iter().flat_map(|&(s, t)| [s, t]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut scan_plan = plan.clone();
    scan_plan.times = times;
    scan_plan
        .observables
        .push(ObservableSpec::Correlations { sites });
    let samples = run_experiment(&scan_plan, mode)?;

    let mut rows = Vec::with_capacity(site_pairs.len() * time_pairs.len());
    for &(s, t) in time_pairs {
        for &(x, y) in site_pairs {
            let vx = samples.values(Observable::Site(x), s)?;
            let vy = samples.values(Observable::Site(y), t)?;
            // The centering is deterministic, so φ is a plain mean of
            // products, not a sample covariance.
            let products: Vec<f64> = vx.iter().zip(&vy).map(|(a, b)| a * b).collect();
            let summary = stats::moment_summary(&products)?;
            rows.push(CorrelationRow {
                x,
                y,
                s,
                t,
                estimate: summary.mean,
                se: summary.se_mean,
                conclusive: summary.mean.abs() > summary.se_mean,
            });
        }
    }
    let nf = f64::from(plan.n);
    let (sup_scaled, sup_conclusive) = rows
        .iter()
        .filter(|r| r.s == r.t && r.t > 0.0)
        .map(|r| (r.estimate.abs() * nf / r.t.sqrt(), r.conclusive))
        .fold((0.0, true), |acc, v| if v.0 > acc.0 { v } else { acc });
    Ok(CorrelationTable {
        n: plan.n,
        rows,
        sup_scaled,
        sup_conclusive,
    })
}

// ---------------------------------------------------------------------------
// Hydrodynamic block check
// ---------------------------------------------------------------------------

/// One block-average deviation from the hydrodynamic profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HydroRow {
    pub a: f64,
    pub b: f64,
    pub time: f64,
    pub empirical: f64,
    pub se: f64,
    pub exact: f64,
    pub deviation: f64,
}

/// Compares ensemble-mean block averages `N^{−1}Σ_{a≤x/N≤b} η_t(x)` against
/// the hydrodynamic mass `∫_a^b ρ(t, u)du` for every block observable in
/// the sample set, at every time.
pub fn hydro_check(samples: &SampleSet) -> Result<Vec<HydroRow>, HarnessError> {
    let blocks = samples.plan.block_intervals();
    let mut rows = Vec::with_capacity(blocks.len() * samples.plan.times.len());
    for (i, &(a, b)) in blocks.iter().enumerate() {
        for &t in &samples.plan.times {
            let values = samples.values(Observable::Block(i as u32), t)?;
            let summary = stats::moment_summary(&values)?;
            let exact = pde::cumulative_density(&samples.plan.profile, t, b)?
                - pde::cumulative_density(&samples.plan.profile, t, a)?;
            rows.push(HydroRow {
                a,
                b,
                time: t,
                empirical: summary.mean,
                se: summary.se_mean,
                exact,
                deviation: (summary.mean - exact).abs(),
            });
        }
    }
    Ok(rows)
}
