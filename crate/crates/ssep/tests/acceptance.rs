//! Acceptance gates for the whole laboratory.
//!
//! Ten criteria spanning exact pathwise identities, small-system oracle
//! agreement, deterministic convergence orders, theory self-consistency,
//! and statistical comparison of Monte Carlo ensembles against the Gaussian
//! limit formulas. Each criterion prints one `[cNN] PASS/FAIL — …` line
//! (visible with `--nocapture`) before asserting, so the summary survives
//! even when a gate is red and the test fails.
//!
//! The heavyweight ensembles are shared between criteria through lazily
//! initialized statics. On a single core the full suite runs for upwards of
//! an hour; run it as
//! `cargo test -p ssep --test acceptance -- --test-threads=1 --nocapture`.

use ssep::gauss::{
    current_covariance, ou_covariance, semigroup_apply, tagged_covariance, CovarianceForm,
    KernelContext,
};
use ssep::harness::{
    bias_allowance, bond_for_offset, compare, correlation_scan, estimate_moments, ramp_decay_test,
    run_experiment, ExecMode, ExperimentPlan, ObsAt, Observable, ObservableSpec, PairRequest,
    SampleSet, TheoryValue, WindowChoice,
};
use ssep::lattice::{replica_rng, SimState};
use ssep::pde;
use ssep::profile::Profile;
use ssep::testfn::TestFn;
use ssep::verify::{oracle_configuration, SmallSystem};
use std::sync::LazyLock;
use std::time::Instant;

// ---------------------------------------------------------------------------
// Pinned tolerances and gates
// ---------------------------------------------------------------------------

/// Statistical gate width for current and scaling comparisons.
const K_SIGMA: f64 = 3.0;
/// Wider gate for the tagged covariance entries, which carry a slower
/// finite-size bias.
const K_SIGMA_TAGGED: f64 = 4.0;
/// Finite-size bias allowance coefficient: every CLT comparison grants an
/// extra `1/√N` of absolute slack.
const BIAS_COEFFICIENT: f64 = 1.0;
/// Maximum per-site total-variation distance between KMC marginals and the
/// matrix-exponential oracle.
const ORACLE_TV_TOL: f64 = 0.01;
/// Window for the second-order convergence ratio per doubling of N.
const CONV_RATIO_LO: f64 = 3.2;
const CONV_RATIO_HI: f64 = 4.8;
/// Relative slack for the "nondecreasing, at most linear in t" check.
const TIME_GROWTH_SLACK: f64 = 0.2;
/// Relative agreement required between the two covariance forms.
const FORM_AGREEMENT_REL: f64 = 1e-4;
/// Relative constancy required of E[Z_t²]/√t across times.
const SCALING_CONSTANCY_REL: f64 = 1e-3;
/// Required geometric decay factor for the ramp-approximation MSE.
const RAMP_DECAY_FACTOR: f64 = 0.75;
/// Required shrink factor of the tagged LLN RMS deviation per doubling of N.
const LLN_SHRINK_FACTOR: f64 = 1.6;
/// Growth slack per doubling above which the scaled correlation supremum
/// counts as monotonically growing rather than bounded.
const CORRELATION_GROWTH_SLACK: f64 = 1.2;

fn front() -> Profile {
    Profile::TanhFront {
        left: 0.3,
        right: 0.7,
        center: 0.0,
        width: 0.5,
    }
}

fn equilibrium() -> Profile {
    Profile::Constant { value: 0.5 }
}

fn plan(
    profile: Profile,
    n: u32,
    times: &[f64],
    observables: Vec<ObservableSpec>,
    replicas: u64,
    seed: u64,
    conditioned: bool,
) -> ExperimentPlan {
    ExperimentPlan {
        profile,
        n,
        times: times.to_vec(),
        observables,
        replicas,
        replica_offset: 0,
        seed,
        window: WindowChoice::default(),
        bond_offset: 0.0,
        conditioned,
    }
}

/// Prints the one-line verdict for a criterion and returns the flag so the
/// caller can assert on it afterwards.
fn verdict(id: &str, pass: bool, detail: &str) -> bool {
    println!("[{id}] {} — {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

// ---------------------------------------------------------------------------
// Shared ensembles
// ---------------------------------------------------------------------------

/// Conditioned tanh-front ensemble at N = 64: current, tagged fluctuation,
/// and raw tagged position at times 0.25 and 1. Serves the current CLT, the
/// tagged CLT, and the N = 64 level of the tagged LLN.
static MAIN64: LazyLock<SampleSet> = LazyLock::new(|| {
    let p = plan(
        front(),
        64,
        &[0.25, 1.0],
        vec![
            ObservableSpec::Current,
            ObservableSpec::Tagged,
            ObservableSpec::TaggedPosition,
        ],
        10_000,
        0xA164,
        true,
    );
    run_experiment(&p, ExecMode::Parallel).expect("main tanh ensemble")
});

/// Equilibrium current ensemble at N = 64, built as two adjacent half
/// ensembles merged — the merge path is exercised on real data, and the
/// combined 2·10⁴ replicas feed the fractional-scaling gate.
static EQ64: LazyLock<SampleSet> = LazyLock::new(|| {
    let half = 10_000u64;
    let mut a = plan(
        equilibrium(),
        64,
        &[0.25, 1.0],
        vec![ObservableSpec::Current],
        half,
        0xE564,
        false,
    );
    let mut b = a.clone();
    a.replica_offset = 0;
    b.replica_offset = half;
    let sa = run_experiment(&a, ExecMode::Parallel).expect("equilibrium half A");
    let sb = run_experiment(&b, ExecMode::Parallel).expect("equilibrium half B");
    sa.merge(sb).expect("adjacent halves merge")
});

/// Tagged-position ensembles at N = 32 and 128 for the LLN shrink test.
static TAGGED32: LazyLock<SampleSet> = LazyLock::new(|| {
    let p = plan(
        front(),
        32,
        &[1.0],
        vec![ObservableSpec::TaggedPosition],
        1024,
        0xC732,
        true,
    );
    run_experiment(&p, ExecMode::Parallel).expect("tagged ensemble at N = 32")
});
static TAGGED128: LazyLock<SampleSet> = LazyLock::new(|| {
    let p = plan(
        front(),
        128,
        &[1.0],
        vec![ObservableSpec::TaggedPosition],
        1024,
        0xC7128,
        true,
    );
    run_experiment(&p, ExecMode::Parallel).expect("tagged ensemble at N = 128")
});

// ---------------------------------------------------------------------------
// c01 — exact pathwise identities on a production-size run
// ---------------------------------------------------------------------------

#[test]
fn c01_exact_identities() {
    // Every replica re-checks, at every observation time: particle-number
    // conservation, the incremental active-bond set against a full rescan,
    // the conservation identity J_{x−1,x} − J_{x,x+1} = η_t(x) − η_0(x) at
    // every interior site, and the tagged counting identity at levels
    // 1..=3. Any violation aborts the ensemble with an error.
    let start = Instant::now();
    let p = plan(
        front(),
        64,
        &[0.25, 0.5, 1.0],
        vec![ObservableSpec::Current, ObservableSpec::Tagged],
        1000,
        0x0164,
        true,
    );
    let result = run_experiment(&p, ExecMode::Parallel);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = result.is_ok();
    let detail = match &result {
        Ok(s) => format!(
            "{} replicas × {} times, zero identity violations, {elapsed:.1} s",
            s.replica_count(),
            p.times.len()
        ),
        Err(e) => format!("identity violation: {e}"),
    };
    assert!(verdict("c01", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// c02 — small-lattice oracle
// ---------------------------------------------------------------------------

#[test]
fn c02_small_lattice_oracle() {
    // 6-site, 3-particle closed lattice at t = 0.1, unit clock (N = 1):
    // the KMC site marginals over 10⁶ replicas must match the
    // uniformization (matrix-exponential) oracle within per-site
    // total-variation 0.01. The oracle enumerates all 20 states and never
    // touches the sampling path.
    let start = Instant::now();
    let config = oracle_configuration();
    let oracle = SmallSystem::new(&config, 1);
    let t = 0.1;
    let exact = oracle.site_marginals(t);
    let replicas: u64 = 1_000_000;
    let mut counts = vec![0u64; exact.len()];
    for rep in 0..replicas {
        let rng = replica_rng(0x0206, rep);
        let mut state = SimState::new(config.clone(), 1, rng);
        state.advance(t);
        for (c, &occ) in counts.iter_mut().zip(state.occupancy()) {
            *c += u64::from(occ);
        }
    }
    let max_tv = counts
        .iter()
        .zip(&exact)
        .map(|(&c, &p)| (c as f64 / replicas as f64 - p).abs())
        .fold(0.0f64, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = max_tv <= ORACLE_TV_TOL;
    let detail = format!(
        "max site TV {max_tv:.2e} vs oracle (gate {ORACLE_TV_TOL}), {replicas} replicas, \
         {elapsed:.1} s"
    );
    assert!(verdict("c02", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// c03 — second-order convergence of the lattice mean field
// ---------------------------------------------------------------------------

#[test]
fn c03_mean_field_convergence() {
    // The halfwidth keeps the profile's fourth derivative — the source of
    // the discretization error — alive over the whole scanned horizon, so
    // the error accumulates rather than diffusing away mid-scan.
    let profile = Profile::Smoothstep {
        left: 0.3,
        right: 0.7,
        center: 0.0,
        halfwidth: 3.0,
    };
    let rows = pde::convergence_check(&profile, 0.5, &[16, 32, 64, 128]).expect("convergence scan");
    let ratios: Vec<f64> = rows
        .windows(2)
        .map(|w| w[0].sup_error / w[1].sup_error)
        .collect();
    let order_ok = ratios
        .iter()
        .all(|r| (CONV_RATIO_LO..=CONV_RATIO_HI).contains(r));

    // At fixed N = 64 the sup error must be nondecreasing in t and grow at
    // most linearly, both within the pinned relative slack.
    let times = [0.25, 0.5, 1.0];
    let sups: Vec<f64> = times
        .iter()
        .map(|&t| pde::convergence_check(&profile, t, &[64]).expect("time scan")[0].sup_error)
        .collect();
    let mut time_ok = true;
    for i in 1..times.len() {
        let growth = sups[i] / sups[i - 1];
        let linear = times[i] / times[i - 1];
        if growth < 1.0 - TIME_GROWTH_SLACK || growth > linear * (1.0 + TIME_GROWTH_SLACK) {
            time_ok = false;
        }
    }
    let pass = order_ok && time_ok;
    let detail = format!(
        "doubling ratios {:?} (gate [{CONV_RATIO_LO}, {CONV_RATIO_HI}]), sup errors over t \
         {:?} (nondecreasing, ≤ linear, slack {TIME_GROWTH_SLACK})",
        ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>(),
        sups.iter().map(|s| format!("{s:.2e}")).collect::<Vec<_>>(),
    );
    assert!(verdict("c03", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// c04 — the two covariance forms agree
// ---------------------------------------------------------------------------

#[test]
fn c04_covariance_forms_agree() {
    // Six (H, G, s, t) combinations over ramps and indicators, evaluated
    // with the tanh-front compressibility through both algebraic forms of
    // the field covariance; the forms share no integration path beyond the
    // heat-kernel primitives. Strictly ordered times keep both forms in
    // their fast regime (see the cost note on `CovarianceForm`).
    let ctx = KernelContext::new(front())
        .expect("context")
        .with_quad_tol(1e-7);
    let combos: Vec<(TestFn, TestFn, f64, f64)> = vec![
        (TestFn::ramp(2), TestFn::ramp(2), 0.25, 0.5),
        (TestFn::ramp(4), TestFn::ramp(2), 0.25, 1.0),
        (TestFn::indicator(-1.0, 1.0), TestFn::ramp(2), 0.5, 1.0),
        (
            TestFn::indicator(-0.5, 0.5),
            TestFn::indicator(-0.5, 0.5),
            0.5,
            1.0,
        ),
        (TestFn::ramp(2), TestFn::indicator(0.0, 2.0), 0.25, 0.5),
        (TestFn::indicator(-1.5, 0.5), TestFn::ramp(4), 0.5, 0.75),
    ];
    let mut max_rel = 0.0f64;
    let mut lines = Vec::new();
    for (h, g, s, t) in &combos {
        let a = ou_covariance(&ctx, h, g, *s, *t, CovarianceForm::Original).expect("original");
        let b = ou_covariance(&ctx, h, g, *s, *t, CovarianceForm::PartsIntegrated)
            .expect("parts-integrated");
        let scale = a.value.abs().max(b.value.abs());
        let rel = (a.value - b.value).abs() / scale;
        max_rel = max_rel.max(rel);
        lines.push(format!("({s},{t}):{rel:.1e}"));
    }
    let pass = max_rel <= FORM_AGREEMENT_REL;
    let detail = format!(
        "max relative gap {max_rel:.2e} over {} combos (gate {FORM_AGREEMENT_REL:.0e}); {}",
        combos.len(),
        lines.join(" ")
    );
    assert!(verdict("c04", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// c05 — equilibrium fractional scaling of the current
// ---------------------------------------------------------------------------

#[test]
fn c05_equilibrium_fractional_scaling() {
    // Quadrature side: E[Z_t²]/√t must be constant across t, the √t
    // signature of the equilibrium current fluctuations.
    let ctx = KernelContext::new(equilibrium()).expect("context");
    let times = [0.25, 0.5, 1.0, 2.0];
    let scaled: Vec<f64> = times
        .iter()
        .map(|&t| {
            current_covariance(&ctx, t, t, 0.0)
                .expect("variance quadrature")
                .value
                / t.sqrt()
        })
        .collect();
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    let max_rel = scaled
        .iter()
        .map(|v| (v - mean).abs() / mean)
        .fold(0.0f64, f64::max);
    let constancy_ok = max_rel <= SCALING_CONSTANCY_REL;

    // Monte Carlo side: the merged 2·10⁴-replica equilibrium ensemble must
    // reproduce E[Z_1²] within 3 jackknife standard errors — no extra
    // finite-size allowance here.
    let z1 = EQ64
        .values(Observable::Current, 1.0)
        .expect("current samples");
    let est = ssep::stats::covariance_estimate(&z1, &z1).expect("variance estimate");
    let theory = current_covariance(&ctx, 1.0, 1.0, 0.0)
        .expect("variance quadrature")
        .value;
    let dev = est.covariance - theory;
    let mc_ok = dev.abs() <= K_SIGMA * est.se;

    let pass = constancy_ok && mc_ok;
    let detail = format!(
        "E[Z_t²]/√t spread {max_rel:.2e} (gate {SCALING_CONSTANCY_REL:.0e}); MC var(Z_1) \
         {:.4} vs {theory:.4}, dev {dev:+.2e} = {:.2}·SE over {} merged replicas",
        est.covariance,
        dev / est.se,
        z1.len()
    );
    assert!(verdict("c05", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// c06 — nonequilibrium current CLT
// ---------------------------------------------------------------------------

#[test]
fn c06_current_clt() {
    let (s, t) = (0.25, 1.0);
    let ctx = KernelContext::new(front()).expect("context");
    let z = |u: f64, v: f64| {
        PairRequest::new(
            ObsAt::new(Observable::Current, u),
            ObsAt::new(Observable::Current, v),
        )
    };
    let pairs = [z(s, s), z(s, t), z(t, t)];
    let skeleton = estimate_moments(&MAIN64, &pairs, &[]).expect("empirical covariances");
    let theory: Vec<TheoryValue> = [(s, s), (s, t), (t, t)]
        .iter()
        .map(|&(a, b)| TheoryValue {
            pair: "current×current".to_string(),
            s: a,
            t: b,
            value: current_covariance(&ctx, a, b, 0.0)
                .expect("current covariance")
                .value,
        })
        .collect();
    let report = compare(
        skeleton,
        &theory,
        K_SIGMA,
        bias_allowance(BIAS_COEFFICIENT, 64),
    )
    .expect("joined report");
    let pass = report.passed == Some(true);
    let entries: Vec<String> = report
        .entries
        .iter()
        .map(|e| {
            format!(
                "({},{}) {:.4}/{:.4} z={:+.2}",
                e.s,
                e.t,
                e.empirical,
                e.theoretical.unwrap(),
                e.z_score.unwrap()
            )
        })
        .collect();
    let detail = format!(
        "empirical/theory with gate {K_SIGMA}·SE + {:.3}: {}",
        bias_allowance(BIAS_COEFFICIENT, 64),
        entries.join("; ")
    );
    assert!(verdict("c06", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// c07 — tagged-particle law of large numbers
// ---------------------------------------------------------------------------

#[test]
fn c07_tagged_lln() {
    // X_T/N at N ∈ {32, 64, 128} against the macroscopic path point u_T;
    // the gate demands the RMS deviation shrink by ≥ 1.6× per doubling.
    // The deviation is fluctuation-dominated at these sizes, so its honest
    // scaling is N^{−1/2} (a factor √2 ≈ 1.41 per doubling); the measured
    // ratios are printed either way.
    let t = 1.0;
    let u_t = pde::lln_path(&front(), &[t]).expect("macroscopic path")[0];
    let rms = |samples: &SampleSet| -> f64 {
        let xs = samples
            .values(Observable::TaggedPosition, t)
            .expect("tagged positions");
        (xs.iter().map(|x| (x - u_t) * (x - u_t)).sum::<f64>() / xs.len() as f64).sqrt()
    };
    let r32 = rms(&TAGGED32);
    let r64 = rms(&MAIN64);
    let r128 = rms(&TAGGED128);
    let ratio_low = r32 / r64;
    let ratio_high = r64 / r128;
    let pass = ratio_low >= LLN_SHRINK_FACTOR && ratio_high >= LLN_SHRINK_FACTOR;
    let detail = format!(
        "u_T = {u_t:.4}; RMS {r32:.4} → {r64:.4} → {r128:.4}, shrink ratios {ratio_low:.3}, \
         {ratio_high:.3} (gate ≥ {LLN_SHRINK_FACTOR}; a fluctuation-dominated deviation \
         scales like √2 per doubling)"
    );
    assert!(verdict("c07", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// c08 — tagged-particle CLT
// ---------------------------------------------------------------------------

#[test]
fn c08_tagged_clt() {
    let (s, t) = (0.25, 1.0);
    let ctx = KernelContext::new(front()).expect("context");
    let w = |u: f64, v: f64| {
        PairRequest::new(
            ObsAt::new(Observable::Tagged, u),
            ObsAt::new(Observable::Tagged, v),
        )
    };
    let pairs = [w(s, s), w(s, t), w(t, t)];
    let singles = [ObsAt::new(Observable::Tagged, t)];
    let skeleton = estimate_moments(&MAIN64, &pairs, &singles).expect("empirical covariances");
    let theory: Vec<TheoryValue> = [(s, s), (s, t), (t, t)]
        .iter()
        .map(|&(a, b)| TheoryValue {
            pair: "tagged×tagged".to_string(),
            s: a,
            t: b,
            value: tagged_covariance(&ctx, a, b)
                .expect("tagged covariance")
                .value,
        })
        .collect();
    let report = compare(
        skeleton,
        &theory,
        K_SIGMA_TAGGED,
        bias_allowance(BIAS_COEFFICIENT, 64),
    )
    .expect("joined report");
    let cov_ok = report.passed == Some(true);

    // Gaussianity of W_1: standardized third and fourth moments within
    // 3 jackknife SEs of zero.
    let m = &report.moments[0].summary;
    let skew_ok = m.skewness.abs() <= K_SIGMA * m.se_skewness;
    let kurt_ok = m.excess_kurtosis.abs() <= K_SIGMA * m.se_kurtosis;

    let pass = cov_ok && skew_ok && kurt_ok;
    let entries: Vec<String> = report
        .entries
        .iter()
        .map(|e| {
            format!(
                "({},{}) {:.4}/{:.4} z={:+.2}",
                e.s,
                e.t,
                e.empirical,
                e.theoretical.unwrap(),
                e.z_score.unwrap()
            )
        })
        .collect();
    let detail = format!(
        "cov gate {K_SIGMA_TAGGED}·SE + {:.3}: {}; skew {:+.3} ({:.1}·SE), excess kurtosis \
         {:+.3} ({:.1}·SE)",
        bias_allowance(BIAS_COEFFICIENT, 64),
        entries.join("; "),
        m.skewness,
        m.skewness.abs() / m.se_skewness,
        m.excess_kurtosis,
        m.excess_kurtosis.abs() / m.se_kurtosis,
    );
    assert!(verdict("c08", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// c09 — geometric decay of the ramp-approximation error
// ---------------------------------------------------------------------------

#[test]
fn c09_ramp_decay() {
    // Equilibrium, t = 1: the MSE of N^{−1/2}J̄ − (Y_t(G_n) − Y_0(G_n))
    // must decrease strictly in n with MSE(2n) ≤ 0.75·MSE(n). The window
    // covers the widest ramp support plus the standard diffusive halo.
    let widths = [2u32, 4, 8, 16];
    let mut p = plan(equilibrium(), 64, &[1.0], vec![], 512, 0x0964, false);
    p.window = WindowChoice::Explicit {
        lo: -392,
        hi: 16 * 64 + 392,
    };
    let table = ramp_decay_test(&p, &widths, ExecMode::Parallel).expect("ramp decay table");
    let pass = table.strictly_decreasing && table.geometric_decay;
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("n={}: {:.4}±{:.4}", r.width, r.mse, r.se))
        .collect();
    let detail = format!(
        "MSE {} (strictly decreasing: {}, factor ≤ {RAMP_DECAY_FACTOR}: {}, fitted c₀ {:.2})",
        rows.join(", "),
        table.strictly_decreasing,
        table.geometric_decay,
        table.fitted_c0
    );
    assert!(verdict("c09", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// c10 — boundedness of the scaled two-point correlations
// ---------------------------------------------------------------------------

#[test]
fn c10_correlation_scaling() {
    // One fixed site-pair set, measured at t = 0.5 for N ∈ {32, 64, 128}:
    // sup |φ(t; x, y)|·N/√t must stay bounded — it may not grow
    // monotonically across the three sizes. Levels whose standard error
    // exceeds the estimate are flagged inconclusive rather than failed;
    // that flag is legitimate exactly because SE > |estimate| there.
    let site_pairs = [(-2i64, 1i64), (0, 1), (3, 7), (-8, 8), (2, 20)];
    let time_pairs = [(0.5, 0.5)];
    let mut sups = Vec::new();
    let mut lines = Vec::new();
    for (n, seed) in [(32u32, 0xC1032u64), (64, 0xC1064), (128, 0xC10128)] {
        let p = plan(front(), n, &[0.5], vec![], 10_000, seed, false);
        let table =
            correlation_scan(&p, &site_pairs, &time_pairs, ExecMode::Parallel).expect("scan");
        println!(
            "[c10] N={n}: sup_scaled {:.4}, conclusive {}",
            table.sup_scaled, table.sup_conclusive
        );
        lines.push(format!(
            "N={n}: sup {:.3} ({})",
            table.sup_scaled,
            if table.sup_conclusive {
                "conclusive"
            } else {
                "inconclusive: SE > estimate"
            }
        ));
        sups.push((table.sup_scaled, table.sup_conclusive));
    }
    let all_conclusive = sups.iter().all(|&(_, c)| c);
    let monotone_growth = sups
        .windows(2)
        .all(|w| w[1].0 > w[0].0 * CORRELATION_GROWTH_SLACK);
    let pass = !(all_conclusive && monotone_growth);
    let detail = format!(
        "scaled sup |φ|·N/√t: {} (fails only on conclusive monotone growth > \
         {CORRELATION_GROWTH_SLACK}× per doubling)",
        lines.join("; ")
    );
    assert!(verdict("c10", pass, &detail), "{detail}");
}

// ---------------------------------------------------------------------------
// Cross-checks shared by several criteria
// ---------------------------------------------------------------------------

/// The bond convention behind the current observables: offset 0 is the bond
/// just left of the origin, so the counting identity and the ramp increment
/// refer to the same current. Pinned here so a convention drift trips the
/// acceptance target, not only unit tests.
#[test]
fn bond_convention_is_pinned() {
    assert_eq!(bond_for_offset(0.0, 64), -1);
    assert_eq!(bond_for_offset(0.5, 64), 31);
    let g = TestFn::ramp(4);
    assert!(semigroup_apply(&g, 0.5).is_ok());
}
