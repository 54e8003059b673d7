//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line and
//! returns a payload; the whole suite is then re-run on a pool with a
//! different thread count and the payloads must match byte for byte.

use std::time::{Duration, Instant};

use gconv::bounds::{
    binomial, count_compositions, multinomial_bound_check, AuditConfig, Auditor, BoundReport,
};
use gconv::dist::{Distribution, COUNTEREXAMPLE_SPEC_RATIO};
use gconv::lln::{
    estimate_eg_lastexit, estimate_series, levy_maximal_check, PathConfig, SeriesMethod,
};
use gconv::modfun::ModerateFunction;
use gconv::report::{counterexample_report, equivalence_matrix, Evidence};
use gconv::seqtest::{optimality_sweep, run_test, ville_check, HypothesisSet, LevelVector};
use num_traits::ToPrimitive;
use serde::Serialize;

const ROOT_SEED: u64 = 20240501;

struct Outcome {
    passed: bool,
    detail: String,
    payload: String,
    elapsed: Duration,
}

fn payload<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap()
}

fn g(spec: &str) -> ModerateFunction {
    ModerateFunction::parse(spec).unwrap()
}

fn d(spec: &str) -> Distribution {
    Distribution::parse(spec).unwrap()
}

fn timed(f: impl FnOnce() -> (bool, String, String)) -> Outcome {
    let t0 = Instant::now();
    let (passed, detail, payload) = f();
    Outcome {
        passed,
        detail,
        payload,
        elapsed: t0.elapsed(),
    }
}

fn exact_series() -> Outcome {
    timed(|| {
        let s = estimate_series(
            &Distribution::rademacher(),
            &g("power:r=1"),
            1.0,
            30,
            1,
            ROOT_SEED,
        )
        .unwrap();
        let value = s.partial_sum + s.tail_bound.unwrap_or(f64::INFINITY);
        let oracle = 2.0 * (1.0 + std::f64::consts::LN_2);
        let ok = s.method == SeriesMethod::Exact
            && (s.partial_sum - oracle).abs() < 1e-6
            && (value - oracle).abs() < 1e-6;
        (
            ok,
            format!(
                "partial={:.9} +tail={:.9} oracle={oracle:.9}",
                s.partial_sum, value
            ),
            payload(&s),
        )
    })
}

fn exact_last_exit() -> Outcome {
    timed(|| {
        let e = estimate_eg_lastexit(
            &Distribution::rademacher(),
            &g("power:r=1"),
            1.0,
            &PathConfig::new(1 << 10, 100_000, ROOT_SEED),
        )
        .unwrap();
        let ok = (e.mean - 3.0).abs() <= 4.0 * e.se && e.censor_rate < 1e-4;
        (
            ok,
            format!(
                "mean={:.5} se={:.5} censor_rate={:e}",
                e.mean, e.se, e.censor_rate
            ),
            payload(&e),
        )
    })
}

const MATRIX_DISTS: [&str; 4] = [
    "rademacher",
    "uniform:w=1",
    "gaussian:sigma=1",
    "pareto2:beta=4,scale=1",
];
const MATRIX_GS: [&str; 4] = ["power:r=1", "power:r=2", "power:r=0.5", "powlog:r=1,s=1"];

fn proposition_matrix() -> Outcome {
    timed(|| {
        let mut reports: Vec<BoundReport> = Vec::new();
        let mut failures = Vec::new();
        let mut slowest = Duration::ZERO;
        for ds in MATRIX_DISTS {
            let auditor = Auditor::new(d(ds), AuditConfig::new(1 << 14, 100_000, ROOT_SEED));
            let t0 = Instant::now();
            for gs in MATRIX_GS {
                let g = g(gs);
                for r in [
                    auditor.prop1(&g, 0.5),
                    auditor.prop2(&g, None),
                    auditor.prop3(&g),
                ] {
                    match r {
                        Ok(r) => {
                            if !r.passed {
                                failures
                                    .push(format!("{ds}/{gs}/{:?} hw={}", r.name, r.holds_within));
                            }
                            reports.push(r);
                        }
                        Err(e) => failures.push(format!("{ds}/{gs}: {e}")),
                    }
                }
            }
            // simulations are shared by the four cells of a row
            slowest = slowest.max(t0.elapsed() / MATRIX_GS.len() as u32);
        }
        let ok = failures.is_empty() && reports.len() == 48 && slowest < Duration::from_secs(60);
        let min_hw = reports
            .iter()
            .map(|r| r.holds_within)
            .fold(f64::INFINITY, f64::min);
        (ok, format!("{} audits, min holds_within={min_hw:.2}, slowest cell {slowest:?}, failures {failures:?}", reports.len()), payload(&reports))
    })
}

fn equivalence_verdicts() -> Outcome {
    timed(|| {
        let light = [
            d("gaussian:sigma=1"),
            d("rademacher"),
            d("pareto2:beta=4,scale=1"),
        ];
        let gs = [g("power:r=1"), g("power:r=0.5"), g("powlog:r=1,s=1")];
        let fin =
            equivalence_matrix(&light, &gs, &[0.5, 1.0], 1 << 14, 20_000, ROOT_SEED, 1e-3).unwrap();
        let heavy = equivalence_matrix(
            &[d("pareto2:beta=1.5,scale=1")],
            &[g("power:r=1")],
            &[0.5, 1.0],
            1 << 14,
            20_000,
            ROOT_SEED,
            1e-3,
        )
        .unwrap();
        let all_finite = fin
            .cells
            .iter()
            .all(|c| c.consistent && c.moment == Evidence::Finite);
        let all_divergent = heavy
            .cells
            .iter()
            .all(|c| c.consistent && c.moment == Evidence::Divergent);
        let summary: Vec<String> = fin
            .cells
            .iter()
            .chain(&heavy.cells)
            .map(|c| {
                format!(
                    "{}/{}:{:?}{:?}{:?}",
                    c.dist, c.g, c.moment, c.series, c.last_exit
                )
            })
            .collect();
        (
            all_finite && all_divergent,
            summary.join(" "),
            payload(&(fin, heavy)),
        )
    })
}

fn counterexample() -> Outcome {
    timed(|| {
        let r = counterexample_report(&g("exp:b=1"), 100_000, COUNTEREXAMPLE_SPEC_RATIO, 300.0)
            .unwrap();
        let ok = r.moment_converges && r.doubled_diverges && (r.harmonic - 12.0901).abs() < 1e-3;
        (
            ok,
            format!(
                "E|X|G={:.12} last_increment={:e} doubled={:.6} >= 2cH_N={:.6} (H_N={:.5})",
                r.moment_partial, r.last_increment, r.doubled_partial, r.doubled_floor, r.harmonic
            ),
            payload(&r),
        )
    })
}

fn combinatorics() -> Outcome {
    timed(|| {
        let mut ok = true;
        let mut table = Vec::new();
        for p in 1..=14u64 {
            let mut total = 0;
            for q in 1..=p {
                let c = count_compositions(p, q).unwrap();
                ok &= c == binomial(p - 1, q - 1).to_u64().unwrap();
                total += c;
            }
            ok &= total == 1 << (p - 1);
            table.push(total);
        }
        let checks: Vec<_> = (1..=8)
            .map(|p| multinomial_bound_check(p).unwrap())
            .collect();
        ok &= checks.iter().all(|c| c.holds);
        (
            ok,
            format!(
                "compositions p<=14 exhaustive, multinomial bound p<=8 holds={}",
                checks.iter().all(|c| c.holds)
            ),
            payload(&(table, checks)),
        )
    })
}

fn levy_and_symmetrization() -> Outcome {
    timed(|| {
        let mut ok = true;
        let mut levy = Vec::new();
        let rad = Distribution::rademacher();
        for m in 1..=12u64 {
            for t in 1..=m {
                let c = levy_maximal_check(&rad, m, t as f64, 0, 0).unwrap();
                ok &= c.exact && c.lhs <= c.rhs + 1e-12;
                levy.push(c);
            }
        }
        let exact_count = levy.len();
        let cfg = AuditConfig::new(1 << 10, 100_000, ROOT_SEED);
        let mut sym = Vec::new();
        for (k, (ds, sd)) in [
            ("uniform:w=1", (1.0f64 / 3.0).sqrt()),
            ("gaussian:sigma=1", 1.0),
        ]
        .into_iter()
        .enumerate()
        {
            let dist = d(ds);
            for mult in [1.0, 2.0] {
                let m = 64u64;
                let t = mult * sd * (m as f64).sqrt();
                let c = levy_maximal_check(&dist, m, t, 100_000, ROOT_SEED + k as u64).unwrap();
                ok &= c.holds_within(4.0);
                levy.push(c);
            }
            for gs in ["const", "power:r=1"] {
                let rs = Auditor::new(dist.clone(), cfg)
                    .sym_transfer(&g(gs), 0.5)
                    .unwrap();
                ok &= rs.iter().all(|r| r.passed);
                sym.extend(rs);
            }
        }
        let min_hw = sym
            .iter()
            .map(|r| r.holds_within)
            .fold(f64::INFINITY, f64::min);
        (ok, format!("{exact_count} exact Levy cases, MC Levy and {} symmetrization checks, min holds_within={min_hw:.2}", sym.len()), payload(&(levy, sym)))
    })
}

fn sequential_test() -> Outcome {
    timed(|| {
        let h = HypothesisSet::bernoulli(&[0.5, 0.75]).unwrap();
        let mut ok = true;
        let mut ville = Vec::new();
        for (k, c) in [10.0, 100.0, 1000.0].into_iter().enumerate() {
            for i in 0..2 {
                let v =
                    ville_check(&h, i, c, 100_000, 1000, ROOT_SEED + (2 * k + i) as u64).unwrap();
                ok &= v.holds;
                ville.push(v);
            }
        }
        let r = run_test(
            &h,
            &LevelVector::uniform(2, 3f64.exp()).unwrap(),
            std::iter::repeat(1),
            1000,
        )
        .unwrap();
        let tau_ok = r.tau == Some((3.0 / 1.25f64.ln()).ceil() as u64) && r.tau == Some(14);
        let rows = optimality_sweep(
            &h,
            &[1e-1, 1e-2, 1e-3, 1e-4],
            0,
            &g("power:r=1"),
            100_000,
            ROOT_SEED,
            None,
        )
        .unwrap();
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        let n = ratios.len();
        let decreasing = ratios[n - 3] > ratios[n - 2] && ratios[n - 2] > ratios[n - 1];
        let in_band = (0.8..=1.3).contains(&ratios[n - 1]);
        ok &= tau_ok && decreasing && in_band;
        (
            ok,
            format!(
                "Ville max rate/bound={:.3}, tau={:?}, sweep ratios={:?}",
                ville.iter().map(|v| v.rate / v.bound).fold(0.0, f64::max),
                r.tau,
                ratios.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()
            ),
            payload(&(ville, r, rows)),
        )
    })
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn criteria() -> Vec<Criterion> {
    vec![
        (
            "1 exact series value",
            exact_series as fn() -> Outcome,
            Duration::from_secs(1),
        ),
        (
            "2 exact last-exit moment",
            exact_last_exit,
            Duration::from_secs(10),
        ),
        ("3 proposition audits", proposition_matrix, Duration::MAX),
        ("4 equivalence matrix", equivalence_verdicts, Duration::MAX),
        ("5 counterexample", counterexample, Duration::from_secs(5)),
        ("6 combinatorics", combinatorics, Duration::MAX),
        (
            "7 Levy and symmetrization",
            levy_and_symmetrization,
            Duration::MAX,
        ),
        (
            "8 sequential test",
            sequential_test,
            Duration::from_secs(300),
        ),
    ]
}

/// Writes past the test harness's output capture so the summary always shows.
fn report_line(line: String) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn acceptance() {
    let mut all_passed = true;
    let mut payloads = Vec::new();
    for (name, run, budget) in criteria() {
        let o = in_pool(1, run);
        let within = o.elapsed < budget;
        let passed = o.passed && within;
        all_passed &= passed;
        report_line(format!(
            "criterion {name}: {} ({:.2?}{}) {}",
            if passed { "PASS" } else { "FAIL" },
            o.elapsed,
            if within {
                String::new()
            } else {
                format!(", over budget {budget:?}")
            },
            o.detail
        ));
        payloads.push(o.payload);
    }
    let mut mismatched = Vec::new();
    for ((name, run, _), first) in criteria().into_iter().zip(&payloads) {
        if in_pool(4, run).payload != *first {
            mismatched.push(name);
        }
    }
    let deterministic = mismatched.is_empty();
    all_passed &= deterministic;
    report_line(format!(
        "criterion 9 determinism across thread counts (1 vs 4): {} {}",
        if deterministic { "PASS" } else { "FAIL" },
        if deterministic {
            "all payloads identical".to_string()
        } else {
            format!("differing: {mismatched:?}")
        }
    ));
    assert!(
        all_passed,
        "acceptance criteria failed; see the lines above"
    );
}
