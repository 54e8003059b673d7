//! Two-sided audits of the effective bounds linking the moment functional,
//! the deviation series and the last-exit moment, plus the combinatorial
//! identities behind them.
//!
//! With `c` the doubling constant of `G` and `t` a truncation point with
//! `E[|X|; |X| >= t] <= 1 - alpha`:
//!
//! ```text
//!     E[|X| G(|X|)] <= 4 c^2 ( t G(t) + E[G(L_{1/2})] / alpha )              (moment)
//!     S(X, G, 1)    <= E[|X| G] + (2p)!/2^p E[1+|X|]^(p-1) E[|X| H(|X|)]     (series)
//!     E[G(L_1)]     <= G(0) + 12 S(X, G, 1/8)                                (last exit)
//! ```
//!
//! where `H(n) >= n^p sum_{k>=n} G(k) k^-(p+1)`. Under symmetrization
//! `X* = X - X'`:
//!
//! ```text
//!     E[|X*| G(|X*|)] <= 4c E[|X| G(|X|)]
//!     E[G(L*_{2a})]   <= 2 E[G(L_a)]
//!     P[|U_n| >= a] <= 2 P[|U*_n| >= a/2] <= 4 P[|U_n| >= a/4]    (n large)
//! ```
//!
//! Every audit reports both sides with standard errors. The two sides of an
//! inequality always come from independent random streams, so their errors
//! combine in quadrature.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::dist::{empirical_median, Distribution, MomentEstimate, MomentMode};
use crate::error::{Error, Result};
use crate::lln::{
    deviation_profile, exact_tail_prob, simulate_last_exits, DeviationProfile, LastExitSamples,
    PathConfig, SeriesEstimate, DEFAULT_CENSOR_BOUND,
};
use crate::modfun::{
    h_scaling_constant, smallest_admissible_p, tail_condition_holds, GridSpec, ModerateFunction,
};
use crate::numeric::{mean_se, proportion_se};
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundName {
    Prop1,
    Prop2,
    Prop3,
    SymTransfer,
}

/// One audited inequality `lhs <= rhs`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub name: BoundName,
    pub label: String,
    pub dist: String,
    #[serde(rename = "G")]
    pub g: String,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub slack: f64,
    /// `slack` in combined standard errors; infinite when both sides are exact.
    pub holds_within: f64,
    pub seed: u64,
    /// The left side is exact, so the inequality must hold with no allowance.
    pub analytic_lhs: bool,
    /// A simulated side exceeded its censoring bound.
    pub degraded: bool,
    pub passed: bool,
    pub notes: Vec<String>,
}

/// Allowed violation, in combined standard errors, for simulated sides.
pub const FAIL_BELOW_SE: f64 = -4.0;

impl BoundReport {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: BoundName,
        label: impl Into<String>,
        dist: &Distribution,
        g: &ModerateFunction,
        (lhs, lhs_se): (f64, f64),
        (rhs, rhs_se): (f64, f64),
        seed: u64,
        analytic_lhs: bool,
    ) -> Self {
        let slack = rhs - lhs;
        let se = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
        let holds_within = if se > 0.0 {
            slack / se
        } else if slack >= 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        let threshold = if analytic_lhs { 0.0 } else { FAIL_BELOW_SE };
        Self {
            name,
            label: label.into(),
            dist: dist.name(),
            g: g.name().to_string(),
            lhs,
            lhs_se,
            rhs,
            rhs_se,
            slack,
            holds_within,
            seed,
            analytic_lhs,
            degraded: false,
            passed: !holds_within.is_nan() && holds_within >= threshold,
            notes: Vec::new(),
        }
    }

    fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }
}

/// Simulation budget for the audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditConfig {
    pub horizon: u64,
    pub reps: usize,
    pub seed: u64,
    /// Series truncation; defaults to the horizon.
    pub n_max: u64,
    pub censor_bound: f64,
}

impl AuditConfig {
    pub fn new(horizon: u64, reps: usize, seed: u64) -> Self {
        Self {
            horizon,
            reps,
            seed,
            n_max: horizon,
            censor_bound: DEFAULT_CENSOR_BOUND,
        }
    }
}

/// Grid on which `H = c G` is fitted.
pub fn h_grid() -> GridSpec {
    GridSpec::geometric(1.0, 1e4, 41).expect("static grid")
}

type ProfileCell = Arc<OnceLock<Result<Arc<DeviationProfile>>>>;

const LAST_EXIT_LEVELS: [f64; 2] = [0.5, 1.0];

/// Audits for one law, sharing simulated paths across functions `G`.
///
/// Path statistics do not depend on `G`: last-exit times are simulated once
/// for the levels `1/2` and `1`, and deviation indicators once per series
/// level. Each statistic has its own derived seed.
pub struct Auditor {
    dist: Distribution,
    cfg: AuditConfig,
    last_exits: OnceLock<Result<Arc<LastExitSamples>>>,
    profiles: Mutex<BTreeMap<u64, ProfileCell>>,
}

impl Auditor {
    pub fn new(dist: Distribution, cfg: AuditConfig) -> Self {
        Self {
            dist,
            cfg,
            last_exits: OnceLock::new(),
            profiles: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn dist(&self) -> &Distribution {
        &self.dist
    }

    fn seed_for(&self, role: &str) -> u64 {
        derive_seed(self.cfg.seed, &format!("{role}|{}", self.dist.name()))
    }

    fn last_exits(&self) -> Result<Arc<LastExitSamples>> {
        self.last_exits
            .get_or_init(|| {
                let cfg =
                    PathConfig::new(self.cfg.horizon, self.cfg.reps, self.seed_for("last-exit"));
                simulate_last_exits(&self.dist, &LAST_EXIT_LEVELS, &cfg).map(Arc::new)
            })
            .clone()
    }

    fn profile(&self, a: f64) -> Result<Arc<DeviationProfile>> {
        let cell = {
            let mut map = self.profiles.lock().expect("profile cache poisoned");
            map.entry(a.to_bits()).or_default().clone()
        };
        cell.get_or_init(|| {
            let seed = self.seed_for(&format!("series|{a}"));
            deviation_profile(&self.dist, a, self.cfg.n_max, self.cfg.reps, seed).map(Arc::new)
        })
        .clone()
    }

    /// `S(X, G, a)` partial sums on the cached profile.
    pub fn series(&self, g: &ModerateFunction, a: f64) -> Result<SeriesEstimate> {
        Ok(self.profile(a)?.series(g, g.name()))
    }

    fn moment(&self, g: &ModerateFunction, role: &str) -> Result<(MomentEstimate, bool)> {
        match self.dist.moment_xg_auto(g) {
            Ok(m) => Ok((m, true)),
            Err(Error::Unsupported(_)) => {
                let mode = MomentMode::MonteCarlo {
                    reps: self.cfg.reps,
                    seed: self.seed_for(role),
                };
                Ok((self.dist.moment_xg(g, mode)?, false))
            }
            Err(e) => Err(e),
        }
    }

    /// Moment bound with the truncation point chosen for `alpha`.
    pub fn prop1(&self, g: &ModerateFunction, alpha: f64) -> Result<BoundReport> {
        let c = g
            .claimed_doubling()
            .ok_or_else(|| Error::Precondition(format!("{} has no doubling constant", g.name())))?;
        let t = self.dist.truncation_threshold(alpha)?;
        let (m, exact) = self.moment(g, "prop1-moment")?;
        if !m.is_finite() {
            return Err(Error::Precondition(format!(
                "E[|X| G(|X|)] diverges for {}",
                self.dist.name()
            )));
        }
        let le = self
            .last_exits()?
            .estimate(g, g.name(), 0.5, self.cfg.censor_bound)?;
        let k = 4.0 * c * c;
        let rhs = k * (t * g.value(t) + le.mean / alpha);
        let rhs_se = k * le.se / alpha;
        let mut r = BoundReport::new(
            BoundName::Prop1,
            format!("alpha={alpha}"),
            &self.dist,
            g,
            (m.value, m.se),
            (rhs, rhs_se),
            self.cfg.seed,
            exact,
        )
        .note(format!(
            "c={c}, t={t}, E[G(L_1/2)]={} (se {}), censor_rate={}",
            le.mean, le.se, le.censor_rate
        ));
        if !le.certified {
            r.degraded = true;
            r = r.note(le.warning.unwrap_or_default());
        }
        Ok(r)
    }

    /// Series bound; `p` defaults to the smallest admissible order.
    pub fn prop2(&self, g: &ModerateFunction, p: Option<u32>) -> Result<BoundReport> {
        if !self.dist.is_symmetric() {
            return Err(Error::Precondition(format!(
                "{} is not symmetric",
                self.dist.name()
            )));
        }
        let p = match p {
            Some(p) => p,
            None => smallest_admissible_p(g).ok_or(Error::ConditionViolation {
                p: 0,
                smallest_admissible: None,
            })?,
        };
        if p == 0 || !tail_condition_holds(g, p) {
            return Err(Error::ConditionViolation {
                p,
                smallest_admissible: smallest_admissible_p(g),
            });
        }
        let c_h = h_scaling_constant(g, p, &h_grid())?;
        let (m, exact_m) = self.moment(g, "prop2-moment")?;
        let (m1, _) = self.moment(&ModerateFunction::constant(), "prop2-mean-abs")?;
        if !m.is_finite() || !m1.is_finite() {
            return Err(Error::Precondition(format!(
                "moment functional diverges for {}",
                self.dist.name()
            )));
        }
        let cp = double_factorial_ratio(p);
        let base = (1.0 + m1.value).powi(p as i32 - 1) * c_h;
        let rhs = m.value + cp * base * m.value;
        let rhs_se = (1.0 + cp * base) * m.se;
        let s = self.series(g, 1.0)?;
        let exact_lhs = s.method == crate::lln::SeriesMethod::Exact;
        let r = BoundReport::new(
            BoundName::Prop2,
            format!("p={p}"),
            &self.dist,
            g,
            (s.partial_sum, s.partial_sum_se),
            (rhs, rhs_se),
            self.cfg.seed,
            exact_lhs,
        )
        .note(format!(
            "c_H={c_h}, (2p)!/2^p={cp}, E|X|={}, n_covered={}",
            m1.value, s.n_covered
        ))
        .note("left side is a partial sum of the series up to n_max");
        Ok(if exact_m {
            r
        } else {
            r.note("moment functional estimated by Monte Carlo")
        })
    }

    /// Last-exit bound; the right side uses a partial sum of the series, which
    /// can only understate it, so only `lhs <= rhs` is meaningful.
    pub fn prop3(&self, g: &ModerateFunction) -> Result<BoundReport> {
        if !self.dist.is_symmetric() {
            return Err(Error::Precondition(format!(
                "{} is not symmetric",
                self.dist.name()
            )));
        }
        let le = self
            .last_exits()?
            .estimate(g, g.name(), 1.0, self.cfg.censor_bound)?;
        let s = self.series(g, 0.125)?;
        let rhs = g.value(0.0) + 12.0 * s.partial_sum;
        let mut r = BoundReport::new(
            BoundName::Prop3,
            "a=1",
            &self.dist,
            g,
            (le.mean, le.se),
            (rhs, 12.0 * s.partial_sum_se),
            self.cfg.seed,
            false,
        )
        .note("right side uses a partial sum of S(X,G,1/8), a lower estimate of the series")
        .note(format!(
            "censor_rate={}, n_covered={}",
            le.censor_rate, s.n_covered
        ));
        if !le.certified {
            r.degraded = true;
            r = r.note(le.warning.unwrap_or_default());
        }
        Ok(r)
    }

    /// Symmetrization transfers at level `a`.
    pub fn sym_transfer(&self, g: &ModerateFunction, a: f64) -> Result<Vec<BoundReport>> {
        sym_transfer_impl(&self.dist, g, a, &self.cfg)
    }
}

/// `(2p)! / 2^p` as a float, computed exactly first.
pub fn double_factorial_ratio(p: u32) -> f64 {
    let v = factorial(2 * u64::from(p)) >> p as usize;
    v.to_f64().unwrap_or(f64::INFINITY)
}

pub fn prop1_check(
    dist: &Distribution,
    g: &ModerateFunction,
    alpha: f64,
    cfg: &AuditConfig,
) -> Result<BoundReport> {
    Auditor::new(dist.clone(), *cfg).prop1(g, alpha)
}

pub fn prop2_check(
    dist: &Distribution,
    g: &ModerateFunction,
    p: Option<u32>,
    cfg: &AuditConfig,
) -> Result<BoundReport> {
    Auditor::new(dist.clone(), *cfg).prop2(g, p)
}

pub fn prop3_check(
    dist: &Distribution,
    g: &ModerateFunction,
    cfg: &AuditConfig,
) -> Result<BoundReport> {
    Auditor::new(dist.clone(), *cfg).prop3(g)
}

pub fn sym_transfer_check(
    dist: &Distribution,
    g: &ModerateFunction,
    a: f64,
    cfg: &AuditConfig,
) -> Result<Vec<BoundReport>> {
    sym_transfer_impl(dist, g, a, cfg)
}

/// Deviation probabilities of `U_n` at dyadic `n` for several levels, with
/// standard errors and the median of `U_n`.
struct DyadicTails {
    ns: Vec<u64>,
    /// `probs[level][k]`, `ses[level][k]`
    probs: Vec<Vec<f64>>,
    ses: Vec<Vec<f64>>,
    medians: Vec<f64>,
}

fn dyadic_tails(
    dist: &Distribution,
    levels: &[f64],
    horizon: u64,
    reps: usize,
    seed: u64,
) -> Result<DyadicTails> {
    let ns: Vec<u64> = (0..64)
        .map(|k| 1u64 << k)
        .take_while(|n| *n <= horizon)
        .collect();
    let all_exact = ns.iter().all(|n| {
        levels
            .iter()
            .all(|a| exact_tail_prob(dist, *n, *a).is_some())
    });
    if all_exact && dist.is_symmetric() {
        let probs = levels
            .iter()
            .map(|a| {
                ns.iter()
                    .map(|n| exact_tail_prob(dist, *n, *a).unwrap().0)
                    .collect()
            })
            .collect();
        let ses = levels.iter().map(|_| vec![0.0; ns.len()]).collect();
        return Ok(DyadicTails {
            medians: vec![0.0; ns.len()],
            ns,
            probs,
            ses,
        });
    }
    let top = *ns.last().unwrap_or(&1);
    let per_rep: Vec<Vec<f64>> = rng_paths(dist, top, reps, seed, &ns);
    let mut probs = vec![vec![0.0; ns.len()]; levels.len()];
    let mut ses = vec![vec![0.0; ns.len()]; levels.len()];
    let mut medians = vec![0.0; ns.len()];
    for k in 0..ns.len() {
        let us: Vec<f64> = per_rep.iter().map(|v| v[k]).collect();
        for (l, a) in levels.iter().enumerate() {
            let p = us.iter().filter(|u| u.abs() >= *a).count() as f64 / reps as f64;
            probs[l][k] = p;
            ses[l][k] = proportion_se(p, reps);
        }
        medians[k] = if dist.is_symmetric() {
            0.0
        } else {
            empirical_median(&us)?
        };
    }
    Ok(DyadicTails {
        ns,
        probs,
        ses,
        medians,
    })
}

/// `U_n` at the requested `n` for every replicate.
fn rng_paths(dist: &Distribution, len: u64, reps: usize, seed: u64, at: &[u64]) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut stream = rng::stream(seed, r as u64);
            let mut out = Vec::with_capacity(at.len());
            let mut s = 0.0;
            let mut buf = vec![0.0; 1024];
            let mut n = 0u64;
            let mut next = 0;
            while n < len {
                let k = ((len - n) as usize).min(buf.len());
                dist.fill(&mut stream, &mut buf[..k]);
                for x in &buf[..k] {
                    n += 1;
                    s += x;
                    if next < at.len() && at[next] == n {
                        out.push(s / n as f64);
                        next += 1;
                    }
                }
            }
            out
        })
        .collect()
}

fn sym_transfer_impl(
    dist: &Distribution,
    g: &ModerateFunction,
    a: f64,
    cfg: &AuditConfig,
) -> Result<Vec<BoundReport>> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("level must be positive, got {a}")));
    }
    let c = g
        .claimed_doubling()
        .ok_or_else(|| Error::Precondition(format!("{} has no doubling constant", g.name())))?;
    if dist.analytic_mean() != Some(0.0) {
        return Err(Error::Precondition(format!(
            "{} is not centered",
            dist.name()
        )));
    }
    let star = Distribution::symmetrized(dist.clone());
    let seed = |role: &str| derive_seed(cfg.seed, &format!("{role}|{}", dist.name()));
    let moment = |d: &Distribution, role: &str| -> Result<(MomentEstimate, bool)> {
        match d.moment_xg_auto(g) {
            Ok(m) => Ok((m, true)),
            Err(Error::Unsupported(_)) => Ok((
                d.moment_xg(
                    g,
                    MomentMode::MonteCarlo {
                        reps: cfg.reps,
                        seed: seed(role),
                    },
                )?,
                false,
            )),
            Err(e) => Err(e),
        }
    };
    let mut out = Vec::new();

    let (ms, exact_s) = moment(&star, "sym-moment-lhs")?;
    let (m, _) = moment(dist, "sym-moment-rhs")?;
    out.push(
        BoundReport::new(
            BoundName::SymTransfer,
            "moment",
            dist,
            g,
            (ms.value, ms.se),
            (4.0 * c * m.value, 4.0 * c * m.se),
            cfg.seed,
            exact_s,
        )
        .note(format!("c={c}")),
    );

    let lhs_cfg = PathConfig::new(cfg.horizon, cfg.reps, seed("sym-last-exit-lhs"));
    let rhs_cfg = PathConfig::new(cfg.horizon, cfg.reps, seed("sym-last-exit-rhs"));
    let lhs = simulate_last_exits(&star, &[2.0 * a], &lhs_cfg)?.estimate(
        g,
        g.name(),
        2.0 * a,
        cfg.censor_bound,
    )?;
    let rhs =
        simulate_last_exits(dist, &[a], &rhs_cfg)?.estimate(g, g.name(), a, cfg.censor_bound)?;
    let mut r = BoundReport::new(
        BoundName::SymTransfer,
        format!("last-exit a={a}"),
        dist,
        g,
        (lhs.mean, lhs.se),
        (2.0 * rhs.mean, 2.0 * rhs.se),
        cfg.seed,
        g.is_constant(),
    );
    if !(lhs.certified && rhs.certified) {
        r.degraded = true;
        r = r.note(format!(
            "censor rates {} and {}",
            lhs.censor_rate, rhs.censor_rate
        ));
    }
    out.push(r);

    let base = dyadic_tails(
        dist,
        &[a, a / 4.0],
        cfg.horizon,
        cfg.reps,
        seed("sym-tails"),
    )?;
    let st = dyadic_tails(
        &star,
        &[a / 2.0],
        cfg.horizon,
        cfg.reps,
        seed("sym-tails-star"),
    )?;
    // the sandwich needs |median(U_n)| <= a/4 from n0 on
    let k0 = (0..base.ns.len())
        .find(|&k| base.medians[k..].iter().all(|m| m.abs() <= a / 4.0))
        .unwrap_or(base.ns.len());
    for k in k0..base.ns.len() {
        let n = base.ns[k];
        let (p1, s1) = (base.probs[0][k], base.ses[0][k]);
        let (p3, s3) = (base.probs[1][k], base.ses[1][k]);
        let (p2, s2) = (st.probs[0][k], st.ses[0][k]);
        let exact = s1 == 0.0 && s2 == 0.0 && s3 == 0.0;
        out.push(
            BoundReport::new(
                BoundName::SymTransfer,
                format!("sandwich-lower n={n}"),
                dist,
                g,
                (p1, s1),
                (2.0 * p2, 2.0 * s2),
                cfg.seed,
                exact,
            )
            .note(format!("n0={}", base.ns[k0])),
        );
        out.push(
            BoundReport::new(
                BoundName::SymTransfer,
                format!("sandwich-upper n={n}"),
                dist,
                g,
                (2.0 * p2, 2.0 * s2),
                (4.0 * p3, 4.0 * s3),
                cfg.seed,
                exact,
            )
            .note(format!("n0={}", base.ns[k0])),
        );
    }
    Ok(out)
}

/// `n!`
pub fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * k)
}

/// `C(n, k)`, zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Largest `p` accepted by [`count_compositions`].
pub const MAX_COMPOSITION_P: u64 = 40;
/// Largest `p` for which compositions are also enumerated explicitly.
pub const ENUMERATE_COMPOSITIONS_UP_TO: u64 = 14;

fn enumerate_compositions(p: u64, q: u64) -> u64 {
    // sequences of q positive integers with sum p
    if q == 0 {
        return u64::from(p == 0);
    }
    (1..=p.saturating_sub(q - 1))
        .map(|first| enumerate_compositions(p - first, q - 1))
        .sum()
}

/// Number of sequences of `q` positive integers summing to `p`, which is
/// `C(p-1, q-1)`. Zero when `q > p`.
pub fn count_compositions(p: u64, q: u64) -> Result<u64> {
    if p == 0 || q == 0 {
        return Err(Error::Domain(format!(
            "p and q must be positive (p={p}, q={q})"
        )));
    }
    if p > MAX_COMPOSITION_P {
        return Err(Error::Domain(format!(
            "p = {p} exceeds {MAX_COMPOSITION_P}"
        )));
    }
    if q > p {
        return Ok(0);
    }
    let formula = binomial(p - 1, q - 1)
        .to_u64()
        .expect("C(39, k) fits in u64");
    if p <= ENUMERATE_COMPOSITIONS_UP_TO {
        let counted = enumerate_compositions(p, q);
        if counted != formula {
            return Err(Error::Precision(format!(
                "enumeration gave {counted}, formula {formula} for p={p}, q={q}"
            )));
        }
    }
    Ok(formula)
}

/// `p! / (c_1! ... c_k!)` exactly.
pub fn multinomial(p: u64, parts: &[i64]) -> Result<BigUint> {
    if let Some(c) = parts.iter().find(|c| **c < 0) {
        return Err(Error::Domain(format!("negative part {c}")));
    }
    let sum: u128 = parts.iter().map(|c| *c as u128).sum();
    if sum != u128::from(p) {
        return Err(Error::Domain(format!("parts sum to {sum}, expected {p}")));
    }
    let mut acc = BigUint::one();
    let mut used = 0u64;
    for c in parts {
        let c = *c as u64;
        used += c;
        acc *= binomial(used, c);
    }
    Ok(acc)
}

/// Exhaustive check of `M(2p, 2d) <= (2p)!/2^p` over all compositions `d` of `p`.
#[derive(Debug, Clone, Serialize)]
pub struct MultinomialBoundCheck {
    pub p: u64,
    pub compositions: usize,
    pub max_multinomial: String,
    pub bound: String,
    pub holds: bool,
}

pub fn multinomial_bound_check(p: u64) -> Result<MultinomialBoundCheck> {
    if p == 0 || p > 16 {
        return Err(Error::Domain(format!("p must lie in 1..=16, got {p}")));
    }
    let bound = factorial(2 * p) >> p as usize;
    let mut max = BigUint::zero();
    let mut count = 0usize;
    let mut holds = true;
    // compositions of p <-> subsets of the p-1 cut points
    for mask in 0u32..(1 << (p - 1)) {
        let mut parts = Vec::new();
        let mut run = 1i64;
        for i in 0..p - 1 {
            if mask >> i & 1 == 1 {
                parts.push(2 * run);
                run = 1;
            } else {
                run += 1;
            }
        }
        parts.push(2 * run);
        let m = multinomial(2 * p, &parts)?;
        holds &= m <= bound;
        if m > max {
            max = m;
        }
        count += 1;
    }
    Ok(MultinomialBoundCheck {
        p,
        compositions: count,
        max_multinomial: max.to_string(),
        bound: bound.to_string(),
        holds,
    })
}

/// `E[|X| G(|X|)]` on `n` sampled draws; handy for quick cross-checks.
pub fn moment_sample_mean(
    dist: &Distribution,
    g: &ModerateFunction,
    n: usize,
    seed: u64,
) -> (f64, f64) {
    let xs = dist.sample(seed, n);
    let vals: Vec<f64> = xs.iter().map(|x| x.abs() * g.value(x.abs())).collect();
    mean_se(&vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quick() -> AuditConfig {
        AuditConfig::new(1 << 10, 4000, 17)
    }

    #[test]
    fn prop1_examples() {
        let sq = ModerateFunction::power(2.0).unwrap();
        let r = prop1_check(&Distribution::rademacher(), &sq, 0.5, &quick()).unwrap();
        assert_eq!(r.lhs, 4.0);
        assert!(r.analytic_lhs && r.passed && r.rhs > 4.0 * 16.0 * 1.001 * sq.value(1.001));
        let one = ModerateFunction::constant();
        let r = prop1_check(&Distribution::uniform(1.0).unwrap(), &one, 0.5, &quick()).unwrap();
        assert_eq!(r.lhs, 0.5);
        assert_eq!(r.rhs, 8.0);
        assert!(r.passed);
        let e = ModerateFunction::exp(1.0).unwrap();
        assert!(matches!(
            prop1_check(&Distribution::rademacher(), &e, 0.5, &quick()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn prop2_examples() {
        let lin = ModerateFunction::power(1.0).unwrap();
        let r = prop2_check(&Distribution::rademacher(), &lin, Some(2), &quick()).unwrap();
        assert!(
            (r.lhs - 2.0 * (1.0 + std::f64::consts::LN_2)).abs() < 1e-9,
            "{}",
            r.lhs
        );
        assert!(r.passed && r.holds_within.is_infinite());
        let one = ModerateFunction::constant();
        let r = prop2_check(
            &Distribution::gaussian(1.0).unwrap(),
            &one,
            Some(1),
            &quick(),
        )
        .unwrap();
        assert!(r.passed);
        let sq = ModerateFunction::power(2.0).unwrap();
        match prop2_check(&Distribution::rademacher(), &sq, Some(2), &quick()) {
            Err(Error::ConditionViolation {
                p: 2,
                smallest_admissible: Some(3),
            }) => {}
            other => panic!("{other:?}"),
        }
        let b = Distribution::bernoulli(0.3, 0.0, 1.0).unwrap();
        assert!(matches!(
            prop2_check(&b, &lin, Some(2), &quick()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn prop3_examples() {
        let lin = ModerateFunction::power(1.0).unwrap();
        let r = prop3_check(
            &Distribution::rademacher(),
            &lin,
            &AuditConfig::new(1 << 10, 20_000, 5),
        )
        .unwrap();
        assert!((r.lhs - 3.0).abs() < 4.0 * r.lhs_se);
        assert!(r.passed);
        let one = ModerateFunction::constant();
        let r = prop3_check(&Distribution::uniform(1.0).unwrap(), &one, &quick()).unwrap();
        assert_eq!(r.lhs, 1.0);
        assert!(r.passed && r.rhs >= 1.0);
    }

    #[test]
    fn sym_transfer_examples() {
        let one = ModerateFunction::constant();
        let rs = sym_transfer_check(&Distribution::rademacher(), &one, 0.5, &quick()).unwrap();
        assert_eq!((rs[0].lhs, rs[0].rhs), (1.0, 4.0));
        assert_eq!((rs[1].lhs, rs[1].rhs), (1.0, 2.0));
        assert!(rs.iter().all(|r| r.passed), "{rs:#?}");
        let rs =
            sym_transfer_check(&Distribution::gaussian(1.0).unwrap(), &one, 0.5, &quick()).unwrap();
        let half_normal = (2.0 / std::f64::consts::PI).sqrt();
        assert!((rs[0].lhs - 2f64.sqrt() * half_normal).abs() < 1e-9);
        assert!(rs.iter().all(|r| r.passed));
    }

    #[test]
    fn compositions() {
        assert_eq!(count_compositions(4, 2).unwrap(), 3);
        assert_eq!(count_compositions(9, 9).unwrap(), 1);
        assert_eq!(count_compositions(9, 1).unwrap(), 1);
        assert_eq!(count_compositions(3, 5).unwrap(), 0);
        assert_eq!(count_compositions(40, 20).unwrap(), 68_923_264_410);
        assert!(count_compositions(41, 2).is_err());
        assert!(count_compositions(4, 0).is_err());
        for p in 1..=14 {
            let total: u64 = (1..=p).map(|q| count_compositions(p, q).unwrap()).sum();
            assert_eq!(total, 1 << (p - 1));
        }
    }

    #[test]
    fn multinomials() {
        assert_eq!(multinomial(4, &[2, 2]).unwrap(), BigUint::from(6u32));
        assert_eq!(multinomial(6, &[2, 2, 2]).unwrap(), BigUint::from(90u32));
        assert_eq!(multinomial(7, &[7]).unwrap(), BigUint::one());
        assert!(multinomial(4, &[2, -1, 3]).is_err());
        assert!(multinomial(4, &[2, 1]).is_err());
        // exceeds u64 and is exact
        assert_eq!(
            multinomial(30, &[10, 10, 10]).unwrap().to_string(),
            "5550996791340"
        );
        assert_eq!(factorial(25).to_string(), "15511210043330985984000000");
        for p in 1..=8 {
            let c = multinomial_bound_check(p).unwrap();
            assert!(c.holds);
            assert_eq!(c.compositions, 1 << (p - 1));
        }
        // all parts 2 attains the bound
        assert_eq!(
            multinomial_bound_check(5).unwrap().max_multinomial,
            multinomial_bound_check(5).unwrap().bound
        );
    }

    #[test]
    fn report_arithmetic() {
        let g = ModerateFunction::constant();
        let d = Distribution::rademacher();
        let r = BoundReport::new(
            BoundName::Prop1,
            "",
            &d,
            &g,
            (1.0, 0.3),
            (2.0, 0.4),
            0,
            false,
        );
        assert!((r.slack - 1.0).abs() < 1e-15 && (r.holds_within - 2.0).abs() < 1e-12);
        let r = BoundReport::new(
            BoundName::Prop1,
            "",
            &d,
            &g,
            (3.0, 0.3),
            (2.0, 0.4),
            0,
            false,
        );
        assert!(r.passed);
        let r = BoundReport::new(
            BoundName::Prop1,
            "",
            &d,
            &g,
            (5.0, 0.3),
            (2.0, 0.4),
            0,
            false,
        );
        assert!(!r.passed);
        let r = BoundReport::new(
            BoundName::Prop1,
            "",
            &d,
            &g,
            (2.5, 0.0),
            (2.0, 0.4),
            0,
            true,
        );
        assert!(!r.passed);
    }

    proptest! {
        #[test]
        fn multinomial_is_permutation_invariant(parts in proptest::collection::vec(0i64..8, 1..6), seed in 0u64..1000) {
            let p: i64 = parts.iter().sum();
            let mut shuffled = parts.clone();
            let k = shuffled.len();
            shuffled.rotate_left((seed as usize) % k);
            shuffled.reverse();
            prop_assert_eq!(multinomial(p as u64, &parts).unwrap(), multinomial(p as u64, &shuffled).unwrap());
        }

        #[test]
        fn compositions_match_binomial(p in 1u64..=14, q in 1u64..=14) {
            let expected = if q > p { 0 } else { binomial(p - 1, q - 1).to_u64().unwrap() };
            prop_assert_eq!(count_compositions(p, q).unwrap(), expected);
        }
    }
}
