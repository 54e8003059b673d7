//! Cesàro-mean paths, last-exit times and the deviation series.
//!
//! For partial sums `S_n` of i.i.d. increments and a level `a > 0`,
//!
//! ```text
//!     L_a^x   = sup({0} u {n >= 1 : |S_n/n - x| >= a})
//!     S(G, a) = sum_{n>=1} n^-1 G(n) P[|S_n/n| >= a]
//! ```
//!
//! Paths are simulated up to a horizon `N`. A last exit landing in the final
//! dyadic block `[N/2, N]` marks the sample as censored: the true `L` may lie
//! beyond the horizon.
//!
//! The series is evaluated exactly when `P[|S_n/n| >= a]` has a closed form
//! (two-point and gaussian laws), with a Hoeffding/Chernoff bound on the
//! remainder. Otherwise every `n < 64` is estimated individually and each
//! dyadic block `[2^i, 2^(i+1))` is interpolated linearly between its
//! endpoint probabilities, which are estimated on shared paths. Each replicate
//! then yields an unbiased estimate of every block, so block and total
//! standard errors come from the spread across replicates.

use rayon::prelude::*;
use serde::Serialize;

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::modfun::{Growth, ModerateFunction};
use crate::numeric::{
    binomial_mean_tail, compensated_sum, gaussian_two_sided_tail, mean_se, proportion_se,
    CompensatedSum,
};
use crate::rng::{self, derive_seed};

/// Largest censored fraction for which a last-exit moment is certified.
pub const DEFAULT_CENSOR_BOUND: f64 = 1e-3;

/// Enumeration is used for finitely supported laws when the number of
/// outcome sequences stays below this.
pub const ENUMERATION_LIMIT: u64 = 1 << 20;
/// Longest path that is ever enumerated.
pub const ENUMERATION_MAX_STEPS: u64 = 20;

const CHUNK: usize = 1024;

/// One path's last-exit statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LastExitSample {
    pub value: u64,
    pub censored: bool,
}

impl LastExitSample {
    fn from_value(value: u64, horizon: u64) -> Self {
        Self {
            value,
            censored: value > 0 && 2 * value >= horizon,
        }
    }
}

/// Last index `n` with `|Y_n - x| >= a`, or 0.
pub fn last_exit_time(path: &[f64], a: f64, x: f64) -> Result<LastExitSample> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("level must be positive, got {a}")));
    }
    if path.is_empty() {
        return Err(Error::Domain("empty path".into()));
    }
    if let Some(i) = path.iter().position(|y| !y.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite path entry at index {}",
            i + 1
        )));
    }
    let value = path
        .iter()
        .rposition(|y| (y - x).abs() >= a)
        .map_or(0, |i| i as u64 + 1);
    Ok(LastExitSample::from_value(value, path.len() as u64))
}

/// Monte Carlo settings for path functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathConfig {
    pub horizon: u64,
    pub replicates: usize,
    pub seed: u64,
    /// Deviation center; `None` uses the law's mean, which must be 0.
    pub center: Option<f64>,
}

impl PathConfig {
    pub fn new(horizon: u64, replicates: usize, seed: u64) -> Self {
        Self {
            horizon,
            replicates,
            seed,
            center: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.replicates == 0 {
            return Err(Error::Config(format!(
                "horizon and replicates must be positive (got {} and {})",
                self.horizon, self.replicates
            )));
        }
        if self.horizon > u64::from(u32::MAX) {
            return Err(Error::Config(format!(
                "horizon {} exceeds 2^32 - 1",
                self.horizon
            )));
        }
        Ok(())
    }

    fn resolve_center(&self, dist: &Distribution) -> Result<f64> {
        match self.center {
            Some(x) if x.is_finite() => Ok(x),
            Some(x) => Err(Error::Config(format!("center must be finite, got {x}"))),
            None => match dist.analytic_mean() {
                Some(0.0) => Ok(0.0),
                Some(m) => Err(Error::Precondition(format!(
                    "{} has mean {m}; supply a center or use a centered law",
                    dist.name()
                ))),
                None => Err(Error::Precondition(format!(
                    "{} has no finite mean",
                    dist.name()
                ))),
            },
        }
    }
}

/// Runs `per_replicate` for every replicate on its own random stream and
/// returns the results in replicate order.
fn replicate_map<T, F>(replicates: usize, seed: u64, per_replicate: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut rng::StreamRng, &mut Vec<f64>) -> T + Sync,
{
    (0..replicates)
        .into_par_iter()
        .map_init(
            || vec![0.0; CHUNK],
            |buf, r| {
                let mut stream = rng::stream(seed, r as u64);
                per_replicate(&mut stream, buf)
            },
        )
        .collect()
}

/// Calls `step(n, n as f64, S_n)` for `n = 1..=len` along one simulated path.
#[inline(always)]
fn walk<F: FnMut(u64, f64, f64)>(
    dist: &Distribution,
    r: &mut rng::StreamRng,
    buf: &mut [f64],
    len: u64,
    mut step: F,
) {
    let mut s = 0.0;
    let mut n = 0u64;
    let mut nf = 0.0;
    while n < len {
        let k = ((len - n) as usize).min(buf.len());
        dist.fill(r, &mut buf[..k]);
        for x in &buf[..k] {
            n += 1;
            nf += 1.0;
            s += x;
            step(n, nf, s);
        }
    }
}

/// Last-exit samples at several levels on shared paths.
#[derive(Debug, Clone)]
pub struct LastExitSamples {
    pub dist: String,
    pub levels: Vec<f64>,
    pub config: PathConfig,
    pub center: f64,
    /// `values[level][replicate]`
    values: Vec<Vec<u32>>,
}

/// Simulates `cfg.replicates` paths and records `L_a` for every level.
pub fn simulate_last_exits(
    dist: &Distribution,
    levels: &[f64],
    cfg: &PathConfig,
) -> Result<LastExitSamples> {
    cfg.validate()?;
    if levels.is_empty() || levels.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::Domain(format!(
            "levels must be finite and positive, got {levels:?}"
        )));
    }
    let center = cfg.resolve_center(dist)?;
    let horizon = cfg.horizon;
    let min_level = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let per_rep: Vec<Vec<u32>> = replicate_map(cfg.replicates, cfg.seed, |r, buf| {
        let mut last = vec![0u32; levels.len()];
        walk(dist, r, buf, horizon, |n, nf, s| {
            // |S_n/n - x| >= a  <=>  |S_n - n x| >= a n
            let dev = (s - nf * center).abs();
            if dev >= min_level * nf {
                for (l, a) in last.iter_mut().zip(levels) {
                    if dev >= a * nf {
                        *l = n as u32;
                    }
                }
            }
        });
        last
    });
    let values = (0..levels.len())
        .map(|l| per_rep.iter().map(|v| v[l]).collect())
        .collect();
    Ok(LastExitSamples {
        dist: dist.name(),
        levels: levels.to_vec(),
        config: *cfg,
        center,
        values,
    })
}

/// Monte Carlo estimate of `E[G(L_a)]`.
#[derive(Debug, Clone, Serialize)]
pub struct LastExitEstimate {
    pub dist: String,
    #[serde(rename = "G")]
    pub g: String,
    pub a: f64,
    pub horizon: u64,
    pub replicates: usize,
    pub seed: u64,
    pub mean: f64,
    pub se: f64,
    pub censor_rate: f64,
    /// Censor rate within the configured bound.
    pub certified: bool,
    pub warning: Option<String>,
}

impl LastExitSamples {
    fn level_index(&self, a: f64) -> Result<usize> {
        self.levels.iter().position(|l| *l == a).ok_or_else(|| {
            Error::Domain(format!(
                "level {a} was not simulated (have {:?})",
                self.levels
            ))
        })
    }

    pub fn samples(&self, a: f64) -> Result<Vec<LastExitSample>> {
        let i = self.level_index(a)?;
        let h = self.config.horizon;
        Ok(self.values[i]
            .iter()
            .map(|v| LastExitSample::from_value(u64::from(*v), h))
            .collect())
    }

    pub fn censor_rate(&self, a: f64) -> Result<f64> {
        let i = self.level_index(a)?;
        let h = self.config.horizon;
        let censored = self.values[i]
            .iter()
            .filter(|v| LastExitSample::from_value(u64::from(**v), h).censored)
            .count();
        Ok(censored as f64 / self.values[i].len() as f64)
    }

    pub fn estimate<G: Growth + ?Sized>(
        &self,
        g: &G,
        g_name: &str,
        a: f64,
        censor_bound: f64,
    ) -> Result<LastExitEstimate> {
        let i = self.level_index(a)?;
        let vals: Vec<f64> = self.values[i]
            .iter()
            .map(|v| g.value(f64::from(*v)))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precision(format!(
                "{g_name} overflowed on a last-exit sample"
            )));
        }
        let (mean, se) = mean_se(&vals);
        let censor_rate = self.censor_rate(a)?;
        let certified = censor_rate <= censor_bound;
        let warning = (!certified).then(|| {
            format!(
                "horizon too short: {:.3e} of paths have their last exit in [N/2, N] (bound {censor_bound:e}); the mean understates E[G(L)]",
                censor_rate
            )
        });
        Ok(LastExitEstimate {
            dist: self.dist.clone(),
            g: g_name.to_string(),
            a,
            horizon: self.config.horizon,
            replicates: self.config.replicates,
            seed: self.config.seed,
            mean,
            se,
            censor_rate,
            certified,
            warning,
        })
    }
}

/// `E[G(L_a)]` by simulation.
pub fn estimate_eg_lastexit(
    dist: &Distribution,
    g: &ModerateFunction,
    a: f64,
    cfg: &PathConfig,
) -> Result<LastExitEstimate> {
    simulate_last_exits(dist, &[a], cfg)?.estimate(g, g.name(), a, DEFAULT_CENSOR_BOUND)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMethod {
    ClosedForm,
    Enumeration,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub p_hat: f64,
    pub se: f64,
    pub method: TailMethod,
}

/// Atoms usable for enumeration over `n` steps.
fn enumerable_atoms(dist: &Distribution, n: u64) -> Option<Vec<(f64, f64)>> {
    if n > ENUMERATION_MAX_STEPS {
        return None;
    }
    let atoms = dist.atoms()?;
    let k = atoms.len() as u64;
    let mut count: u64 = 1;
    for _ in 0..n {
        count = count.checked_mul(k)?;
        if count > ENUMERATION_LIMIT {
            return None;
        }
    }
    Some(atoms)
}

/// Visits every outcome sequence of length `n`, passing the partial sums and
/// the sequence probability.
fn enumerate_paths<F: FnMut(&[f64], f64)>(atoms: &[(f64, f64)], n: usize, visit: &mut F) {
    fn go<F: FnMut(&[f64], f64)>(
        atoms: &[(f64, f64)],
        n: usize,
        sums: &mut Vec<f64>,
        mass: f64,
        visit: &mut F,
    ) {
        if sums.len() == n {
            visit(sums, mass);
            return;
        }
        let s = sums.last().copied().unwrap_or(0.0);
        for (x, m) in atoms {
            sums.push(s + x);
            go(atoms, n, sums, mass * m, visit);
            sums.pop();
        }
    }
    let mut sums = Vec::with_capacity(n);
    go(atoms, n, &mut sums, 1.0, visit);
}

/// `P[|S_n/n| >= a]` without simulation, when possible.
pub fn exact_tail_prob(dist: &Distribution, n: u64, a: f64) -> Option<(f64, TailMethod)> {
    if a <= 0.0 {
        return Some((1.0, TailMethod::ClosedForm));
    }
    if let Some(p) = closed_form_tail(dist, n, a) {
        return Some((p, TailMethod::ClosedForm));
    }
    let atoms = enumerable_atoms(dist, n)?;
    let nf = n as f64;
    let mut acc = CompensatedSum::new();
    enumerate_paths(&atoms, n as usize, &mut |sums, mass| {
        if (sums[sums.len() - 1] / nf).abs() >= a {
            acc.add(mass);
        }
    });
    Some((acc.value().clamp(0.0, 1.0), TailMethod::Enumeration))
}

fn closed_form_tail(dist: &Distribution, n: u64, a: f64) -> Option<f64> {
    let nf = n as f64;
    match dist {
        Distribution::Rademacher => Some(binomial_mean_tail(n, 0.5, -1.0, 1.0, 0.0, a)),
        Distribution::Bernoulli { p, v0, v1 } => Some(binomial_mean_tail(n, *p, *v0, *v1, 0.0, a)),
        Distribution::Gaussian { sigma } => Some(gaussian_two_sided_tail(sigma / nf.sqrt(), a)),
        Distribution::Symmetrized(inner) => match inner.as_ref() {
            Distribution::Gaussian { sigma } => Some(gaussian_two_sided_tail(
                sigma * std::f64::consts::SQRT_2 / nf.sqrt(),
                a,
            )),
            // S*_n = 2(K - n) with K ~ Bin(2n, 1/2)
            Distribution::Rademacher => Some(binomial_mean_tail(2 * n, 0.5, -2.0, 2.0, 0.0, a)),
            _ => None,
        },
        _ => None,
    }
}

/// `P[|S_n/n| >= a]`: closed form, enumeration (finite support, `n <= 20`),
/// else Monte Carlo.
pub fn tail_prob_mean(
    dist: &Distribution,
    n: u64,
    a: f64,
    reps: usize,
    seed: u64,
) -> Result<TailEstimate> {
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    if let Some((p, method)) = exact_tail_prob(dist, n, a) {
        return Ok(TailEstimate {
            p_hat: p,
            se: 0.0,
            method,
        });
    }
    if reps == 0 {
        return Err(Error::Config("replicates must be positive".into()));
    }
    let nf = n as f64;
    let hits: Vec<bool> = replicate_map(reps, seed, |r, buf| {
        let mut last = 0.0;
        walk(dist, r, buf, n, |_, _, s| last = s);
        last.abs() >= a * nf
    });
    let p = hits.iter().filter(|h| **h).count() as f64 / reps as f64;
    Ok(TailEstimate {
        p_hat: p,
        se: proportion_se(p, reps),
        method: TailMethod::MonteCarlo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesVerdict {
    ConvergingEvidence,
    DivergingEvidence,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesBlock {
    /// Block `[2^i, 2^(i+1))`.
    pub index: u32,
    pub start: u64,
    /// Last `n` included.
    pub end: u64,
    pub contribution: f64,
    pub se: f64,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesMethod {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesEstimate {
    pub dist: String,
    #[serde(rename = "G")]
    pub g: String,
    pub a: f64,
    pub n_max: u64,
    /// Largest `n` whose summand is included.
    pub n_covered: u64,
    pub method: SeriesMethod,
    pub replicates: usize,
    pub seed: u64,
    pub blocks: Vec<SeriesBlock>,
    pub partial_sum: f64,
    pub partial_sum_se: f64,
    /// Upper bound on `sum_{n > n_covered}` when the law admits one.
    pub tail_bound: Option<f64>,
    pub verdict: SeriesVerdict,
}

/// Constant `k` with `P[|S_n/n| >= a] <= 2 exp(-k n)`, for centered laws
/// that are bounded or gaussian.
fn exponential_tail_rate(dist: &Distribution, a: f64) -> Option<f64> {
    if dist.analytic_mean() != Some(0.0) {
        return None;
    }
    if let Some((lo, hi)) = dist.support_bounds() {
        let w = hi - lo;
        return (w > 0.0).then(|| 2.0 * a * a / (w * w));
    }
    match dist {
        Distribution::Gaussian { sigma } => Some(a * a / (2.0 * sigma * sigma)),
        Distribution::Symmetrized(inner) => match inner.as_ref() {
            Distribution::Gaussian { sigma } => Some(a * a / (4.0 * sigma * sigma)),
            _ => None,
        },
        _ => None,
    }
}

/// Probabilities below this are dropped in exact mode and covered by the
/// remainder bound.
const EXACT_CUTOFF: f64 = 1e-30;
const TAIL_BOUND_MAX_TERMS: u64 = 50_000_000;

fn exponential_series_tail<G: Growth + ?Sized>(g: &G, rate: f64, from: u64) -> Option<f64> {
    let mut acc = CompensatedSum::new();
    let mut n = from;
    loop {
        let nf = n as f64;
        let term = g.value(nf) / nf * 2.0 * (-rate * nf).exp();
        if !term.is_finite() {
            return None;
        }
        acc.add(term);
        if term <= 1e-20 * acc.value() && n > from + 16 {
            return Some(acc.value() * (1.0 + 1e-12));
        }
        n += 1;
        if n - from > TAIL_BOUND_MAX_TERMS {
            return None;
        }
    }
}

enum Profile {
    Exact {
        /// `P[|S_n/n| >= a]` for `n = 1..=probs.len()`.
        probs: Vec<f64>,
        rate: Option<f64>,
    },
    Sampled {
        n_top: u64,
        /// Exact probabilities for `n < 64` where available.
        small_exact: Vec<Option<f64>>,
        /// Per replicate: bit `n` for `n < 64`, and bit `i` of the second
        /// word for `n = 2^i`, `i >= 6`.
        bits: Vec<(u64, u64)>,
    },
}

/// Deviation indicators at level `a`, reusable across functions `G`.
pub struct DeviationProfile {
    dist: String,
    a: f64,
    n_max: u64,
    reps: usize,
    seed: u64,
    profile: Profile,
}

const SMALL_N: u64 = 64;

/// Builds the deviation profile for `n <= n_max`.
pub fn deviation_profile(
    dist: &Distribution,
    a: f64,
    n_max: u64,
    reps: usize,
    seed: u64,
) -> Result<DeviationProfile> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!(
            "level must be finite and positive, got {a}"
        )));
    }
    if n_max < 2 {
        return Err(Error::Config(format!(
            "n_max must be at least 2, got {n_max}"
        )));
    }
    let name = dist.name();
    if closed_form_tail(dist, 1, a).is_some() {
        let rate = exponential_tail_rate(dist, a);
        let mut probs = Vec::new();
        for n in 1..=n_max {
            if let Some(k) = rate {
                if 2.0 * (-k * n as f64).exp() < EXACT_CUTOFF {
                    break;
                }
            }
            probs.push(closed_form_tail(dist, n, a).expect("closed form checked above"));
        }
        return Ok(DeviationProfile {
            dist: name,
            a,
            n_max,
            reps: 0,
            seed,
            profile: Profile::Exact { probs, rate },
        });
    }
    if reps == 0 {
        return Err(Error::Config(
            "replicates must be positive for a sampled series".into(),
        ));
    }
    let n_top = if n_max < SMALL_N {
        n_max
    } else {
        n_max.next_power_of_two()
    };
    let small_exact: Vec<Option<f64>> = (1..SMALL_N)
        .map(|n| {
            if n <= n_max {
                exact_tail_prob(dist, n, a).map(|e| e.0)
            } else {
                None
            }
        })
        .collect();
    let bits = replicate_map(reps, seed, |r, buf| {
        let (mut lo, mut hi) = (0u64, 0u64);
        walk(dist, r, buf, n_top, |n, nf, s| {
            if s.abs() >= a * nf {
                if n < SMALL_N {
                    lo |= 1 << n;
                } else if n.is_power_of_two() {
                    hi |= 1 << n.trailing_zeros();
                }
            }
        });
        (lo, hi)
    });
    Ok(DeviationProfile {
        dist: name,
        a,
        n_max,
        reps,
        seed,
        profile: Profile::Sampled {
            n_top,
            small_exact,
            bits,
        },
    })
}

impl DeviationProfile {
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Series estimate for `g`.
    pub fn series<G: Growth + ?Sized>(&self, g: &G, g_name: &str) -> SeriesEstimate {
        let w = |n: u64| g.value(n as f64) / n as f64;
        let (blocks, partial_sum, partial_sum_se, n_covered, tail_bound, method) = match &self
            .profile
        {
            Profile::Exact { probs, rate } => {
                let n_cov = probs.len() as u64;
                let mut blocks = Vec::new();
                for i in 0..64u32 {
                    let start = 1u64 << i;
                    if start > n_cov {
                        break;
                    }
                    let end = ((start << 1) - 1).min(n_cov);
                    let c = compensated_sum((start..=end).map(|n| w(n) * probs[n as usize - 1]));
                    blocks.push(SeriesBlock {
                        index: i,
                        start,
                        end,
                        contribution: c,
                        se: 0.0,
                        complete: end == (start << 1) - 1,
                    });
                }
                let total = compensated_sum(blocks.iter().map(|b| b.contribution));
                let tail = rate.and_then(|k| exponential_series_tail(g, k, n_cov + 1));
                (blocks, total, 0.0, n_cov, tail, SeriesMethod::Exact)
            }
            Profile::Sampled {
                n_top,
                small_exact,
                bits,
            } => {
                let n_max = self.n_max;
                let top_exp = if *n_top >= SMALL_N {
                    n_top.trailing_zeros()
                } else {
                    0
                };
                let mut layout: Vec<BlockLayout> = Vec::new();
                for i in 0..64u32 {
                    let start = 1u64 << i;
                    if start > n_max {
                        break;
                    }
                    let end = ((start << 1) - 1).min(n_max);
                    let mut lay = BlockLayout {
                        index: i,
                        start,
                        end,
                        exact: 0.0,
                        small: Vec::new(),
                        lo: 0.0,
                        hi: 0.0,
                    };
                    if start < SMALL_N {
                        for n in start..=end {
                            match small_exact[n as usize - 1] {
                                Some(p) => lay.exact += w(n) * p,
                                None => lay.small.push((n, w(n))),
                            }
                        }
                    } else {
                        // linear interpolation of P between 2^i and 2^(i+1)
                        let len = start as f64;
                        for n in start..=end {
                            let u = (n - start) as f64 / len;
                            lay.lo += w(n) * (1.0 - u);
                            lay.hi += w(n) * u;
                        }
                        debug_assert!(lay.hi == 0.0 || i < top_exp);
                    }
                    layout.push(lay);
                }
                let nb = layout.len();
                let mut per_block: Vec<Vec<f64>> = vec![Vec::with_capacity(bits.len()); nb];
                let mut totals = Vec::with_capacity(bits.len());
                for (lo, hi) in bits {
                    let mut tot = 0.0;
                    for (b, lay) in layout.iter().enumerate() {
                        let mut y = lay.exact;
                        for (n, wn) in &lay.small {
                            if lo >> n & 1 == 1 {
                                y += wn;
                            }
                        }
                        if lay.start >= SMALL_N {
                            let i = lay.index;
                            if hi >> i & 1 == 1 {
                                y += lay.lo;
                            }
                            if lay.hi > 0.0 && hi >> (i + 1) & 1 == 1 {
                                y += lay.hi;
                            }
                        }
                        tot += y;
                        per_block[b].push(y);
                    }
                    totals.push(tot);
                }
                let blocks: Vec<SeriesBlock> = layout
                    .iter()
                    .zip(&per_block)
                    .map(|(lay, ys)| {
                        let (m, se) = mean_se(ys);
                        SeriesBlock {
                            index: lay.index,
                            start: lay.start,
                            end: lay.end,
                            contribution: m,
                            se,
                            complete: lay.end == (lay.start << 1) - 1,
                        }
                    })
                    .collect();
                let total = compensated_sum(blocks.iter().map(|b| b.contribution));
                let (_, total_se) = mean_se(&totals);
                (blocks, total, total_se, n_max, None, SeriesMethod::Sampled)
            }
        };
        let verdict = series_verdict(&blocks);
        SeriesEstimate {
            dist: self.dist.clone(),
            g: g_name.to_string(),
            a: self.a,
            n_max: self.n_max,
            n_covered,
            method,
            replicates: self.reps,
            seed: self.seed,
            blocks,
            partial_sum,
            partial_sum_se,
            tail_bound,
            verdict,
        }
    }
}

struct BlockLayout {
    index: u32,
    start: u64,
    end: u64,
    exact: f64,
    small: Vec<(u64, f64)>,
    lo: f64,
    hi: f64,
}

/// Three-block trend rule on the last three complete blocks:
/// diverging when nondecreasing and each block exceeds three standard errors,
/// converging when each block is at most `0.75` of its predecessor plus two
/// standard errors; anything else (or both) is inconclusive.
pub fn series_verdict(blocks: &[SeriesBlock]) -> SeriesVerdict {
    let complete: Vec<&SeriesBlock> = blocks.iter().filter(|b| b.complete).collect();
    if complete.len() < 3 {
        return SeriesVerdict::Inconclusive;
    }
    let last = &complete[complete.len() - 3..];
    let diverging = last
        .windows(2)
        .all(|w| w[1].contribution >= w[0].contribution)
        && last.iter().all(|b| b.contribution > 3.0 * b.se);
    let converging = last
        .windows(2)
        .all(|w| w[1].contribution <= 0.75 * w[0].contribution + 2.0 * w[1].se);
    match (diverging, converging) {
        (true, false) => SeriesVerdict::DivergingEvidence,
        (false, true) => SeriesVerdict::ConvergingEvidence,
        _ => SeriesVerdict::Inconclusive,
    }
}

/// Partial sums of `S(X, G, a)` up to `n_max`.
pub fn estimate_series(
    dist: &Distribution,
    g: &ModerateFunction,
    a: f64,
    n_max: u64,
    reps: usize,
    seed: u64,
) -> Result<SeriesEstimate> {
    Ok(deviation_profile(dist, a, n_max, reps, seed)?.series(g, g.name()))
}

/// Both sides of `P[max_{n<=m} |S_n| >= t] <= 2 P[|S_m| >= t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevyCheck {
    pub m: u64,
    pub t: f64,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub exact: bool,
}

impl LevyCheck {
    /// Holds up to `k` combined standard errors.
    pub fn holds_within(&self, k: f64) -> bool {
        self.lhs <= self.rhs + k * (self.lhs_se.powi(2) + self.rhs_se.powi(2)).sqrt() + 1e-12
    }
}

/// Lévy's maximal inequality for symmetric increments.
pub fn levy_maximal_check(
    dist: &Distribution,
    m: u64,
    t: f64,
    reps: usize,
    seed: u64,
) -> Result<LevyCheck> {
    if !dist.is_symmetric() {
        return Err(Error::Precondition(format!(
            "{} is not symmetric",
            dist.name()
        )));
    }
    if m == 0 || !(t > 0.0) {
        return Err(Error::Domain(format!(
            "need m >= 1 and t > 0 (got m={m}, t={t})"
        )));
    }
    if let Some(atoms) = enumerable_atoms(dist, m) {
        let (mut lhs, mut end) = (CompensatedSum::new(), CompensatedSum::new());
        enumerate_paths(&atoms, m as usize, &mut |sums, mass| {
            if sums.iter().any(|s| s.abs() >= t) {
                lhs.add(mass);
            }
            if sums[sums.len() - 1].abs() >= t {
                end.add(mass);
            }
        });
        return Ok(LevyCheck {
            m,
            t,
            lhs: lhs.value(),
            lhs_se: 0.0,
            rhs: 2.0 * end.value(),
            rhs_se: 0.0,
            exact: true,
        });
    }
    if reps == 0 {
        return Err(Error::Config("replicates must be positive".into()));
    }
    let max_hits: Vec<bool> = replicate_map(reps, derive_seed(seed, "levy-max"), |r, buf| {
        let mut hit = false;
        walk(dist, r, buf, m, |_, _, s| hit |= s.abs() >= t);
        hit
    });
    let end_hits: Vec<bool> = replicate_map(reps, derive_seed(seed, "levy-end"), |r, buf| {
        let mut last = 0.0;
        walk(dist, r, buf, m, |_, _, s| last = s);
        last.abs() >= t
    });
    let frac = |v: &[bool]| v.iter().filter(|h| **h).count() as f64 / v.len() as f64;
    let (pl, pr) = (frac(&max_hits), frac(&end_hits));
    Ok(LevyCheck {
        m,
        t,
        lhs: pl,
        lhs_se: proportion_se(pl, reps),
        rhs: 2.0 * pr,
        rhs_se: 2.0 * proportion_se(pr, reps),
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn last_exit_examples() {
        let s = last_exit_time(&[1.0, 0.6, 0.3, 0.1], 0.5, 0.0).unwrap();
        assert_eq!(
            s,
            LastExitSample {
                value: 2,
                censored: true
            }
        );
        let s = last_exit_time(&[0.1, -0.2, 0.3], 0.5, 0.0).unwrap();
        assert_eq!(
            s,
            LastExitSample {
                value: 0,
                censored: false
            }
        );
        let s = last_exit_time(&[0.0, 0.0, 0.0, 0.9], 0.5, 0.0).unwrap();
        assert_eq!(
            s,
            LastExitSample {
                value: 4,
                censored: true
            }
        );
        let s = last_exit_time(&[1.0, 0.0, 0.0, 0.0, 0.0], 0.5, 0.0).unwrap();
        assert_eq!(
            s,
            LastExitSample {
                value: 1,
                censored: false
            }
        );
        assert!(matches!(
            last_exit_time(&[0.0, f64::NAN], 0.5, 0.0),
            Err(Error::Data(_))
        ));
        assert!(last_exit_time(&[], 0.5, 0.0).is_err());
        assert!(last_exit_time(&[1.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn rademacher_above_one_never_exits() {
        let g = ModerateFunction::power(1.0).unwrap();
        let e = estimate_eg_lastexit(
            &Distribution::rademacher(),
            &g,
            1.5,
            &PathConfig::new(256, 2000, 1),
        )
        .unwrap();
        assert_eq!((e.mean, e.se, e.censor_rate), (1.0, 0.0, 0.0));
    }

    #[test]
    fn constant_g_gives_one() {
        let one = ModerateFunction::constant();
        for d in [
            Distribution::gaussian(1.0).unwrap(),
            Distribution::pareto(1.5, 1.0).unwrap(),
        ] {
            let e = estimate_eg_lastexit(&d, &one, 0.5, &PathConfig::new(512, 1000, 2)).unwrap();
            assert_eq!(e.mean, 1.0);
        }
    }

    #[test]
    fn run_length_oracle_by_enumeration() {
        // L_1 for Rademacher is the initial constant-sign run; E[L_1] = 2 on
        // the infinite horizon. Enumerating 20 steps gives the truncated value.
        let atoms = Distribution::rademacher().atoms().unwrap();
        let mut e = CompensatedSum::new();
        enumerate_paths(&atoms, 20, &mut |sums, mass| {
            let y: Vec<f64> = sums
                .iter()
                .enumerate()
                .map(|(i, s)| s / (i + 1) as f64)
                .collect();
            e.add(mass * last_exit_time(&y, 1.0, 0.0).unwrap().value as f64);
        });
        let truncated: f64 =
            (1..20).map(|k| k as f64 * 2f64.powi(-k)).sum::<f64>() + 20.0 * 2f64.powi(-19);
        assert!((e.value() - truncated).abs() < 1e-12);
        assert!((e.value() - 2.0).abs() < 1e-4);
    }

    #[test]
    fn centering_requirement() {
        let g = ModerateFunction::constant();
        let b = Distribution::bernoulli(0.3, 0.0, 1.0).unwrap();
        assert!(matches!(
            estimate_eg_lastexit(&b, &g, 0.1, &PathConfig::new(16, 10, 1)),
            Err(Error::Precondition(_))
        ));
        let cfg = PathConfig {
            center: Some(0.3),
            ..PathConfig::new(16, 10, 1)
        };
        assert!(estimate_eg_lastexit(&b, &g, 0.1, &cfg).is_ok());
    }

    #[test]
    fn tail_prob_examples() {
        let r = Distribution::rademacher();
        assert_eq!(tail_prob_mean(&r, 2, 1.0, 10, 0).unwrap().p_hat, 0.5);
        assert!((tail_prob_mean(&r, 3, 1.0, 10, 0).unwrap().p_hat - 0.25).abs() < 1e-15);
        let u = Distribution::uniform(1.0).unwrap();
        assert_eq!(tail_prob_mean(&u, 5, 0.0, 10, 0).unwrap().p_hat, 1.0);
        // enumeration matches the binomial closed form
        let sr = Distribution::symmetrized(Distribution::rademacher());
        let e = tail_prob_mean(&sr, 6, 1.0, 10, 0).unwrap();
        assert_eq!(e.method, TailMethod::ClosedForm);
        let atoms = sr.atoms().unwrap();
        let mut enumerated = CompensatedSum::new();
        enumerate_paths(&atoms, 6, &mut |sums, mass| {
            if (sums[5] / 6.0).abs() >= 1.0 {
                enumerated.add(mass);
            }
        });
        assert!((e.p_hat - enumerated.value()).abs() < 1e-12);
        // X* = 2(B - B') with B - B' ~ Bin(2n,1/2) - n
        let b = binomial_mean_tail(12, 0.5, 0.0, 1.0, 0.5, 0.25);
        assert!((e.p_hat - b).abs() < 1e-12, "{} vs {b}", e.p_hat);
        let mc = tail_prob_mean(&u, 10, 0.3, 20_000, 5).unwrap();
        assert_eq!(mc.method, TailMethod::MonteCarlo);
    }

    #[test]
    fn exact_series_for_rademacher() {
        let g = ModerateFunction::power(1.0).unwrap();
        let s = estimate_series(&Distribution::rademacher(), &g, 1.0, 30, 0, 0).unwrap();
        let closed = 2.0 * (1.0 + std::f64::consts::LN_2);
        let tb = s.tail_bound.unwrap();
        assert!(s.partial_sum <= closed && s.partial_sum + tb >= closed);
        assert!((s.partial_sum + tb - closed).abs() < 1e-6);
        // direct oracle: sum (1+n)/n 2^(1-n)
        let direct: f64 = (1..=30)
            .map(|n| (1.0 + n as f64) / n as f64 * 2f64.powi(1 - n))
            .sum();
        assert!((s.partial_sum - direct).abs() < 1e-12);
    }

    #[test]
    fn gaussian_series_converges() {
        let g = ModerateFunction::power(1.0).unwrap();
        let s = estimate_series(
            &Distribution::gaussian(1.0).unwrap(),
            &g,
            1.0,
            1 << 12,
            0,
            0,
        )
        .unwrap();
        assert_eq!(s.verdict, SeriesVerdict::ConvergingEvidence);
        assert_eq!(s.method, SeriesMethod::Exact);
    }

    #[test]
    fn sampled_series_matches_exact_on_rademacher_proxy() {
        // Bernoulli(1/2) on {-1, 1} as a symmetrized-free sampled check: use
        // the uniform law against a direct Monte Carlo of the summands.
        let g = ModerateFunction::power(1.0).unwrap();
        let u = Distribution::uniform(1.0).unwrap();
        let s = estimate_series(&u, &g, 0.5, 40, 20_000, 3).unwrap();
        let direct: f64 = (1..=40u64)
            .map(|n| {
                let p = tail_prob_mean(&u, n, 0.5, 20_000, 100 + n).unwrap().p_hat;
                (1.0 + n as f64) / n as f64 * p
            })
            .sum();
        assert!(
            (s.partial_sum - direct).abs() < 5.0 * s.partial_sum_se.max(1e-3),
            "{} vs {direct}",
            s.partial_sum
        );
    }

    #[test]
    fn heavy_tail_series_diverges() {
        let g = ModerateFunction::power(1.0).unwrap();
        let p = Distribution::pareto(1.5, 1.0).unwrap();
        let s = estimate_series(&p, &g, 1.0, 1 << 12, 20_000, 4).unwrap();
        assert_eq!(
            s.verdict,
            SeriesVerdict::DivergingEvidence,
            "{:?}",
            s.blocks
        );
    }

    #[test]
    fn levy_examples() {
        let r = Distribution::rademacher();
        let c = levy_maximal_check(&r, 2, 2.0, 0, 0).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.5, 1.0));
        let c = levy_maximal_check(&r, 1, 0.7, 0, 0).unwrap();
        assert_eq!(c.lhs * 2.0, c.rhs);
        let u = Distribution::uniform(1.0).unwrap();
        let c = levy_maximal_check(&u, 64, 4.0, 100_000, 9).unwrap();
        assert!(!c.exact && c.holds_within(4.0));
        let b = Distribution::bernoulli(0.3, 0.0, 1.0).unwrap();
        assert!(matches!(
            levy_maximal_check(&b, 4, 1.0, 10, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn replicates_do_not_depend_on_thread_count() {
        let d = Distribution::gaussian(1.0).unwrap();
        let cfg = PathConfig::new(300, 500, 77);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_last_exits(&d, &[0.25, 0.5], &cfg).unwrap().values)
        };
        assert_eq!(run(1), run(3));
    }

    fn scaled(d: &Distribution, k: f64) -> Distribution {
        match d {
            Distribution::Gaussian { sigma } => Distribution::gaussian(sigma * k).unwrap(),
            Distribution::UniformSymmetric { half_width } => {
                Distribution::uniform(half_width * k).unwrap()
            }
            _ => unreachable!(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scaling_and_doubling_identities(seed in 0u64..10_000, e in -2i32..3, which in 0usize..2) {
            // dyadic scalings are exact in floating point
            let a = 2f64.powi(e);
            let d = [Distribution::gaussian(1.0).unwrap(), Distribution::uniform(1.0).unwrap()][which].clone();
            let cfg = PathConfig::new(200, 50, seed);
            let base = simulate_last_exits(&d, &[a], &cfg).unwrap();
            let unit = simulate_last_exits(&scaled(&d, 1.0 / a), &[1.0], &cfg).unwrap();
            prop_assert_eq!(&base.values[0], &unit.values[0]);
            let doubled = simulate_last_exits(&scaled(&d, 2.0), &[2.0 * a], &cfg).unwrap();
            prop_assert_eq!(&base.values[0], &doubled.values[0]);
        }

        #[test]
        fn last_exit_is_nonincreasing_in_level(path in proptest::collection::vec(-3.0f64..3.0, 1..60), a in 0.01f64..2.0, da in 0.0f64..2.0) {
            let lo = last_exit_time(&path, a, 0.0).unwrap().value;
            let hi = last_exit_time(&path, a + da, 0.0).unwrap().value;
            prop_assert!(hi <= lo);
            let s = last_exit_time(&path, a, 0.0).unwrap();
            prop_assert!(!s.censored || 2 * s.value >= path.len() as u64);
        }

        #[test]
        fn series_partial_sum_is_monotone_in_n_max(n in 2u64..300, dn in 0u64..300, seed in 0u64..100) {
            let g = ModerateFunction::power(1.0).unwrap();
            let u = Distribution::uniform(1.0).unwrap();
            let a = estimate_series(&u, &g, 0.3, n, 200, seed).unwrap();
            let b = estimate_series(&u, &g, 0.3, n + dn, 200, seed).unwrap();
            prop_assert!(b.partial_sum >= a.partial_sum - 1e-12);
            prop_assert!(a.blocks.iter().all(|b| b.contribution >= 0.0));
            let sum = compensated_sum(a.blocks.iter().map(|b| b.contribution));
            prop_assert!((sum - a.partial_sum).abs() <= 1e-12 * a.partial_sum.max(1.0));
        }

        #[test]
        fn levy_exact_rademacher(m in 1u64..10, t in 1u32..10) {
            let c = levy_maximal_check(&Distribution::rademacher(), m, f64::from(t), 0, 0).unwrap();
            prop_assert!(c.exact && c.lhs <= c.rhs + 1e-15);
        }
    }
}
