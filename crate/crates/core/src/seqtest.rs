//! Wald's multi-hypothesis sequential test on i.i.d. streams over a finite
//! alphabet.
//!
//! Against a reference law `P` locally equivalent to every candidate `P_i`:
//!
//! ```text
//!     R^i_n = prod_{k<=n} p(Y_k) / p_i(Y_k)
//!     rho_i = inf { n >= 1 : R^i_n >= c_i }
//!     tau   = min_i max_{j != i} rho_j,     decision = argmax_j rho_j
//! ```
//!
//! Under `P_i` the ratio `R^i` is a mean-one nonnegative martingale, so
//! `P_i[rho_i < inf] <= 1/c_i` and the error of the decision is at most `1/c_i`.
//! The reference defaults to the uniform mixture of the candidates.

use rand::distributions::{Distribution as _, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modfun::ModerateFunction;
use crate::numeric::{mean_se, proportion_se};
use crate::rng;

/// Candidate laws on a common finite alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    alphabet: Vec<f64>,
    laws: Vec<Vec<f64>>,
    reference: Vec<f64>,
    /// `ln p(y) - ln p_i(y)`, `+inf` where `p_i(y) = 0`.
    increments: Vec<Vec<f64>>,
}

fn check_masses(masses: &[f64], k: usize, what: &str) -> Result<()> {
    if masses.len() != k {
        return Err(Error::Config(format!(
            "{what} has {} masses for an alphabet of {k}",
            masses.len()
        )));
    }
    if masses.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Config(format!(
            "{what} has a negative or non-finite mass"
        )));
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} masses sum to {total}")));
    }
    Ok(())
}

impl HypothesisSet {
    /// Candidates with the uniform-mixture reference.
    pub fn new(alphabet: Vec<f64>, laws: Vec<Vec<f64>>) -> Result<Self> {
        let m = laws.len();
        let reference = (0..alphabet.len())
            .map(|y| {
                let col: Vec<f64> = laws
                    .iter()
                    .map(|l| l.get(y).copied().unwrap_or(0.0))
                    .collect();
                // exact where the candidates agree, so equal laws give zero increments
                if col.windows(2).all(|w| w[0] == w[1]) {
                    col.first().copied().unwrap_or(0.0)
                } else {
                    col.iter().sum::<f64>() / m as f64
                }
            })
            .collect();
        Self::with_reference(alphabet, laws, reference)
    }

    pub fn with_reference(
        alphabet: Vec<f64>,
        laws: Vec<Vec<f64>>,
        reference: Vec<f64>,
    ) -> Result<Self> {
        let k = alphabet.len();
        if laws.len() < 2 {
            return Err(Error::Config(format!(
                "need at least two hypotheses, got {}",
                laws.len()
            )));
        }
        if k == 0 {
            return Err(Error::Config("empty alphabet".into()));
        }
        for (i, l) in laws.iter().enumerate() {
            check_masses(l, k, &format!("hypothesis {i}"))?;
        }
        check_masses(&reference, k, "reference")?;
        for y in 0..k {
            if reference[y] == 0.0 && laws.iter().any(|l| l[y] > 0.0) {
                return Err(Error::Config(format!(
                    "reference vanishes at symbol {} where a candidate does not",
                    alphabet[y]
                )));
            }
        }
        let increments = laws
            .iter()
            .map(|l| {
                (0..k)
                    .map(|y| match (reference[y] > 0.0, l[y] > 0.0) {
                        (true, true) => reference[y].ln() - l[y].ln(),
                        (true, false) => f64::INFINITY,
                        (false, _) => f64::NAN,
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            alphabet,
            laws,
            reference,
            increments,
        })
    }

    /// Bernoulli candidates on `{0, 1}` given by their success probabilities.
    pub fn bernoulli(ps: &[f64]) -> Result<Self> {
        Self::new(
            vec![0.0, 1.0],
            ps.iter().map(|p| vec![1.0 - p, *p]).collect(),
        )
    }

    pub fn m(&self) -> usize {
        self.laws.len()
    }

    pub fn alphabet(&self) -> &[f64] {
        &self.alphabet
    }

    pub fn laws(&self) -> &[Vec<f64>] {
        &self.laws
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Index of an observed value in the alphabet.
    pub fn symbol(&self, y: f64) -> Result<usize> {
        self.alphabet
            .iter()
            .position(|a| *a == y)
            .ok_or_else(|| Error::Data(format!("observation {y} is not in the alphabet")))
    }

    /// `KL(P_i || P_j)`, infinite when `P_i` charges a symbol `P_j` does not.
    pub fn kl(&self, i: usize, j: usize) -> f64 {
        kl(&self.laws[i], &self.laws[j])
    }

    pub fn pairwise_kl(&self) -> Vec<Vec<f64>> {
        (0..self.m())
            .map(|i| (0..self.m()).map(|j| self.kl(i, j)).collect())
            .collect()
    }

    /// Drift of `ln R^j` under `P_i`: `E_i[ln(p / p_j)]`.
    pub fn kl_adjusted(&self, i: usize, j: usize) -> f64 {
        self.laws[i]
            .iter()
            .zip(&self.increments[j])
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, d)| p * d)
            .sum()
    }

    /// Adds one observation (a symbol index) to the log-ratio state.
    pub fn log_ratio_update(&self, state: &mut [f64], y: usize) -> Result<()> {
        if y >= self.alphabet.len() || self.reference[y] == 0.0 {
            return Err(Error::Data(format!(
                "symbol {y} lies outside every support"
            )));
        }
        for (s, inc) in state.iter_mut().zip(&self.increments) {
            *s += inc[y];
        }
        Ok(())
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| {
            if *b > 0.0 {
                a * (a / b).ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Per-hypothesis levels `c_i > 1`; `+inf` means never reject.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelVector(Vec<f64>);

impl LevelVector {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if let Some(x) = c.iter().find(|x| !(**x > 1.0)) {
            return Err(Error::Config(format!("levels must exceed 1, got {x}")));
        }
        Ok(Self(c))
    }

    pub fn uniform(m: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; m])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn logs(&self) -> Vec<f64> {
        self.0.iter().map(|c| c.ln()).collect()
    }
}

/// Outcome of one run. Rejecting steps beyond the stop are not observed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    /// Stopping step; `None` if the horizon came first.
    pub tau: Option<u64>,
    pub censored: bool,
    pub decision: Option<usize>,
    pub rho: Vec<Option<u64>>,
    pub log_ratios_at_tau: Vec<f64>,
    pub steps: u64,
}

/// Runs the test on a stream of symbol indices until it stops, the horizon
/// is reached or the stream ends.
pub fn run_test<I: IntoIterator<Item = usize>>(
    hyp: &HypothesisSet,
    levels: &LevelVector,
    stream: I,
    horizon: u64,
) -> Result<DecisionRecord> {
    let m = hyp.m();
    if levels.0.len() != m {
        return Err(Error::Config(format!(
            "{} levels for {m} hypotheses",
            levels.0.len()
        )));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let log_c = levels.logs();
    let mut state = vec![0.0; m];
    let mut rho: Vec<Option<u64>> = vec![None; m];
    let mut rejected = 0usize;
    let mut n = 0u64;
    for y in stream.into_iter().take(horizon as usize) {
        n += 1;
        hyp.log_ratio_update(&mut state, y)?;
        for i in 0..m {
            if rho[i].is_none() && state[i] >= log_c[i] {
                rho[i] = Some(n);
                rejected += 1;
            }
        }
        // tau is the first step at which all but at most one are rejected
        if rejected + 1 >= m {
            let decision = argmax_rho(&rho);
            return Ok(DecisionRecord {
                tau: Some(n),
                censored: false,
                decision: Some(decision),
                rho,
                log_ratios_at_tau: state,
                steps: n,
            });
        }
    }
    Ok(DecisionRecord {
        tau: None,
        censored: true,
        decision: None,
        rho,
        log_ratios_at_tau: state,
        steps: n,
    })
}

/// Largest rejecting step, unrejected counting as infinite; smallest index on ties.
fn argmax_rho(rho: &[Option<u64>]) -> usize {
    let key = |r: &Option<u64>| r.unwrap_or(u64::MAX);
    let mut best = 0;
    for (i, r) in rho.iter().enumerate() {
        if key(r) > key(&rho[best]) {
            best = i;
        }
    }
    best
}

fn symbol_stream(
    hyp: &HypothesisSet,
    true_index: usize,
    seed: u64,
    rep: u64,
) -> impl Iterator<Item = usize> {
    let w = WeightedIndex::new(&hyp.laws[true_index]).expect("validated masses");
    let mut r = rng::stream(seed, rep);
    std::iter::from_fn(move || Some(w.sample(&mut r)))
}

/// One run on a stream drawn from `P_i`, replicate 0 of `seed`.
pub fn run_single(
    hyp: &HypothesisSet,
    levels: &LevelVector,
    true_index: usize,
    horizon: u64,
    seed: u64,
) -> Result<DecisionRecord> {
    if true_index >= hyp.m() {
        return Err(Error::Config(format!(
            "true index {true_index} out of range"
        )));
    }
    run_test(
        hyp,
        levels,
        symbol_stream(hyp, true_index, seed, 0),
        horizon,
    )
}

fn simulate(
    hyp: &HypothesisSet,
    levels: &LevelVector,
    true_index: usize,
    reps: usize,
    horizon: u64,
    seed: u64,
) -> Result<Vec<DecisionRecord>> {
    if true_index >= hyp.m() {
        return Err(Error::Config(format!(
            "true index {true_index} out of range"
        )));
    }
    if reps == 0 {
        return Err(Error::Config("reps must be positive".into()));
    }
    (0..reps)
        .into_par_iter()
        .map(|r| {
            run_test(
                hyp,
                levels,
                symbol_stream(hyp, true_index, seed, r as u64),
                horizon,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorEstimate {
    /// Among stopped runs; `None` when every run was censored.
    pub error_rate: Option<f64>,
    pub se: Option<f64>,
    pub censor_rate: f64,
    pub reps: usize,
    pub seed: u64,
}

pub fn estimate_errors(
    hyp: &HypothesisSet,
    levels: &LevelVector,
    true_index: usize,
    reps: usize,
    horizon: u64,
    seed: u64,
) -> Result<ErrorEstimate> {
    let runs = simulate(hyp, levels, true_index, reps, horizon, seed)?;
    let stopped: Vec<_> = runs.iter().filter(|r| !r.censored).collect();
    let censor_rate = (reps - stopped.len()) as f64 / reps as f64;
    let (error_rate, se) = if stopped.is_empty() {
        (None, None)
    } else {
        let p = stopped
            .iter()
            .filter(|r| r.decision != Some(true_index))
            .count() as f64
            / stopped.len() as f64;
        (Some(p), Some(proportion_se(p, stopped.len())))
    };
    Ok(ErrorEstimate {
        error_rate,
        se,
        censor_rate,
        reps,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GMomentEstimate {
    pub mean: f64,
    pub se: f64,
    pub censor_rate: f64,
    /// Censored runs contribute `G(horizon)`, so the mean is a lower estimate
    /// unless the censor rate is within the bound.
    pub certified: bool,
    pub mean_tau: f64,
}

/// `E_i[G(tau)]` by simulation.
#[allow(clippy::too_many_arguments)]
pub fn estimate_g_moment(
    hyp: &HypothesisSet,
    levels: &LevelVector,
    true_index: usize,
    g: &ModerateFunction,
    reps: usize,
    horizon: u64,
    seed: u64,
    censor_bound: f64,
) -> Result<GMomentEstimate> {
    let runs = simulate(hyp, levels, true_index, reps, horizon, seed)?;
    let taus: Vec<f64> = runs
        .iter()
        .map(|r| r.tau.unwrap_or(horizon) as f64)
        .collect();
    let vals: Vec<f64> = taus.iter().map(|t| g.value(*t)).collect();
    let (mean, se) = mean_se(&vals);
    let (mean_tau, _) = mean_se(&taus);
    let censor_rate = runs.iter().filter(|r| r.censored).count() as f64 / reps as f64;
    Ok(GMomentEstimate {
        mean,
        se,
        censor_rate,
        certified: censor_rate <= censor_bound,
        mean_tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VilleCheck {
    pub index: usize,
    pub c: f64,
    /// Empirical `P_i[rho_i <= horizon]`.
    pub rate: f64,
    pub se: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Frequency with which `R^i` reaches `c_i` under `P_i` within the horizon,
/// compared with `1/c_i` at an allowance of four standard errors.
pub fn ville_check(
    hyp: &HypothesisSet,
    i: usize,
    c: f64,
    reps: usize,
    horizon: u64,
    seed: u64,
) -> Result<VilleCheck> {
    if i >= hyp.m() || !(c > 1.0) || reps == 0 {
        return Err(Error::Config(format!(
            "invalid Ville check (i={i}, c={c}, reps={reps})"
        )));
    }
    let log_c = c.ln();
    let inc = &hyp.increments[i];
    let hits = (0..reps)
        .into_par_iter()
        .filter(|r| {
            let mut s = 0.0;
            symbol_stream(hyp, i, seed, *r as u64)
                .take(horizon as usize)
                .any(|y| {
                    s += inc[y];
                    s >= log_c
                })
        })
        .count();
    let rate = hits as f64 / reps as f64;
    let se = proportion_se(rate, reps);
    let bound = 1.0 / c;
    Ok(VilleCheck {
        index: i,
        c,
        rate,
        se,
        bound,
        holds: rate <= bound + 4.0 * se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub target_error: f64,
    pub c: f64,
    #[serde(rename = "mean_G_tau")]
    pub mean_g_tau: f64,
    #[serde(rename = "reference_G")]
    pub reference_g: f64,
    pub ratio: f64,
}

pub const SWEEP_CSV_HEADER: &str = "target_error,c,mean_G_tau,reference_G,ratio";

/// First-order stopping step `max_{j != i} ln c_j / KL_adjusted(i, j)`.
pub fn reference_steps(hyp: &HypothesisSet, levels: &LevelVector, i: usize) -> Result<f64> {
    let mut n = 0.0f64;
    for j in (0..hyp.m()).filter(|j| *j != i) {
        let d = hyp.kl_adjusted(i, j);
        if !(d > 0.0) {
            return Err(Error::Config(format!(
                "drift of log R^{j} under P_{i} is {d}; the reference is too close to P_{j}"
            )));
        }
        n = n.max(levels.0[j].ln() / d);
    }
    Ok(n)
}

/// `E_i[G(tau)]` against `G` of the first-order stopping step, with levels
/// `c = 1/a` for each target error `a`. Row seeds are derived from `seed`.
///
/// The horizon defaults to `max(1000, 50 n*)` with `n*` the reference step
/// of the smallest target error.
pub fn optimality_sweep(
    hyp: &HypothesisSet,
    targets: &[f64],
    true_index: usize,
    g: &ModerateFunction,
    reps: usize,
    seed: u64,
    horizon: Option<u64>,
) -> Result<Vec<SweepRow>> {
    if let Some(a) = targets.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::Config(format!(
            "target errors must lie in (0, 1), got {a}"
        )));
    }
    if targets.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(
            "target errors must be strictly decreasing".into(),
        ));
    }
    let mut rows = Vec::with_capacity(targets.len());
    for (k, a) in targets.iter().enumerate() {
        let c = 1.0 / a;
        let levels = LevelVector::uniform(hyp.m(), c)?;
        let n_star = reference_steps(hyp, &levels, true_index)?;
        let h = horizon.unwrap_or_else(|| (50.0 * n_star).ceil().max(1000.0) as u64);
        let est = estimate_g_moment(
            hyp,
            &levels,
            true_index,
            g,
            reps,
            h,
            rng::derive_seed(seed, &format!("sweep-row|{k}")),
            1e-3,
        )?;
        let reference_g = g.value(n_star);
        rows.push(SweepRow {
            target_error: *a,
            c,
            mean_g_tau: est.mean,
            reference_g,
            ratio: est.mean / reference_g,
        });
    }
    Ok(rows)
}

/// Declarative hypothesis set, as read from a JSON config.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct HypothesisConfig {
    pub alphabet: Vec<f64>,
    pub hypotheses: Vec<Vec<f64>>,
    /// `null` entries mean "never reject".
    #[serde(default)]
    pub levels: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
}

impl HypothesisConfig {
    pub fn build(&self) -> Result<(HypothesisSet, Option<LevelVector>)> {
        let hyp = match &self.reference {
            Some(r) => HypothesisSet::with_reference(
                self.alphabet.clone(),
                self.hypotheses.clone(),
                r.clone(),
            )?,
            None => HypothesisSet::new(self.alphabet.clone(), self.hypotheses.clone())?,
        };
        let levels = match &self.levels {
            Some(l) => Some(LevelVector::new(
                l.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect(),
            )?),
            None => None,
        };
        Ok((hyp, levels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair() -> HypothesisSet {
        HypothesisSet::bernoulli(&[0.5, 0.75]).unwrap()
    }

    #[test]
    fn update_examples() {
        let h = pair();
        let mut s = vec![0.0; 2];
        h.log_ratio_update(&mut s, 1).unwrap();
        assert!((s[0] - 1.25f64.ln()).abs() < 1e-15);
        assert!((s[1] - (0.625f64 / 0.75).ln()).abs() < 1e-15);
        let same = HypothesisSet::bernoulli(&[0.3, 0.3, 0.3]).unwrap();
        let mut s = vec![0.0; 3];
        for y in [0, 1, 1, 0] {
            same.log_ratio_update(&mut s, y).unwrap();
        }
        assert_eq!(s, vec![0.0; 3]);
        let r1 = HypothesisSet::with_reference(
            vec![0.0, 1.0],
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let mut s = vec![0.0; 2];
        for y in [0, 1, 1] {
            r1.log_ratio_update(&mut s, y).unwrap();
            assert_eq!(s[0], 0.0);
        }
        // outside one support: immediate rejection
        let z = HypothesisSet::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![0.5, 0.5, 0.0], vec![0.2, 0.3, 0.5]],
        )
        .unwrap();
        let mut s = vec![0.0; 2];
        z.log_ratio_update(&mut s, 2).unwrap();
        assert_eq!(s[0], f64::INFINITY);
        let zr = HypothesisSet::with_reference(
            vec![0.0, 1.0, 2.0],
            vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 0.0]],
            vec![0.5, 0.5, 0.0],
        )
        .unwrap();
        assert!(matches!(
            zr.log_ratio_update(&mut s, 2),
            Err(Error::Data(_))
        ));
        assert!(HypothesisSet::bernoulli(&[0.5]).is_err());
    }

    #[test]
    fn run_examples() {
        let h = pair();
        let e3 = 3f64.exp();
        let r = run_test(
            &h,
            &LevelVector::uniform(2, e3).unwrap(),
            std::iter::repeat(1),
            1000,
        )
        .unwrap();
        assert_eq!(r.tau, Some(14));
        assert_eq!(r.rho, vec![Some(14), None]);
        assert_eq!(r.decision, Some(1));
        assert_eq!((3.0 / 1.25f64.ln()).ceil() as u64, 14);
        let r = run_test(
            &h,
            &LevelVector::uniform(2, f64::INFINITY).unwrap(),
            std::iter::repeat(1),
            500,
        )
        .unwrap();
        assert!(r.censored && r.tau.is_none() && r.steps == 500);
        let same = HypothesisSet::bernoulli(&[0.3, 0.3]).unwrap();
        let r = run_test(
            &same,
            &LevelVector::uniform(2, 5.0).unwrap(),
            std::iter::repeat(0),
            100,
        )
        .unwrap();
        assert!(r.censored);
        assert!(LevelVector::new(vec![2.0, 1.0]).is_err());
        assert!(run_test(
            &h,
            &LevelVector::uniform(3, 2.0).unwrap(),
            std::iter::repeat(0),
            10
        )
        .is_err());
    }

    #[test]
    fn error_examples() {
        let same = HypothesisSet::bernoulli(&[0.3, 0.3]).unwrap();
        let e =
            estimate_errors(&same, &LevelVector::uniform(2, 5.0).unwrap(), 0, 200, 50, 1).unwrap();
        assert_eq!((e.error_rate, e.censor_rate), (None, 1.0));
        let h = pair();
        let e = estimate_errors(
            &h,
            &LevelVector::uniform(2, 20.0).unwrap(),
            0,
            20_000,
            10_000,
            2,
        )
        .unwrap();
        assert!(e.error_rate.unwrap() <= 0.05 + 3.0 * e.se.unwrap(), "{e:?}");
        let e = estimate_errors(
            &h,
            &LevelVector::new(vec![f64::INFINITY, 20.0]).unwrap(),
            0,
            5000,
            10_000,
            3,
        )
        .unwrap();
        assert_eq!(e.error_rate, Some(0.0));
    }

    #[test]
    fn g_moment_examples() {
        let h = pair();
        let one = ModerateFunction::constant();
        let m = estimate_g_moment(
            &h,
            &LevelVector::uniform(2, 20.0).unwrap(),
            1,
            &one,
            1000,
            10_000,
            4,
            1e-3,
        )
        .unwrap();
        assert_eq!((m.mean, m.se), (1.0, 0.0));
        let lin = ModerateFunction::power(1.0).unwrap();
        let c = LevelVector::uniform(2, 5f64.exp()).unwrap();
        let m = estimate_g_moment(&h, &c, 1, &lin, 20_000, 10_000, 5, 1e-3).unwrap();
        let wald = 1.0 + 5.0 / h.kl_adjusted(1, 0);
        assert!((m.mean / wald - 1.0).abs() < 0.15, "{} vs {wald}", m.mean);
    }

    #[test]
    fn kl_values() {
        let h = pair();
        let kl = h.pairwise_kl();
        assert_eq!((kl[0][0], kl[1][1]), (0.0, 0.0));
        let expected = 0.25 * (0.5f64).ln() + 0.75 * (1.5f64).ln();
        assert!((kl[1][0] - expected).abs() < 1e-15);
        let adj = 0.25 * (0.75f64).ln() + 0.75 * (1.25f64).ln();
        assert!((h.kl_adjusted(1, 0) - adj).abs() < 1e-15);
        assert!(h.kl_adjusted(0, 0) < 0.0);
        // the mixture's ratio to p_i stays within ln m, hence the drift gap
        for (i, j) in [(0, 1), (1, 0)] {
            assert!(h.kl(i, j) - h.kl_adjusted(i, j) <= 2f64.ln());
        }
    }

    #[test]
    fn ville_small() {
        let h = pair();
        for c in [10.0, 100.0] {
            for i in 0..2 {
                let v = ville_check(&h, i, c, 20_000, 400, 6).unwrap();
                assert!(v.holds, "{v:?}");
            }
        }
    }

    #[test]
    fn sweep_shapes() {
        let h = pair();
        let one = ModerateFunction::constant();
        let rows = optimality_sweep(&h, &[0.1, 0.01], 0, &one, 500, 7, None).unwrap();
        assert!(rows.iter().all(|r| r.ratio == 1.0));
        assert_eq!(
            optimality_sweep(&h, &[0.1], 0, &one, 100, 7, None)
                .unwrap()
                .len(),
            1
        );
        assert!(optimality_sweep(&h, &[], 0, &one, 100, 7, None)
            .unwrap()
            .is_empty());
        assert!(optimality_sweep(&h, &[0.01, 0.1], 0, &one, 100, 7, None).is_err());
        let near = HypothesisSet::with_reference(
            vec![0.0, 1.0],
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(matches!(
            optimality_sweep(&near, &[0.1], 1, &one, 10, 7, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_parses() {
        let cfg: HypothesisConfig = serde_json::from_str(
            r#"{"alphabet":[0,1],"hypotheses":[[0.5,0.5],[0.25,0.75]],"levels":[20,null]}"#,
        )
        .unwrap();
        let (h, l) = cfg.build().unwrap();
        assert_eq!(h, pair());
        assert_eq!(l.unwrap().values(), &[20.0, f64::INFINITY]);
    }

    fn stream_strategy() -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0usize..3, 1..300)
    }

    fn three() -> HypothesisSet {
        HypothesisSet::new(
            vec![0.0, 1.0, 2.0],
            vec![
                vec![0.2, 0.3, 0.5],
                vec![0.5, 0.3, 0.2],
                vec![0.3, 0.4, 0.3],
            ],
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn decision_is_coherent(ys in stream_strategy(), c in 1.5f64..50.0) {
            let h = three();
            let r = run_test(&h, &LevelVector::uniform(3, c).unwrap(), ys, 300).unwrap();
            if let (Some(tau), Some(k)) = (r.tau, r.decision) {
                let key = |x: Option<u64>| x.unwrap_or(u64::MAX);
                prop_assert!(r.rho.iter().all(|x| key(*x) <= key(r.rho[k])));
                let minmax = (0..3).map(|i| (0..3).filter(|j| *j != i).map(|j| key(r.rho[j])).max().unwrap()).min().unwrap();
                prop_assert_eq!(minmax, tau);
            }
        }

        #[test]
        fn raising_levels_never_shortens(ys in stream_strategy(), c in 1.5f64..20.0, f in 1.0f64..5.0) {
            let h = three();
            let lo = run_test(&h, &LevelVector::uniform(3, c).unwrap(), ys.clone(), 300).unwrap();
            let hi = run_test(&h, &LevelVector::uniform(3, c * f).unwrap(), ys, 300).unwrap();
            prop_assert!(hi.tau.unwrap_or(u64::MAX) >= lo.tau.unwrap_or(u64::MAX));
        }

        #[test]
        fn relabeling_is_equivariant(ys in stream_strategy(), c in 1.5f64..20.0, shift in 1usize..3) {
            let h = three();
            let perm: Vec<usize> = (0..3).map(|i| (i + shift) % 3).collect();
            let laws: Vec<Vec<f64>> = perm.iter().map(|p| h.laws()[*p].clone()).collect();
            let hp = HypothesisSet::new(h.alphabet().to_vec(), laws).unwrap();
            let a = run_test(&h, &LevelVector::uniform(3, c).unwrap(), ys.clone(), 300).unwrap();
            let b = run_test(&hp, &LevelVector::uniform(3, c).unwrap(), ys, 300).unwrap();
            prop_assert_eq!(a.tau, b.tau);
            for (i, p) in perm.iter().enumerate() {
                prop_assert_eq!(b.rho[i], a.rho[*p]);
            }
            // ties resolve by index, so compare only untied decisions
            if let (Some(da), Some(db)) = (a.decision, b.decision) {
                let tied = a.rho.iter().filter(|r| **r == a.rho[da]).count() > 1;
                if !tied {
                    prop_assert_eq!(perm[db], da);
                }
            }
        }

        #[test]
        fn two_hypotheses_stop_at_first_rejection(ys in proptest::collection::vec(0usize..2, 1..300), c in 1.5f64..30.0) {
            let h = pair();
            let r = run_test(&h, &LevelVector::uniform(2, c).unwrap(), ys, 300).unwrap();
            if let Some(tau) = r.tau {
                let first = r.rho.iter().flatten().min().copied();
                prop_assert_eq!(Some(tau), first);
            }
        }
    }
}
