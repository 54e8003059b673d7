//! Increment laws: sampling, moment functionals, tails, medians and
//! truncation thresholds.
//!
//! Besides the standard light- and heavy-tailed laws, two constructions are
//! provided:
//!
//! * the symmetrization `X* = X - X'` of any law, `X'` an independent copy;
//! * the counterexample law for a function `G` with unbounded doubling ratio.
//!   Given an increasing sequence with `G(2 t_n) >= n G(t_n)`, put mass
//!
//! ```text
//!     c / (n^2 t_n G(t_n))     on each of  +t_n  and  -t_n
//! ```
//!
//!   so that `E[|X| G(|X|)] = 2c sum 1/n^2 < inf` while
//!   `E[|X| G(2|X|)] >= 2c sum 1/n = inf`.
//!
//! Only a finite prefix of the counterexample atoms is stored; the mass
//! beyond it is bounded analytically and sampling conditions on the prefix.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::RngCore;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::modfun::{counterexample_sequence_with, CounterexampleSearch, ModerateFunction};
use crate::numeric::{
    compensated_sum, gaussian_two_sided_tail, integrate_finite, integrate_to_infinity, mean_se,
    proportion_se, CompensatedSum, Integral,
};
use crate::rng;
use crate::spec_parse::SpecParts;

/// Stored prefix of the counterexample law.
#[derive(Debug, Clone)]
pub struct CounterexampleLaw {
    g: ModerateFunction,
    ts: Vec<f64>,
    /// Mass of each of `+t_n` and `-t_n`.
    atom_mass: Vec<f64>,
    c: f64,
    stored_mass: f64,
    tail_mass_bound: f64,
    sampler: WeightedIndex<f64>,
}

/// Largest admissible bound on the mass beyond the stored prefix.
pub const MAX_TAIL_MASS: f64 = 1e-6;

impl CounterexampleLaw {
    pub fn g(&self) -> &ModerateFunction {
        &self.g
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    /// Mass of each of `+t_n` and `-t_n`, indexed from `n = 1`.
    pub fn atom_mass(&self) -> &[f64] {
        &self.atom_mass
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Total mass carried by the stored atoms; sampling conditions on it.
    pub fn stored_mass(&self) -> f64 {
        self.stored_mass
    }

    pub fn tail_mass_bound(&self) -> f64 {
        self.tail_mass_bound
    }

    pub fn prefix(&self) -> usize {
        self.ts.len()
    }

    /// Running sums of `E[|X| F(|X|); |X| <= t_n]` over the stored atoms.
    pub fn functional_partial_sums(&self, f: &ModerateFunction) -> Vec<f64> {
        let mut acc = CompensatedSum::new();
        self.ts
            .iter()
            .zip(&self.atom_mass)
            .map(|(t, m)| {
                acc.add(2.0 * m * t * f.value(*t));
                acc.value()
            })
            .collect()
    }
}

/// Builds the counterexample law from a sequence produced by
/// [`counterexample_sequence_with`].
///
/// With `B = 2 / (t_N G(t_N) N)`, the unnormalized mass beyond the prefix is at
/// most `B` (because `t_n G(t_n)` increases and `sum_{n>N} n^-2 < 1/N`). The
/// constant is `c = 1 / (S_N + B)`, so stored mass plus tail bound is 1.
pub fn normalize_counterexample(
    g: &ModerateFunction,
    ts: &[f64],
    prefix: usize,
) -> Result<CounterexampleLaw> {
    if prefix == 0 || prefix > ts.len() {
        return Err(Error::Domain(format!(
            "prefix {prefix} must lie in 1..={}",
            ts.len()
        )));
    }
    let ts = ts[..prefix].to_vec();
    if ts.windows(2).any(|w| w[0] >= w[1]) || ts[0] <= 0.0 {
        return Err(Error::Domain(
            "counterexample atoms must be positive and strictly increasing".into(),
        ));
    }
    let raw: Vec<f64> = ts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let n = (i + 1) as f64;
            1.0 / (n * n * t * g.value(*t))
        })
        .collect();
    if raw.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::Precision("atom weights under- or overflowed".into()));
    }
    let stored_raw = 2.0 * compensated_sum(raw.iter().copied());
    let t_n = ts[prefix - 1];
    let tail_raw = 2.0 / (t_n * g.value(t_n) * prefix as f64);
    let c = 1.0 / (stored_raw + tail_raw);
    let tail_mass_bound = tail_raw * c;
    if tail_mass_bound > MAX_TAIL_MASS {
        return Err(Error::Precision(format!(
            "prefix of {prefix} atoms leaves up to {tail_mass_bound:.3e} mass unstored (limit {MAX_TAIL_MASS:e})"
        )));
    }
    let atom_mass: Vec<f64> = raw.iter().map(|m| m * c).collect();
    let stored_mass = 2.0 * compensated_sum(atom_mass.iter().copied());
    let sampler = WeightedIndex::new(&atom_mass).map_err(|e| Error::Precision(e.to_string()))?;
    Ok(CounterexampleLaw {
        g: g.clone(),
        ts,
        atom_mass,
        c,
        stored_mass,
        tail_mass_bound,
        sampler,
    })
}

/// An increment law.
#[derive(Debug, Clone)]
pub enum Distribution {
    Rademacher,
    UniformSymmetric {
        half_width: f64,
    },
    /// `|X|` is Pareto with survival `(scale/t)^beta` and an independent sign.
    TwoSidedPareto {
        beta: f64,
        scale: f64,
    },
    Gaussian {
        sigma: f64,
    },
    /// `v1` with probability `p`, else `v0`.
    Bernoulli {
        p: f64,
        v0: f64,
        v1: f64,
    },
    Counterexample(Arc<CounterexampleLaw>),
    Symmetrized(Box<Distribution>),
}

/// How [`Distribution::moment_xg`] evaluates `E[|X| G(|X|)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentMode {
    /// Finite atom sums and closed forms.
    Analytic,
    Quadrature,
    /// The first `N` atoms (ordered by modulus, or by index for the
    /// counterexample law).
    PartialSum(usize),
    MonteCarlo {
        reps: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentVerdict {
    Finite,
    DivergenceEvidence,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    /// Zero for deterministic modes.
    pub se: f64,
    pub verdict: MomentVerdict,
    /// Number of atoms summed in partial-sum mode.
    pub terms: Option<usize>,
    pub last_increment: Option<f64>,
    /// Bound on the unsummed remainder, when one is known.
    pub remainder_bound: Option<f64>,
}

impl MomentEstimate {
    fn exact(value: f64) -> Self {
        Self {
            value,
            se: 0.0,
            verdict: MomentVerdict::Finite,
            terms: None,
            last_increment: None,
            remainder_bound: None,
        }
    }

    fn divergent(partial: f64) -> Self {
        Self {
            verdict: MomentVerdict::DivergenceEvidence,
            ..Self::exact(partial)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.verdict == MomentVerdict::Finite
    }
}

/// `P[|X| >= t]`, exact or Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailProb {
    pub p: f64,
    pub se: f64,
    pub exact: bool,
}

/// Replicates used when a tail probability has no closed form.
pub const DEFAULT_TAIL_REPS: usize = 100_000;
const DEFAULT_TAIL_SEED: u64 = 0x7a11;

/// Default geometric step of the counterexample search when built from a spec
/// string: fine enough that `10^5` distinct atoms fit below the exponential's
/// overflow point.
pub const COUNTEREXAMPLE_SPEC_RATIO: f64 = 1.0 + 1e-6;

#[inline]
fn unit_and_sign<R: RngCore + ?Sized>(rng: &mut R) -> (f64, bool) {
    let bits = rng.next_u64();
    // 53 high bits give a uniform on (0, 1]; the low bit is the sign.
    let u = ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    (u, bits & 1 == 1)
}

#[inline]
fn signed(x: f64, negative: bool) -> f64 {
    if negative {
        -x
    } else {
        x
    }
}

fn std_normal_density(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl Distribution {
    pub fn rademacher() -> Self {
        Self::Rademacher
    }

    pub fn uniform(half_width: f64) -> Result<Self> {
        positive("uniform half width", half_width)?;
        Ok(Self::UniformSymmetric { half_width })
    }

    pub fn pareto(beta: f64, scale: f64) -> Result<Self> {
        positive("pareto shape", beta)?;
        positive("pareto scale", scale)?;
        Ok(Self::TwoSidedPareto { beta, scale })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        positive("gaussian sigma", sigma)?;
        Ok(Self::Gaussian { sigma })
    }

    pub fn bernoulli(p: f64, v0: f64, v1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || !v0.is_finite() || !v1.is_finite() {
            return Err(Error::Domain(format!(
                "bernoulli needs p in [0,1] and finite values, got p={p}"
            )));
        }
        Ok(Self::Bernoulli { p, v0, v1 })
    }

    pub fn counterexample(law: CounterexampleLaw) -> Self {
        Self::Counterexample(Arc::new(law))
    }

    /// Builds the counterexample law for `g` with `prefix` atoms.
    pub fn counterexample_for(
        g: &ModerateFunction,
        prefix: usize,
        ratio: f64,
        search_limit: f64,
    ) -> Result<Self> {
        let opts = CounterexampleSearch::new(prefix, search_limit).with_ratio(ratio);
        let ts = counterexample_sequence_with(g, &opts)?;
        Ok(Self::counterexample(normalize_counterexample(
            g, &ts, prefix,
        )?))
    }

    pub fn symmetrized(inner: Distribution) -> Self {
        Self::Symmetrized(Box::new(inner))
    }

    /// Parse a distribution spec such as `rademacher`, `uniform:w=1`,
    /// `pareto2:beta=3,scale=1`, `gaussian:sigma=1`, `bernoulli:p=0.9,v0=0,v1=1`,
    /// `counterexample:G=exp(b=1),prefix=100000` or `sym:gaussian:sigma=1`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if let Some(inner) = spec.strip_prefix("sym:") {
            return Ok(Self::symmetrized(Self::parse(inner)?));
        }
        if let Some(inner) = spec.strip_prefix("sym(").and_then(|s| s.strip_suffix(')')) {
            return Ok(Self::symmetrized(Self::parse(inner)?));
        }
        let parts = SpecParts::parse(spec)?;
        match parts.head {
            "rademacher" => {
                parts.only(&[])?;
                Ok(Self::Rademacher)
            }
            "uniform" => {
                parts.only(&["w"])?;
                Self::uniform(parts.f64_or("w", 1.0)?)
            }
            "pareto2" | "pareto" => {
                parts.only(&["beta", "scale"])?;
                Self::pareto(parts.f64_required("beta")?, parts.f64_or("scale", 1.0)?)
            }
            "gaussian" | "normal" => {
                parts.only(&["sigma"])?;
                Self::gaussian(parts.f64_or("sigma", 1.0)?)
            }
            "bernoulli" => {
                parts.only(&["p", "v0", "v1"])?;
                Self::bernoulli(
                    parts.f64_required("p")?,
                    parts.f64_or("v0", 0.0)?,
                    parts.f64_or("v1", 1.0)?,
                )
            }
            "counterexample" => {
                parts.only(&["G", "prefix", "ratio", "limit"])?;
                let g = ModerateFunction::parse(parts.get("G").unwrap_or("exp"))?;
                let prefix = parts.usize_or("prefix", 100_000)?;
                let ratio = parts.f64_or("ratio", COUNTEREXAMPLE_SPEC_RATIO)?;
                let limit = parts.f64_or("limit", 300.0)?;
                Self::counterexample_for(&g, prefix, ratio, limit)
            }
            other => Err(Error::Config(format!("unknown distribution {other:?}"))),
        }
    }

    /// Canonical spec string.
    pub fn name(&self) -> String {
        match self {
            Self::Rademacher => "rademacher".into(),
            Self::UniformSymmetric { half_width } => format!("uniform:w={half_width}"),
            Self::TwoSidedPareto { beta, scale } => format!("pareto2:beta={beta},scale={scale}"),
            Self::Gaussian { sigma } => format!("gaussian:sigma={sigma}"),
            Self::Bernoulli { p, v0, v1 } => format!("bernoulli:p={p},v0={v0},v1={v1}"),
            Self::Counterexample(law) => {
                format!("counterexample:G={},prefix={}", law.g.name(), law.prefix())
            }
            Self::Symmetrized(inner) => format!("sym:{}", inner.name()),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            Self::Bernoulli { p, v0, v1 } => v0 == v1 || (*p == 0.5 && *v0 == -*v1),
            _ => true,
        }
    }

    /// `E[X]` when it exists in closed form.
    pub fn analytic_mean(&self) -> Option<f64> {
        match self {
            Self::Bernoulli { p, v0, v1 } => Some(p * v1 + (1.0 - p) * v0),
            Self::TwoSidedPareto { beta, .. } if *beta <= 1.0 => None,
            Self::Symmetrized(inner) => inner.analytic_mean().map(|_| 0.0),
            _ => Some(0.0),
        }
    }

    /// `[lo, hi]` containing the support, for bounded laws.
    pub fn support_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Self::Rademacher => Some((-1.0, 1.0)),
            Self::UniformSymmetric { half_width: w } => Some((-w, *w)),
            Self::Bernoulli { v0, v1, .. } => Some((v0.min(*v1), v0.max(*v1))),
            Self::Counterexample(law) => law.ts.last().map(|t| (-t, *t)),
            Self::Symmetrized(inner) => inner.support_bounds().map(|(lo, hi)| (lo - hi, hi - lo)),
            _ => None,
        }
    }

    /// Atoms `(x, mass)` sorted by `x`, for finitely supported laws.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        let mut atoms = match self {
            Self::Rademacher => vec![(-1.0, 0.5), (1.0, 0.5)],
            Self::Bernoulli { p, v0, v1 } => {
                if v0 == v1 {
                    vec![(*v0, 1.0)]
                } else {
                    vec![(*v0, 1.0 - p), (*v1, *p)]
                }
            }
            Self::Counterexample(law) => {
                let mut v: Vec<(f64, f64)> = law
                    .ts
                    .iter()
                    .zip(&law.atom_mass)
                    .map(|(t, m)| (-t, m / law.stored_mass))
                    .collect();
                v.extend(
                    law.ts
                        .iter()
                        .zip(&law.atom_mass)
                        .map(|(t, m)| (*t, m / law.stored_mass)),
                );
                v
            }
            Self::Symmetrized(inner) => {
                let a = inner.atoms()?;
                let mut v = Vec::with_capacity(a.len() * a.len());
                for (x, mx) in &a {
                    for (y, my) in &a {
                        v.push((x - y, mx * my));
                    }
                }
                v
            }
            _ => return None,
        };
        atoms.retain(|(_, m)| *m > 0.0);
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (x, m) in atoms {
            match merged.last_mut() {
                Some((y, acc)) if *y == x => *acc += m,
                _ => merged.push((x, m)),
            }
        }
        Some(merged)
    }

    /// One draw.
    #[inline]
    pub fn sample_one<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Rademacher => {
                if rng.next_u32() & 1 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::UniformSymmetric { half_width } => {
                let (u, neg) = unit_and_sign(rng);
                signed(half_width * u, neg)
            }
            Self::TwoSidedPareto { beta, scale } => {
                let (u, neg) = unit_and_sign(rng);
                signed(pareto_magnitude(*beta, *scale, u), neg)
            }
            Self::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(&mut RngAdapter(rng));
                sigma * z
            }
            Self::Bernoulli { p, v0, v1 } => {
                let (u, _) = unit_and_sign(rng);
                if u <= *p {
                    *v1
                } else {
                    *v0
                }
            }
            Self::Counterexample(law) => {
                let i = law.sampler.sample(&mut RngAdapter(rng));
                let neg = rng.next_u32() & 1 == 1;
                signed(law.ts[i], neg)
            }
            Self::Symmetrized(inner) => inner.sample_one(rng) - inner.sample_one(rng),
        }
    }

    /// Fills `out` with consecutive i.i.d. draws. Rademacher signs are taken
    /// 64 per random word, so the draw order differs from
    /// [`sample_one`](Self::sample_one), but draw `i` still depends only on
    /// the stream and `i` when chunks are multiples of 64.
    pub fn fill<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Self::Rademacher => {
                for block in out.chunks_mut(64) {
                    let bits = rng.next_u64();
                    for (i, x) in block.iter_mut().enumerate() {
                        *x = if bits >> i & 1 == 1 { 1.0 } else { -1.0 };
                    }
                }
            }
            Self::Gaussian { sigma } => {
                let mut r = RngAdapter(rng);
                for x in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut r);
                    *x = sigma * z;
                }
            }
            Self::UniformSymmetric { half_width } => {
                for x in out.iter_mut() {
                    let (u, neg) = unit_and_sign(rng);
                    *x = signed(half_width * u, neg);
                }
            }
            Self::TwoSidedPareto { beta, scale } => {
                for x in out.iter_mut() {
                    let (u, neg) = unit_and_sign(rng);
                    *x = signed(pareto_magnitude(*beta, *scale, u), neg);
                }
            }
            _ => {
                for x in out.iter_mut() {
                    *x = self.sample_one(rng);
                }
            }
        }
    }

    /// `n` i.i.d. draws from stream 0 of `seed`; draw `i` does not depend on `n`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<f64> {
        let mut r = rng::stream(seed, 0);
        let mut out = vec![0.0; n];
        self.fill(&mut r, &mut out);
        out
    }

    /// `E[|X| G(|X|)]`.
    pub fn moment_xg(&self, g: &ModerateFunction, mode: MomentMode) -> Result<MomentEstimate> {
        match mode {
            MomentMode::Analytic => self.moment_analytic(g),
            MomentMode::Quadrature => self.moment_quadrature(g),
            MomentMode::PartialSum(n) => self.moment_partial_sum(g, n),
            MomentMode::MonteCarlo { reps, seed } => Ok(self.moment_monte_carlo(g, reps, seed)),
        }
    }

    /// Best deterministic evaluation available: analytic, then quadrature.
    pub fn moment_xg_auto(&self, g: &ModerateFunction) -> Result<MomentEstimate> {
        match self.moment_analytic(g) {
            Err(Error::Unsupported(_)) => self.moment_quadrature(g),
            other => other,
        }
    }

    fn moment_analytic(&self, g: &ModerateFunction) -> Result<MomentEstimate> {
        if let Self::Counterexample(law) = self {
            let total = law
                .functional_partial_sums(g)
                .last()
                .copied()
                .unwrap_or(0.0)
                / law.stored_mass;
            return Ok(MomentEstimate::exact(total));
        }
        if let Some(atoms) = self.atoms() {
            return Ok(MomentEstimate::exact(compensated_sum(
                atoms.iter().map(|(x, m)| m * x.abs() * g.value(x.abs())),
            )));
        }
        if !g.is_constant() {
            return Err(Error::Unsupported(format!(
                "no closed form for E[|X| G(|X|)] with {} and {}",
                self.name(),
                g.name()
            )));
        }
        match self.mean_abs_closed_form() {
            Some(v) if v.is_finite() => Ok(MomentEstimate::exact(v)),
            Some(_) => Ok(MomentEstimate::divergent(f64::INFINITY)),
            None => Err(Error::Unsupported(format!(
                "no closed form for E|X| with {}",
                self.name()
            ))),
        }
    }

    fn mean_abs_closed_form(&self) -> Option<f64> {
        let half_normal = (2.0 / PI).sqrt();
        match self {
            Self::UniformSymmetric { half_width } => Some(half_width / 2.0),
            Self::Gaussian { sigma } => Some(sigma * half_normal),
            Self::TwoSidedPareto { beta, scale } => Some(if *beta > 1.0 {
                beta * scale / (beta - 1.0)
            } else {
                f64::INFINITY
            }),
            Self::Symmetrized(inner) => match inner.as_ref() {
                Self::Gaussian { sigma } => Some(sigma * SQRT_2 * half_normal),
                Self::UniformSymmetric { half_width } => Some(2.0 * half_width / 3.0),
                _ => None,
            },
            _ => None,
        }
    }

    fn moment_quadrature(&self, g: &ModerateFunction) -> Result<MomentEstimate> {
        const TOL: f64 = 1e-10;
        let from_integral = |r: Integral| match r {
            Integral::Finite(v) => MomentEstimate::exact(v),
            Integral::Divergent { partial } => MomentEstimate::divergent(partial),
        };
        match self {
            Self::UniformSymmetric { half_width: w } => {
                let w = *w;
                Ok(MomentEstimate::exact(integrate_finite(
                    |x| x * g.value(x) / w,
                    0.0,
                    w,
                    TOL,
                )))
            }
            Self::Gaussian { sigma } => {
                let s = *sigma;
                Ok(from_integral(integrate_to_infinity(
                    |x| 2.0 * x * g.value(x) * std_normal_density(x / s) / s,
                    0.0,
                    TOL,
                )))
            }
            Self::TwoSidedPareto { beta, scale } => {
                let (b, s) = (*beta, *scale);
                let f = |x: f64| b * (s / x).powf(b) * g.value(x);
                Ok(from_integral(integrate_to_infinity(f, s, TOL)))
            }
            Self::Symmetrized(inner) => match inner.as_ref() {
                Self::Gaussian { sigma } => Self::Gaussian {
                    sigma: sigma * SQRT_2,
                }
                .moment_quadrature(g),
                Self::UniformSymmetric { half_width: w } => {
                    let w = *w;
                    let density = move |z: f64| (2.0 * w - z) / (2.0 * w * w);
                    Ok(MomentEstimate::exact(integrate_finite(
                        |z| z * g.value(z) * density(z),
                        0.0,
                        2.0 * w,
                        TOL,
                    )))
                }
                _ if self.atoms().is_some() => self.moment_analytic(g),
                _ => Err(Error::Unsupported(format!(
                    "no quadrature rule for {}",
                    self.name()
                ))),
            },
            _ => self.moment_analytic(g),
        }
    }

    /// Partial sums over atoms with the divergence rule: evidence of
    /// divergence when the sum doubles over the second half of the terms, or
    /// when the second-half gain is at least 0.9 times the preceding
    /// quarter-to-half gain (no decay of increments).
    fn moment_partial_sum(&self, g: &ModerateFunction, n: usize) -> Result<MomentEstimate> {
        if n == 0 {
            return Err(Error::Domain(
                "partial-sum mode needs at least one term".into(),
            ));
        }
        let (sums, remainder_bound) = match self {
            Self::Counterexample(law) => {
                let sums = law.functional_partial_sums(g);
                // For the law's own G each atom pair contributes exactly 2c/n^2.
                let rb = (g.name() == law.g.name()).then(|| 2.0 * law.c / n.min(sums.len()) as f64);
                (sums, rb)
            }
            _ => {
                let mut atoms = self.atoms().ok_or_else(|| {
                    Error::Unsupported(format!(
                        "partial-sum mode needs a discrete law, got {}",
                        self.name()
                    ))
                })?;
                atoms.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
                let mut acc = CompensatedSum::new();
                let sums = atoms
                    .iter()
                    .map(|(x, m)| {
                        acc.add(m * x.abs() * g.value(x.abs()));
                        acc.value()
                    })
                    .collect();
                (sums, Some(0.0))
            }
        };
        let n = n.min(sums.len());
        let at = |k: usize| if k == 0 { 0.0 } else { sums[k - 1] };
        let value = at(n);
        let last_increment = value - at(n - 1);
        let divergent = n >= 4 && {
            let (half, quarter) = (at(n / 2), at(n / 4));
            let gain = value - half;
            let prev_gain = half - quarter;
            (half > 0.0 && value >= 2.0 * half) || (prev_gain > 0.0 && gain >= 0.9 * prev_gain)
        };
        let remainder_bound = if n == sums.len() {
            remainder_bound
        } else {
            None
        };
        Ok(MomentEstimate {
            value,
            se: 0.0,
            verdict: if divergent {
                MomentVerdict::DivergenceEvidence
            } else {
                MomentVerdict::Finite
            },
            terms: Some(n),
            last_increment: Some(last_increment),
            remainder_bound,
        })
    }

    fn moment_monte_carlo(&self, g: &ModerateFunction, reps: usize, seed: u64) -> MomentEstimate {
        let mut r = rng::stream(seed, 0);
        let vals: Vec<f64> = (0..reps)
            .map(|_| {
                let x = self.sample_one(&mut r).abs();
                x * g.value(x)
            })
            .collect();
        let (value, se) = mean_se(&vals);
        MomentEstimate {
            se,
            ..MomentEstimate::exact(value)
        }
    }

    /// `P[|X| >= t]`: exact for closed-form and discrete kinds, Monte Carlo
    /// otherwise.
    pub fn tail(&self, t: f64) -> Result<TailProb> {
        self.tail_with(t, DEFAULT_TAIL_REPS, DEFAULT_TAIL_SEED)
    }

    pub fn tail_with(&self, t: f64, reps: usize, seed: u64) -> Result<TailProb> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!(
                "tail threshold must be >= 0, got {t}"
            )));
        }
        if let Some(p) = self.tail_exact(t) {
            return Ok(TailProb {
                p,
                se: 0.0,
                exact: true,
            });
        }
        let mut r = rng::stream(seed, 0);
        let hits = (0..reps)
            .filter(|_| self.sample_one(&mut r).abs() >= t)
            .count();
        let p = hits as f64 / reps as f64;
        Ok(TailProb {
            p,
            se: proportion_se(p, reps),
            exact: false,
        })
    }

    fn tail_exact(&self, t: f64) -> Option<f64> {
        Some(match self {
            Self::UniformSymmetric { half_width: w } => (1.0 - t / w).clamp(0.0, 1.0),
            Self::TwoSidedPareto { beta, scale } => {
                if t <= *scale {
                    1.0
                } else {
                    (scale / t).powf(*beta)
                }
            }
            Self::Gaussian { sigma } => gaussian_two_sided_tail(*sigma, t),
            Self::Symmetrized(inner) => match inner.as_ref() {
                Self::Gaussian { sigma } => gaussian_two_sided_tail(sigma * SQRT_2, t),
                Self::UniformSymmetric { half_width: w } => {
                    let s = (2.0 * w - t).max(0.0);
                    (s * s / (4.0 * w * w)).min(1.0)
                }
                _ => return self.atoms().map(|a| atom_tail(&a, t)),
            },
            _ => return self.atoms().map(|a| atom_tail(&a, t)),
        })
    }

    /// A median: `P[X <= m] >= 1/2` and `P[X >= m] >= 1/2`. When the set of
    /// medians is an interval its midpoint is returned.
    pub fn median(&self) -> f64 {
        match self.atoms() {
            Some(atoms) => atom_median(&atoms),
            None => 0.0,
        }
    }

    /// `E[|X|; |X| >= t]` in closed form.
    pub fn truncated_abs_moment(&self, t: f64) -> Result<f64> {
        let unsupported = || {
            Error::Unsupported(format!(
                "no closed-form truncated moment for {}",
                self.name()
            ))
        };
        if let Some(atoms) = self.atoms() {
            return Ok(compensated_sum(
                atoms
                    .iter()
                    .filter(|(x, _)| x.abs() >= t)
                    .map(|(x, m)| m * x.abs()),
            ));
        }
        let gaussian = |s: f64| 2.0 * s * std_normal_density(t / s);
        match self {
            Self::UniformSymmetric { half_width: w } => Ok(if t >= *w {
                0.0
            } else {
                (w * w - t * t) / (2.0 * w)
            }),
            Self::Gaussian { sigma } => Ok(gaussian(*sigma)),
            Self::TwoSidedPareto { beta, scale } => {
                let (b, s) = (*beta, *scale);
                if b <= 1.0 {
                    return Err(Error::Unsupported(format!(
                        "E|X| is infinite for {}",
                        self.name()
                    )));
                }
                let t = t.max(s);
                Ok(b * s.powf(b) * t.powf(1.0 - b) / (b - 1.0))
            }
            Self::Symmetrized(inner) => match inner.as_ref() {
                Self::Gaussian { sigma } => Ok(gaussian(sigma * SQRT_2)),
                Self::UniformSymmetric { half_width: w } => {
                    if t >= 2.0 * w {
                        return Ok(0.0);
                    }
                    Ok((4.0 * w * w * w / 3.0 - w * t * t + t * t * t / 3.0) / (2.0 * w * w))
                }
                _ => Err(unsupported()),
            },
            _ => Err(unsupported()),
        }
    }

    /// Smallest `t` on the grid `{0} u {1.001^k}` with
    /// `E[|X|; |X| >= t] <= 1 - alpha`.
    pub fn truncation_threshold(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        let target = 1.0 - alpha;
        let f = |t: f64| self.truncated_abs_moment(t);
        if !f(0.0)?.is_finite() {
            return Err(Error::Unsupported(format!(
                "E|X| is infinite for {}",
                self.name()
            )));
        }
        if f(0.0)? <= target {
            return Ok(0.0);
        }
        let ln_r = 1.001f64.ln();
        let grid = |k: i64| (k as f64 * ln_r).exp();
        let (mut lo, mut hi) = (-25_000i64, 0i64);
        if f(grid(lo))? <= target {
            return Ok(grid(lo));
        }
        while f(grid(hi))? > target {
            lo = hi;
            hi = if hi == 0 { 1024 } else { hi * 2 };
            if hi > 2_000_000 {
                return Err(Error::Precision(
                    "truncation threshold beyond 1.001^2e6".into(),
                ));
            }
        }
        // invariant: f(grid(lo)) > target >= f(grid(hi))
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if f(grid(mid))? <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(grid(hi))
    }

    /// Law dump as CSV rows `atom,mass` for discrete kinds.
    pub fn law_csv(&self) -> Result<String> {
        let atoms = self.atoms().ok_or_else(|| {
            Error::Unsupported(format!("{} has no finite atom list", self.name()))
        })?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(["atom", "mass"]).map_err(io)?;
        for (x, m) in atoms {
            w.write_record([format!("{x:.16e}"), format!("{m:.16e}")])
                .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{what} must be finite and > 0, got {v}"
        )))
    }
}

#[inline]
fn pareto_magnitude(beta: f64, scale: f64, u: f64) -> f64 {
    // u^(-1/beta) with cheap paths for common shapes
    if beta == 4.0 {
        scale / u.sqrt().sqrt()
    } else if beta == 2.0 {
        scale / u.sqrt()
    } else if beta == 1.5 {
        let c = u.cbrt();
        scale / (c * c)
    } else {
        scale * u.powf(-1.0 / beta)
    }
}

fn atom_tail(atoms: &[(f64, f64)], t: f64) -> f64 {
    compensated_sum(atoms.iter().filter(|(x, _)| x.abs() >= t).map(|(_, m)| *m)).min(1.0)
}

fn atom_median(atoms: &[(f64, f64)]) -> f64 {
    let mut cdf = 0.0;
    for (i, (x, m)) in atoms.iter().enumerate() {
        cdf += m;
        if (cdf - 0.5).abs() <= 1e-12 && i + 1 < atoms.len() {
            return 0.5 * (x + atoms[i + 1].0);
        }
        if cdf > 0.5 {
            return *x;
        }
    }
    atoms.last().map_or(0.0, |a| a.0)
}

/// Order-statistic median `Y_(ceil(n/2))` of a sample.
pub fn empirical_median(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("median of an empty sample".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("non-finite sample value".into()));
    }
    let mut v = samples.to_vec();
    let k = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*m)
}

/// Lets `rand` distributions draw from an unsized `RngCore`.
struct RngAdapter<'a, R: RngCore + ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}
