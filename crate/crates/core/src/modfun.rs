//! Candidate growth functions `G` and their moderation audits.
//!
//! A function is *moderate* when it is positive, nondecreasing, unbounded and
//! has a bounded doubling ratio:
//!
//! ```text
//!     sup_{t >= 0} G(2t) / G(t) < inf
//! ```
//!
//! Built-in families are kept positive at `t = 0`:
//!
//! | spec                | G(t)                        | doubling constant        |
//! |---------------------|-----------------------------|--------------------------|
//! | `power:r=R`         | `(1+t)^R`                   | `2^R` (exact supremum)   |
//! | `powlog:r=R,s=S`    | `(1+t)^R log(e+t)^S`        | `2^R (1+ln 2)^max(S,0)`  |
//! | `exp:b=B`           | `exp(B t)`                  | none (not moderate)      |
//!
//! Moderation cannot be decided from finitely many evaluations, so the numeric
//! audits here only ever return evidence; the analytic flags attached to the
//! built-in families are authoritative.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, integrate_to_infinity, Integral};
use crate::spec_parse::SpecParts;

/// Anything that can be evaluated as a growth function on `t >= 0`.
pub trait Growth {
    fn value(&self, t: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Growth for F {
    fn value(&self, t: f64) -> f64 {
        self(t)
    }
}

type CustomFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Family {
    Power {
        r: f64,
    },
    PowLog {
        r: f64,
        s: f64,
    },
    Exp {
        b: f64,
    },
    /// `t -> inner(factor * t)`
    Dilated {
        inner: Box<Family>,
        factor: f64,
    },
    Custom(CustomFn),
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Power { r } => write!(f, "Power {{ r: {r} }}"),
            Family::PowLog { r, s } => write!(f, "PowLog {{ r: {r}, s: {s} }}"),
            Family::Exp { b } => write!(f, "Exp {{ b: {b} }}"),
            Family::Dilated { inner, factor } => {
                write!(f, "Dilated {{ inner: {inner:?}, factor: {factor} }}")
            }
            Family::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Family {
    fn value(&self, t: f64) -> f64 {
        match self {
            Family::Power { r } => {
                if *r == 0.0 {
                    1.0
                } else {
                    (1.0 + t).powf(*r)
                }
            }
            Family::PowLog { r, s } => (1.0 + t).powf(*r) * (std::f64::consts::E + t).ln().powf(*s),
            Family::Exp { b } => (b * t).exp(),
            Family::Dilated { inner, factor } => inner.value(factor * t),
            Family::Custom(f) => f(t),
        }
    }

    fn ln_value(&self, t: f64) -> f64 {
        match self {
            Family::Power { r } => r * t.ln_1p(),
            Family::PowLog { r, s } => r * t.ln_1p() + s * (std::f64::consts::E + t).ln().ln(),
            Family::Exp { b } => b * t,
            Family::Dilated { inner, factor } => inner.ln_value(factor * t),
            Family::Custom(f) => f(t).ln(),
        }
    }
}

/// A candidate function `G` with the metadata needed by the audits.
#[derive(Clone, Debug)]
pub struct ModerateFunction {
    name: String,
    family: Family,
    claimed_doubling: Option<f64>,
    claimed_moderate: bool,
}

impl ModerateFunction {
    /// `(1+t)^r`, `r >= 0`. `r = 0` is the constant function 1, which has
    /// doubling constant 1 but is not moderate (it does not grow).
    pub fn power(r: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::Domain(format!(
                "power exponent must be finite and >= 0, got {r}"
            )));
        }
        Ok(Self {
            name: format!("power:r={r}"),
            family: Family::Power { r },
            claimed_doubling: Some(2f64.powf(r)),
            claimed_moderate: r > 0.0,
        })
    }

    pub fn constant() -> Self {
        Self::power(0.0).expect("r = 0 is valid")
    }

    /// `(1+t)^r log(e+t)^s`.
    ///
    /// Requires `r >= 0`, and `r >= |s|/2` when `s < 0` so that the product
    /// stays nondecreasing.
    pub fn powlog(r: f64, s: f64) -> Result<Self> {
        if !(r.is_finite() && s.is_finite() && r >= 0.0) {
            return Err(Error::Domain(format!(
                "powlog needs finite r >= 0 and finite s, got r={r}, s={s}"
            )));
        }
        if s < 0.0 && r < -s / 2.0 {
            return Err(Error::Domain(format!(
                "powlog:r={r},s={s} is not nondecreasing (need r >= |s|/2 when s < 0)"
            )));
        }
        // log(e+2t) <= ln 2 + log(e+t) and log(e+t) >= 1 bound the log factor's ratio by 1 + ln 2.
        let log_factor = if s > 0.0 {
            (1.0 + std::f64::consts::LN_2).powf(s)
        } else {
            1.0
        };
        Ok(Self {
            name: format!("powlog:r={r},s={s}"),
            family: Family::PowLog { r, s },
            claimed_doubling: Some(2f64.powf(r) * log_factor),
            claimed_moderate: r > 0.0 || (r == 0.0 && s > 0.0),
        })
    }

    /// `exp(b t)`, `b > 0`.
    pub fn exp(b: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Domain(format!(
                "exp rate must be finite and > 0, got {b}"
            )));
        }
        Ok(Self {
            name: format!("exp:b={b}"),
            family: Family::Exp { b },
            claimed_doubling: None,
            claimed_moderate: false,
        })
    }

    /// A user-supplied function. Positivity and monotonicity are checked at
    /// evaluation and audit time, not here.
    pub fn custom<F>(
        name: &str,
        f: F,
        claimed_doubling: Option<f64>,
        claimed_moderate: bool,
    ) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            family: Family::Custom(Arc::new(f)),
            claimed_doubling,
            claimed_moderate,
        }
    }

    /// `t -> G(factor * t)`; same doubling constant as `G`.
    pub fn dilated(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Domain(format!(
                "dilation factor must be finite and > 0, got {factor}"
            )));
        }
        Ok(Self {
            name: format!("{}@x{factor}", self.name),
            family: Family::Dilated {
                inner: Box::new(self.family.clone()),
                factor,
            },
            claimed_doubling: self.claimed_doubling,
            claimed_moderate: self.claimed_moderate,
        })
    }

    /// Parse `power:r=2`, `powlog:r=1,s=1`, `exp:b=0.5` or `const`.
    ///
    /// Parenthesised parameters (`exp(b=0.5)`) are accepted too, so that a
    /// function spec can be nested inside a distribution spec.
    pub fn parse(spec: &str) -> Result<Self> {
        let normalized = match (spec.find('('), spec.trim_end().strip_suffix(')')) {
            (Some(i), Some(body)) => format!("{}:{}", &spec[..i], &body[i + 1..]),
            _ => spec.to_string(),
        };
        let parts = SpecParts::parse(&normalized)?;
        match parts.head {
            "power" | "pow" => {
                parts.only(&["r"])?;
                Self::power(parts.f64_required("r")?)
            }
            "powlog" => {
                parts.only(&["r", "s"])?;
                Self::powlog(parts.f64_or("r", 0.0)?, parts.f64_or("s", 0.0)?)
            }
            "exp" => {
                parts.only(&["b"])?;
                Self::exp(parts.f64_or("b", 1.0)?)
            }
            "const" | "constant" | "one" => {
                parts.only(&[])?;
                Ok(Self::constant())
            }
            other => Err(Error::Config(format!("unknown function family {other:?}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match &self.family {
            Family::Power { r } => vec![("r", *r)],
            Family::PowLog { r, s } => vec![("r", *r), ("s", *s)],
            Family::Exp { b } => vec![("b", *b)],
            Family::Dilated { factor, .. } => vec![("factor", *factor)],
            Family::Custom(_) => vec![],
        }
    }

    pub fn claimed_doubling(&self) -> Option<f64> {
        self.claimed_doubling
    }

    pub fn claimed_moderate(&self) -> bool {
        self.claimed_moderate
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.family, Family::Power { r } if r == 0.0)
    }

    /// Checked evaluation.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain(format!(
                "G is defined on finite t >= 0, got {t}"
            )));
        }
        let v = self.family.value(t);
        if v.is_nan() || v <= 0.0 {
            return Err(Error::Domain(format!(
                "{} is not positive at t = {t} (value {v})",
                self.name
            )));
        }
        Ok(v)
    }

    /// Unchecked evaluation for hot loops; the caller guarantees `t >= 0`.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        self.family.value(t)
    }

    /// `log G(t)`, computed without forming `G(t)` for the built-in families.
    pub fn ln_value(&self, t: f64) -> f64 {
        self.family.ln_value(t)
    }

    /// The exact supremum of `G(2t)/G(t)` when it has a closed form.
    pub fn analytic_doubling_sup(&self) -> Option<f64> {
        match &self.family {
            Family::Power { r } => Some(2f64.powf(*r)),
            Family::Dilated { inner, .. } => match inner.as_ref() {
                Family::Power { r } => Some(2f64.powf(*r)),
                _ => None,
            },
            _ => None,
        }
    }
}

impl Growth for ModerateFunction {
    #[inline]
    fn value(&self, t: f64) -> f64 {
        self.family.value(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Geometric,
}

/// An evaluation grid on `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn new(t_min: f64, t_max: f64, points: usize, spacing: Spacing) -> Result<Self> {
        let g = Self {
            t_min,
            t_max,
            points,
            spacing,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn geometric(t_min: f64, t_max: f64, points: usize) -> Result<Self> {
        Self::new(t_min, t_max, points, Spacing::Geometric)
    }

    pub fn linear(t_min: f64, t_max: f64, points: usize) -> Result<Self> {
        Self::new(t_min, t_max, points, Spacing::Linear)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min.is_finite() && self.t_max.is_finite()) || self.t_min < 0.0 {
            return Err(Error::InvalidGrid(format!(
                "bounds must be finite with t_min >= 0 (got [{}, {}])",
                self.t_min, self.t_max
            )));
        }
        if self.t_min >= self.t_max {
            return Err(Error::InvalidGrid(format!(
                "t_min {} must be < t_max {}",
                self.t_min, self.t_max
            )));
        }
        if self.points < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                self.points
            )));
        }
        if self.spacing == Spacing::Geometric && self.t_min <= 0.0 {
            return Err(Error::InvalidGrid("geometric grids need t_min > 0".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let m = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                let u = i as f64 / m;
                if i + 1 == self.points {
                    return self.t_max;
                }
                match self.spacing {
                    Spacing::Linear => self.t_min + u * (self.t_max - self.t_min),
                    Spacing::Geometric => self.t_min * ((self.t_max / self.t_min).ln() * u).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModerationVerdict {
    ModerateConsistent,
    NonModerateEvidence,
}

/// Default growth factor between decades that counts as non-moderate evidence.
pub const DEFAULT_GROWTH_THRESHOLD: f64 = 2.0;

/// Result of a doubling-ratio audit.
#[derive(Debug, Clone, Serialize)]
pub struct DoublingAudit {
    pub name: String,
    pub grid: GridSpec,
    pub ratio_max: f64,
    pub argmax: f64,
    pub analytic_sup: Option<f64>,
    pub claimed_doubling: Option<f64>,
    /// Grid points where the claimed constant is exceeded.
    pub claim_violations: usize,
    pub verdict: ModerationVerdict,
}

fn log_doubling_ratio(g: &ModerateFunction, t: f64) -> f64 {
    g.ln_value(2.0 * t) - g.ln_value(t)
}

/// Max of `G(2t)/G(t)` over the grid, with the analytic supremum when known.
pub fn doubling_ratio_sup(g: &ModerateFunction, grid: &GridSpec) -> Result<DoublingAudit> {
    grid.validate()?;
    let mut best = (f64::NEG_INFINITY, grid.t_min);
    let mut violations = 0;
    for t in grid.values() {
        let lr = log_doubling_ratio(g, t);
        let lr = if lr.is_nan() { f64::INFINITY } else { lr };
        if lr > best.0 {
            best = (lr, t);
        }
        if let Some(c) = g.claimed_doubling {
            if lr > c.ln() + 1e-12 {
                violations += 1;
            }
        }
    }
    let verdict = is_moderate_numeric(g, grid, DEFAULT_GROWTH_THRESHOLD)?;
    Ok(DoublingAudit {
        name: g.name.clone(),
        grid: *grid,
        ratio_max: best.0.exp(),
        argmax: best.1,
        analytic_sup: g.analytic_doubling_sup(),
        claimed_doubling: g.claimed_doubling,
        claim_violations: violations,
        verdict,
    })
}

/// Evidence verdict: non-moderate iff the largest doubling ratio within a
/// decade of `t` grows by at least `growth_threshold` from one populated
/// decade to the next.
pub fn is_moderate_numeric(
    g: &ModerateFunction,
    grid: &GridSpec,
    growth_threshold: f64,
) -> Result<ModerationVerdict> {
    grid.validate()?;
    if !(growth_threshold > 1.0) {
        return Err(Error::Domain(format!(
            "growth threshold must exceed 1, got {growth_threshold}"
        )));
    }
    let mut decades: Vec<(i64, f64)> = Vec::new();
    for t in grid.values().into_iter().filter(|t| *t > 0.0) {
        let d = t.log10().floor() as i64;
        let lr = log_doubling_ratio(g, t);
        let lr = if lr.is_nan() { f64::INFINITY } else { lr };
        match decades.last_mut() {
            Some((dd, m)) if *dd == d => *m = m.max(lr),
            _ => decades.push((d, lr)),
        }
    }
    let jump = growth_threshold.ln();
    let grows = decades.windows(2).any(|w| {
        let (a, b) = (w[0].1, w[1].1);
        b.is_infinite() || b - a >= jump
    });
    Ok(if grows {
        ModerationVerdict::NonModerateEvidence
    } else {
        ModerationVerdict::ModerateConsistent
    })
}

/// Numerical check that `G(t)/t^(p+1)` is integrable at infinity: the local
/// log-log slope of the summand must stay below `-1` far out.
pub fn tail_condition_holds<G: Growth + ?Sized>(g: &G, p: u32) -> bool {
    let exponent = f64::from(p) + 1.0;
    let ln_f = |k: f64| g.value(k).ln() - exponent * k.ln();
    [20, 40].iter().all(|&e| {
        let k = 2f64.powi(e);
        let slope = (ln_f(2.0 * k) - ln_f(k)) / std::f64::consts::LN_2;
        slope.is_finite() && slope < -1.0 - 1e-3
    })
}

const MAX_P: u32 = 64;

/// Smallest integer `p >= 1` for which the tail condition holds.
pub fn smallest_admissible_p<G: Growth + ?Sized>(g: &G) -> Option<u32> {
    (1..=MAX_P).find(|&p| tail_condition_holds(g, p))
}

const DIRECT_TERMS: u64 = 20_000;

/// `n^p * sum_{k >= n} G(k) k^-(p+1)`.
///
/// Summed directly over the first terms; the remainder uses the midpoint
/// Euler-Maclaurin form `int_{K-1/2}^inf f + f'(K-1/2)/24`.
pub fn h_majorant<G: Growth + ?Sized>(g: &G, p: u32, n: u64) -> Result<f64> {
    if p == 0 || n == 0 {
        return Err(Error::Domain(format!(
            "p and n must be positive (p={p}, n={n})"
        )));
    }
    if !tail_condition_holds(g, p) {
        return Err(Error::ConditionViolation {
            p,
            smallest_admissible: smallest_admissible_p(g),
        });
    }
    let exponent = f64::from(p) + 1.0;
    let f = |x: f64| g.value(x) * x.powf(-exponent);
    let k_end = n + DIRECT_TERMS;
    let head = compensated_sum((n..k_end).map(|k| f(k as f64)));
    let x0 = k_end as f64 - 0.5;
    let tail_integral = match integrate_to_infinity(f, x0, 1e-12) {
        Integral::Finite(v) => v,
        Integral::Divergent { .. } => {
            return Err(Error::ConditionViolation {
                p,
                smallest_admissible: smallest_admissible_p(g),
            })
        }
    };
    let h = 1e-3 * x0;
    let slope = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
    let total = head + tail_integral + slope / 24.0;
    let scale = (n as f64).powi(p as i32);
    let out = scale * total;
    if !out.is_finite() {
        return Err(Error::Precision(format!(
            "h-majorant overflowed at n={n}, p={p}"
        )));
    }
    Ok(out)
}

/// Smallest `c` such that `c G(n) >= h_majorant(G, p, n)` on the integer
/// points of `grid`.
pub fn h_scaling_constant(g: &ModerateFunction, p: u32, grid: &GridSpec) -> Result<f64> {
    grid.validate()?;
    let mut ns: Vec<u64> = grid
        .values()
        .iter()
        .map(|t| t.round().max(1.0) as u64)
        .collect();
    ns.dedup();
    let mut best: f64 = 0.0;
    for n in ns {
        let ratio = h_majorant(g, p, n)? / g.value(n as f64);
        best = best.max(ratio);
    }
    Ok(best)
}

/// Search options for [`counterexample_sequence_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleSearch {
    pub count: usize,
    pub search_limit: f64,
    /// First grid point.
    pub start: f64,
    /// Geometric grid ratio.
    pub ratio: f64,
}

impl CounterexampleSearch {
    pub fn new(count: usize, search_limit: f64) -> Self {
        Self {
            count,
            search_limit,
            start: 1e-3,
            ratio: 1.01,
        }
    }

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.ratio = ratio;
        self
    }
}

/// Increasing `t_1 < t_2 < ...` with `G(2 t_n) >= n G(t_n)`, each grid-minimal.
pub fn counterexample_sequence(
    g: &ModerateFunction,
    count: usize,
    search_limit: f64,
) -> Result<Vec<f64>> {
    counterexample_sequence_with(g, &CounterexampleSearch::new(count, search_limit))
}

pub fn counterexample_sequence_with(
    g: &ModerateFunction,
    opts: &CounterexampleSearch,
) -> Result<Vec<f64>> {
    if opts.count == 0 {
        return Err(Error::Domain("count must be positive".into()));
    }
    if !(opts.ratio > 1.0 && opts.start > 0.0 && opts.search_limit > opts.start) {
        return Err(Error::Domain(format!(
            "invalid search grid: start={}, ratio={}, limit={}",
            opts.start, opts.ratio, opts.search_limit
        )));
    }
    let ln_ratio = opts.ratio.ln();
    let mut out = Vec::with_capacity(opts.count);
    let mut k: u64 = 0;
    let mut prev = 0.0;
    for n in 1..=opts.count {
        let need = n as f64;
        loop {
            let t = opts.start * (k as f64 * ln_ratio).exp();
            if t > opts.search_limit {
                return Err(Error::NotFound {
                    failed_at: n,
                    last_achieved: n - 1,
                });
            }
            k += 1;
            if t <= prev {
                continue;
            }
            let (g1, g2) = (g.value(t), g.value(2.0 * t));
            if !g2.is_finite() {
                return Err(Error::Precision(format!(
                    "G(2t) overflowed at t = {t} while searching index {n}"
                )));
            }
            if g2 >= need * g1 {
                out.push(t);
                prev = t;
                break;
            }
        }
    }
    Ok(out)
}
