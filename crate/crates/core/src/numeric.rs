//! Small numerical kernels shared by the simulation and audit modules.

use quadrature::double_exponential;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Sample mean and standard error of the mean, in input order.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    let var = ss / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Standard error of a binomial proportion estimate.
pub fn proportion_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// Outcome of an integral whose finiteness is not known in advance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integral {
    Finite(f64),
    /// Partial integrals kept growing past the panel budget, or the integrand
    /// became non-finite.
    Divergent {
        partial: f64,
    },
}

/// Integral of a smooth function on a finite interval with relative tolerance.
pub fn integrate_finite<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let coarse = double_exponential::integrate(&f, a, b, 1e-6).integral;
    let target = (coarse.abs() * rel_tol).max(1e-300);
    double_exponential::integrate(&f, a, b, target).integral
}

const MAX_PANELS: usize = 240;

/// Integral of `f` over `[lo, inf)`.
///
/// The half line is cut into panels `[lo e^k, lo e^(k+1)]` (after a linear
/// panel on `[0, 1]` when `lo = 0`). Marching stops once two consecutive
/// panels contribute less than `rel_tol * 1e-4` of the running total.
/// Exhausting the panel budget or meeting a non-finite value is reported as
/// divergence.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, lo: f64, rel_tol: f64) -> Integral {
    let mut total = CompensatedSum::new();
    let mut start = lo;
    if lo <= 0.0 {
        let head = integrate_finite(&f, 0.0, 1.0, rel_tol * 1e-3);
        if !head.is_finite() {
            return Integral::Divergent {
                partial: f64::INFINITY,
            };
        }
        total.add(head);
        start = 1.0;
    }
    let stop = rel_tol * 1e-4;
    let mut quiet = 0;
    for k in 0..MAX_PANELS {
        let a = start * (k as f64).exp();
        let b = start * ((k + 1) as f64).exp();
        let piece = integrate_finite(&f, a, b, rel_tol * 1e-3);
        if !piece.is_finite() {
            return Integral::Divergent {
                partial: f64::INFINITY,
            };
        }
        total.add(piece);
        let t = total.value();
        if !t.is_finite() || t > 1e300 {
            return Integral::Divergent { partial: t };
        }
        if piece.abs() <= stop * t.abs() {
            quiet += 1;
            if quiet >= 2 {
                return Integral::Finite(t);
            }
        } else {
            quiet = 0;
        }
    }
    Integral::Divergent {
        partial: total.value(),
    }
}

/// `P[|(K v1 + (n-K) v0)/n - center| >= a]` for `K ~ Binomial(n, p)`.
///
/// The event is `K <= k_lo` or `K >= k_hi`. Each run is summed outward from
/// its boundary in log space and stopped once the terms are decreasing and
/// negligible, so the cost is proportional to the width of the tails rather
/// than to `n`.
pub fn binomial_mean_tail(n: u64, p: f64, v0: f64, v1: f64, center: f64, a: f64) -> f64 {
    let nf = n as f64;
    let hit = |k: u64| {
        let s = k as f64 * v1 + (n - k) as f64 * v0;
        ((s / nf) - center).abs() >= a
    };
    if p <= 0.0 || p >= 1.0 || v0 == v1 {
        let k = if p >= 1.0 { n } else { 0 };
        return if hit(k) { 1.0 } else { 0.0 };
    }
    // hits form the complement of an interval in k; locate its ends
    let slope = (v1 - v0) / nf;
    let kp = (center + a - v0) / slope;
    let km = (center - a - v0) / slope;
    let (ka, kb) = (kp.min(km), kp.max(km));
    let clamp = |x: f64| x.clamp(-1.0, nf + 1.0);
    let mut lo_end = clamp(ka.floor()) as i64; // last hit of the lower run
    while lo_end >= 0 && !hit(lo_end as u64) {
        lo_end -= 1;
    }
    while lo_end < n as i64 && hit((lo_end + 1) as u64) {
        lo_end += 1;
    }
    let mut hi_start = clamp(kb.ceil()).max(lo_end as f64 + 1.0) as i64; // first hit of the upper run
    while hi_start <= n as i64 && !hit(hi_start as u64) {
        hi_start += 1;
    }
    while hi_start - 1 > lo_end && hit((hi_start - 1) as u64) {
        hi_start -= 1;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let ln_pmf = |k: u64| {
        let kf = k as f64;
        libm::lgamma(nf + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(nf - kf + 1.0)
            + kf * lp
            + (nf - kf) * lq
    };
    let odds = (p / (1.0 - p)).ln();
    let run = |start: u64, count: u64, upward: bool| {
        let mut acc = CompensatedSum::new();
        let mut ln_t = ln_pmf(start);
        let mut prev = f64::INFINITY;
        let mut k = start;
        for _ in 0..count {
            let t = ln_t.exp();
            acc.add(t);
            if t < prev && t <= 1e-18 * acc.value() {
                break;
            }
            prev = t;
            if upward {
                ln_t += ((n - k) as f64 / (k + 1) as f64).ln() + odds;
                k += 1;
            } else {
                ln_t += (k as f64 / (n - k + 1) as f64).ln() - odds;
                k = k.wrapping_sub(1);
            }
        }
        acc.value()
    };
    let mut total = 0.0;
    if lo_end >= 0 {
        total += run(lo_end as u64, lo_end as u64 + 1, false);
    }
    if hi_start <= n as i64 {
        total += run(hi_start as u64, n - hi_start as u64 + 1, true);
    }
    total.clamp(0.0, 1.0)
}

/// `P[|N(0, sigma^2)| >= t]`.
pub fn gaussian_two_sided_tail(sigma: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    libm::erfc(t / (sigma * std::f64::consts::SQRT_2))
}

/// n-th harmonic number.
pub fn harmonic(n: u64) -> f64 {
    compensated_sum((1..=n).map(|k| 1.0 / k as f64))
}
