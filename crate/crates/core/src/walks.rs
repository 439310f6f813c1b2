//! Unit-rate simple random walks, speed records and their tail bounds.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::gamma_lr;
use thiserror::Error;

use crate::dist::CountDistribution;
use crate::rng::{open01, stream, tag, RngStream};

#[derive(Debug, Error)]
pub enum WalksError {
    #[error("speed threshold A must exceed 1, got {0}")]
    BadThreshold(f64),
    #[error("epsilon must lie in (0,1), got {0}")]
    BadEpsilon(f64),
    #[error("c_eps = {c_eps} is not below 1; the gap bound is unavailable")]
    CEpsNotContractive { c_eps: f64 },
}

/// Walk on `Z^d` jumping at total rate 1 to a uniform nearest neighbour.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WalkLaw {
    pub dimension: u32,
    pub rate: f64,
}

impl WalkLaw {
    pub fn new(dimension: u32) -> Self {
        assert!(dimension >= 1);
        WalkLaw {
            dimension,
            rate: 1.0,
        }
    }

    pub fn holding_time<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        -open01(rng.next_u64()).ln() / self.rate
    }

    /// Axis index and sign of one jump.
    pub fn step<R: RngCore + ?Sized>(&self, rng: &mut R) -> (usize, i64) {
        let r = rng.random_range(0..2 * self.dimension as usize);
        (r / 2, if r % 2 == 0 { 1 } else { -1 })
    }
}

fn exp1<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    -open01(rng.next_u64()).ln()
}

fn pm1<R: RngCore + ?Sized>(rng: &mut R) -> i64 {
    if rng.next_u64() >> 63 == 0 {
        1
    } else {
        -1
    }
}

fn check_eps(eps: f64) -> Result<(), WalksError> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(WalksError::BadEpsilon(eps))
    }
}

fn eps_of(a: f64) -> Result<f64, WalksError> {
    if a > 1.0 && a.is_finite() {
        Ok(1.0 / a)
    } else {
        Err(WalksError::BadThreshold(a))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    /// True when the raw upper expression exceeded 1 and was clamped.
    pub clamped: bool,
}

/// Bracket on `P(exists t: S_t/t >= 1/eps, S_t >= n)` for the walk on Z.
pub fn speed_tail_bounds(n: u64, eps: f64) -> Result<Bracket, WalksError> {
    check_eps(eps)?;
    let nf = n.max(1) as f64;
    let x = eps * (1.0 - eps).exp();
    let ln_lower = nf * eps.ln() + (1.0 - eps) * nf - 1.0 - nf * 2f64.ln() - 0.5 * nf.ln();
    let ln_upper = nf * x.ln() - (1.0 - eps).ln() - (1.0 - x).ln() - 0.5 * nf.ln();
    let upper = ln_upper.exp();
    Ok(Bracket {
        lower: ln_lower.exp(),
        upper: upper.min(1.0),
        clamped: upper > 1.0,
    })
}

/// `P(rho_A >= n) <= (eps e^{1-eps})^n`, or 1 where that bound is not
/// established.
pub fn rho_tail_bound(n: u64, a: f64) -> Result<f64, WalksError> {
    let eps = eps_of(a)?;
    let x = eps * (1.0 - eps).exp();
    let nf = n as f64;
    if (1.0 - eps) * (1.0 - x) * (2.0 * std::f64::consts::PI * nf).sqrt() <= 1.0 {
        return Ok(1.0);
    }
    Ok((nf * x.ln()).exp())
}

/// `P(tau_m <= m eps)` for the `m`-th jump time of a unit-rate process.
pub fn erlang_tail(m: u64, eps: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if eps <= 0.0 {
        return 0.0;
    }
    gamma_lr(m as f64, m as f64 * eps)
}

/// Jump count after which a further record has probability below
/// `budget`.
pub fn record_horizon(a: f64, budget: f64) -> Result<u64, WalksError> {
    eps_of(a)?;
    let mut n = 1u64;
    while rho_tail_bound(n + 1, a)? >= budget {
        n += 1;
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpeedRecord {
    pub a: f64,
    pub value: u64,
    /// Bound on the probability that the true record exceeds `value`.
    pub confidence: f64,
    /// Jumps simulated per walk.
    pub horizon: u64,
    pub walks: u64,
}

/// Furthest point reached at some time `t` with `S_t / t >= A`, for one
/// walk observed over its first `jumps` jumps.  Also returns the value seen
/// within the first `checkpoint` jumps.
fn ell_one<R: RngCore + ?Sized>(eps: f64, jumps: u64, checkpoint: u64, rng: &mut R) -> (u64, u64) {
    let (mut t, mut s, mut best, mut early) = (0.0, 0i64, 0u64, 0u64);
    for j in 1..=jumps {
        t += exp1(rng);
        s += pm1(rng);
        if s > best as i64 && t <= eps * s as f64 {
            best = s as u64;
        }
        if j == checkpoint {
            early = best;
        }
    }
    (early, best)
}

/// Largest `n <= jumps` with `theta_n <= eps n`.
fn w_one<R: RngCore + ?Sized>(eps: f64, jumps: u64, rng: &mut R) -> u64 {
    let (mut t, mut best) = (0.0, 0u64);
    for j in 1..=jumps {
        t += exp1(rng);
        if t <= eps * j as f64 {
            best = j;
        }
    }
    best
}

/// Max of `eta` independent one-dimensional speed records.
pub fn ell_a_sample(
    eta: u64,
    a: f64,
    tol: f64,
    rng: &mut RngStream,
) -> Result<SpeedRecord, WalksError> {
    let eps = eps_of(a)?;
    if eta == 0 {
        return Ok(SpeedRecord {
            a,
            value: 0,
            confidence: 0.0,
            horizon: 0,
            walks: 0,
        });
    }
    let horizon = record_horizon(a, tol / eta as f64)?;
    let value = (0..eta)
        .map(|_| ell_one(eps, horizon, horizon, rng).1)
        .max()
        .unwrap_or(0);
    Ok(SpeedRecord {
        a,
        value,
        confidence: eta as f64 * rho_tail_bound(horizon + 1, a)?,
        horizon,
        walks: eta,
    })
}

/// Record at the usual horizon and at `factor` times it, on one stream.
pub fn ell_a_horizon_pair(
    eta: u64,
    a: f64,
    tol: f64,
    factor: u64,
    rng: &mut RngStream,
) -> Result<(u64, u64), WalksError> {
    let eps = eps_of(a)?;
    if eta == 0 {
        return Ok((0, 0));
    }
    let horizon = record_horizon(a, tol / eta as f64)?;
    let mut pair = (0, 0);
    for _ in 0..eta {
        let (e, l) = ell_one(eps, horizon * factor, horizon, rng);
        pair = (pair.0.max(e), pair.1.max(l));
    }
    Ok(pair)
}

/// Max over `eta` walks of `max{n : theta_n / n <= 1/A}`.
pub fn w_a_sample(
    eta: u64,
    a: f64,
    tol: f64,
    rng: &mut RngStream,
) -> Result<SpeedRecord, WalksError> {
    let eps = eps_of(a)?;
    if eta == 0 {
        return Ok(SpeedRecord {
            a,
            value: 0,
            confidence: 0.0,
            horizon: 0,
            walks: 0,
        });
    }
    let horizon = record_horizon(a, tol / eta as f64)?;
    let value = (0..eta)
        .map(|_| w_one(eps, horizon, rng))
        .max()
        .unwrap_or(0);
    Ok(SpeedRecord {
        a,
        value,
        confidence: eta as f64 * rho_tail_bound(horizon + 1, a)?,
        horizon,
        walks: eta,
    })
}

/// Bracket on `r_n^(A) = P(max of eta records >= n)` with `eta ~ mu`.
pub fn r_a_bracket(n: u64, mu: &CountDistribution, a: f64) -> Result<Bracket, WalksError> {
    let eps = eps_of(a)?;
    let b = speed_tail_bounds(n, eps)?;
    let lo = mu.one_minus_pgf(b.lower);
    let hi = mu.one_minus_pgf(b.upper);
    Ok(Bracket {
        lower: lo.lower,
        upper: hi.upper.min(1.0),
        clamped: b.clamped,
    })
}

/// Mass of `[-1, 1]` under the standard normal law.
pub fn u_const() -> f64 {
    erf(std::f64::consts::FRAC_1_SQRT_2)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GapBound {
    pub q: f64,
    pub c_eps: f64,
    pub u: f64,
    pub value: f64,
}

/// `P(sigma_x - sigma_{x-1} >= q) <= c_eps^{sqrt q}`, meant for large `q`.
pub fn gap_tail_bound(q: f64, mu: &CountDistribution, eps: f64) -> Result<GapBound, WalksError> {
    if !(eps > 0.0) {
        return Err(WalksError::BadEpsilon(eps));
    }
    let u = u_const();
    let s = (1.0 + eps) * u;
    if s >= 1.0 {
        return Err(WalksError::CEpsNotContractive {
            c_eps: f64::INFINITY,
        });
    }
    let c_eps = mu.pgf(s);
    if c_eps >= 1.0 {
        return Err(WalksError::CEpsNotContractive { c_eps });
    }
    Ok(GapBound {
        q,
        c_eps,
        u,
        value: c_eps.powf(q.max(0.0).sqrt()),
    })
}

/// Parallel Monte Carlo over `trials`, one derived stream per chunk so
/// results do not depend on the thread count.
pub fn monte_carlo<T, F>(trials: u64, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngStream) -> T + Sync,
{
    const CHUNK: u64 = 1 << 14;
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream(seed, &[tag::TRIAL, c]);
            let n = CHUNK.min(trials - c * CHUNK);
            (0..n).map(|_| f(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: u64,
    pub lower: f64,
    pub upper: f64,
    pub empirical: f64,
    pub stderr: f64,
}

/// Bounds and a simulated frequency of the speed event for each `n`.
pub fn bounds_table(
    eps: f64,
    ns: &[u64],
    trials: u64,
    seed: u64,
) -> Result<Vec<BoundRow>, WalksError> {
    check_eps(eps)?;
    let a = 1.0 / eps;
    let horizon = record_horizon(a, 1e-12)?;
    let records = monte_carlo(trials, seed, |rng| ell_one(eps, horizon, horizon, rng).1);
    ns.iter()
        .map(|&n| {
            let b = speed_tail_bounds(n, eps)?;
            let p = records.iter().filter(|&&r| r >= n).count() as f64 / trials as f64;
            Ok(BoundRow {
                n,
                lower: b.lower,
                upper: b.upper,
                empirical: p,
                stderr: (p * (1.0 - p) / trials as f64).sqrt(),
            })
        })
        .collect()
}

/// `max{n <= horizon : theta_n <= eps n}` for one walk.
pub fn w_record(eps: f64, horizon: u64, rng: &mut RngStream) -> u64 {
    w_one(eps, horizon, rng)
}

/// Simulate one speed record `ell^(A)`; exposed for percolation sources.
pub fn ell_record(eps: f64, horizon: u64, rng: &mut RngStream) -> u64 {
    ell_one(eps, horizon, horizon, rng).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DistSpec;

    fn three_sigma(p: f64, n: u64) -> f64 {
        3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn bound_values() {
        let b = speed_tail_bounds(1, 0.5).unwrap();
        let lower = 0.5 * 0.5f64.exp() / (std::f64::consts::E * 2.0);
        assert!((b.lower - lower).abs() < 1e-12);
        assert!((b.lower - 0.151633).abs() < 1e-6);
        assert!(b.clamped && b.upper == 1.0);
        let raw = 0.5 * 0.5f64.exp() / (0.5 * (1.0 - 0.5 * 0.5f64.exp()));
        assert!(raw > 9.3 && raw < 9.4);
        let r = rho_tail_bound(50, 2.0).unwrap();
        assert!((r - (0.5 * 0.5f64.exp()).powi(50)).abs() < 1e-15);
        assert_eq!(rho_tail_bound(5, 2.0).unwrap(), 1.0);
        assert!(rho_tail_bound(10, 1e6).unwrap() < 1e-50);
    }

    #[test]
    fn erlang_values() {
        assert!((erlang_tail(1, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        let v = erlang_tail(10, 0.5);
        // Poisson(5) upper tail from 10 on, summed directly
        let mut term = (-5.0f64).exp();
        let mut below = 0.0;
        for i in 0..10 {
            if i > 0 {
                term *= 5.0 / i as f64;
            }
            below += term;
        }
        assert!((v - (1.0 - below)).abs() < 1e-12);
        let x = 0.5 * 0.5f64.exp();
        assert!(v <= x.powi(10) / (0.5 * (2.0 * std::f64::consts::PI * 10.0).sqrt()));
        let mc = monte_carlo(1_000_000, 3, |rng| {
            (0..10).map(|_| exp1(rng)).sum::<f64>() <= 5.0
        });
        let p = mc.iter().filter(|b| **b).count() as f64 / 1e6;
        assert!((p - v).abs() < three_sigma(v, 1_000_000));
    }

    #[test]
    fn erlang_monotonicity() {
        for m in 1..30u64 {
            for i in 1..20 {
                let e = i as f64 / 20.0;
                assert!(erlang_tail(m, e) <= erlang_tail(m, e + 0.05) + 1e-15);
            }
            assert!(erlang_tail(m + 1, 0.5) <= erlang_tail(m, 0.5) + 1e-15);
        }
    }

    #[test]
    fn speed_event_within_bounds() {
        let rows = bounds_table(0.3, &[4, 5, 6, 7, 8, 9, 10], 1_000_000, 11).unwrap();
        for r in rows {
            assert!(r.lower <= r.upper);
            assert!(r.empirical >= r.lower - 3.0 * r.stderr, "{r:?}");
            assert!(r.empirical <= r.upper + 3.0 * r.stderr, "{r:?}");
        }
    }

    #[test]
    fn rho_empirical_below_bound() {
        let horizon = record_horizon(2.0, 1e-12).unwrap();
        let rho = monte_carlo(1_000_000, 5, |rng| w_one(0.5, horizon, rng));
        for n in [20u64, 30, 40] {
            let p = rho.iter().filter(|&&r| r >= n).count() as f64 / 1e6;
            assert!(p <= rho_tail_bound(n, 2.0).unwrap(), "n={n} p={p}");
        }
    }

    #[test]
    fn degenerate_records() {
        let mut rng = stream(1, &[0]);
        assert_eq!(ell_a_sample(0, 2.0, 1e-6, &mut rng).unwrap().value, 0);
        assert_eq!(w_a_sample(0, 2.0, 1e-6, &mut rng).unwrap().value, 0);
        let zeros = (0..10_000)
            .filter(|_| ell_a_sample(1, 1e3, 1e-6, &mut rng).unwrap().value == 0)
            .count();
        assert!(zeros as f64 >= 0.999 * 10_000.0 - 3.0 * (10_000.0f64 * 0.001).sqrt());
        let rec = ell_a_sample(7, 2.0, 1e-6, &mut rng).unwrap();
        assert!(rec.confidence <= 1e-6);
    }

    #[test]
    fn horizon_extension_rarely_matters() {
        let changed = monte_carlo(10_000, 9, |rng| {
            let (a, b) = ell_a_horizon_pair(3, 2.0, 1e-3, 10, rng).unwrap();
            a != b
        });
        let frac = changed.iter().filter(|c| **c).count() as f64 / 1e4;
        assert!(frac <= 2e-3, "{frac}");
    }

    #[test]
    fn r_a_bracket_examples() {
        let zero = CountDistribution::new_allowing_zero(DistSpec::Delta { m: 0 }).unwrap();
        let b = r_a_bracket(3, &zero, 2.0).unwrap();
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
        let one = CountDistribution::delta(1);
        let b = r_a_bracket(1, &one, 2.0).unwrap();
        let s = speed_tail_bounds(1, 0.5).unwrap();
        assert!((b.lower - s.lower).abs() < 1e-12);
        let big = r_a_bracket(3, &one, 1e4).unwrap();
        let bigger = r_a_bracket(3, &one, 1e8).unwrap();
        assert!(bigger.upper < big.upper && bigger.upper < 1e-20);
    }

    #[test]
    fn r_a_bracket_contains_empirical_tail() {
        let mu = CountDistribution::geometric(0.5);
        let a = 2.0;
        let tol = 1e-9;
        let samples = monte_carlo(100_000, 17, |rng| {
            let eta = mu.sample(rng);
            ell_a_sample(eta, a, tol, rng).unwrap().value
        });
        for n in 1..=8u64 {
            let p = samples.iter().filter(|&&v| v >= n).count() as f64 / 1e5;
            let b = r_a_bracket(n, &mu, a).unwrap();
            let slack = three_sigma(p.max(1e-5), 100_000);
            assert!(
                p >= b.lower - slack && p <= b.upper + slack,
                "n={n} p={p} {b:?}"
            );
        }
    }

    #[test]
    fn gap_bound_examples() {
        let one = CountDistribution::delta(1);
        let g = gap_tail_bound(100.0, &one, 0.01).unwrap();
        assert!((g.u - 0.682689).abs() < 1e-6);
        assert!((g.c_eps - 1.01 * g.u).abs() < 1e-12);
        assert!((g.value - g.c_eps.powi(10)).abs() < 1e-12);
        assert!((g.value - 0.0243).abs() < 5e-4);
        assert!(matches!(
            gap_tail_bound(100.0, &one, 0.5),
            Err(WalksError::CEpsNotContractive { .. })
        ));
    }

    #[test]
    fn w_a_tail_below_mixture_bound() {
        let mu = CountDistribution::geometric(0.5);
        let samples = monte_carlo(200_000, 23, |rng| {
            let eta = mu.sample(rng);
            w_a_sample(eta, 2.0, 1e-9, rng).unwrap().value
        });
        let x = 0.5 * 0.5f64.exp();
        for n in 5..=20u64 {
            let p = samples.iter().filter(|&&v| v >= n).count() as f64 / 2e5;
            let bound: f64 = (0..200u64)
                .map(|k| mu.pmf(k) * (k as f64 * x.powi(n as i32)).min(1.0))
                .sum();
            assert!(p <= bound, "n={n} p={p} bound={bound}");
        }
    }

    #[test]
    fn w_a_matches_rho_in_law() {
        // rho through its Poisson-count description: tau_n <= n eps iff at
        // least n jumps fall in [0, n eps]; times are sorted uniforms given
        // the count on a fixed window.
        let horizon = record_horizon(2.0, 1e-9).unwrap();
        let window = horizon as f64 * 0.5;
        let rho = monte_carlo(100_000, 29, |rng| {
            let mut times = Vec::new();
            let mut t = 0.0;
            loop {
                t += exp1(rng);
                if t > window {
                    break;
                }
                times.push(rng.random::<f64>() * window);
            }
            times.sort_by(f64::total_cmp);
            (1..=times.len())
                .filter(|&n| times[n - 1] <= 0.5 * n as f64)
                .max()
                .unwrap_or(0) as u64
        });
        let w = monte_carlo(100_000, 31, |rng| {
            w_a_sample(1, 2.0, 1e-9, rng).unwrap().value
        });
        for n in 0..8u64 {
            let p = rho.iter().filter(|&&v| v >= n).count() as f64 / 1e5;
            let q = w.iter().filter(|&&v| v >= n).count() as f64 / 1e5;
            let s = (p * (1.0 - p) / 1e5).sqrt() * 2f64.sqrt();
            assert!((p - q).abs() <= 4.0 * s + 1e-4, "n={n} {p} {q}");
        }
    }
}
