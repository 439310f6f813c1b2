//! Particle-count laws on the non-negative integers.
//!
//! Heavy-tailed families are defined through their tail `T(k) = mu([k, inf))`
//! and the mass function is obtained by differencing, so every consumer that
//! only needs tails never sees normalisation drift.

use std::f64::consts::E;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;
use thiserror::Error;

use crate::classifier::SeriesVerdict;
use crate::rng::open01;

#[derive(Debug, Error)]
pub enum DistError {
    #[error("mu(0) = 1 leaves no particles anywhere; such a law is rejected")]
    TrivialAtZero,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot read tabulated law: {0}")]
    Io(String),
}

/// JSON form of a law, e.g. `{"kind":"delta","m":1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    Delta {
        m: u64,
    },
    Geometric {
        p: f64,
    },
    Poisson {
        lambda: f64,
    },
    PowerLogTail {
        a: f64,
        c: f64,
    },
    LogLogTail {
        c: f64,
    },
    Tabulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pmf: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        continuation: Option<Box<DistSpec>>,
    },
}

#[derive(Clone, Debug)]
pub enum Family {
    Delta { m: u64 },
    Geometric { p: f64 },
    Poisson { lambda: f64 },
    PowerLogTail { a: f64, c: f64 },
    LogLogTail { c: f64 },
    Tabulated(Table),
}

/// A finite table of masses, optionally continued by an analytic tail that
/// carries the leftover mass `rest`.
#[derive(Clone, Debug)]
pub struct Table {
    pub pmf: Vec<f64>,
    /// `suffix[k] = sum_{j >= k} pmf[j] + rest`, with `suffix[0] = 1`.
    suffix: Vec<f64>,
    pub rest: f64,
    pub continuation: Option<Box<CountDistribution>>,
}

#[derive(Clone, Debug)]
pub struct CountDistribution {
    pub family: Family,
    /// True when mu(0) < 1; construction refuses anything else.
    pub support_note: bool,
    spec: DistSpec,
}

/// Bracket on `1 - E[s^eta]` for `s = 1 - q`.
#[derive(Clone, Copy, Debug)]
pub struct PgfGap {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogMoment {
    pub partial: f64,
    pub tail_bound: f64,
    pub verdict: SeriesVerdict,
}

const EXACT_LN_LIMIT: f64 = 36.0;

impl CountDistribution {
    pub fn new(spec: DistSpec) -> Result<Self, DistError> {
        Self::build(spec, None, false)
    }

    /// Like [`CountDistribution::new`] but admits `mu(0) = 1`, which is a
    /// legitimate grain-length law in percolation.
    pub fn new_allowing_zero(spec: DistSpec) -> Result<Self, DistError> {
        Self::build(spec, None, true)
    }

    /// Resolve a spec whose tabulated `path` is relative to `base`.
    pub fn from_spec_in(spec: DistSpec, base: &Path) -> Result<Self, DistError> {
        Self::build(spec, Some(base), false)
    }

    pub fn from_json(text: &str) -> Result<Self, DistError> {
        let spec: DistSpec =
            serde_json::from_str(text).map_err(|e| DistError::InvalidParameter(e.to_string()))?;
        Self::new(spec)
    }

    pub fn delta(m: u64) -> Self {
        Self::new(DistSpec::Delta { m }).expect("delta law")
    }

    pub fn geometric(p: f64) -> Self {
        Self::new(DistSpec::Geometric { p }).expect("geometric law")
    }

    pub fn poisson(lambda: f64) -> Self {
        Self::new(DistSpec::Poisson { lambda }).expect("poisson law")
    }

    pub fn power_log_tail(a: f64, c: f64) -> Self {
        Self::new(DistSpec::PowerLogTail { a, c }).expect("power-log law")
    }

    pub fn log_log_tail(c: f64) -> Self {
        Self::new(DistSpec::LogLogTail { c }).expect("log-log law")
    }

    fn build(spec: DistSpec, base: Option<&Path>, allow_zero: bool) -> Result<Self, DistError> {
        let bad = |s: &str| Err(DistError::InvalidParameter(s.to_string()));
        let family = match &spec {
            DistSpec::Delta { m } => Family::Delta { m: *m },
            DistSpec::Geometric { p } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return bad("geometric p must lie in (0,1)");
                }
                Family::Geometric { p: *p }
            }
            DistSpec::Poisson { lambda } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return bad("poisson lambda must be positive");
                }
                Family::Poisson { lambda: *lambda }
            }
            DistSpec::PowerLogTail { a, c } => {
                if !(a.is_finite() && *a > 0.0 && c.is_finite() && *c > 0.0) {
                    return bad("power-log tail needs a > 0 and c > 0");
                }
                Family::PowerLogTail { a: *a, c: *c }
            }
            DistSpec::LogLogTail { c } => {
                if !(c.is_finite() && *c > 0.0) {
                    return bad("log-log tail needs c > 0");
                }
                Family::LogLogTail { c: *c }
            }
            DistSpec::Tabulated {
                pmf,
                path,
                continuation,
            } => {
                let masses = match (pmf, path) {
                    (Some(p), None) => p.clone(),
                    (None, Some(p)) => read_pmf_csv(&base.map_or_else(|| p.into(), |b| b.join(p)))?,
                    _ => return bad("tabulated law needs exactly one of pmf or path"),
                };
                let cont = match continuation {
                    Some(c) => Some(Box::new(Self::build((**c).clone(), base, allow_zero)?)),
                    None => None,
                };
                Family::Tabulated(Table::new(masses, cont)?)
            }
        };
        let d = CountDistribution {
            family,
            support_note: true,
            spec,
        };
        if d.tail(1) <= 0.0 && !allow_zero {
            return Err(DistError::TrivialAtZero);
        }
        Ok(d)
    }

    pub fn spec(&self) -> &DistSpec {
        &self.spec
    }

    /// `mu([k, inf))`.
    pub fn tail(&self, k: u64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match &self.family {
            Family::Delta { m } => {
                if k <= *m {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Geometric { p } => ((1.0 - p).ln() * k as f64).exp(),
            Family::Poisson { lambda } => poisson_tail(k, *lambda),
            Family::PowerLogTail { a, c } => (c / (k as f64 + E).ln().powf(*a)).min(1.0),
            Family::LogLogTail { c } => (c / (k as f64 + E.exp()).ln().ln()).min(1.0),
            Family::Tabulated(t) => t.tail(k),
        }
    }

    /// Tail at `ceil(exp(ln_k))`, usable when the argument itself overflows.
    pub fn tail_ln(&self, ln_k: f64) -> f64 {
        if ln_k <= 0.0 {
            return self.tail(1);
        }
        if ln_k < EXACT_LN_LIMIT {
            return self.tail(ceil_snapped(ln_k.exp()));
        }
        match &self.family {
            Family::Delta { .. } | Family::Poisson { .. } => 0.0,
            Family::Geometric { p } => ((1.0 - p).ln() * ln_k.exp()).exp(),
            Family::PowerLogTail { a, c } => (c / ln_k.powf(*a)).min(1.0),
            Family::LogLogTail { c } => (c / ln_k.ln()).min(1.0),
            Family::Tabulated(t) => match &t.continuation {
                Some(cont) => t.rest * cont.tail_ln(ln_k),
                None => 0.0,
            },
        }
    }

    /// Whether tails far beyond any table are known in closed form.
    pub fn has_analytic_tail(&self) -> bool {
        match &self.family {
            Family::Tabulated(t) => t.continuation.is_some(),
            _ => true,
        }
    }

    /// Largest argument at which the tail is backed by data rather than a
    /// formula; `None` for closed-form families.
    pub fn table_len(&self) -> Option<u64> {
        match &self.family {
            Family::Tabulated(t) if t.continuation.is_none() => Some(t.pmf.len() as u64),
            _ => None,
        }
    }

    pub fn pmf(&self, k: u64) -> f64 {
        (self.tail(k) - self.tail(k + 1)).max(0.0)
    }

    pub fn p0(&self) -> f64 {
        1.0 - self.tail(1)
    }

    /// `max{k : T(k) >= u}` for `u` in (0, 1).
    pub fn inverse_tail(&self, u: f64) -> u64 {
        match &self.family {
            Family::Delta { m } => *m,
            Family::Geometric { p } => saturating_floor(u.ln() / (1.0 - p).ln()),
            Family::Poisson { .. } => {
                let (mut lo, mut hi) = (0u64, 1u64);
                while self.tail(hi) >= u {
                    lo = hi;
                    hi *= 2;
                }
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if self.tail(mid) >= u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
            Family::PowerLogTail { a, c } => saturating_floor((c / u).powf(1.0 / a).exp() - E),
            Family::LogLogTail { c } => saturating_floor((c / u).exp().exp() - E.exp()),
            Family::Tabulated(t) => t.inverse_tail(u),
        }
    }

    /// One draw through the inverse tail.
    pub fn sample<R: RngCore + ?Sized>(&self, stream: &mut R) -> u64 {
        self.inverse_tail(open01(stream.next_u64()))
    }

    /// `sum_{k=1}^{k_max} mu(k) ln k` plus a bound on what is left.
    pub fn log_moment(&self, k_max: u64) -> LogMoment {
        let k_max = k_max.max(2);
        let mut partial = 0.0;
        let mut prev = self.tail(1);
        for k in 1..=k_max {
            let next = self.tail(k + 1);
            partial += (prev - next).max(0.0) * (k as f64).ln();
            prev = next;
        }
        let verdict = match &self.family {
            Family::Delta { .. } | Family::Geometric { .. } | Family::Poisson { .. } => {
                SeriesVerdict::Finite
            }
            Family::PowerLogTail { a, .. } => {
                if *a > 1.0 {
                    SeriesVerdict::Finite
                } else {
                    SeriesVerdict::Divergent
                }
            }
            Family::LogLogTail { .. } => SeriesVerdict::Divergent,
            Family::Tabulated(t) => match &t.continuation {
                Some(c) => c.log_moment(2).verdict,
                None => SeriesVerdict::Inconclusive,
            },
        };
        let tail_bound = if verdict == SeriesVerdict::Divergent {
            f64::INFINITY
        } else {
            self.log_moment_remainder(k_max)
        };
        LogMoment {
            partial,
            tail_bound,
            verdict,
        }
    }

    // Summation by parts gives
    // sum_{k>K} mu(k) ln k <= T(K+1) ln(K+1) + sum_{k>K+1} T(k)/(k-1),
    // and the second sum is at most twice the tail sampled on a doubling grid.
    fn log_moment_remainder(&self, k_max: u64) -> f64 {
        let head = self.tail(k_max + 1) * ((k_max + 1) as f64).ln();
        let ln_start = ((k_max + 2) as f64).ln();
        let mut sum = 0.0;
        let mut last = 0.0;
        const BLOCKS: usize = 100_000;
        for j in 0..BLOCKS {
            last = self.tail_ln(ln_start + j as f64 * std::f64::consts::LN_2);
            sum += last;
            if last == 0.0 || last < 1e-18 * sum.max(1e-300) {
                return head + 2.0 * sum;
            }
        }
        if last * BLOCKS as f64 > 1e-6 * sum {
            f64::INFINITY
        } else {
            head + 2.0 * sum
        }
    }

    /// Bracket on `1 - E[(1-q)^eta]`.
    pub fn one_minus_pgf(&self, q: f64) -> PgfGap {
        let q = q.clamp(0.0, 1.0);
        let exact = |v: f64| PgfGap { lower: v, upper: v };
        match &self.family {
            Family::Delta { m: 0 } => exact(0.0),
            Family::Delta { m } => exact(-((*m as f64) * (-q).ln_1p()).exp_m1()),
            Family::Geometric { p } => exact(q * (1.0 - p) / (p + q * (1.0 - p))),
            Family::Poisson { lambda } => exact(-(-lambda * q).exp_m1()),
            _ => self.one_minus_pgf_numeric(q),
        }
    }

    // 1 - E[s^eta] = q * sum_{k>=1} T(k) s^{k-1}.  Summed exactly up to a
    // cutoff, then bracketed on doubling blocks using monotonicity of both
    // factors.
    fn one_minus_pgf_numeric(&self, q: f64) -> PgfGap {
        if q == 0.0 {
            return PgfGap {
                lower: 0.0,
                upper: 0.0,
            };
        }
        if q == 1.0 {
            let v = self.tail(1);
            return PgfGap { lower: v, upper: v };
        }
        let ln_s = (-q).ln_1p();
        const DIRECT: u64 = 1 << 20;
        let mut exact = 0.0;
        let mut k = 1u64;
        while k <= DIRECT {
            let w = ((k - 1) as f64 * ln_s).exp();
            if w < 1e-300 {
                let v = q * exact;
                return PgfGap { lower: v, upper: v };
            }
            exact += self.tail(k) * w;
            k += 1;
        }
        let (mut lo, mut hi) = (exact, exact);
        let mut start = DIRECT as f64 + 1.0;
        for _ in 0..2000 {
            let len = start;
            let end = start + len;
            let w_hi = ((start - 1.0) * ln_s).exp();
            let w_lo = ((end - 1.0) * ln_s).exp();
            hi += len * self.tail_ln(start.ln()) * w_hi;
            lo += len * self.tail_ln(end.ln()) * w_lo;
            if w_hi * len < 1e-300 {
                break;
            }
            start = end;
        }
        PgfGap {
            lower: (q * lo).min(1.0),
            upper: (q * hi).min(1.0),
        }
    }

    /// `E[s^eta]` for `s` in [0, 1).
    pub fn pgf(&self, s: f64) -> f64 {
        let g = self.one_minus_pgf(1.0 - s);
        1.0 - 0.5 * (g.lower + g.upper)
    }
}

impl Table {
    fn new(pmf: Vec<f64>, continuation: Option<Box<CountDistribution>>) -> Result<Self, DistError> {
        if pmf.is_empty() {
            return Err(DistError::InvalidParameter("empty pmf table".into()));
        }
        if pmf
            .iter()
            .any(|p| !(p.is_finite() && (0.0..=1.0).contains(p)))
        {
            return Err(DistError::InvalidParameter(
                "pmf entries must lie in [0,1]".into(),
            ));
        }
        let total: f64 = pmf.iter().sum();
        if total <= 0.0 {
            return Err(DistError::InvalidParameter("pmf has no mass".into()));
        }
        let (pmf, rest) = match &continuation {
            Some(_) => {
                if total > 1.0 + 1e-12 {
                    return Err(DistError::InvalidParameter(
                        "pmf exceeds 1 before the continuation".into(),
                    ));
                }
                (pmf, (1.0 - total).max(0.0))
            }
            None => (pmf.iter().map(|p| p / total).collect::<Vec<_>>(), 0.0),
        };
        let mut suffix = vec![0.0; pmf.len() + 1];
        suffix[pmf.len()] = rest;
        for k in (0..pmf.len()).rev() {
            suffix[k] = suffix[k + 1] + pmf[k];
        }
        suffix[0] = 1.0;
        Ok(Table {
            pmf,
            suffix,
            rest,
            continuation,
        })
    }

    fn tail(&self, k: u64) -> f64 {
        let n = self.pmf.len() as u64;
        if k <= n {
            return self.suffix[k as usize];
        }
        match &self.continuation {
            Some(c) => self.rest * c.tail(k - n),
            None => 0.0,
        }
    }

    fn inverse_tail(&self, u: f64) -> u64 {
        let n = self.pmf.len();
        if let Some(c) = &self.continuation {
            if self.rest > 0.0 && u <= self.rest {
                return (n as u64).saturating_add(c.inverse_tail(u / self.rest));
            }
        }
        // suffix is non-increasing; find the last index with suffix >= u.
        let (mut lo, mut hi) = (0usize, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.suffix[mid] >= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if self.suffix[hi] >= u && hi < n {
            hi as u64
        } else {
            lo as u64
        }
    }
}

fn read_pmf_csv(path: &Path) -> Result<Vec<f64>, DistError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DistError::Io(e.to_string()))?;
    let mut rows: Vec<(u64, f64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DistError::Io(e.to_string()))?;
        let k: u64 = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| DistError::Io("bad k column".into()))?;
        let p: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| DistError::Io("bad pmf column".into()))?;
        rows.push((k, p));
    }
    let len = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0) as usize;
    let mut pmf = vec![0.0; len];
    for (k, p) in rows {
        pmf[k as usize] += p;
    }
    Ok(pmf)
}

fn poisson_tail(k: u64, lambda: f64) -> f64 {
    let kf = k as f64;
    if kf > lambda + 60.0 * lambda.sqrt() + 800.0 {
        return 0.0;
    }
    gamma_lr(kf, lambda)
}

fn saturating_floor(x: f64) -> u64 {
    if x.is_nan() || x < 1.0 {
        0
    } else if x >= u64::MAX as f64 {
        u64::MAX
    } else {
        x.floor() as u64
    }
}

/// `ceil(x)`, treating values within rounding of an integer as that integer.
pub fn ceil_snapped(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

// ---------------------------------------------------------------------------
// Tail sequences whose two series behave independently.

/// Which recipe produces the sequence `gamma_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GammaRecipe {
    /// `gamma_i = exp(-i^2)`.
    Vanishing,
    /// `gamma_i = 1/ln ln ln i` once that is defined, constant below.
    TripleLog,
    /// `gamma_{n+1} = 1/(n (ln n)^{3/2})`.
    LogPower,
    /// Blockwise constant sequence built to make both series diverge.
    Staircase,
}

/// A law described by `c_n = mu([0, B^{n ln^2 n})) = exp(-gamma_n)`, with all
/// mass sitting on the points `B^{k ln^2 k}`.  Then
/// `b_i = mu([0, B^i]) = c_{K(i)+1}` where `K(i) = max{k : k ln^2 k <= i}`.
#[derive(Clone, Debug, Serialize)]
pub struct SeriesExample {
    pub recipe: GammaRecipe,
    pub name: &'static str,
    pub expect_ii: SeriesVerdict,
    pub expect_iii: SeriesVerdict,
    #[serde(skip)]
    staircase: Option<Staircase>,
}

/// Partial sums of both series at the requested truncations.
#[derive(Clone, Debug, Serialize)]
pub struct ExampleSums {
    pub truncation: u64,
    pub series_ii: Vec<f64>,
    pub series_iii: Vec<f64>,
    pub ii_lower_bound: f64,
    pub ii_upper_bound: f64,
}

pub fn independent_series_examples() -> Vec<SeriesExample> {
    use SeriesVerdict::*;
    vec![
        SeriesExample {
            recipe: GammaRecipe::Vanishing,
            name: "gamma_i = exp(-i^2)",
            expect_ii: Divergent,
            expect_iii: Finite,
            staircase: None,
        },
        SeriesExample {
            recipe: GammaRecipe::TripleLog,
            name: "gamma_i = 1/lnlnln i",
            expect_ii: Finite,
            expect_iii: Divergent,
            staircase: None,
        },
        SeriesExample {
            recipe: GammaRecipe::LogPower,
            name: "gamma_(n+1) = 1/(n ln^1.5 n)",
            expect_ii: Finite,
            expect_iii: Finite,
            staircase: None,
        },
        SeriesExample {
            recipe: GammaRecipe::Staircase,
            name: "staircase with u_m = ln^2 m",
            expect_ii: Divergent,
            expect_iii: Divergent,
            staircase: Some(Staircase::build(1 << 20)),
        },
    ]
}

fn v_weight(i: f64) -> f64 {
    let l = i.ln();
    l * l + 2.0 * l + 2.0
}

impl SeriesExample {
    /// `gamma_i` for `i >= 1`.
    pub fn gamma(&self, i: u64) -> f64 {
        let x = i.max(1) as f64;
        match self.recipe {
            GammaRecipe::Vanishing => (-x * x).exp(),
            GammaRecipe::TripleLog => 1.0 / x.max(16.0).ln().ln().ln(),
            GammaRecipe::LogPower => {
                let n = (x - 1.0).max(2.0);
                1.0 / (n * n.ln().powf(1.5))
            }
            GammaRecipe::Staircase => self.staircase.as_ref().expect("staircase").gamma(i),
        }
    }

    /// `1 - c_n`.
    pub fn iii_term(&self, n: u64) -> f64 {
        -(-self.gamma(n)).exp_m1()
    }

    /// Partial sums of `sum_m prod_{n<=m} b_n` and `sum_n (1 - c_n)` at each
    /// truncation, plus the two comparison sums that sandwich series (ii).
    pub fn partial_sums(&self, truncations: &[u64]) -> ExampleSums {
        let n_max = *truncations.iter().max().unwrap_or(&1);
        let mut ii = Vec::new();
        let mut iii = Vec::new();
        let mut log_prod = 0.0;
        let mut s_ii = 0.0;
        let mut s_iii = 0.0;
        let mut k = 1u64;
        let mut lower = 0.0;
        let mut upper = 0.0;
        let mut e_low = 0.0;
        let mut e_up = 0.0;
        for m in 1..=n_max {
            let mf = m as f64;
            while ((k + 1) as f64) * ((k + 1) as f64).ln().powi(2) <= mf {
                k += 1;
            }
            log_prod -= self.gamma(k + 1);
            if log_prod > -690.0 {
                s_ii += log_prod.exp();
            }
            s_iii += self.iii_term(m);
            let l = mf.ln();
            e_low += self.gamma(m) * v_weight(mf);
            e_up += self.gamma(m + 1) * l * l;
            if m >= 2 {
                if -e_low > -690.0 {
                    lower += l * l * (-e_low).exp();
                }
                if -e_up > -690.0 {
                    upper += v_weight(mf) * (-e_up).exp();
                }
            }
            if truncations.contains(&m) {
                ii.push(s_ii);
                iii.push(s_iii);
            }
        }
        ExampleSums {
            truncation: n_max,
            series_ii: ii,
            series_iii: iii,
            ii_lower_bound: lower,
            ii_upper_bound: upper,
        }
    }

    /// Verdicts that follow from the construction itself rather than from
    /// the finite partial sums, with a short account of why.
    pub fn certificate(
        &self,
        truncation: u64,
    ) -> (
        Option<(SeriesVerdict, String)>,
        Option<(SeriesVerdict, String)>,
    ) {
        use SeriesVerdict::*;
        match self.recipe {
            GammaRecipe::LogPower => {
                let n = (truncation as f64 - 2.0).max(3.0);
                let rem = 2.0 / n.ln().sqrt();
                let s = self.partial_sums(&[truncation]);
                let up_rem = log_power_upper_remainder(truncation as f64);
                (
                    Some((
                        Finite,
                        format!(
                            "series (ii) <= comparison sum {:.6} + remainder {:.3e}",
                            s.ii_upper_bound, up_rem
                        ),
                    )),
                    Some((
                        Finite,
                        format!("remainder of series (iii) <= 2/sqrt(ln n) = {rem:.4}"),
                    )),
                )
            }
            GammaRecipe::Staircase => (
                Some((
                    Divergent,
                    "every block endpoint M_n contributes a term >= 1 to the comparison sum".into(),
                )),
                Some((
                    Divergent,
                    "every block of the staircase adds at least 1 to sum gamma".into(),
                )),
            ),
            _ => (None, None),
        }
    }

    /// Blocks of the staircase, for inspection.
    pub fn staircase_blocks(&self) -> Option<&[StairBlock]> {
        self.staircase.as_ref().map(|s| s.blocks.as_slice())
    }
}

// Integral of (y^2 + 2y + 2) exp(y - (2/3)(y^{3/2} - ln^{3/2} 2)) over
// y > ln N, which dominates the tail of the upper comparison sum since
// sum_{i<=l} ln^{1/2} i / i >= (2/3)(ln^{3/2} l - ln^{3/2} 2).
fn log_power_upper_remainder(n: f64) -> f64 {
    let c0 = std::f64::consts::LN_2.powf(1.5);
    let f = |y: f64| (y * y + 2.0 * y + 2.0) * (y - (2.0 / 3.0) * (y.powf(1.5) - c0)).exp();
    let mut y = n.ln();
    let h = 1e-3;
    let mut total = 0.0;
    loop {
        let v = f(y);
        total += h * (v + 4.0 * f(y + 0.5 * h) + f(y + h)) / 6.0;
        y += h;
        if v < 1e-30 * total.max(1e-300) || y > 1e4 {
            break;
        }
    }
    total
}

/// One block of the staircase sequence: `g_i = h` on `(k, k_next]`.
#[derive(Clone, Debug, Serialize)]
pub struct StairBlock {
    pub n: u64,
    pub k: f64,
    /// `ln M_n`; M_n itself overflows from the second block on.
    pub ln_m: f64,
    pub ln_h: f64,
    pub k_next: f64,
}

#[derive(Clone, Debug)]
struct Staircase {
    blocks: Vec<StairBlock>,
}

impl Staircase {
    // u_m = ln^2 m, v_i = ln^2 i + 2 ln i + 2, K_1 = 1, g_1 = 1.
    fn build(horizon: u64) -> Self {
        let mut blocks = Vec::new();
        let mut k = 1.0f64;
        let mut s = v_weight(1.0);
        let mut n = 1u64;
        while k <= horizon as f64 {
            // u_m >= e * exp(S)  <=>  ln m >= exp((1 + S)/2)
            let ln_m_min = ((1.0 + s) / 2.0).exp();
            let (ln_m, ln_h, k_next);
            if ln_m_min < 40.0 {
                let mut m = (k + 1.0).max(ln_m_min.exp().floor());
                while m > k + 1.0 && (m - 1.0).ln().powi(2) >= E * s.exp() {
                    m -= 1.0;
                }
                while m.ln().powi(2) < E * s.exp() {
                    m += 1.0;
                }
                let h = (1.0 / ((m - k) * v_weight(m))).min(1.0 / n as f64);
                let mut kn = (m + 1.0).max(k + (1.0 / h).ceil());
                while h * (kn - 1.0 - k) >= 1.0 && kn - 1.0 >= m + 1.0 {
                    kn -= 1.0;
                }
                let end = kn.min(horizon as f64);
                let mut i = k + 1.0;
                while i <= end {
                    s += h * v_weight(i);
                    i += 1.0;
                }
                ln_m = m.ln();
                ln_h = h.ln();
                k_next = kn;
            } else {
                // M_n - K_n is indistinguishable from M_n here.
                ln_m = ln_m_min;
                let ln_v = (ln_m * ln_m + 2.0 * ln_m + 2.0).ln();
                ln_h = (-ln_m - ln_v).min(-(n as f64).ln());
                k_next = f64::INFINITY;
            }
            blocks.push(StairBlock {
                n,
                k,
                ln_m,
                ln_h,
                k_next,
            });
            k = k_next;
            n += 1;
        }
        Staircase { blocks }
    }

    fn gamma(&self, i: u64) -> f64 {
        if i <= 1 {
            return 1.0;
        }
        let x = i as f64;
        for b in &self.blocks {
            if x > b.k && x <= b.k_next {
                return b.ln_h.exp();
            }
        }
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn families() -> Vec<CountDistribution> {
        vec![
            CountDistribution::delta(1),
            CountDistribution::delta(3),
            CountDistribution::geometric(0.5),
            CountDistribution::poisson(2.5),
            CountDistribution::power_log_tail(2.0, 1.0),
            CountDistribution::log_log_tail(1.0),
            CountDistribution::new(DistSpec::Tabulated {
                pmf: Some(vec![0.2, 0.3, 0.1]),
                path: None,
                continuation: Some(Box::new(DistSpec::PowerLogTail { a: 1.0, c: 1.0 })),
            })
            .unwrap(),
        ]
    }

    #[test]
    fn point_mass_tails() {
        let d = CountDistribution::delta(1);
        assert_eq!(d.tail(1), 1.0);
        assert_eq!(d.tail(2), 0.0);
        assert_eq!(CountDistribution::delta(3).inverse_tail(0.3), 3);
    }

    #[test]
    fn geometric_tail_closed_form() {
        let d = CountDistribution::geometric(0.3);
        for k in 0..40 {
            assert!((d.tail(k) - 0.7f64.powi(k as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn trivial_law_rejected() {
        assert!(matches!(
            CountDistribution::new(DistSpec::Delta { m: 0 }),
            Err(DistError::TrivialAtZero)
        ));
        assert!(CountDistribution::new(DistSpec::Tabulated {
            pmf: Some(vec![1.0]),
            path: None,
            continuation: None
        })
        .is_err());
    }

    #[test]
    fn differencing_matches_pmf_and_tails_start_at_one() {
        for d in families() {
            assert_eq!(d.tail(0), 1.0);
            for k in 0..300 {
                assert!(d.tail(k + 1) <= d.tail(k) + 1e-15);
                assert!((d.tail(k) - d.tail(k + 1) - d.pmf(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn poisson_pmf_matches_direct_formula() {
        let lambda: f64 = 2.5;
        let d = CountDistribution::poisson(lambda);
        let mut direct = (-lambda).exp();
        for k in 0..30u64 {
            assert!((d.pmf(k) - direct).abs() < 1e-12, "k={k}");
            direct *= lambda / (k + 1) as f64;
        }
    }

    #[test]
    fn inverse_tail_is_consistent_with_tail() {
        for d in families() {
            for i in 1..200 {
                let u = i as f64 / 200.5;
                let k = d.inverse_tail(u);
                assert!(d.tail(k) >= u - 1e-12, "{:?} u={u} k={k}", d.spec());
                if k < u64::MAX / 2 {
                    assert!(d.tail(k + 1) < u + 1e-9, "{:?} u={u} k={k}", d.spec());
                }
            }
        }
    }

    #[test]
    fn log_argument_tail_agrees_with_integer_tail() {
        for d in families() {
            for k in [10u64, 1000, 1 << 30, 1 << 50] {
                let a = d.tail(k);
                let b = d.tail_ln((k as f64).ln());
                assert!(
                    (a - b).abs() < 1e-9 * a.max(1e-300) + 1e-15,
                    "{:?} k={k}",
                    d.spec()
                );
            }
            // continuity across the switch to the asymptotic form
            let a = d.tail_ln(EXACT_LN_LIMIT - 1e-9);
            let b = d.tail_ln(EXACT_LN_LIMIT + 1e-9);
            assert!((a - b).abs() < 1e-6 * a.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn log_moment_examples() {
        let m = CountDistribution::delta(1).log_moment(100);
        assert_eq!(m.partial, 0.0);
        assert_eq!(m.verdict, SeriesVerdict::Finite);
        let g = CountDistribution::geometric(0.5).log_moment(10_000);
        assert_eq!(g.verdict, SeriesVerdict::Finite);
        assert!(g.tail_bound < 1e-100);
    }

    #[test]
    fn log_moment_of_power_log_one_grows_like_lnln() {
        let d = CountDistribution::power_log_tail(1.0, 1.0);
        assert_eq!(d.log_moment(10).verdict, SeriesVerdict::Divergent);
        let s: Vec<f64> = [10_000u64, 100_000, 1_000_000]
            .iter()
            .map(|&k| d.log_moment(k).partial)
            .collect();
        // increments per decade track ln ln k: ln(ln 1e5/ln 1e4) and ln(ln 1e6/ln 1e5)
        let d1 = s[1] - s[0];
        let d2 = s[2] - s[1];
        let l1 = (5.0f64 / 4.0).ln();
        let l2 = (6.0f64 / 5.0).ln();
        assert!((d1 / l1 - 1.0).abs() < 0.1, "{d1} vs {l1}");
        assert!((d2 / l2 - 1.0).abs() < 0.1, "{d2} vs {l2}");
    }

    #[test]
    fn pgf_gap_closed_forms_agree_with_numeric_sum() {
        for d in [
            CountDistribution::delta(3),
            CountDistribution::geometric(0.4),
            CountDistribution::poisson(1.7),
        ] {
            for q in [0.01, 0.3, 0.9] {
                let exact = d.one_minus_pgf(q).lower;
                let num = d.one_minus_pgf_numeric(q);
                assert!((exact - num.lower).abs() < 1e-10, "{:?} q={q}", d.spec());
                assert!((exact - num.upper).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn numeric_pgf_bracket_is_ordered_for_heavy_tails() {
        let d = CountDistribution::power_log_tail(2.0, 1.0);
        for q in [1e-3, 1e-6, 1e-9] {
            let g = d.one_minus_pgf(q);
            assert!(g.lower <= g.upper && g.upper <= 1.0);
            assert!(g.lower > 0.0);
        }
    }

    #[test]
    fn json_round_trip() {
        let d = CountDistribution::from_json(r#"{"kind":"delta","m":1}"#).unwrap();
        assert_eq!(d.tail(1), 1.0);
        let text = serde_json::to_string(d.spec()).unwrap();
        assert_eq!(text, r#"{"kind":"delta","m":1}"#);
        let t =
            CountDistribution::from_json(r#"{"kind":"power_log_tail","a":2.0,"c":1.0}"#).unwrap();
        assert!(matches!(t.family, Family::PowerLogTail { .. }));
    }

    #[test]
    fn staircase_first_blocks() {
        let ex = independent_series_examples();
        let blocks = ex[3].staircase_blocks().unwrap();
        // u_m >= e^3 first holds at m = 89; the first block then runs to
        // 1 + ceil(88 * v(89))
        assert_eq!(blocks[0].ln_m.exp().round() as u64, 89);
        assert!(blocks[0].k_next > 2000.0 && blocks[0].k_next < 3000.0);
        // the second block starts beyond anything a float can count to
        assert!(blocks[1].ln_m > 1e13);
        for w in blocks.windows(2) {
            assert!(w[1].ln_h <= w[0].ln_h);
        }
    }

    #[test]
    fn example_gammas_are_non_increasing() {
        for ex in independent_series_examples() {
            let mut prev = f64::INFINITY;
            for i in 1..5000 {
                let g = ex.gamma(i);
                assert!(g >= 0.0 && g <= prev + 1e-15, "{} i={i}", ex.name);
                prev = g;
            }
        }
    }
}
