//! Numerical evaluation of the three series that separate linear from
//! superlinear spread, and the verdict that follows from them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{CountDistribution, DistSpec, Family, SeriesExample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesVerdict {
    Finite,
    Divergent,
    Inconclusive,
}

impl SeriesVerdict {
    fn opposes(self, other: SeriesVerdict) -> bool {
        matches!(
            (self, other),
            (SeriesVerdict::Finite, SeriesVerdict::Divergent)
                | (SeriesVerdict::Divergent, SeriesVerdict::Finite)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    I,
    II,
    III,
}

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("base must exceed 1, got {0}")]
    BadBase(f64),
    #[error("truncation must be at least {min}, got {got}")]
    ShortTruncation { min: u64, got: u64 },
    #[error("dimension must be at least 1")]
    BadDimension,
    #[error("base grid needs at least three bases > 1 reaching 10, got {0:?}")]
    BadGrid(Vec<f64>),
}

/// Cauchy threshold below which the last quarter counts as settled.
pub const SETTLED: f64 = 1e-9;
/// Increment above which the last quarter counts as still growing.
pub const GROWING: f64 = 1e-3;
/// Relative slack allowed when asking whether doubling-block increments
/// are non-decreasing.
pub const RATIO_SLACK: f64 = 1e-3;

/// Partial sums at `N/4, N/2, 3N/4, N` and the two trend statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trend {
    pub truncations: [u64; 4],
    pub partial_sums: [f64; 4],
    /// `S(N) - S(3N/4)`.
    pub last_quarter_increment: f64,
    /// `(S(N) - S(N/2)) / (S(N/2) - S(N/4))`; NaN when both are zero.
    pub doubling_ratio: f64,
    pub verdict: SeriesVerdict,
}

/// Checkpoints used by the trend test.
pub fn checkpoints(n: u64) -> [u64; 4] {
    [n / 4, n / 2, 3 * n / 4, n]
}

/// Decide from four partial sums.  Finite needs a settled last quarter and a
/// shrinking doubling increment; Divergent needs a growing last quarter and
/// doubling increments that do not shrink.
pub fn trend_test(truncations: [u64; 4], s: [f64; 4]) -> Trend {
    let inc = s[3] - s[2];
    let da = s[1] - s[0];
    let db = s[3] - s[1];
    let ratio = if da > 0.0 {
        db / da
    } else if db > 0.0 {
        f64::INFINITY
    } else {
        f64::NAN
    };
    let shrinking = ratio.is_nan() || ratio < 1.0;
    let verdict = if inc < SETTLED && shrinking {
        SeriesVerdict::Finite
    } else if inc > GROWING && db >= da * (1.0 - RATIO_SLACK) {
        SeriesVerdict::Divergent
    } else {
        SeriesVerdict::Inconclusive
    };
    Trend {
        truncations,
        partial_sums: s,
        last_quarter_increment: inc,
        doubling_ratio: ratio,
        verdict,
    }
}

/// Run the trend test over `terms(1..=n)`.
pub fn trend_of<F: FnMut(u64) -> f64>(n: u64, mut terms: F) -> Trend {
    let cps = checkpoints(n);
    let mut s = [0.0; 4];
    let mut acc = 0.0;
    let mut next = 0;
    for m in 1..=n {
        acc += terms(m);
        while next < 4 && cps[next] == m {
            s[next] = acc;
            next += 1;
        }
    }
    trend_test(cps, s)
}

/// Combine the numerical trend with a verdict known from the asymptotics of
/// the terms.  Opposite definite answers are reported as a conflict.
pub fn combine(trend: SeriesVerdict, analytic: Option<SeriesVerdict>) -> (SeriesVerdict, bool) {
    match analytic {
        None => (trend, false),
        Some(a) if a.opposes(trend) => (SeriesVerdict::Inconclusive, true),
        Some(a) => (a, false),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesTrace {
    pub criterion: Criterion,
    pub base: f64,
    pub trend: Trend,
    pub analytic: Option<SeriesVerdict>,
    pub analytic_basis: Option<String>,
    pub verdict: SeriesVerdict,
    pub conflict: bool,
    /// First index whose argument was handled through the log-argument tail.
    pub log_form_from: Option<u64>,
    /// First index whose term fell below 1e-300 and was flushed to zero.
    pub flushed_from: Option<u64>,
    pub note: Option<String>,
}

/// Known asymptotic behaviour of a sequence of non-negative terms.
#[derive(Clone, Copy, Debug)]
pub enum TermShape {
    /// Faster than every power of `m`, or eventually zero.
    Vanishing,
    /// `m^{-p} (ln m)^{-q}` up to constants.
    Power { p: f64, q: f64 },
    /// Bounded away from zero.
    Persistent,
}

impl TermShape {
    pub fn verdict(self) -> SeriesVerdict {
        const TOL: f64 = 1e-12;
        match self {
            TermShape::Vanishing => SeriesVerdict::Finite,
            TermShape::Persistent => SeriesVerdict::Divergent,
            TermShape::Power { p, q } => {
                if p > 1.0 + TOL || ((p - 1.0).abs() <= TOL && q > 1.0 + TOL) {
                    SeriesVerdict::Finite
                } else {
                    SeriesVerdict::Divergent
                }
            }
        }
    }
}

pub fn describe(shape: TermShape, what: &str) -> String {
    match shape {
        TermShape::Vanishing => format!("{what} vanish faster than any power"),
        TermShape::Persistent => format!("{what} stay bounded away from zero"),
        TermShape::Power { p, q } => format!("{what} behave like m^-{p:.4} (ln m)^-{q:.4}"),
    }
}

// Asymptotics of tail(B^m)^{1/d}, tail(B^{m ln^2 m}) and the running
// product of 1 - tail(B^n), derived per family.  `scale` is the leftover
// mass carried by a continuation.
fn shape_i(f: &Family, dim: u32) -> Option<TermShape> {
    match f {
        Family::Delta { .. } | Family::Geometric { .. } | Family::Poisson { .. } => {
            Some(TermShape::Vanishing)
        }
        Family::PowerLogTail { a, .. } => Some(TermShape::Power {
            p: a / dim as f64,
            q: 0.0,
        }),
        Family::LogLogTail { .. } => Some(TermShape::Power {
            p: 0.0,
            q: 1.0 / dim as f64,
        }),
        Family::Tabulated(t) => match &t.continuation {
            Some(_) if t.rest == 0.0 => Some(TermShape::Vanishing),
            Some(c) => shape_i(&c.family, dim),
            None => None,
        },
    }
}

fn shape_iii(f: &Family) -> Option<TermShape> {
    match f {
        Family::Delta { .. } | Family::Geometric { .. } | Family::Poisson { .. } => {
            Some(TermShape::Vanishing)
        }
        Family::PowerLogTail { a, .. } => Some(TermShape::Power { p: *a, q: 2.0 * a }),
        Family::LogLogTail { .. } => Some(TermShape::Power { p: 0.0, q: 1.0 }),
        Family::Tabulated(t) => match &t.continuation {
            Some(_) if t.rest == 0.0 => Some(TermShape::Vanishing),
            Some(c) => shape_iii(&c.family),
            None => None,
        },
    }
}

fn shape_ii(f: &Family, base: f64, scale: f64) -> Option<TermShape> {
    match f {
        Family::Delta { .. } | Family::Geometric { .. } | Family::Poisson { .. } => {
            Some(TermShape::Persistent)
        }
        Family::PowerLogTail { a, c } => {
            let c = c * scale;
            Some(if *a < 1.0 {
                TermShape::Vanishing
            } else if *a == 1.0 {
                TermShape::Power {
                    p: c / base.ln(),
                    q: 0.0,
                }
            } else {
                TermShape::Persistent
            })
        }
        Family::LogLogTail { .. } => Some(TermShape::Vanishing),
        Family::Tabulated(t) => match &t.continuation {
            Some(_) if t.rest == 0.0 => Some(TermShape::Persistent),
            Some(c) => shape_ii(&c.family, base, scale * t.rest),
            None => None,
        },
    }
}

fn check_base(base: f64) -> Result<(), ClassifierError> {
    if base > 1.0 && base.is_finite() {
        Ok(())
    } else {
        Err(ClassifierError::BadBase(base))
    }
}

fn check_len(n: u64) -> Result<(), ClassifierError> {
    if n >= 4 {
        Ok(())
    } else {
        Err(ClassifierError::ShortTruncation { min: 4, got: n })
    }
}

const LN_EXACT: f64 = 36.0;

fn finish(
    criterion: Criterion,
    base: f64,
    trend: Trend,
    shape: Option<TermShape>,
    what: &str,
    log_form_from: Option<u64>,
    flushed_from: Option<u64>,
    beyond_table: bool,
) -> SeriesTrace {
    let analytic = shape.map(TermShape::verdict);
    let (mut verdict, conflict) = combine(trend.verdict, analytic);
    let mut note = None;
    if beyond_table {
        verdict = SeriesVerdict::Inconclusive;
        note = Some("arguments run past a finite table without an analytic continuation".into());
    }
    SeriesTrace {
        criterion,
        base,
        trend,
        analytic,
        analytic_basis: shape.map(|s| describe(s, what)),
        verdict,
        conflict,
        log_form_from,
        flushed_from,
        note,
    }
}

fn past_table(d: &CountDistribution, ln_arg: f64) -> bool {
    d.table_len().is_some_and(|n| ln_arg > (n as f64).ln())
}

/// `sum_m tail(ceil(B^m))^{1/dim}`.
pub fn series_i(
    d: &CountDistribution,
    dim: u32,
    base: f64,
    m_max: u64,
) -> Result<SeriesTrace, ClassifierError> {
    check_base(base)?;
    check_len(m_max)?;
    if dim == 0 {
        return Err(ClassifierError::BadDimension);
    }
    let lb = base.ln();
    let mut log_form = None;
    let inv = 1.0 / dim as f64;
    let trend = trend_of(m_max, |m| {
        let l = m as f64 * lb;
        if l >= LN_EXACT && log_form.is_none() {
            log_form = Some(m);
        }
        d.tail_ln(l).powf(inv)
    });
    let beyond = past_table(d, m_max as f64 * lb);
    Ok(finish(
        Criterion::I,
        base,
        trend,
        shape_i(&d.family, dim),
        "terms",
        log_form,
        None,
        beyond,
    ))
}

/// `sum_m prod_{n<=m} mu([0, B^n])`, accumulated in log space.
pub fn series_ii(
    d: &CountDistribution,
    base: f64,
    m_max: u64,
) -> Result<SeriesTrace, ClassifierError> {
    check_base(base)?;
    check_len(m_max)?;
    let lb = base.ln();
    let mut log_prod = 0.0f64;
    let mut log_form = None;
    let mut flushed = None;
    let mut zero_factor = false;
    let trend = trend_of(m_max, |n| {
        let l = n as f64 * lb;
        if l >= LN_EXACT && log_form.is_none() {
            log_form = Some(n);
        }
        let t = tail_above(d, l);
        if t >= 1.0 {
            zero_factor = true;
        }
        log_prod += (-t).ln_1p();
        if log_prod < -690.0 {
            if flushed.is_none() {
                flushed = Some(n);
            }
            0.0
        } else {
            log_prod.exp()
        }
    });
    // A factor equal to zero kills every later term exactly.
    let shape = if zero_factor {
        Some(TermShape::Vanishing)
    } else {
        shape_ii(&d.family, base, 1.0)
    };
    let beyond = past_table(d, m_max as f64 * lb);
    Ok(finish(
        Criterion::II,
        base,
        trend,
        shape,
        "products",
        log_form,
        flushed,
        beyond,
    ))
}

/// `sum_n tail(ceil(B^{n ln^2 n}))`, with the exponent kept in log form.
pub fn series_iii(
    d: &CountDistribution,
    base: f64,
    n_max: u64,
) -> Result<SeriesTrace, ClassifierError> {
    check_base(base)?;
    check_len(n_max)?;
    let lb = base.ln();
    let mut log_form = None;
    let trend = trend_of(n_max, |n| {
        let nf = n as f64;
        let l = nf * nf.ln().powi(2) * lb;
        if l >= LN_EXACT && log_form.is_none() {
            log_form = Some(n);
        }
        d.tail_ln(l)
    });
    let nf = n_max as f64;
    let beyond = past_table(d, nf * nf.ln().powi(2) * lb);
    Ok(finish(
        Criterion::III,
        base,
        trend,
        shape_iii(&d.family),
        "terms",
        log_form,
        None,
        beyond,
    ))
}

// mu((B^n, inf)) = tail(floor(B^n) + 1).
fn tail_above(d: &CountDistribution, ln_x: f64) -> f64 {
    if ln_x < LN_EXACT {
        let x = ln_x.exp();
        let r = x.round();
        let k = if (x - r).abs() <= 1e-9 * r.max(1.0) {
            r as u64 + 1
        } else {
            x.ceil() as u64
        };
        d.tail(k)
    } else {
        d.tail_ln(ln_x)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Budgets {
    pub m_max_i: u64,
    pub m_max_ii: u64,
    pub n_max_iii: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            m_max_i: 100_000,
            m_max_ii: 100_000,
            n_max_iii: 10_000,
        }
    }
}

pub fn default_grid() -> Vec<f64> {
    vec![1.2, 2.0, std::f64::consts::E, 4.0, 10.0]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpreadVerdict {
    Linear,
    Superlinear { via_ii: bool, via_iii: bool },
    Unknown,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Triggers {
    pub linear: bool,
    pub superlinear_ii: bool,
    pub superlinear_iii: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub dimension: u32,
    pub distribution: DistSpec,
    pub grid: Vec<f64>,
    pub budgets: Budgets,
    pub criterion_i: Vec<SeriesTrace>,
    pub criterion_ii: Vec<SeriesTrace>,
    pub criterion_iii: Vec<SeriesTrace>,
    pub log_moment: Option<crate::dist::LogMoment>,
    pub log_moment_agrees: Option<bool>,
    pub triggers: Triggers,
    pub conflict: bool,
    pub verdict: SpreadVerdict,
    pub notes: Vec<String>,
}

pub fn classify(
    d: &CountDistribution,
    dim: u32,
    grid: &[f64],
    budgets: Budgets,
) -> Result<ClassificationReport, ClassifierError> {
    if dim == 0 {
        return Err(ClassifierError::BadDimension);
    }
    let max = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if grid.len() < 3 || grid.iter().any(|b| !(*b > 1.0)) || max < 10.0 {
        return Err(ClassifierError::BadGrid(grid.to_vec()));
    }
    let per_base: Vec<_> = grid
        .par_iter()
        .map(|&b| {
            Ok((
                series_i(d, dim, b, budgets.m_max_i)?,
                series_ii(d, b, budgets.m_max_ii)?,
                series_iii(d, b, budgets.n_max_iii)?,
            ))
        })
        .collect::<Result<Vec<_>, ClassifierError>>()?;
    let mut ci = Vec::new();
    let mut cii = Vec::new();
    let mut ciii = Vec::new();
    for (a, b, c) in per_base {
        ci.push(a);
        cii.push(b);
        ciii.push(c);
    }
    let linear = ci.iter().any(|t| t.verdict == SeriesVerdict::Finite);
    let sup_ii = cii.iter().all(|t| t.verdict == SeriesVerdict::Finite);
    let sup_iii = ciii.iter().any(|t| t.verdict == SeriesVerdict::Divergent);
    let mut notes = vec![
        "criterion (ii) is required to converge at every base of the grid; bases outside it are covered only by the analytic shape when one is known".to_string(),
    ];
    let (log_moment, agrees) = if dim == 1 {
        let lm = d.log_moment(budgets.m_max_i);
        let agrees = match lm.verdict {
            SeriesVerdict::Finite => linear,
            SeriesVerdict::Divergent => !linear,
            SeriesVerdict::Inconclusive => true,
        };
        if !agrees {
            notes.push("log-moment test and criterion (i) disagree".into());
        }
        (Some(lm), Some(agrees))
    } else {
        (None, None)
    };
    let conflict = (linear && (sup_ii || sup_iii)) || agrees == Some(false);
    if conflict {
        notes.push(
            "exclusive criteria both triggered; treated as a numerical misclassification".into(),
        );
    }
    let verdict = if conflict {
        SpreadVerdict::Unknown
    } else if linear {
        SpreadVerdict::Linear
    } else if sup_ii || sup_iii {
        SpreadVerdict::Superlinear {
            via_ii: sup_ii,
            via_iii: sup_iii,
        }
    } else {
        SpreadVerdict::Unknown
    };
    Ok(ClassificationReport {
        dimension: dim,
        distribution: d.spec().clone(),
        grid: grid.to_vec(),
        budgets,
        criterion_i: ci,
        criterion_ii: cii,
        criterion_iii: ciii,
        log_moment,
        log_moment_agrees: agrees,
        triggers: Triggers {
            linear,
            superlinear_ii: sup_ii,
            superlinear_iii: sup_iii,
        },
        conflict,
        verdict,
        notes,
    })
}

impl ClassificationReport {
    /// Rows of (criterion, base, truncation, partial sum).
    pub fn partial_sum_rows(&self) -> Vec<(String, f64, u64, f64)> {
        let mut rows = Vec::new();
        for (name, traces) in [
            ("i", &self.criterion_i),
            ("ii", &self.criterion_ii),
            ("iii", &self.criterion_iii),
        ] {
            for t in traces {
                for (n, s) in t.trend.truncations.iter().zip(t.trend.partial_sums.iter()) {
                    rows.push((name.to_string(), t.base, *n, *s));
                }
            }
        }
        rows
    }
}

/// Trend and construction certificate for one of the independence examples.
#[derive(Clone, Debug, Serialize)]
pub struct ExampleJudgement {
    pub name: String,
    pub truncation: u64,
    pub trend_ii: Trend,
    pub trend_iii: Trend,
    pub ii: SeriesVerdict,
    pub iii: SeriesVerdict,
    pub conflict: bool,
    pub basis: Vec<String>,
}

pub fn judge_example(ex: &SeriesExample, n: u64) -> ExampleJudgement {
    let cps = checkpoints(n);
    let sums = ex.partial_sums(&cps);
    let four = |v: &[f64]| [v[0], v[1], v[2], v[3]];
    let trend_ii = trend_test(cps, four(&sums.series_ii));
    let trend_iii = trend_test(cps, four(&sums.series_iii));
    let (cert_ii, cert_iii) = ex.certificate(n);
    let mut basis = Vec::new();
    for c in [&cert_ii, &cert_iii].into_iter().flatten() {
        basis.push(c.1.clone());
    }
    let (ii, k2) = combine(trend_ii.verdict, cert_ii.map(|c| c.0));
    let (iii, k3) = combine(trend_iii.verdict, cert_iii.map(|c| c.0));
    ExampleJudgement {
        name: ex.name.to_string(),
        truncation: n,
        trend_ii,
        trend_iii,
        ii,
        iii,
        conflict: k2 || k3,
        basis,
    }
}
