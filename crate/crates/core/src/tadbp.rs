//! Totally asymmetric discrete Boolean percolation on `Z` and `Z_+`.
//!
//! Site `y` carries the grain `[y, y + psi_y]`.  A site `x` is wet when some
//! grain started strictly to its left reaches it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{combine, describe, trend_of, SeriesVerdict, TermShape, Trend};
use crate::dist::{CountDistribution, DistSpec};
use crate::rng::{derive, open01, tag};

#[derive(Debug, Error)]
pub enum TadbpError {
    #[error("empty window")]
    EmptyWindow,
    #[error("site {0} is isolated and starts no component")]
    NotInComponent(i64),
    #[error("site {0} lies outside the sampled window")]
    OutsideWindow(i64),
    #[error("running product underflowed (ln = {ln_product:.1}); the dry fraction is 0")]
    DivergenceToZero { ln_product: f64 },
    #[error("r_{k} = {value} is not a probability or increases")]
    BadTail { k: u64, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Z,
    ZPlus,
}

/// Where the grain lengths come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiSource {
    Direct { law: DistSpec },
    SpeedRecord { a: f64, epsilon: f64 },
    TailFunction { name: String },
}

/// A grain-length law whose draws are addressed by `(seed, site)`.
pub trait PsiLaw: Sync {
    fn draw(&self, seed: u64, site: i64) -> u64;
    /// `r_k = P(psi >= k)` when it is known in closed form.
    fn r(&self, k: u64) -> Option<f64>;
    fn source(&self) -> PsiSource;
}

fn site_uniform(seed: u64, site: i64) -> f64 {
    open01(derive(seed, &[tag::PSI, site as u64]))
}

impl PsiLaw for CountDistribution {
    fn draw(&self, seed: u64, site: i64) -> u64 {
        self.inverse_tail(site_uniform(seed, site))
    }
    fn r(&self, k: u64) -> Option<f64> {
        Some(self.tail(k))
    }
    fn source(&self) -> PsiSource {
        PsiSource::Direct {
            law: self.spec().clone(),
        }
    }
}

/// Law given only by its tail function `k -> P(psi >= k)`.
#[derive(Clone)]
pub struct TailLaw {
    pub name: String,
    tail: Arc<dyn Fn(u64) -> f64 + Send + Sync>,
    inverse: Option<Arc<dyn Fn(f64) -> u64 + Send + Sync>>,
}

impl TailLaw {
    pub fn new(name: &str, tail: impl Fn(u64) -> f64 + Send + Sync + 'static) -> Self {
        TailLaw {
            name: name.to_string(),
            tail: Arc::new(tail),
            inverse: None,
        }
    }

    /// Attach a closed-form inverse tail, used instead of bisection.
    pub fn with_inverse(mut self, inverse: impl Fn(f64) -> u64 + Send + Sync + 'static) -> Self {
        self.inverse = Some(Arc::new(inverse));
        self
    }

    pub fn tail(&self, k: u64) -> f64 {
        if k == 0 {
            1.0
        } else {
            (self.tail)(k)
        }
    }

    /// Largest `k` with `tail(k) >= u`.
    pub fn inverse_tail(&self, u: f64) -> u64 {
        if let Some(inv) = &self.inverse {
            return inv(u);
        }
        if self.tail(1) < u {
            return 0;
        }
        let (mut lo, mut hi) = (1u64, 2u64);
        while self.tail(hi) >= u {
            lo = hi;
            if hi >= 1 << 62 {
                return hi;
            }
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
}

impl PsiLaw for TailLaw {
    fn draw(&self, seed: u64, site: i64) -> u64 {
        self.inverse_tail(site_uniform(seed, site))
    }
    fn r(&self, k: u64) -> Option<f64> {
        Some(self.tail(k))
    }
    fn source(&self) -> PsiSource {
        PsiSource::TailFunction {
            name: self.name.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsiField {
    pub domain: Domain,
    /// First site of the window (0 on `Z_+`).
    pub start: i64,
    /// Sites left of `start` sampled so that window labels are reliable.
    pub pad: u64,
    /// `psi` for sites `start - pad ..`, window last.
    pub psi: Vec<u64>,
    pub source: PsiSource,
    /// Bound on the probability that a grain from left of the pad reaches
    /// the first window site; `None` when the tail gave no usable bound.
    pub edge_error_bound: Option<f64>,
}

impl PsiField {
    pub fn len(&self) -> usize {
        self.psi.len() - self.pad as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> &[u64] {
        &self.psi[self.pad as usize..]
    }

    pub fn psi_at(&self, x: i64) -> Option<u64> {
        let i = x - self.start + self.pad as i64;
        (i >= 0)
            .then(|| self.psi.get(i as usize).copied())
            .flatten()
    }

    /// Field with given values on `Z_+`, sites `0..psi.len()`.
    pub fn from_values(psi: Vec<u64>) -> Self {
        PsiField {
            domain: Domain::ZPlus,
            start: 0,
            pad: 0,
            psi,
            source: PsiSource::TailFunction {
                name: "explicit".into(),
            },
            edge_error_bound: Some(0.0),
        }
    }
}

const EDGE_TOL: f64 = 1e-9;
const PAD_SEARCH: u64 = 1 << 20;

/// Draw `psi_x` for `x` in `start .. start + len` (and a left pad on `Z`).
pub fn sample_field(
    law: &dyn PsiLaw,
    domain: Domain,
    start: i64,
    len: usize,
    seed: u64,
) -> Result<PsiField, TadbpError> {
    if len == 0 {
        return Err(TadbpError::EmptyWindow);
    }
    let (start, pad, bound) = match domain {
        Domain::ZPlus => (0, 0, Some(0.0)),
        Domain::Z => {
            let mut pad = None;
            let mut l = 1u64;
            while l <= PAD_SEARCH {
                match law.r(l) {
                    Some(r) if r < EDGE_TOL => {
                        pad = Some(l);
                        break;
                    }
                    Some(_) => l += 1,
                    None => break,
                }
            }
            match pad {
                // a grain from x - j reaches x only if psi >= j, j > pad
                Some(p) => (start, p, Some(sum_tail(law, p + 1))),
                None => (start, 0, None),
            }
        }
    };
    let first = start - pad as i64;
    let psi = (0..len as i64 + pad as i64)
        .map(|i| law.draw(seed, first + i))
        .collect();
    Ok(PsiField {
        domain,
        start,
        pad,
        psi,
        source: law.source(),
        edge_error_bound: bound,
    })
}

fn sum_tail(law: &dyn PsiLaw, from: u64) -> f64 {
    let mut s = 0.0;
    for k in from..from + PAD_SEARCH {
        let r = law.r(k).unwrap_or(1.0);
        s += r;
        if r < 1e-300 {
            break;
        }
    }
    s
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TadbpSample {
    pub field: PsiField,
    /// Wet labels for the window sites.
    pub wet: Vec<bool>,
    /// `Y_m` for the window sites.
    pub y_chain: Vec<u64>,
    /// Components as `(left, right)` site ranges inside the window; every
    /// component after the first starts at a dry site.
    pub components: Vec<(i64, i64)>,
    pub dry_count: usize,
}

impl TadbpSample {
    pub fn component_lengths(&self) -> Vec<u64> {
        self.components
            .iter()
            .map(|(l, r)| (r - l + 1) as u64)
            .collect()
    }

    pub fn right_endpoints(&self) -> Vec<i64> {
        self.components.iter().map(|c| c.1).collect()
    }

    pub fn dry_fraction(&self) -> f64 {
        self.dry_count as f64 / self.wet.len() as f64
    }

    pub fn is_wet(&self, x: i64) -> Option<bool> {
        let i = x - self.field.start;
        (i >= 0)
            .then(|| self.wet.get(i as usize).copied())
            .flatten()
    }
}

/// Label every window site in one left-to-right pass.
pub fn wet_dry(field: &PsiField) -> TadbpSample {
    let first = field.start - field.pad as i64;
    let n = field.len();
    let mut wet = Vec::with_capacity(n);
    let mut y_chain = Vec::with_capacity(n);
    let mut components = Vec::new();
    let mut dry_count = 0;
    // reach = max_{y < x} (y + psi_y); Y_{x-1} = max(reach - (x - 1), 0)
    let mut reach: Option<i64> = None;
    let mut y_prev: u64 = 0;
    let mut comp_left: Option<i64> = None;
    for (i, &p) in field.psi.iter().enumerate() {
        let x = first + i as i64;
        let in_window = x >= field.start;
        let is_wet = match reach {
            Some(r) => r >= x,
            None => field.domain == Domain::ZPlus && x == 0,
        };
        let y = p.max(y_prev.saturating_sub(1));
        if in_window {
            if field.domain == Domain::ZPlus && x == 0 {
                wet.push(true);
            } else {
                wet.push(is_wet);
                if !is_wet {
                    dry_count += 1;
                }
            }
            let starts = comp_left.is_none() || !wet[wet.len() - 1];
            if starts {
                if let Some(l) = comp_left {
                    components.push((l, x - 1));
                }
                comp_left = Some(x);
            }
            y_chain.push(y);
        }
        let end = x.saturating_add(p.min(i64::MAX as u64 / 2) as i64);
        reach = Some(reach.map_or(end, |r| r.max(end)));
        y_prev = y;
    }
    if let Some(l) = comp_left {
        components.push((l, field.start + n as i64 - 1));
    }
    TadbpSample {
        field: field.clone(),
        wet,
        y_chain,
        components,
        dry_count,
    }
}

/// O(n^2) labeling by checking every pair `(y, x)`; for tests and audits.
pub fn wet_dry_pairwise(field: &PsiField) -> Vec<bool> {
    let first = field.start - field.pad as i64;
    (0..field.len())
        .map(|j| {
            let x = field.start + j as i64;
            if field.domain == Domain::ZPlus && x == 0 {
                return true;
            }
            (0..(x - first) as usize).any(|i| {
                let y = first + i as i64;
                y.saturating_add(field.psi[i].min(i64::MAX as u64 / 2) as i64) >= x
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DryFraction {
    /// `prod_{k <= K} (1 - r_k)`, an upper bound on the infinite product.
    pub value: f64,
    /// Lower bound on the infinite product when a remainder was supplied.
    pub lower: Option<f64>,
    pub error_bound: Option<f64>,
}

/// `prod_{k >= 1} (1 - r_k)` truncated at `k_max`.  `remainder(K)` must
/// bound `sum_{k > K} r_k` from above.
pub fn dry_fraction_exact(
    r: &dyn Fn(u64) -> f64,
    k_max: u64,
    remainder: Option<&dyn Fn(u64) -> f64>,
) -> Result<DryFraction, TadbpError> {
    let mut ln_p = 0.0f64;
    let mut prev = 1.0;
    for k in 1..=k_max {
        let rk = r(k);
        if !(0.0..=1.0).contains(&rk) || rk > prev + 1e-15 {
            return Err(TadbpError::BadTail { k, value: rk });
        }
        prev = rk;
        if rk >= 1.0 {
            return Ok(DryFraction {
                value: 0.0,
                lower: Some(0.0),
                error_bound: Some(0.0),
            });
        }
        ln_p += (-rk).ln_1p();
        if ln_p < -745.0 {
            return Err(TadbpError::DivergenceToZero { ln_product: ln_p });
        }
    }
    let value = ln_p.exp();
    let lower = remainder.map(|rem| {
        let next = r(k_max + 1).min(1.0 - 1e-12);
        value * (-rem(k_max) / (1.0 - next)).exp()
    });
    Ok(DryFraction {
        value,
        lower,
        error_bound: lower.map(|l| value - l),
    })
}

/// `p_0 * prod (1 - r_k)`.
pub fn isolated_fraction_exact(
    p0: f64,
    r: &dyn Fn(u64) -> f64,
    k_max: u64,
    remainder: Option<&dyn Fn(u64) -> f64>,
) -> Result<DryFraction, TadbpError> {
    let d = dry_fraction_exact(r, k_max, remainder)?;
    Ok(DryFraction {
        value: p0 * d.value,
        lower: d.lower.map(|l| p0 * l),
        error_bound: d.error_bound.map(|e| p0 * e),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainClass {
    PositiveRecurrent,
    NullRecurrent,
    Transient,
    Inconclusive,
}

/// Known asymptotics of `r_k` and of `prod_{k <= n} (1 - r_k)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ChainProfile {
    pub r: Option<TermShape>,
    pub product: Option<TermShape>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainEvidence {
    pub sum_r: Trend,
    pub sum_products: Trend,
    pub sum_r_verdict: SeriesVerdict,
    pub sum_products_verdict: SeriesVerdict,
    pub basis: Vec<String>,
    pub conflict: bool,
    pub class: ChainClass,
}

/// Positive recurrent iff `sum r_k < inf`; transient iff
/// `sum_n prod_{k<=n} (1 - r_k) < inf`; null recurrent otherwise.
pub fn classify_chain(r: &dyn Fn(u64) -> f64, k_max: u64, profile: ChainProfile) -> ChainEvidence {
    let sum_r = trend_of(k_max, r);
    let mut ln_p = 0.0f64;
    let sum_products = trend_of(k_max, |n| {
        ln_p += (-r(n).min(1.0)).ln_1p();
        if ln_p < -690.0 {
            0.0
        } else {
            ln_p.exp()
        }
    });
    let (v1, c1) = combine(sum_r.verdict, profile.r.map(TermShape::verdict));
    let (v2, c2) = combine(
        sum_products.verdict,
        profile.product.map(TermShape::verdict),
    );
    let mut basis = Vec::new();
    if let Some(s) = profile.r {
        basis.push(describe(s, "r_k"));
    }
    if let Some(s) = profile.product {
        basis.push(describe(s, "products"));
    }
    use SeriesVerdict::*;
    let class = match (v1, v2) {
        (Finite, _) => ChainClass::PositiveRecurrent,
        (Divergent, Finite) => ChainClass::Transient,
        (Divergent, Divergent) => ChainClass::NullRecurrent,
        _ => ChainClass::Inconclusive,
    };
    ChainEvidence {
        sum_r,
        sum_products,
        sum_r_verdict: v1,
        sum_products_verdict: v2,
        basis,
        conflict: c1 || c2,
        class,
    }
}

/// Greedy cover of the component through `x`: each step jumps to the
/// rightmost site of the current grain whose own grain reaches furthest.
pub fn fast_cover(sample: &TadbpSample, x: i64) -> Result<Vec<i64>, TadbpError> {
    let field = &sample.field;
    let end = field.start + field.len() as i64 - 1;
    let wet = sample.is_wet(x).ok_or(TadbpError::OutsideWindow(x))?;
    let psi = |y: i64| field.psi_at(y).unwrap_or(0) as i64;
    if !wet && psi(x) == 0 {
        return Err(TadbpError::NotInComponent(x));
    }
    let mut seq = vec![x];
    let mut cur = x;
    loop {
        let p = psi(cur);
        // a grain leaving the window cannot be continued reliably
        if p == 0 || cur.saturating_add(p) > end {
            break;
        }
        let hi = cur + p;
        let mut best = cur + 1;
        let mut best_reach = i64::MIN;
        for y in cur + 1..=hi {
            let reach = y.saturating_add(psi(y));
            if reach >= best_reach {
                best_reach = reach;
                best = y;
            }
        }
        seq.push(best);
        cur = best;
    }
    Ok(seq)
}

/// Largest number of emitted grains `[x_i, x_i + psi_{x_i}]` covering any
/// single site.
pub fn cover_multiplicity(field: &PsiField, seq: &[i64]) -> usize {
    let Some(&lo) = seq.first() else { return 0 };
    let hi = seq
        .iter()
        .map(|&y| y + field.psi_at(y).unwrap_or(0) as i64)
        .max()
        .unwrap_or(lo);
    let mut count = vec![0usize; (hi - lo + 1) as usize];
    for &y in seq {
        let e = y + field.psi_at(y).unwrap_or(0) as i64;
        for z in y..=e {
            count[(z - lo) as usize] += 1;
        }
    }
    count.into_iter().max().unwrap_or(0)
}

/// Sample the chain `Y` alone for `steps` steps and return the times it
/// sits at zero.
pub fn y_chain_zero_times(law: &dyn PsiLaw, steps: u64, seed: u64) -> Vec<u64> {
    let mut y = 0u64;
    let mut zeros = Vec::new();
    for m in 0..steps {
        let p = law.draw(seed, m as i64);
        y = p.max(y.saturating_sub(1));
        if y == 0 {
            zeros.push(m);
        }
    }
    zeros
}

/// Batch-means estimate of the variance of the dry indicator mean, scaled
/// by the number of sites.
pub fn batch_variance(sample: &TadbpSample, batches: usize) -> f64 {
    let flags: Vec<f64> = sample
        .wet
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if i == 0 && sample.field.domain == Domain::ZPlus || *w {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    let b = flags.len() / batches;
    let means: Vec<f64> = flags
        .chunks_exact(b)
        .map(|c| c.iter().sum::<f64>() / b as f64)
        .collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    var * b as f64
}
