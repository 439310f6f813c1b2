//! Maximal weight of connected site sets through the origin, over a field of
//! speed-record weights.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{CountDistribution, DistSpec};
use crate::rng::{derive, open01, site_key, stream, tag};
use crate::walks::{record_horizon, w_record, WalksError};

#[derive(Debug, Error)]
pub enum AnimalError {
    #[error("exact search is capped at n = {cap} in dimension {dim}, got n = {n}")]
    SizeCapExceeded { n: usize, cap: usize, dim: u32 },
    #[error("weight box of radius {radius} cannot hold animals of size {size}")]
    BoxTooSmall { radius: i64, size: usize },
    #[error("bad dimension {0}")]
    BadDimension(u32),
    #[error("empty grid")]
    EmptyGrid,
    #[error(transparent)]
    Walks(#[from] WalksError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnimalWeights {
    pub dimension: u32,
    /// l-infinity radius of the box around the origin.
    pub radius: i64,
    /// Row-major over `[-R, R]^d`, first coordinate fastest.
    pub weights: Vec<u64>,
    pub a: f64,
    pub mu: Option<DistSpec>,
    pub tol: f64,
}

impl AnimalWeights {
    fn side(&self) -> i64 {
        2 * self.radius + 1
    }

    pub fn index(&self, site: &[i64]) -> Option<usize> {
        let mut idx = 0i64;
        let mut mul = 1i64;
        for &c in site {
            if c.abs() > self.radius {
                return None;
            }
            idx += (c + self.radius) * mul;
            mul *= self.side();
        }
        Some(idx as usize)
    }

    pub fn site(&self, mut idx: usize) -> Vec<i64> {
        let side = self.side() as usize;
        (0..self.dimension)
            .map(|_| {
                let c = (idx % side) as i64 - self.radius;
                idx /= side;
                c
            })
            .collect()
    }

    pub fn origin(&self) -> usize {
        self.index(&vec![0; self.dimension as usize]).unwrap()
    }

    pub fn weight(&self, site: &[i64]) -> u64 {
        self.index(site).map_or(0, |i| self.weights[i])
    }

    /// Field built from a function of the site.
    pub fn from_fn(dimension: u32, radius: i64, f: impl Fn(&[i64]) -> u64) -> Self {
        let mut w = AnimalWeights {
            dimension,
            radius,
            weights: Vec::new(),
            a: f64::NAN,
            mu: None,
            tol: 0.0,
        };
        let n = (w.side() as usize).pow(dimension);
        w.weights = (0..n).map(|i| f(&w.site(i))).collect();
        w
    }

    fn neighbours(&self, idx: usize, out: &mut Vec<usize>) {
        out.clear();
        let side = self.side() as usize;
        let mut stride = 1usize;
        let mut rest = idx;
        for _ in 0..self.dimension {
            let c = rest % side;
            rest /= side;
            if c > 0 {
                out.push(idx - stride);
            }
            if c + 1 < side {
                out.push(idx + stride);
            }
            stride *= side;
        }
    }

    fn l1(&self, idx: usize) -> i64 {
        self.site(idx).iter().map(|c| c.abs()).sum()
    }
}

/// `W_A` at every site of `[-R, R]^d`.  Each site draws `eta ~ mu` and one
/// stream per walk, so fields for different `A` share their jump times.
pub fn sample_weights(
    mu: &CountDistribution,
    a: f64,
    dimension: u32,
    radius: i64,
    tol: f64,
    eta_cap: u64,
    seed: u64,
) -> Result<AnimalWeights, AnimalError> {
    if dimension == 0 {
        return Err(AnimalError::BadDimension(dimension));
    }
    let eps = 1.0 / a;
    let mut w = AnimalWeights::from_fn(dimension, radius, |_| 0);
    w.a = a;
    w.mu = Some(mu.spec().clone());
    w.tol = tol;
    // the horizon is fixed by the largest admissible eta
    let horizon = record_horizon(a, tol / eta_cap as f64)?;
    let weights: Vec<u64> = (0..w.weights.len())
        .into_par_iter()
        .map(|i| {
            let site = w.site(i);
            let key = site_key(&site);
            let eta = mu
                .inverse_tail(open01(derive(seed, &[tag::WEIGHT, key])))
                .min(eta_cap);
            (0..eta)
                .map(|j| w_record(eps, horizon, &mut stream(seed, &[tag::WEIGHT, key, j + 1])))
                .max()
                .unwrap_or(0)
        })
        .collect();
    w.weights = weights;
    Ok(w)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Animal {
    pub score: u64,
    pub sites: Vec<Vec<i64>>,
    /// Connected sets examined.
    pub examined: u64,
}

pub fn exact_cap(dimension: u32) -> usize {
    match dimension {
        1 => 10_000,
        2 => 12,
        3 => 8,
        _ => 6,
    }
}

/// Best total weight over connected sets of `n + 1` sites containing the
/// origin.
pub fn max_animal_exact(w: &AnimalWeights, n: usize) -> Result<Animal, AnimalError> {
    let cap = exact_cap(w.dimension);
    if n > cap {
        return Err(AnimalError::SizeCapExceeded {
            n,
            cap,
            dim: w.dimension,
        });
    }
    if (w.radius as usize) < n {
        return Err(AnimalError::BoxTooSmall {
            radius: w.radius,
            size: n + 1,
        });
    }
    let origin = w.origin();
    // only sites within l1 distance n can be used
    let mut top: Vec<u64> = (0..w.weights.len())
        .filter(|&i| i != origin && w.l1(i) <= n as i64)
        .map(|i| w.weights[i])
        .collect();
    top.sort_unstable_by(|a, b| b.cmp(a));
    let mut top_sum = vec![0u64; n + 1];
    for r in 1..=n {
        top_sum[r] = top_sum[r - 1] + top.get(r - 1).copied().unwrap_or(0);
    }
    let seed = max_animal_greedy(w, n, 1);
    let mut s = Search {
        w,
        target: n + 1,
        top_sum,
        best: seed.score,
        best_set: seed.sites.iter().map(|x| w.index(x).unwrap()).collect(),
        current: vec![origin],
        seen: vec![false; w.weights.len()],
        examined: 0,
        scratch: Vec::new(),
    };
    s.seen[origin] = true;
    if n == 0 {
        return Ok(Animal {
            score: w.weights[origin],
            sites: vec![w.site(origin)],
            examined: 1,
        });
    }
    let mut untried = Vec::new();
    s.extend_untried(origin, &mut untried);
    s.recurse(untried, w.weights[origin]);
    let mut sites: Vec<Vec<i64>> = s.best_set.iter().map(|&i| w.site(i)).collect();
    sites.sort();
    Ok(Animal {
        score: s.best,
        sites,
        examined: s.examined,
    })
}

struct Search<'a> {
    w: &'a AnimalWeights,
    target: usize,
    top_sum: Vec<u64>,
    best: u64,
    best_set: Vec<usize>,
    current: Vec<usize>,
    seen: Vec<bool>,
    examined: u64,
    scratch: Vec<usize>,
}

impl Search<'_> {
    fn extend_untried(&mut self, cell: usize, untried: &mut Vec<usize>) -> usize {
        let mut nb = std::mem::take(&mut self.scratch);
        self.w.neighbours(cell, &mut nb);
        let mut added = 0;
        for &c in &nb {
            if !self.seen[c] {
                self.seen[c] = true;
                untried.push(c);
                added += 1;
            }
        }
        self.scratch = nb;
        added
    }

    // Each connected superset of `current` is reached once: a popped cell
    // stays marked, so later siblings never add it again.
    fn recurse(&mut self, mut untried: Vec<usize>, score: u64) {
        while let Some(cell) = untried.pop() {
            let s = score + self.w.weights[cell];
            self.current.push(cell);
            let remaining = self.target - self.current.len();
            if remaining == 0 {
                self.examined += 1;
                if s > self.best {
                    self.best = s;
                    self.best_set = self.current.clone();
                }
            } else if s + self.top_sum[remaining] > self.best {
                let mut next = untried.clone();
                let start = next.len();
                self.extend_untried(cell, &mut next);
                let added: Vec<usize> = next[start..].to_vec();
                self.recurse(next, s);
                for c in added {
                    self.seen[c] = false;
                }
            }
            self.current.pop();
        }
    }
}

/// Beam search over growing animals; `beam = usize::MAX` keeps every set.
pub fn max_animal_greedy(w: &AnimalWeights, n: usize, beam: usize) -> Animal {
    let origin = w.origin();
    let mut layer: Vec<(u64, Vec<usize>)> = vec![(w.weights[origin], vec![origin])];
    let mut nb = Vec::new();
    let mut examined = 1;
    for _ in 0..n {
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        let mut next = Vec::new();
        for (score, set) in &layer {
            for &c in set {
                w.neighbours(c, &mut nb);
                for &x in &nb {
                    if set.contains(&x) {
                        continue;
                    }
                    let mut s = set.clone();
                    let pos = s.binary_search(&x).unwrap_err();
                    s.insert(pos, x);
                    if seen.insert(s.clone()) {
                        next.push((score + w.weights[x], s));
                    }
                }
            }
        }
        examined += next.len() as u64;
        next.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        next.truncate(beam);
        if next.is_empty() {
            break;
        }
        layer = next;
    }
    let (score, best) = layer.into_iter().next().unwrap();
    let mut sites: Vec<Vec<i64>> = best.iter().map(|&i| w.site(i)).collect();
    sites.sort();
    Animal {
        score,
        sites,
        examined,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreRow {
    pub a: f64,
    pub n: usize,
    pub trial: u64,
    pub score: u64,
    pub normalized: f64,
    pub exact: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreCell {
    pub a: f64,
    pub n: usize,
    pub mean: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub cells: Vec<ScoreCell>,
    /// Per `n`, whether the mean normalized score never rises with `A`.
    pub monotone_in_a: Vec<(usize, bool)>,
    /// Per `n`, the smallest grid `A` whose mean is at most 1/3.
    pub achieving_a: Vec<(usize, Option<f64>)>,
}

/// Normalized best animal scores over independent fields.
#[allow(clippy::too_many_arguments)]
pub fn score_table(
    mu: &CountDistribution,
    dimension: u32,
    a_grid: &[f64],
    n_grid: &[usize],
    trials: u64,
    tol: f64,
    eta_cap: u64,
    beam: usize,
    seed: u64,
) -> Result<ScoreTable, AnimalError> {
    if a_grid.is_empty() || n_grid.is_empty() || trials == 0 {
        return Err(AnimalError::EmptyGrid);
    }
    let radius = *n_grid.iter().max().unwrap() as i64;
    let cap = exact_cap(dimension);
    let mut rows = Vec::new();
    for &a in a_grid {
        for trial in 0..trials {
            let field_seed = derive(seed, &[tag::TRIAL, trial]);
            let w = sample_weights(mu, a, dimension, radius, tol, eta_cap, field_seed)?;
            for &n in n_grid {
                let (score, exact) = if n <= cap {
                    (max_animal_exact(&w, n)?.score, true)
                } else {
                    (max_animal_greedy(&w, n, beam).score, false)
                };
                rows.push(ScoreRow {
                    a,
                    n,
                    trial,
                    score,
                    normalized: score as f64 / (n + 1) as f64,
                    exact,
                });
            }
        }
    }
    let mut cells = Vec::new();
    for &a in a_grid {
        for &n in n_grid {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.a == a && r.n == n)
                .map(|r| r.normalized)
                .collect();
            cells.push(ScoreCell {
                a,
                n,
                mean: v.iter().sum::<f64>() / v.len() as f64,
                max: v.iter().cloned().fold(0.0, f64::max),
            });
        }
    }
    let mut sorted_a = a_grid.to_vec();
    sorted_a.sort_by(f64::total_cmp);
    let mean_at = |a: f64, n: usize| cells.iter().find(|c| c.a == a && c.n == n).unwrap().mean;
    let monotone_in_a = n_grid
        .iter()
        .map(|&n| {
            let m: Vec<f64> = sorted_a.iter().map(|&a| mean_at(a, n)).collect();
            (n, m.windows(2).all(|p| p[1] <= p[0]))
        })
        .collect();
    let achieving_a = n_grid
        .iter()
        .map(|&n| {
            (
                n,
                sorted_a
                    .iter()
                    .copied()
                    .find(|&a| mean_at(a, n) <= 1.0 / 3.0),
            )
        })
        .collect();
    Ok(ScoreTable {
        rows,
        cells,
        monotone_in_a,
        achieving_a,
    })
}
