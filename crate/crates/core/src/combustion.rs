//! Event-driven simulation of the combustion growth process on `Z^d`.
//!
//! Every particle is identified by its home site and index there, and its
//! `k`-th holding time and direction are a hash of `(seed, home, index, k)`.
//! Sleeping counts are a hash of `(seed, site)`.  Runs that differ only in
//! mode or initial sources therefore live in the same random environment.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::hash::{BuildHasherDefault, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{CountDistribution, DistError, DistSpec};
use crate::rng::{derive, mix64, open01, site_key, tag};

pub const MAX_DIM: usize = 4;
pub type Site = [i64; MAX_DIM];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension must be between 1 and {MAX_DIM}, got {0}")]
    BadDimension(u32),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("source {0:?} does not match the dimension")]
    BadSource(Vec<i64>),
    #[error("trimmed mode needs d >= 2")]
    TrimmedNeedsPlane,
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Full,
    /// Only the first site reached on each hyperplane `x_1 = n` releases
    /// its sleeping particles.
    Trimmed,
}

fn default_rate() -> f64 {
    1.0
}
fn default_eta_cap() -> u64 {
    10_000
}
fn default_particle_cap() -> u64 {
    20_000_000
}
fn default_cadence() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dimension: u32,
    pub mu: DistSpec,
    pub horizon: f64,
    pub event_cap: u64,
    pub site_cap: u64,
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_cadence")]
    pub record_cadence: f64,
    /// Total jump rate of each particle.
    #[serde(default = "default_rate")]
    pub jump_rate: f64,
    /// Sleeping counts are capped here; the capped process is dominated by
    /// the true one.
    #[serde(default = "default_eta_cap")]
    pub eta_cap: u64,
    #[serde(default = "default_particle_cap")]
    pub particle_cap: u64,
    /// Initially active sites; the origin when empty.
    #[serde(default)]
    pub sources: Vec<Vec<i64>>,
    /// Keep `(site, sigma)` for every visited site in the output.
    #[serde(default)]
    pub keep_sites: bool,
}

impl SimulationConfig {
    pub fn new(dimension: u32, mu: DistSpec, horizon: f64, seed: u64) -> Self {
        SimulationConfig {
            dimension,
            mu,
            horizon,
            event_cap: 200_000_000,
            site_cap: 5_000_000,
            seed,
            mode: Mode::Full,
            record_cadence: 1.0,
            jump_rate: 1.0,
            eta_cap: default_eta_cap(),
            particle_cap: default_particle_cap(),
            sources: Vec::new(),
            keep_sites: false,
        }
    }

    pub fn validate(&self) -> Result<CountDistribution, SimError> {
        if self.dimension == 0 || self.dimension as usize > MAX_DIM {
            return Err(SimError::BadDimension(self.dimension));
        }
        for (v, name) in [
            (self.horizon, "horizon"),
            (self.record_cadence, "record_cadence"),
            (self.jump_rate, "jump_rate"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::NonPositive(name));
            }
        }
        for (v, name) in [
            (self.event_cap, "event_cap"),
            (self.site_cap, "site_cap"),
            (self.eta_cap, "eta_cap"),
            (self.particle_cap, "particle_cap"),
        ] {
            if v == 0 {
                return Err(SimError::NonPositive(name));
            }
        }
        for s in &self.sources {
            if s.len() != self.dimension as usize {
                return Err(SimError::BadSource(s.clone()));
            }
        }
        Ok(CountDistribution::new_allowing_zero(self.mu.clone())?)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub visited_count: u64,
    /// Rightmost visited site for d = 1, l-infinity radius of the visited
    /// set otherwise.
    pub tip: i64,
    /// Smallest first coordinate among visited sites.
    pub leftmost: i64,
    pub events: u64,
    /// Largest first coordinate among visited sites.
    pub first_coord_tip: i64,
    /// Largest first coordinate among active particles.
    pub active_tip: i64,
    pub particles: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum Termination {
    Completed,
    EventCapHit,
    SiteCapHit { explosion_suspected: bool },
    ParticleCapHit { explosion_suspected: bool },
}

impl Termination {
    pub fn explosion_suspected(&self) -> bool {
        matches!(
            self,
            Termination::SiteCapHit {
                explosion_suspected: true
            } | Termination::ParticleCapHit {
                explosion_suspected: true
            }
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Visit {
    pub site: Vec<i64>,
    pub sigma: f64,
    pub released: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub dimension: u32,
    pub mode: Mode,
    pub snapshots: Vec<Snapshot>,
    /// `(x, sigma_x - sigma_{x-1})` for `x >= 1`, d = 1 only.
    pub gaps: Vec<(i64, f64)>,
    pub termination: Termination,
    pub end_time: f64,
    pub events: u64,
    pub visited_count: u64,
    pub sigma_records: u64,
    pub particles: u64,
    /// Sum over all sites visited of the particles released there.
    pub released_total: u64,
    pub eta_truncations: u64,
    pub axis1_jumps: u64,
    /// Total time spent active, summed over particles.
    pub particle_time: f64,
    /// Event density per decile of `[0, end_time]`.
    pub density_deciles: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub visited: Vec<Visit>,
}

#[derive(Default)]
struct MixHasher(u64);

impl Hasher for MixHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = mix64(self.0 ^ b as u64);
        }
    }
    fn write_u64(&mut self, x: u64) {
        self.0 = mix64(self.0 ^ x);
    }
    fn write_i64(&mut self, x: i64) {
        self.write_u64(x as u64);
    }
    fn write_usize(&mut self, x: usize) {
        self.write_u64(x as u64);
    }
}

type SiteMap<V> = HashMap<Site, V, BuildHasherDefault<MixHasher>>;

#[derive(Clone, Copy)]
struct Particle {
    home: u64,
    index: u64,
    pos: Site,
    jumps: u64,
    born: f64,
}

#[derive(PartialEq)]
struct Event {
    t: f64,
    pid: u32,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.pid.cmp(&self.pid))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sleeping count at `site`, before capping.
pub fn eta_at(mu: &CountDistribution, seed: u64, site: &[i64]) -> u64 {
    mu.inverse_tail(open01(derive(seed, &[tag::ETA, site_key(site)])))
}

// Holding time before jump `k` and its direction index in 0..2d.
fn jump(seed: u64, p: &Particle, rate: f64, dim: u32) -> (f64, usize) {
    let h = derive(seed, &[tag::PARTICLE, p.home, p.index, p.jumps]);
    let hold = -open01(h).ln() / rate;
    let dir = (mix64(h) % (2 * dim as u64)) as usize;
    (hold, dir)
}

struct Sim<'a> {
    cfg: &'a SimulationConfig,
    mu: CountDistribution,
    dim: usize,
    sites: SiteMap<(f64, u64)>,
    planes: HashMap<i64, (), BuildHasherDefault<MixHasher>>,
    particles: Vec<Particle>,
    queue: BinaryHeap<Event>,
    events: u64,
    eta_truncations: u64,
    released_total: u64,
    axis1_jumps: u64,
    tip: i64,
    leftmost: i64,
    first_tip: i64,
    event_log: Vec<f64>,
}

impl Sim<'_> {
    fn visit(&mut self, site: Site, t: f64, initial: bool) {
        let key = site_key(&site[..self.dim]);
        let raw = eta_at(&self.mu, self.cfg.seed, &site[..self.dim]);
        let mut eta = raw.min(self.cfg.eta_cap);
        if raw > eta {
            self.eta_truncations += 1;
        }
        let release = match self.cfg.mode {
            Mode::Full => true,
            Mode::Trimmed => self.planes.insert(site[0], ()).is_none(),
        };
        if !release {
            eta = 0;
        }
        let count = if initial && eta == 0 { 1 } else { eta };
        self.sites.insert(site, (t, count));
        if self.dim == 1 {
            self.tip = self.tip.max(site[0]);
        } else {
            let r = site[..self.dim].iter().map(|c| c.abs()).max().unwrap_or(0);
            self.tip = self.tip.max(r);
        }
        self.leftmost = self.leftmost.min(site[0]);
        self.first_tip = self.first_tip.max(site[0]);
        self.released_total += count;
        for index in 0..count {
            let p = Particle {
                home: key,
                index,
                pos: site,
                jumps: 0,
                born: t,
            };
            let (hold, _) = jump(self.cfg.seed, &p, self.cfg.jump_rate, self.cfg.dimension);
            let pid = self.particles.len() as u32;
            self.particles.push(p);
            self.queue.push(Event { t: t + hold, pid });
        }
    }

    fn snapshot(&self, t: f64) -> Snapshot {
        Snapshot {
            t,
            visited_count: self.sites.len() as u64,
            tip: self.tip,
            leftmost: self.leftmost,
            events: self.events,
            first_coord_tip: self.first_tip,
            active_tip: self.particles.iter().map(|p| p.pos[0]).max().unwrap_or(0),
            particles: self.particles.len() as u64,
        }
    }
}

/// Run one trajectory to the horizon or a cap.
pub fn run(cfg: &SimulationConfig) -> Result<Trajectory, SimError> {
    let mu = cfg.validate()?;
    if cfg.mode == Mode::Trimmed && cfg.dimension < 2 {
        return Err(SimError::TrimmedNeedsPlane);
    }
    let dim = cfg.dimension as usize;
    let mut sim = Sim {
        cfg,
        mu,
        dim,
        sites: SiteMap::default(),
        planes: HashMap::default(),
        particles: Vec::new(),
        queue: BinaryHeap::new(),
        events: 0,
        eta_truncations: 0,
        released_total: 0,
        axis1_jumps: 0,
        tip: i64::MIN,
        leftmost: i64::MAX,
        first_tip: i64::MIN,
        event_log: Vec::new(),
    };
    let mut sources: Vec<Site> = cfg
        .sources
        .iter()
        .map(|s| {
            let mut site = [0; MAX_DIM];
            site[..dim].copy_from_slice(s);
            site
        })
        .collect();
    if sources.is_empty() {
        sources.push([0; MAX_DIM]);
    }
    sources.sort();
    sources.dedup();
    for s in sources {
        sim.visit(s, 0.0, true);
    }
    let mut snapshots = vec![sim.snapshot(0.0)];
    let mut next_snap = cfg.record_cadence;
    let mut termination = Termination::Completed;
    let mut end_time = cfg.horizon;
    while let Some(&Event { t, pid }) = sim.queue.peek() {
        while next_snap <= t.min(cfg.horizon) {
            snapshots.push(sim.snapshot(next_snap));
            next_snap += cfg.record_cadence;
        }
        if t > cfg.horizon {
            break;
        }
        sim.queue.pop();
        let p = sim.particles[pid as usize];
        let (_, dir) = jump(cfg.seed, &p, cfg.jump_rate, cfg.dimension);
        let mut pos = p.pos;
        let axis = dir / 2;
        pos[axis] += if dir % 2 == 0 { 1 } else { -1 };
        if axis == 0 {
            sim.axis1_jumps += 1;
        }
        {
            let q = &mut sim.particles[pid as usize];
            q.pos = pos;
            q.jumps += 1;
        }
        sim.events += 1;
        if sim.events.is_multiple_of(1024) {
            sim.event_log.push(t);
        }
        if !sim.sites.contains_key(&pos) {
            sim.visit(pos, t, false);
        }
        let q = sim.particles[pid as usize];
        let (hold, _) = jump(cfg.seed, &q, cfg.jump_rate, cfg.dimension);
        sim.queue.push(Event { t: t + hold, pid });
        let cap = if sim.events >= cfg.event_cap {
            Some(Termination::EventCapHit)
        } else if sim.sites.len() as u64 >= cfg.site_cap {
            Some(Termination::SiteCapHit {
                explosion_suspected: false,
            })
        } else if sim.particles.len() as u64 >= cfg.particle_cap {
            Some(Termination::ParticleCapHit {
                explosion_suspected: false,
            })
        } else {
            None
        };
        if let Some(c) = cap {
            termination = c;
            end_time = t;
            break;
        }
    }
    let deciles = density_deciles(&sim.event_log, end_time);
    let growth = match (deciles.first(), deciles.last()) {
        (Some(&a), Some(&b)) if a > 0.0 => b / a,
        (Some(_), Some(&b)) if b > 0.0 => f64::INFINITY,
        _ => 0.0,
    };
    termination = match termination {
        Termination::SiteCapHit { .. } => Termination::SiteCapHit {
            explosion_suspected: growth >= 10.0,
        },
        Termination::ParticleCapHit { .. } => Termination::ParticleCapHit {
            explosion_suspected: growth >= 10.0,
        },
        t => t,
    };
    if snapshots.last().is_some_and(|s| s.t < end_time) {
        snapshots.push(sim.snapshot(end_time));
    }
    let gaps = if dim == 1 {
        let mut g = Vec::new();
        let mut x = 1;
        while let (Some(a), Some(b)) = (
            sim.sites.get(&[x - 1, 0, 0, 0]),
            sim.sites.get(&[x, 0, 0, 0]),
        ) {
            g.push((x, b.0 - a.0));
            x += 1;
        }
        g
    } else {
        Vec::new()
    };
    let particle_time = sim.particles.iter().map(|p| end_time - p.born).sum();
    let mut visited: Vec<Visit> = if cfg.keep_sites {
        sim.sites
            .iter()
            .map(|(s, (sigma, released))| Visit {
                site: s[..dim].to_vec(),
                sigma: *sigma,
                released: *released,
            })
            .collect()
    } else {
        Vec::new()
    };
    visited.sort_by(|a, b| a.sigma.total_cmp(&b.sigma).then(a.site.cmp(&b.site)));
    Ok(Trajectory {
        dimension: cfg.dimension,
        mode: cfg.mode,
        snapshots,
        gaps,
        termination,
        end_time,
        events: sim.events,
        visited_count: sim.sites.len() as u64,
        sigma_records: sim.sites.values().count() as u64,
        particles: sim.particles.len() as u64,
        released_total: sim.released_total,
        eta_truncations: sim.eta_truncations,
        axis1_jumps: sim.axis1_jumps,
        particle_time,
        density_deciles: deciles,
        visited,
    })
}

fn density_deciles(log: &[f64], end: f64) -> Vec<f64> {
    if end <= 0.0 {
        return vec![0.0; 10];
    }
    let mut counts = [0u64; 10];
    for &t in log {
        let i = ((t / end) * 10.0).floor().clamp(0.0, 9.0) as usize;
        counts[i] += 1;
    }
    counts
        .iter()
        .map(|&c| c as f64 * 1024.0 / (end / 10.0))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrimmedPair {
    pub full: Trajectory,
    pub trimmed: Trajectory,
}

/// The full process and its trimmed version in one environment.
pub fn trimmed_run(cfg: &SimulationConfig) -> Result<TrimmedPair, SimError> {
    if cfg.dimension < 2 {
        return Err(SimError::TrimmedNeedsPlane);
    }
    let mut full = cfg.clone();
    full.mode = Mode::Full;
    let mut trimmed = cfg.clone();
    trimmed.mode = Mode::Trimmed;
    Ok(TrimmedPair {
        full: run(&full)?,
        trimmed: run(&trimmed)?,
    })
}

/// Estimated first-coordinate jump rate with its standard error.
pub fn axis1_rate(traj: &Trajectory) -> (f64, f64) {
    let n = traj.axis1_jumps as f64;
    (n / traj.particle_time, n.sqrt() / traj.particle_time)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateVerdict {
    LinearLike,
    SuperlinearLike,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpreadEstimate {
    /// `(window start, window end, mean tip / t)` over dyadic windows.
    pub speed_windows: Vec<(f64, f64, f64)>,
    pub loglog_slope: f64,
    pub verdict: RateVerdict,
    pub note: Option<String>,
}

pub fn spread_rate_estimate(traj: &Trajectory) -> SpreadEstimate {
    let pts: Vec<(f64, f64)> = traj.snapshots.iter().map(|s| (s.t, s.tip as f64)).collect();
    spread_rate_from_points(&pts)
}

/// Same estimate from raw `(t, tip)` points.
pub fn spread_rate_from_points(pts: &[(f64, f64)]) -> SpreadEstimate {
    let pts: Vec<(f64, f64)> = pts
        .iter()
        .copied()
        .filter(|(t, r)| *t > 0.0 && *r >= 0.0)
        .collect();
    let Some(&(t_end, _)) = pts.last() else {
        return SpreadEstimate {
            speed_windows: Vec::new(),
            loglog_slope: f64::NAN,
            verdict: RateVerdict::Inconclusive,
            note: Some("no positive snapshots".into()),
        };
    };
    let t_first = pts[0].0;
    let mut windows = Vec::new();
    let mut hi = t_end;
    while hi / 2.0 >= t_first {
        let lo = hi / 2.0;
        let sel: Vec<f64> = pts
            .iter()
            .filter(|(t, _)| *t > lo && *t <= hi)
            .map(|(t, r)| r / t)
            .collect();
        if !sel.is_empty() {
            windows.push((lo, hi, sel.iter().sum::<f64>() / sel.len() as f64));
        }
        hi = lo;
    }
    windows.reverse();
    // second half of the run on the logarithmic time axis
    let t_mid = (t_first * t_end).sqrt();
    let tail: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(t, r)| *t >= t_mid && *r > 0.0)
        .map(|(t, r)| (t.ln(), r.ln()))
        .collect();
    let slope = least_squares_slope(&tail);
    let decades = (t_end / t_first).log10();
    let mut note = None;
    let verdict = if windows.len() < 3 || (decades < 3.0 && windows.len() < 10) {
        note = Some("fewer than 3 decades and fewer than 10 windows".into());
        RateVerdict::Inconclusive
    } else {
        let v: Vec<f64> = windows.iter().map(|w| w.2).collect();
        let n = v.len();
        let last = &v[n - 3..];
        // the last window rises at most 10% above the preceding ones
        let peak = v[n - 4.min(n)..n - 1]
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        let settled = v[n - 1] <= 1.1 * peak;
        let increasing = last.windows(2).all(|w| w[1] > w[0]);
        if (0.9..=1.1).contains(&slope) && settled {
            RateVerdict::LinearLike
        } else if slope >= 1.2 && increasing {
            RateVerdict::SuperlinearLike
        } else {
            RateVerdict::Inconclusive
        }
    };
    SpreadEstimate {
        speed_windows: windows,
        loglog_slope: slope,
        verdict,
        note,
    }
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapStats {
    /// `(x, max_{1 <= y <= x} gap_y)`.
    pub max_gap_profile: Vec<(i64, f64)>,
    /// `(x, c^2 (ln x / ln c_eps)^2)`.
    pub bound_curve: Vec<(i64, f64)>,
    pub violations: u64,
    pub c: f64,
    pub c_eps: f64,
    pub x_min: i64,
}

pub fn activation_gap_stats(gaps: &[(i64, f64)], c_eps: f64, c: f64, x_min: i64) -> GapStats {
    let mut running = f64::NEG_INFINITY;
    let mut profile = Vec::with_capacity(gaps.len());
    let mut bound = Vec::with_capacity(gaps.len());
    let mut violations = 0;
    let lc = c_eps.ln();
    for &(x, g) in gaps {
        running = running.max(g);
        let b = if x >= 2 {
            c * c * ((x as f64).ln() / lc).powi(2)
        } else {
            f64::INFINITY
        };
        if x >= x_min && running >= b {
            violations += 1;
        }
        profile.push((x, running));
        bound.push((x, b));
    }
    GapStats {
        max_gap_profile: profile,
        bound_curve: bound,
        violations,
        c,
        c_eps,
        x_min,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn delta1(dim: u32, horizon: f64, seed: u64) -> SimulationConfig {
        SimulationConfig::new(dim, DistSpec::Delta { m: 1 }, horizon, seed)
    }

    #[test]
    fn initial_state() {
        let mut cfg = delta1(1, 5.0, 3);
        cfg.keep_sites = true;
        let tr = run(&cfg).unwrap();
        assert_eq!(tr.snapshots[0].t, 0.0);
        assert_eq!(tr.snapshots[0].tip, 0);
        assert_eq!(tr.snapshots[0].visited_count, 1);
        assert_eq!(tr.visited[0].site, vec![0]);
        assert_eq!(tr.visited[0].sigma, 0.0);
    }

    #[test]
    fn injection_when_origin_is_empty() {
        let cfg = SimulationConfig::new(1, DistSpec::Geometric { p: 0.9 }, 3.0, 0);
        let mu = cfg.validate().unwrap();
        let seed = (0..1000).find(|&s| eta_at(&mu, s, &[0]) == 0).unwrap();
        let cfg = SimulationConfig::new(1, DistSpec::Geometric { p: 0.9 }, 3.0, seed);
        let tr = run(&cfg).unwrap();
        assert_eq!(tr.snapshots[0].particles, 1);
    }

    #[test]
    fn visited_set_is_an_interval_in_one_dimension() {
        let tr = run(&delta1(1, 200.0, 5)).unwrap();
        for s in &tr.snapshots {
            assert_eq!(s.visited_count as i64, s.tip - s.leftmost + 1);
        }
    }

    #[test]
    fn bookkeeping_invariants() {
        let mut cfg = SimulationConfig::new(2, DistSpec::Geometric { p: 0.5 }, 15.0, 9);
        cfg.keep_sites = true;
        let tr = run(&cfg).unwrap();
        assert_eq!(tr.sigma_records, tr.visited_count);
        assert_eq!(tr.visited.len() as u64, tr.visited_count);
        assert_eq!(tr.particles, tr.released_total);
        let released: u64 = tr.visited.iter().map(|v| v.released).sum();
        assert_eq!(released, tr.particles);
        let sites: HashSet<_> = tr.visited.iter().map(|v| v.site.clone()).collect();
        assert_eq!(sites.len() as u64, tr.visited_count);
        for w in tr.snapshots.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!(w[1].visited_count >= w[0].visited_count);
            assert!(w[1].particles >= w[0].particles);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = SimulationConfig::new(2, DistSpec::Geometric { p: 0.4 }, 12.0, 77);
        let a = serde_json::to_string(&run(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn union_of_sources() {
        for seed in 0..5 {
            let mut base = SimulationConfig::new(2, DistSpec::Geometric { p: 0.5 }, 6.0, seed);
            base.keep_sites = true;
            let with = |src: Vec<Vec<i64>>| {
                let mut c = base.clone();
                c.sources = src;
                run(&c).unwrap()
            };
            let a = with(vec![vec![0, 0]]);
            let b = with(vec![vec![3, 1]]);
            let ab = with(vec![vec![0, 0], vec![3, 1]]);
            let sig = |tr: &Trajectory| -> HashMap<Vec<i64>, f64> {
                tr.visited
                    .iter()
                    .map(|v| (v.site.clone(), v.sigma))
                    .collect()
            };
            let (sa, sb, sab) = (sig(&a), sig(&b), sig(&ab));
            let mut union: HashMap<Vec<i64>, f64> = sa.clone();
            for (k, v) in sb {
                let e = union.entry(k).or_insert(v);
                *e = e.min(v);
            }
            assert_eq!(union, sab);
        }
    }

    #[test]
    fn trimmed_is_dominated() {
        let cfg = delta1(2, 40.0, 13);
        let pair = trimmed_run(&cfg).unwrap();
        for (f, t) in pair
            .full
            .snapshots
            .iter()
            .zip(pair.trimmed.snapshots.iter())
        {
            assert_eq!(f.t, t.t);
            assert!(t.first_coord_tip <= f.first_coord_tip);
        }
        let (rate, se) = axis1_rate(&pair.trimmed);
        assert!((rate - 0.5).abs() < 3.0 * se, "{rate} {se}");
    }

    #[test]
    fn synthetic_linear_tip() {
        let pts: Vec<(f64, f64)> = (1..=4000)
            .map(|i| (i as f64 * 0.5, 1.5 * i as f64))
            .collect();
        let e = spread_rate_from_points(&pts);
        assert!((e.loglog_slope - 1.0).abs() < 1e-9);
        assert_eq!(e.verdict, RateVerdict::LinearLike);
        let pts: Vec<(f64, f64)> = (1..=4000).map(|i| (i as f64, (i as f64).powi(2))).collect();
        assert_eq!(
            spread_rate_from_points(&pts).verdict,
            RateVerdict::SuperlinearLike
        );
    }

    #[test]
    fn gap_statistics_on_synthetic_input() {
        let ones: Vec<(i64, f64)> = (1..=10_000).map(|x| (x, 1.0)).collect();
        let s = activation_gap_stats(&ones, 0.6895, 2.5, 3);
        assert_eq!(s.violations, 0);
        assert!(s.max_gap_profile.iter().all(|p| p.1 == 1.0));
        let cubes: Vec<(i64, f64)> = (1..=10_000).map(|x| (x, (x as f64).ln().powi(3))).collect();
        assert!(activation_gap_stats(&cubes, 0.01, 2.5, 50).violations > 0);
    }

    #[test]
    fn site_cap_terminates() {
        let mut cfg = delta1(2, 1e9, 1);
        cfg.site_cap = 500;
        let tr = run(&cfg).unwrap();
        assert!(matches!(tr.termination, Termination::SiteCapHit { .. }));
        assert_eq!(tr.visited_count, 500);
        let mut cfg = delta1(1, 1e9, 1);
        cfg.event_cap = 1000;
        assert_eq!(run(&cfg).unwrap().termination, Termination::EventCapHit);
    }
}
