//! Percolation thresholds in closed form and by Monte Carlo on explored balls.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use petgraph::unionfind::UnionFind;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::peel::map::{build_ball, is_hole, Mode, PlanarMapBall, ROOT_FACE};
use crate::peel::sample_power_tail;
use crate::rng::{stream, Rng};
use crate::stats::{quantile, wilson};
use crate::walks::WalkKit;
use crate::weights::{solve_admissible_c, ExactConstants, NuMeasure, Regime, SolverOptions, WeightSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Site,
    Bond,
    Face,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Site, Kind::Bond, Kind::Face];

    fn code(self) -> u64 {
        match self {
            Kind::Site => 1,
            Kind::Bond => 2,
            Kind::Face => 3,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Site => "site",
            Kind::Bond => "bond",
            Kind::Face => "face",
        })
    }
}

impl FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Kind> {
        match s {
            "site" => Ok(Kind::Site),
            "bond" => Ok(Kind::Bond),
            "face" => Ok(Kind::Face),
            _ => Err(Error::InvalidArgument(format!("unknown percolation kind {s:?}"))),
        }
    }
}

/// An exact rational or a floating-point value.
#[derive(Debug, Clone, PartialEq)]
pub enum Number {
    Exact(BigRational),
    Real(f64),
}

impl Number {
    pub fn to_f64(&self) -> f64 {
        match self {
            Number::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            Number::Real(x) => *x,
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Number::Exact(r) => write!(f, "{r}"),
            Number::Real(x) => write!(f, "{x:.15}"),
        }
    }
}

impl Serialize for Number {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdReport {
    pub site: Number,
    pub bond: Number,
    pub face: Number,
    /// Ingredients: `S = sum_k nu(-k)`, `nu(-1)` and the mean gulp `g`.
    pub s: Number,
    pub nu_minus_one: Number,
    pub gulp: Number,
}

impl ThresholdReport {
    pub fn get(&self, kind: Kind) -> &Number {
        match kind {
            Kind::Site => &self.site,
            Kind::Bond => &self.bond,
            Kind::Face => &self.face,
        }
    }

    /// `"site bond face"` on one line.
    pub fn line(&self) -> String {
        format!("{} {} {}", self.site, self.bond, self.face)
    }
}

/// Thresholds as exact fractions; needs a sequence whose `c_q` is rational.
pub fn thresholds_exact(q: &WeightSequence) -> Result<ThresholdReport> {
    let adm = solve_admissible_c(q, &SolverOptions::default())?;
    let k = ExactConstants::new(q, &adm)?;
    let one = BigRational::one();
    let two = &one + &one;
    let g = k.gulp.clone();
    let bond = &one - &one / (&g + &one);
    let face = (&one + &one / (&two * &g + &one)) / &two;
    let site = &one - &k.s * &k.s / (&two * &k.nu_minus_one * &g);
    Ok(ThresholdReport {
        site: Number::Exact(site),
        bond: Number::Exact(bond),
        face: Number::Exact(face),
        s: Number::Exact(k.s),
        nu_minus_one: Number::Exact(k.nu_minus_one),
        gulp: Number::Exact(g),
    })
}

/// Thresholds from a floating-point step measure. Refuses non-critical and dense inputs.
pub fn thresholds(nu: &NuMeasure, mean_tol: f64) -> Result<ThresholdReport> {
    if nu.regime != Regime::Critical || nu.mean.abs() > mean_tol {
        return Err(Error::NotCritical(format!("mean of nu is {:e}", nu.mean)));
    }
    let g = nu.gulp;
    if !g.is_finite() {
        return Err(Error::NotCritical("mean gulp is infinite".into()));
    }
    let s = nu.s;
    let n1 = nu.nu(-1);
    Ok(ThresholdReport {
        site: Number::Real(1.0 - s * s / (2.0 * n1 * g)),
        bond: Number::Real(1.0 - 1.0 / (g + 1.0)),
        face: Number::Real(0.5 * (1.0 + 1.0 / (2.0 * g + 1.0))),
        s: Number::Real(s),
        nu_minus_one: Number::Real(n1),
        gulp: Number::Real(g),
    })
}

/// Law of the right gulp given that it is positive.
#[derive(Debug, Clone)]
pub enum GulpSampler {
    /// Uniform draws from observed values.
    Pool(Vec<usize>),
    /// `pmf[j]` is the mass of `j`; the leftover mass goes to a power tail past the table.
    Pmf(Vec<f64>),
}

impl GulpSampler {
    /// Conditions a full pmf of the gulp on being positive.
    pub fn from_pmf(pmf: &[f64]) -> Result<GulpSampler> {
        let pos: f64 = 1.0 - pmf.first().copied().unwrap_or(0.0);
        if pos <= 0.0 {
            return Err(Error::InvalidArgument("gulp is never positive".into()));
        }
        let mut out: Vec<f64> = pmf.iter().map(|p| p / pos).collect();
        out[0] = 0.0;
        Ok(GulpSampler::Pmf(out))
    }

    pub fn from_samples(samples: &[usize]) -> Result<GulpSampler> {
        let pool: Vec<usize> = samples.iter().copied().filter(|g| *g > 0).collect();
        if pool.is_empty() {
            return Err(Error::InvalidArgument("empty gulp pool".into()));
        }
        Ok(GulpSampler::Pool(pool))
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        match self {
            GulpSampler::Pool(v) => v[rng.random_range(0..v.len())],
            GulpSampler::Pmf(p) => {
                let mut u: f64 = rng.random();
                for (j, m) in p.iter().enumerate() {
                    if u < *m {
                        return j;
                    }
                    u -= m;
                }
                sample_power_tail(p.len(), rng)
            }
        }
    }

    /// Mean of `G - 1`, with the power tail approximated by its continuous mean.
    pub fn mean_minus_one(&self) -> f64 {
        match self {
            GulpSampler::Pool(v) => v.iter().map(|g| *g as f64 - 1.0).sum::<f64>() / v.len() as f64,
            GulpSampler::Pmf(p) => {
                let head: f64 = p.iter().enumerate().map(|(j, m)| (j as f64 - 1.0) * m).sum();
                let rest = (1.0 - p.iter().sum::<f64>()).max(0.0);
                head + rest * (3.0 * (p.len() as f64 - 0.5) - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InterfaceWalk {
    pub p: f64,
    pub steps: usize,
    pub replicas: usize,
    /// Fraction of replicas still alive after `steps` steps.
    pub survival: f64,
    pub survived: Vec<bool>,
    pub drift: f64,
    pub drift_se: f64,
}

/// Length of the black boundary segment during the site exploration: each step adds
/// one black vertex with probability `p`, otherwise a white vertex swallows `G - 1`
/// black ones. The walk starts at 0 and is killed below 0.
pub fn site_interface_walk(p: f64, gulp: &GulpSampler, steps: usize, replicas: usize, seed: u64) -> Result<InterfaceWalk> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p = {p} outside [0, 1]")));
    }
    if let GulpSampler::Pool(v) = gulp {
        if v.is_empty() {
            return Err(Error::InvalidArgument("empty gulp pool".into()));
        }
    }
    let runs: Vec<(bool, f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[0x1f, i as u64]);
            let (mut x, mut alive, mut sum, mut sq) = (0i64, true, 0.0, 0.0);
            for _ in 0..steps {
                let inc = if rng.random::<f64>() < p { 1 } else { 1 - gulp.sample(&mut rng) as i64 };
                x += inc;
                alive &= x >= 0;
                sum += inc as f64;
                sq += (inc * inc) as f64;
            }
            (alive, sum, sq)
        })
        .collect();
    let n = (steps * replicas) as f64;
    let sum: f64 = runs.iter().map(|r| r.1).sum();
    let sq: f64 = runs.iter().map(|r| r.2).sum();
    let drift = sum / n;
    let var = (sq / n - drift * drift).max(0.0) * n / (n - 1.0).max(1.0);
    let survived: Vec<bool> = runs.iter().map(|r| r.0).collect();
    Ok(InterfaceWalk {
        p,
        steps,
        replicas,
        survival: survived.iter().filter(|s| **s).count() as f64 / replicas.max(1) as f64,
        survived,
        drift,
        drift_se: (var / n).sqrt(),
    })
}

/// Independent uniform marks on the cells of one kind, indexed by vertex, dart or face id.
/// A cell is black at level `p` when its mark is below `p`.
#[derive(Debug, Clone)]
pub struct Coloring {
    pub kind: Kind,
    pub marks: Vec<f64>,
}

impl Coloring {
    pub fn new(ball: &PlanarMapBall, kind: Kind, seed: u64, replica: u64) -> Coloring {
        let n = match kind {
            Kind::Site => ball.parent.len(),
            Kind::Bond => ball.num_darts(),
            Kind::Face => ball.face_first.len(),
        };
        let mut rng = stream(seed, &[0x2c, replica, kind.code()]);
        Coloring { kind, marks: (0..n).map(|_| rng.random::<f64>()).collect() }
    }

    fn edge_mark(&self, ball: &PlanarMapBall, d: u32) -> f64 {
        self.marks[d.min(ball.twin[d as usize]) as usize]
    }
}

/// Cells of one kind as a graph: node depths, the start node and adjacency
/// (neighbour, mark of the connecting edge) for bond percolation.
struct CellGraph {
    depth: Vec<u32>,
    start: usize,
    adj: Vec<Vec<(usize, u32)>>,
}

fn face_depth(ball: &PlanarMapBall, f: usize) -> u32 {
    ball.face_darts(f).iter().map(|d| ball.distance(ball.tail[*d as usize])).min().unwrap_or(u32::MAX)
}

/// The inner face of the root edge. When the root edge is pinched, with the root face on
/// both sides, the first inner face met by a breadth-first search from the origin that
/// starts with the root edge.
pub fn root_adjacent_face(ball: &PlanarMapBall) -> Result<usize> {
    let inner = ball.root_inner();
    let inner_face = |d: u32| {
        [ball.owner[d as usize], ball.owner[ball.twin[d as usize] as usize]]
            .into_iter()
            .find(|g| !is_hole(*g) && *g != ROOT_FACE)
    };
    if let Some(f) = inner_face(inner) {
        return Ok(f as usize);
    }
    let origin = ball.vertex_of(inner);
    let mut seen = std::collections::HashSet::from([origin]);
    let mut queue = std::collections::VecDeque::from([origin]);
    while let Some(v) = queue.pop_front() {
        let around = ball.darts_around(v);
        let from = around.iter().position(|d| *d == inner).unwrap_or(0);
        for &d in around[from..].iter().chain(&around[..from]) {
            if let Some(f) = inner_face(d) {
                return Ok(f as usize);
            }
        }
        for d in around {
            let w = ball.find(ball.head(d));
            if seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    Err(Error::Consistency("no revealed inner face near the origin".into()))
}

fn cell_graph(ball: &PlanarMapBall, kind: Kind) -> Result<CellGraph> {
    match kind {
        Kind::Site | Kind::Bond => {
            let n = ball.parent.len();
            let depth: Vec<u32> = (0..n as u32).map(|v| ball.distance(v)).collect();
            let mut adj = vec![Vec::new(); n];
            for d in 0..ball.num_darts() as u32 {
                if ball.alive(d) {
                    adj[ball.vertex_of(d) as usize].push((ball.find(ball.head(d)) as usize, d));
                }
            }
            Ok(CellGraph { depth, start: ball.vertex_of(ball.root) as usize, adj })
        }
        Kind::Face => {
            let n = ball.face_first.len();
            let depth: Vec<u32> = (0..n).map(|f| if f == ROOT_FACE as usize { u32::MAX } else { face_depth(ball, f) }).collect();
            let mut adj = vec![Vec::new(); n];
            for f in 1..n {
                for d in ball.face_darts(f) {
                    let g = ball.owner[ball.twin[d as usize] as usize];
                    if !is_hole(g) && g != ROOT_FACE && g as usize != f {
                        adj[f].push((g as usize, d));
                    }
                }
            }
            Ok(CellGraph { depth, start: root_adjacent_face(ball)?, adj })
        }
    }
}

/// For each radius, the smallest `p` at which the black cluster of the root cell
/// reaches a cell at depth `>= r`. Uses one bottleneck search over the ball.
pub fn arm_thresholds(ball: &PlanarMapBall, color: &Coloring, radii: &[u32]) -> Result<Vec<f64>> {
    let g = cell_graph(ball, color.kind)?;
    let node_mark = |v: usize| match color.kind {
        Kind::Bond => 0.0,
        _ => color.marks[v],
    };
    let mut best = vec![f64::INFINITY; g.adj.len()];
    let mut out = vec![f64::INFINITY; radii.len()];
    let mut unresolved = radii.len();
    let mut heap = BinaryHeap::new();
    best[g.start] = node_mark(g.start);
    heap.push(Reverse((Ord(best[g.start]), g.start)));
    while let Some(Reverse((Ord(b), v))) = heap.pop() {
        if b > best[v] {
            continue;
        }
        for (i, r) in radii.iter().enumerate() {
            if g.depth[v] >= *r && out[i].is_infinite() {
                out[i] = b;
                unresolved -= 1;
            }
        }
        if unresolved == 0 {
            break;
        }
        for &(w, d) in &g.adj[v] {
            let m = match color.kind {
                Kind::Bond => color.edge_mark(ball, d),
                _ => node_mark(w),
            };
            let nb = b.max(m);
            if nb < best[w] {
                best[w] = nb;
                heap.push(Reverse((Ord(nb), w)));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Ord(f64);
impl Eq for Ord {}
impl std::cmp::Ord for Ord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClusterReport {
    /// Cells in the black cluster of the root cell (0 if that cell is white).
    pub size: usize,
    pub one_arm: bool,
}

/// Black cluster of the root cell at level `p`, grown through cells at depth `< r`.
pub fn percolate_ball(ball: &PlanarMapBall, color: &Coloring, p: f64, r: u32) -> Result<ClusterReport> {
    let g = cell_graph(ball, color.kind)?;
    let n = g.adj.len();
    let black_node = |v: usize| color.kind == Kind::Bond || color.marks[v] < p;
    if !black_node(g.start) {
        return Ok(ClusterReport { size: 0, one_arm: false });
    }
    let mut uf = UnionFind::<usize>::new(n);
    for v in 0..n {
        if g.depth[v] >= r || !black_node(v) {
            continue;
        }
        for &(w, d) in &g.adj[v] {
            let open = match color.kind {
                Kind::Bond => color.edge_mark(ball, d) < p,
                _ => black_node(w),
            };
            if open {
                uf.union(v, w);
            }
        }
    }
    let root = uf.find(g.start);
    let alive_node = |v: usize| match color.kind {
        Kind::Face => v != ROOT_FACE as usize,
        _ => ball.parent[v] == v as u32,
    };
    let mut size = 0;
    let mut one_arm = false;
    for v in 0..n {
        if alive_node(v) && uf.find(v) == root {
            size += 1;
            one_arm |= g.depth[v] >= r;
        }
    }
    Ok(ClusterReport { size, one_arm: one_arm || g.depth[g.start] >= r })
}

#[derive(Debug, Clone, Serialize)]
pub struct PercoConfig {
    pub kinds: Vec<Kind>,
    pub radii: Vec<u32>,
    pub replicas: usize,
    pub seed: u64,
    pub max_darts: usize,
}

/// Per-replica arm thresholds: `p_star[kind][replica][radius]`.
#[derive(Debug, Clone, Serialize)]
pub struct ArmData {
    pub kinds: Vec<Kind>,
    pub radii: Vec<u32>,
    pub p_star: Vec<Vec<Vec<f64>>>,
    /// Replicas dropped for exceeding the dart budget.
    pub failures: usize,
    pub ball_radius: u32,
}

/// Builds one ball per replica and records arm thresholds for every kind and radius.
pub fn sample_arm_data(kit: &WalkKit, cfg: &PercoConfig) -> Result<ArmData> {
    if cfg.radii.is_empty() || cfg.kinds.is_empty() {
        return Err(Error::InvalidArgument("empty radius or kind list".into()));
    }
    let r_max = *cfg.radii.iter().max().unwrap();
    // faces first reached at depth >= r have depth at most r + k - 1 for half-degree k
    let k_max = kit.disk.q.support_bound() as u32;
    let ball_radius = r_max + k_max.saturating_sub(1).max(1);
    let rows: Vec<Option<Vec<Vec<f64>>>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| -> Result<Option<Vec<Vec<f64>>>> {
            let ball = match build_ball(kit, Mode::General, ball_radius, stream(cfg.seed, &[0x3b, i as u64]), cfg.max_darts) {
                Ok((b, _)) => b,
                Err(Error::Budget(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            cfg.kinds
                .iter()
                .map(|k| arm_thresholds(&ball, &Coloring::new(&ball, *k, cfg.seed, i as u64), &cfg.radii))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        })
        .collect::<Result<_>>()?;
    let failures = rows.iter().filter(|r| r.is_none()).count();
    let mut p_star = vec![Vec::new(); cfg.kinds.len()];
    for row in rows.into_iter().flatten() {
        for (k, v) in row.into_iter().enumerate() {
            p_star[k].push(v);
        }
    }
    Ok(ArmData { kinds: cfg.kinds.clone(), radii: cfg.radii.clone(), p_star, failures, ball_radius })
}

/// One-arm probability estimates on a grid of `p`, one row per `(p, r)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurveRow {
    pub kind: Kind,
    pub p: f64,
    pub r: u32,
    pub one_arm: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicas: usize,
}

/// Sorted arm thresholds per radius for one kind.
fn sorted_columns(rows: &[Vec<f64>], idx: &[usize], nr: usize) -> Vec<Vec<f64>> {
    (0..nr)
        .map(|j| {
            let mut c: Vec<f64> = idx.iter().map(|i| rows[*i][j]).collect();
            c.sort_by(f64::total_cmp);
            c
        })
        .collect()
}

fn theta(sorted: &[f64], p: f64) -> f64 {
    sorted.partition_point(|x| *x <= p) as f64 / sorted.len() as f64
}

pub fn one_arm_curves(data: &ArmData, grid: &[f64]) -> Vec<CurveRow> {
    let mut out = Vec::new();
    for (k, kind) in data.kinds.iter().enumerate() {
        let idx: Vec<usize> = (0..data.p_star[k].len()).collect();
        let cols = sorted_columns(&data.p_star[k], &idx, data.radii.len());
        for &p in grid {
            for (j, r) in data.radii.iter().enumerate() {
                let n = cols[j].len();
                let hits = cols[j].partition_point(|x| *x <= p);
                let (lo, hi) = wilson(hits, n, 1.96);
                out.push(CurveRow { kind: *kind, p, r: *r, one_arm: hits as f64 / n.max(1) as f64, ci_lo: lo, ci_hi: hi, replicas: n });
            }
        }
    }
    out
}

const CROSSING_GRID: usize = 1000;

/// A grid point counts as clearly above the threshold when the exponent difference
/// exceeds this many standard errors.
const Z_ABOVE: f64 = 3.0;

/// Difference of effective one-arm exponents `x(a, b) - x(b, c)`, where
/// `x(a, b) = -ln(theta_b / theta_a) / ln(b / a)`, and its delta-method standard error.
/// Arm events are nested in the radius, so the two ratios are conditional binomials.
fn exponent_gap(h: [f64; 3], radii: [u32; 3]) -> Option<(f64, f64)> {
    if h[2] <= 0.0 {
        return None;
    }
    let (l1, l2) = ((radii[1] as f64 / radii[0] as f64).ln(), (radii[2] as f64 / radii[1] as f64).ln());
    let (pi1, pi2) = (h[1] / h[0], h[2] / h[1]);
    let d = -pi1.ln() / l1 + pi2.ln() / l2;
    let var = (1.0 - pi1) / (pi1 * h[0]) / (l1 * l1) + (1.0 - pi2) / (pi2 * h[1]) / (l2 * l2);
    Some((d, var.sqrt()))
}

/// Crossing of effective exponents from consecutive radius pairs. Below the threshold
/// the exponent grows with the scale, above it decays, and at the threshold it is
/// scale-free. For each radius triple, finds the first level where the difference is
/// significantly positive and interpolates the nearest sign change to its left.
/// Returns the mean over triples and the number of sign changes seen.
fn crossing(cols: &[Vec<f64>], radii: &[u32]) -> (Option<f64>, usize) {
    let mut found = Vec::new();
    let mut changes = 0;
    for t in 0..radii.len().saturating_sub(2) {
        let r = [radii[t], radii[t + 1], radii[t + 2]];
        let gaps: Vec<(f64, Option<(f64, f64)>)> = (1..CROSSING_GRID)
            .map(|i| {
                let p = i as f64 / CROSSING_GRID as f64;
                let h = [0, 1, 2].map(|j| theta(&cols[t + j], p) * cols[t + j].len() as f64);
                (p, exponent_gap(h, r))
            })
            .collect();
        changes += gaps
            .windows(2)
            .filter(|w| matches!((w[0].1, w[1].1), (Some((a, _)), Some((b, _))) if a < 0.0 && b >= 0.0))
            .count();
        let Some(above) = gaps.iter().position(|(_, g)| matches!(g, Some((d, se)) if *d > Z_ABOVE * se)) else {
            continue;
        };
        let mut i = above;
        while i > 0 {
            match (gaps[i - 1].1, gaps[i].1) {
                (Some((d0, _)), Some((d1, _))) if d0 < 0.0 => {
                    let (p0, p1) = (gaps[i - 1].0, gaps[i].0);
                    found.push(p0 + (p1 - p0) * d0 / (d0 - d1));
                    break;
                }
                (Some(_), Some(_)) => i -= 1,
                _ => break,
            }
        }
    }
    if found.is_empty() {
        (None, changes)
    } else {
        (Some(found.iter().sum::<f64>() / found.len() as f64), changes)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdEstimate {
    pub kind: Kind,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicas: usize,
    pub bootstrap: usize,
    pub warnings: Vec<String>,
}

/// Crossing estimate with a percentile bootstrap over replicas.
pub fn estimate_threshold(data: &ArmData, kind: Kind, bootstrap: usize, seed: u64) -> Result<ThresholdEstimate> {
    if data.radii.len() < 3 {
        return Err(Error::InvalidArgument("the crossing estimator needs at least three radii".into()));
    }
    let k = data
        .kinds
        .iter()
        .position(|x| *x == kind)
        .ok_or_else(|| Error::InvalidArgument(format!("no data for {kind}")))?;
    let rows = &data.p_star[k];
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no replicas".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let (est, changes) = crossing(&sorted_columns(rows, &all, data.radii.len()), &data.radii);
    let mut warnings = Vec::new();
    let triples = data.radii.len() - 2;
    if changes > triples {
        warnings.push(format!("{changes} sign changes for {triples} radius triples"));
    }
    if data.failures > 0 {
        warnings.push(format!("{} replicas exceeded the dart budget", data.failures));
    }
    let est = est.ok_or_else(|| Error::Indeterminate(format!("no crossing of effective exponents for {kind}")))?;
    let mut boots: Vec<f64> = (0..bootstrap)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = stream(seed, &[0x4d, kind.code(), b as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            crossing(&sorted_columns(rows, &idx, data.radii.len()), &data.radii).0
        })
        .collect();
    if boots.len() < bootstrap {
        warnings.push(format!("{} bootstrap resamples had no crossing", bootstrap - boots.len()));
    }
    boots.sort_by(f64::total_cmp);
    Ok(ThresholdEstimate {
        kind,
        estimate: est,
        ci_lo: quantile(&boots, 0.025),
        ci_hi: quantile(&boots, 0.975),
        replicas: n,
        bootstrap,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{make_2p_angulation, DiskData};

    #[test]
    fn table_values() {
        let expect = [(2, "5/9 1/3 3/4"), (3, "76/125 5/11 11/16"), (4, "5197/8085 11/21 21/32")];
        for (p, line) in expect {
            let rep = thresholds_exact(&make_2p_angulation(p).unwrap()).unwrap();
            assert_eq!(rep.line(), line);
        }
    }

    #[test]
    fn float_thresholds_match_exact() {
        let q = make_2p_angulation(3).unwrap();
        let disk = DiskData::solve(&q, 2000).unwrap();
        let nu = crate::weights::nu_measure(&disk, 2000).unwrap();
        let f = thresholds(&nu, 1e-6).unwrap();
        let e = thresholds_exact(&q).unwrap();
        for k in Kind::ALL {
            assert!((f.get(k).to_f64() - e.get(k).to_f64()).abs() < 1e-6, "{k}");
        }
    }

    #[test]
    fn interface_walk_extremes() {
        let g = GulpSampler::Pool(vec![1, 2, 3]);
        let up = site_interface_walk(1.0, &g, 100, 10, 1).unwrap();
        assert_eq!(up.survival, 1.0);
        assert_eq!(up.drift, 1.0);
        let down = site_interface_walk(0.0, &g, 200, 50, 1).unwrap();
        assert_eq!(down.survival, 0.0);
        assert!(site_interface_walk(0.5, &GulpSampler::Pool(vec![]), 1, 1, 1).is_err());
    }

    #[test]
    fn interface_drift_changes_sign_at_site_threshold() {
        let kit = WalkKit::for_weights(&make_2p_angulation(2).unwrap(), 2000, 4096).unwrap();
        let sd = crate::series::invert_boundary(&kit.disk, 200).unwrap();
        let pmf = crate::halfplane::quadrangulation_gulp_pmf(1.0 / 12.0, &sd, 400);
        let g = GulpSampler::from_pmf(&pmf).unwrap();
        assert!((g.mean_minus_one() - 1.25).abs() < 0.01);
        let below = site_interface_walk(0.45, &g, 1000, 1000, 2).unwrap();
        let above = site_interface_walk(0.65, &g, 1000, 1000, 3).unwrap();
        assert!(below.drift + 3.0 * below.drift_se < 0.0, "{} {}", below.drift, below.drift_se);
        assert!(above.drift - 3.0 * above.drift_se > 0.0, "{} {}", above.drift, above.drift_se);
        let at = site_interface_walk(5.0 / 9.0, &g, 1000, 1000, 4).unwrap();
        assert!(at.drift.abs() < 3.0 * at.drift_se, "{} {}", at.drift, at.drift_se);
    }

    fn small_ball(seed: u64, r: u32) -> PlanarMapBall {
        let kit = WalkKit::for_weights(&make_2p_angulation(2).unwrap(), 2000, 4096).unwrap();
        build_ball(&kit, Mode::General, r, stream(seed, &[9]), 1 << 24).unwrap().0
    }

    #[test]
    fn root_face_is_an_inner_face_near_the_origin() {
        for seed in 0..40 {
            let ball = small_ball(seed, 4);
            let f = root_adjacent_face(&ball).unwrap();
            assert_ne!(f, ROOT_FACE as usize);
            assert!(face_depth(&ball, f) <= 2, "seed {seed}");
        }
    }

    #[test]
    fn bottleneck_agrees_with_union_find() {
        for seed in 0..6 {
            let ball = small_ball(seed, 7);
            for kind in Kind::ALL {
                let c = Coloring::new(&ball, kind, 5, seed);
                let radii = [2, 4, 6];
                let ps = arm_thresholds(&ball, &c, &radii).unwrap();
                for (i, r) in radii.iter().enumerate() {
                    assert!(i == 0 || ps[i] >= ps[i - 1]);
                    for p in [0.2, 0.4, 0.5, 0.6, 0.75, 0.9, 1.0] {
                        let rep = percolate_ball(&ball, &c, p, *r).unwrap();
                        assert_eq!(rep.one_arm, p > ps[i], "{kind} r={r} p={p} p*={}", ps[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn extreme_levels() {
        let ball = small_ball(3, 6);
        for kind in Kind::ALL {
            let c = Coloring::new(&ball, kind, 1, 0);
            assert!(percolate_ball(&ball, &c, 1.0 + 1e-12, 6).unwrap().one_arm);
            let none = percolate_ball(&ball, &c, 0.0, 6).unwrap();
            assert!(!none.one_arm);
            assert!(none.size <= 1);
        }
    }
}
