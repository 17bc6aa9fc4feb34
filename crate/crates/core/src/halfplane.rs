//! Half-plane maps with the exposed boundary reweighted by `H_up`, their simple core,
//! and measurements of the first simple peeling step.

use std::collections::HashMap;

use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::peel::map::{is_hole, Explorer, Mode, PlanarMapBall, ROOT_FACE};
use crate::peel::FreeLaw;
use crate::rng::Rng;
use crate::series::SimpleDiskData;
use crate::walks::{RenewalFunctions, WalkKit};
use crate::weights::{DiskData, NuMeasure};

/// Grows a ball of radius `r` around the root under the reweighted half-plane law.
pub fn run_a_metric(kit: &WalkKit, r: u32, rng: Rng, max_darts: usize) -> Result<PlanarMapBall> {
    let mut ex = Explorer::new(kit, Mode::Tilde, rng);
    ex.max_darts = max_darts;
    ex.grow_to(r)?;
    Ok(ex.into_ball())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoreVertex {
    pub vertex: u32,
    /// Index of its first visit on the root-face contour.
    pub position: usize,
    /// Half-perimeter of the component dangling from it (0 for none).
    pub half_perimeter: usize,
}

/// The simple component of the root-face contour that carries the root edge.
///
/// `west` starts at the origin of the root edge, `east` at its endpoint. For finite
/// maps the core is a cycle listed in `west`, and `east` holds the root endpoint only.
#[derive(Debug, Clone, Serialize)]
pub struct CoreDecomposition {
    pub west: Vec<CoreVertex>,
    pub east: Vec<CoreVertex>,
    /// Leading entries of each side that later peeling steps cannot change.
    pub west_determined: usize,
    pub east_determined: usize,
    pub closed: bool,
}

impl CoreDecomposition {
    /// Component dangling at index `i`: `0` is the origin, negative indices run west.
    pub fn component(&self, i: i64) -> Option<usize> {
        if i <= 0 {
            let k = (-i) as usize;
            (k < self.west_determined).then(|| self.west[k].half_perimeter)
        } else {
            let k = (i - 1) as usize;
            (k < self.east_determined).then(|| self.east[k].half_perimeter)
        }
    }

    /// Perimeter of the core of a finite map.
    pub fn core_perimeter(&self) -> Option<usize> {
        self.closed.then(|| self.west.len() + self.east.len())
    }

    pub fn detached(&self) -> Vec<(i64, usize)> {
        let w = self.west.iter().enumerate().map(|(k, c)| (-(k as i64), c.half_perimeter));
        let e = self.east.iter().enumerate().map(|(k, c)| (k as i64 + 1, c.half_perimeter));
        w.chain(e).filter(|c| c.1 > 0).collect()
    }

    pub fn is_simple(&self) -> bool {
        self.west.iter().chain(&self.east).all(|c| c.half_perimeter == 0)
    }
}

fn last_occurrences(s: &[u32], range: std::ops::RangeInclusive<usize>) -> HashMap<u32, usize> {
    let mut out = HashMap::new();
    for i in range {
        out.insert(s[i], i);
    }
    out
}

/// Loop-erases the root-face contour around the root edge.
pub fn extract_core(ball: &PlanarMapBall) -> Result<CoreDecomposition> {
    let s = ball.contour_vertices();
    let open = ball.open_vertices();
    let is_open = |v: u32| open[v as usize];
    if let Mode::Finite(_) = ball.mode {
        return Ok(extract_closed(&s, &is_open));
    }
    let outer = ball.twin[ball.root as usize];
    let darts = ball.root_face_darts();
    let m = darts
        .iter()
        .position(|d| *d == outer)
        .ok_or_else(|| Error::Consistency("root edge missing from the contour".into()))?;
    let n = s.len() - 1;
    let last = last_occurrences(&s, m + 1..=n);
    let mut first = HashMap::new();
    for i in (0..=m).rev() {
        first.insert(s[i], i);
    }
    if s[..=m].iter().any(|v| last.contains_key(v)) {
        return Err(Error::Indeterminate("root edge lies on a dangling component".into()));
    }
    let mut west = Vec::new();
    let mut i = m + 1;
    while i <= n {
        let j = last[&s[i]];
        west.push(CoreVertex { vertex: s[i], position: i, half_perimeter: (j - i) / 2 });
        i = j + 1;
    }
    let first_open = (m + 1..=n).find(|&i| is_open(s[i])).unwrap_or(n + 1);
    let west_determined = west
        .iter()
        .take_while(|c| c.position + 2 * c.half_perimeter < first_open)
        .count();
    let mut east = Vec::new();
    let mut i = m as i64;
    while i >= 0 {
        let j = first[&s[i as usize]];
        east.push(CoreVertex { vertex: s[i as usize], position: j, half_perimeter: (i as usize - j) / 2 });
        i = j as i64 - 1;
    }
    let last_open = (0..=m).rev().find(|&i| is_open(s[i]));
    let east_determined = east
        .iter()
        .take_while(|c| last_open.map(|o| c.position > o).unwrap_or(true))
        .count();
    Ok(CoreDecomposition { west, east, west_determined, east_determined, closed: false })
}

fn extract_closed(s: &[u32], is_open: &dyn Fn(u32) -> bool) -> CoreDecomposition {
    let n = s.len() - 1;
    if n == 0 {
        return CoreDecomposition { west: Vec::new(), east: Vec::new(), west_determined: 0, east_determined: 0, closed: true };
    }
    let last = last_occurrences(s, 1..=n - 1);
    let mut west = Vec::new();
    let mut i = 1;
    let mut root_component = 0;
    while i < n {
        if s[i] == s[0] {
            root_component = (n - i) / 2;
            break;
        }
        let j = last[&s[i]];
        west.push(CoreVertex { vertex: s[i], position: i, half_perimeter: (j - i) / 2 });
        i = j + 1;
    }
    let east = vec![CoreVertex { vertex: s[0], position: 0, half_perimeter: root_component }];
    let any_open = s.iter().any(|v| is_open(*v));
    let (wd, ed) = if any_open { (0, 0) } else { (west.len(), 1) };
    CoreDecomposition { west, east, west_determined: wd, east_determined: ed, closed: true }
}

/// Outcome of the first simple peeling step at the root edge of the core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimpleStepStats {
    /// Half-degree of the revealed face.
    pub k: usize,
    pub exposure: usize,
    pub gulp_left: usize,
    pub gulp_right: usize,
}

impl SimpleStepStats {
    /// Net change of the boundary length.
    pub fn balance(&self) -> i64 {
        self.exposure as i64 - 1 - self.gulp_left as i64 - self.gulp_right as i64
    }
}

/// Measures the first simple peeling step on the core of a half-plane ball.
///
/// The face on the inner side of the root edge is revealed together with every finite
/// region it separates from infinity. The gulps count old core-boundary edges swallowed
/// west and east of the root edge; the exposure counts the new boundary edges.
pub fn simple_step_stats(ball: &PlanarMapBall, core: &CoreDecomposition) -> Result<SimpleStepStats> {
    if core.closed {
        return Err(Error::InvalidArgument("simple peeling statistics need a half-plane map".into()));
    }
    let root = ball.root_inner();
    let f = ball.owner[root as usize];
    if is_hole(f) {
        return Err(Error::Indeterminate("root face not revealed".into()));
    }
    let mut darts = ball.face_darts(f as usize);
    let at = darts.iter().position(|d| *d == root).ok_or_else(|| Error::Consistency("root not on its face".into()))?;
    darts.rotate_left(at);
    let open = ball.open_vertices();
    let verts: Vec<u32> = darts.iter().map(|d| ball.vertex_of(*d)).collect();
    if verts.iter().any(|v| open[*v as usize]) {
        return Err(Error::Indeterminate("revealed face still touches the hole".into()));
    }
    let side = |list: &[CoreVertex], det: usize| -> Result<HashMap<u32, usize>> {
        let mut out = HashMap::new();
        for (i, c) in list.iter().enumerate() {
            if verts.contains(&c.vertex) {
                if i >= det {
                    return Err(Error::Indeterminate("gulp reaches the undetermined core".into()));
                }
                out.insert(c.vertex, i);
            }
        }
        Ok(out)
    };
    let pos_w = side(&core.west, core.west_determined)?;
    let pos_e = side(&core.east, core.east_determined)?;
    let (wa, a) = pos_w.iter().max_by_key(|x| x.1).map(|(v, i)| (*v, *i)).ok_or_else(|| Error::Consistency("root origin off the face".into()))?;
    let (eb, b) = pos_e.iter().max_by_key(|x| x.1).map(|(v, i)| (*v, *i)).ok_or_else(|| Error::Consistency("root endpoint off the face".into()))?;
    // contour of the face from the root endpoint around to the origin
    let mut c: Vec<u32> = verts[1..].to_vec();
    c.push(verts[0]);
    let i = c.iter().rposition(|v| *v == eb).unwrap();
    let j = i + c[i..].iter().position(|v| *v == wa).ok_or_else(|| Error::Consistency("face contour order".into()))?;
    let exposure = loop_erased_length(&c[i..=j]);
    if exposure == 0 {
        return Err(Error::Consistency("empty exposure".into()));
    }
    Ok(SimpleStepStats { k: darts.len() / 2, exposure, gulp_left: a, gulp_right: b })
}

/// Number of edges of the loop erasure of a vertex path.
pub fn loop_erased_length(path: &[u32]) -> usize {
    let last = last_occurrences(path, 0..=path.len() - 1);
    let mut i = 0;
    let mut len = 0;
    while i < path.len() - 1 {
        i = last[&path[i]];
        if i < path.len() - 1 {
            i += 1;
            len += 1;
        }
    }
    len
}

/// Escalation schedule for indeterminate measurements.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Escalation {
    pub r0: u32,
    pub r_cap: u32,
    pub max_darts: usize,
}

impl Default for Escalation {
    fn default() -> Self {
        Escalation { r0: 2, r_cap: 256, max_darts: 1 << 26 }
    }
}

/// Grows one ball until `measure` succeeds. On indeterminate outcomes the finite holes
/// touching the root face or the contour near the root edge are filled first; if there
/// are none, the radius doubles. Returns the measurement and the final radius.
pub fn measure_with_escalation<T>(
    kit: &WalkKit,
    rng: Rng,
    esc: Escalation,
    mut measure: impl FnMut(&PlanarMapBall) -> Result<T>,
) -> Result<(T, u32)> {
    let mut ex = Explorer::new(kit, Mode::Tilde, rng);
    ex.max_darts = esc.max_darts;
    let mut r = esc.r0.max(1);
    let mut window = 8;
    ex.grow_to(r)?;
    loop {
        match measure(&ex.map) {
            Ok(t) => return Ok((t, r)),
            Err(Error::Indeterminate(msg)) => {
                let holes = holes_near_root(&ex.map, window);
                window *= 2;
                if !holes.is_empty() {
                    for h in holes {
                        ex.fill_hole(h)?;
                    }
                    continue;
                }
                if r >= esc.r_cap {
                    return Err(Error::Indeterminate(format!("{msg} at radius {r}")));
                }
                r = (2 * r).min(esc.r_cap);
                ex.grow_to(r)?;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Alive finite holes meeting the face of the root edge or the contour within `window`
/// positions of the root edge.
fn holes_near_root(ball: &PlanarMapBall, window: usize) -> Vec<usize> {
    let mut near = vec![false; ball.parent.len()];
    let s = ball.contour_vertices();
    let outer = ball.twin[ball.root as usize];
    if let Some(m) = ball.root_face_darts().iter().position(|d| *d == outer) {
        for v in &s[m.saturating_sub(window)..(m + window + 2).min(s.len())] {
            near[*v as usize] = true;
        }
    }
    let f = ball.owner[ball.root_inner() as usize];
    if !is_hole(f) && f != ROOT_FACE {
        for d in ball.face_darts(f as usize) {
            near[ball.vertex_of(d) as usize] = true;
        }
    }
    (0..ball.holes.len())
        .filter(|h| {
            let hole = &ball.holes[*h];
            hole.alive && !hole.infinite && ball.hole_darts(*h).iter().any(|d| near[ball.vertex_of(*d) as usize])
        })
        .collect()
}

/// First simple peel of the core of one reweighted half-plane map.
pub fn sample_simple_step(kit: &WalkKit, rng: Rng, esc: Escalation) -> Result<(SimpleStepStats, u32)> {
    measure_with_escalation(kit, rng, esc, |ball| {
        let core = extract_core(ball)?;
        simple_step_stats(ball, &core)
    })
}

/// Half-perimeters of the components dangling at the given core indices.
pub fn sample_dangling(kit: &WalkKit, rng: Rng, indices: &[i64], esc: Escalation) -> Result<(Vec<usize>, u32)> {
    measure_with_escalation(kit, rng, esc, |ball| {
        let core = extract_core(ball)?;
        indices
            .iter()
            .map(|i| core.component(*i).ok_or_else(|| Error::Indeterminate(format!("component {i} undetermined"))))
            .collect()
    })
}

/// `sum_m w_m ((2k-1) min (2m+1))`, to be compared with `W_c H_up(2k-1)`.
pub fn c_root_normalizer(disk: &DiskData, k: usize) -> f64 {
    let mut acc = 0.0;
    for m in 0..k.saturating_sub(1) {
        acc += disk.w(m) * (2 * m + 1) as f64;
    }
    acc + (2 * k - 1) as f64 * disk.w_tail_sum(k.saturating_sub(1))
}

/// Relative gap of the normalizer identity for the root component.
pub fn c_root_normalizer_gap(disk: &DiskData, h: &RenewalFunctions, k: usize) -> f64 {
    c_root_normalizer(disk, k) / (disk.w_c * h.up(2 * k as i64 - 1)) - 1.0
}

/// Samples the root component's half-perimeter and the offset of the marked edge
/// (0 is the root edge, `i > 0` the i-th edge to its left).
pub fn sample_c_root(k: usize, law: &FreeLaw, rng: &mut Rng) -> (usize, usize) {
    let cap = 2 * k - 1;
    loop {
        let m = law.sample(rng);
        let slots = cap.min(2 * m + 1);
        if rng.random::<f64>() * cap as f64 <= slots as f64 {
            return (m, rng.random_range(0..slots));
        }
    }
}

/// `P(G_r > 0) = S^2 / (2 nu(-1))`, checked against `1 / c_hat`.
pub fn prob_gulp_positive(nu: &NuMeasure, hat_c: f64, tol: f64) -> Result<f64> {
    let p = nu.prob_gulp_positive();
    let other = 1.0 / hat_c;
    if (p - other).abs() > tol {
        return Err(Error::Consistency(format!("P(G_r > 0) = {p} but 1/c_hat = {other}")));
    }
    Ok(p)
}

/// Law of the right gulp of the first simple peel on quadrangulations, on `0..len`.
///
/// With `a_n = What^(n) hat_c^-n`, `A = sum_n a_n` and `kappa = q_2 hat_c`, the revealed
/// quadrangle swallows `2n - 1` edges with mass `kappa a_n (1 + A)`, `2(n + m - 1)` edges
/// through two pockets with mass `kappa a_n a_m`, and `2n - 2` edges through one pocket
/// of perimeter `2n` with mass `kappa a_n`.
pub fn quadrangulation_gulp_pmf(q2: f64, sdisk: &SimpleDiskData, len: usize) -> Vec<f64> {
    let kappa = q2 * sdisk.hat_c;
    let nmax = sdisk.l_max();
    let a = |n: usize| if n == 0 || n > nmax { 0.0 } else { sdisk.hat_w[n] };
    let total_a = sdisk.total() - 1.0;
    let mut pmf = vec![0.0; len];
    for n in 1..=nmax {
        if 2 * n - 1 < len {
            pmf[2 * n - 1] += kappa * a(n) * (1.0 + total_a);
        }
        if n >= 2 && 2 * n - 2 < len {
            pmf[2 * n - 2] += kappa * a(n);
        }
        for m in 1..=nmax {
            let j = 2 * (n + m - 1);
            if j >= len {
                break;
            }
            pmf[j] += kappa * a(n) * a(m);
        }
    }
    pmf[0] = 1.0 - kappa * (total_a * (1.0 + total_a) + total_a * total_a + total_a - a(1));
    pmf
}

/// Expected law of the first revealed face: `q_k c^(k-1) H_up(2k-1)`.
pub fn face_degree_law(nu: &NuMeasure, h: &RenewalFunctions) -> Vec<(usize, f64)> {
    nu.nu_pos
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(k, v)| (k + 1, v * h.up(2 * k as i64 + 1)))
        .collect()
}

/// Literal maps used as fixtures.
pub mod fixtures {
    use super::*;

    /// A simple peeling step with exposure 4, right gulp 3 and left gulp 2.
    ///
    /// Boundary, west to east: `w4 w3 w2 w1 b0 | b1 e2 e3 e4 e5 e6`, rooted at `b0 -> b1`.
    /// The face `f` of degree 8 meets the boundary at `w2`, `b0`, `b1` and `e4`;
    /// the two pockets it closes off are quadrangles, and a face of degree 8 caps it.
    pub fn simple_gulp() -> PlanarMapBall {
        let [w4, w3, w2, w1, b0, b1, e2, e3, e4, e5, e6, y, o1, o2, o3, t1] = std::array::from_fn(|i| i as u32);
        let faces = vec![
            vec![b0, b1, e4, o1, o2, o3, w2, y],
            vec![b1, e2, e3, e4],
            vec![w2, w1, b0, y],
            vec![w3, w2, o3, o2, o1, e4, e5, t1],
        ];
        PlanarMapBall::from_faces(&faces, &[w4, w3, w2, w1, b0, b1, e2, e3, e4, e5, e6], 4).expect("fixture")
    }

    /// A single edge with a path of two edges hanging at the root origin.
    pub fn edge_with_tree() -> PlanarMapBall {
        let (b1, b0, t1, t2) = (0, 1, 2, 3);
        PlanarMapBall::from_faces_finite(&[], &[b1, b0, t1, t2, t1, b0]).expect("fixture")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::weights::make_2p_angulation;

    fn kit() -> WalkKit {
        WalkKit::for_weights(&make_2p_angulation(2).unwrap(), 4000, 4096).unwrap()
    }

    #[test]
    fn gulp_fixture() {
        let ball = fixtures::simple_gulp();
        let rep = ball.check_structure(&[2, 4]);
        assert!(rep.ok, "{:?}", rep.errors);
        let core = extract_core(&ball).unwrap();
        assert!(core.is_simple());
        let st = simple_step_stats(&ball, &core).unwrap();
        assert_eq!((st.exposure, st.gulp_right, st.gulp_left), (4, 3, 2));
        assert_eq!(st.k, 4);
        assert_eq!(st.balance(), -2);
    }

    #[test]
    fn tree_fixture() {
        let ball = fixtures::edge_with_tree();
        assert_eq!(ball.euler_characteristic(), 2);
        let core = extract_core(&ball).unwrap();
        assert_eq!(core.core_perimeter(), Some(2));
        assert_eq!(core.detached(), vec![(0, 2)]);
    }

    #[test]
    fn simple_boundary_is_identity() {
        let faces = vec![vec![0, 1, 2, 3]];
        let ball = PlanarMapBall::from_faces_finite(&faces, &[1, 0, 3, 2]).unwrap();
        let core = extract_core(&ball).unwrap();
        assert!(core.is_simple());
        assert_eq!(core.core_perimeter(), Some(4));
    }

    #[test]
    fn loop_erasure() {
        assert_eq!(loop_erased_length(&[1, 2, 3, 2, 4]), 2);
        assert_eq!(loop_erased_length(&[1, 2, 1, 3]), 1);
        assert_eq!(loop_erased_length(&[5]), 0);
    }

    #[test]
    fn c_root_oracles() {
        let k = kit();
        for kk in 1..=20 {
            assert!(c_root_normalizer_gap(&k.disk, &k.h, kk).abs() < 1e-9, "k={kk}");
        }
        // P(C_root = vertex map) at k = 2
        let p0 = 1.0 / (k.disk.w_c * k.h.up(3));
        assert!((p0 - 0.5).abs() < 1e-12);
        let law = FreeLaw::new(&k.disk);
        let mut rng = stream(4, &[0]);
        let n = 100_000;
        let zeros = (0..n).filter(|_| sample_c_root(2, &law, &mut rng).0 == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.006);
    }

    #[test]
    fn quadrangulation_gulp_law() {
        let k = kit();
        let sd = crate::series::invert_boundary(&k.disk, 200).unwrap();
        let pmf = quadrangulation_gulp_pmf(1.0 / 12.0, &sd, 9);
        assert!((pmf[0] - 7.0 / 9.0).abs() < 1e-9);
        // hand-counted configurations
        let expect = [1.0 / 9.0 + 1.0 / 27.0, 0.375 * (64.0 / 729.0 + 4.0 / 9.0 * 4.0 / 81.0)];
        assert!((pmf[1] - expect[0]).abs() < 1e-9);
        assert!((pmf[2] - expect[1]).abs() < 1e-9);
    }

    #[test]
    fn gulp_probability_closed_form() {
        let k = kit();
        let p = prob_gulp_positive(&k.nu, k.disk.hat_c(), 1e-9).unwrap();
        assert!((p - 2.0 / 9.0).abs() < 1e-10);
    }

    #[test]
    fn tilde_balls_have_determined_first_peel() {
        let k = kit();
        let mut bal = 0;
        for seed in 0..300 {
            let (st, _) = sample_simple_step(&k, stream(seed, &[7]), Escalation::default()).unwrap();
            assert_eq!(st.k, 2);
            assert!(st.exposure >= 1);
            bal += st.balance();
        }
        assert!(bal.abs() < 300);
    }

    #[test]
    fn determined_components_are_stable() {
        let k = kit();
        for seed in 0..40 {
            let mut ex = Explorer::new(&k, Mode::Tilde, stream(seed, &[8]));
            ex.grow_to(4).unwrap();
            assert!(ex.map.check_structure(&[2]).ok);
            let early = extract_core(&ex.map).unwrap();
            ex.grow_to(8).unwrap();
            for h in holes_near_root(&ex.map, 64) {
                ex.fill_hole(h).unwrap();
            }
            assert!(ex.map.check_structure(&[2]).ok);
            let late = extract_core(&ex.map).unwrap();
            assert!(late.west_determined >= early.west_determined);
            assert!(late.east_determined >= early.east_determined);
            let key = |c: &CoreVertex| (c.vertex, c.half_perimeter);
            let same = |a: &[CoreVertex], b: &[CoreVertex]| a.iter().map(key).eq(b.iter().map(key));
            assert!(same(&early.west[..early.west_determined], &late.west[..early.west_determined]));
            assert!(same(&early.east[..early.east_determined], &late.east[..early.east_determined]));
        }
    }
}
