//! Half-edge maps grown by filled-in peeling.
//!
//! Darts carry `twin`, `tail`, `next`/`prev` (around their face or hole) and an
//! `owner`: an inner face, the root face, a hole, or dead. A face lies on the
//! left of its darts. Hole darts are linked in contour order, so the infinite
//! hole is a west-to-east path and finite holes are cycles.
//!
//! Vertices are union-find classes; identifications merge classes and splice
//! their dart rings. Distances to the origin are kept per class and relaxed
//! after every event.
//!
//! In the half-plane modes the boundary rays beyond the explicit frontier are
//! implicit and materialized one edge at a time.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::Serialize;

use super::{finite_peel_step, finite_step_masses, general_step, sample_tilde_step, HalfPlaneEvent, PeelEvent};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::walks::WalkKit;

pub const NIL: u32 = u32::MAX;
pub const INF: u32 = u32::MAX;
const HOLE_BIT: u32 = 1 << 31;
const DEAD: u32 = u32::MAX;
pub const ROOT_FACE: u32 = 0;
const INF_HOLE: u32 = HOLE_BIT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Boltzmann map with a boundary of half-perimeter `l`.
    Finite(usize),
    /// Plain half-plane law.
    General,
    /// Half-plane law reweighted by `H_up` along the exposed boundary.
    Tilde,
}

#[derive(Debug, Clone, Serialize)]
pub struct Hole {
    pub half: usize,
    pub anchor: u32,
    pub alive: bool,
    pub infinite: bool,
}

/// A rooted map with holes, built by peeling.
#[derive(Debug, Clone)]
pub struct PlanarMapBall {
    pub mode: Mode,
    pub twin: Vec<u32>,
    pub tail: Vec<u32>,
    pub next: Vec<u32>,
    pub prev: Vec<u32>,
    pub owner: Vec<u32>,
    pub vnext: Vec<u32>,
    pub parent: Vec<u32>,
    pub dist: Vec<u32>,
    pub ring: Vec<u32>,
    pub face_first: Vec<u32>,
    pub face_degree: Vec<u32>,
    pub holes: Vec<Hole>,
    /// Inner dart of the root edge, from the origin.
    pub root: u32,
    pub fleft: u32,
    pub fright: u32,
    pub exposed: usize,
    pub left_outer: u32,
    pub right_outer: u32,
    ext_vertex: u32,
    pub radius: u32,
}

pub fn is_hole(owner: u32) -> bool {
    owner != DEAD && owner & HOLE_BIT != 0
}

pub fn hole_id(owner: u32) -> usize {
    (owner & !HOLE_BIT) as usize
}

impl PlanarMapBall {
    fn empty(mode: Mode) -> Self {
        PlanarMapBall {
            mode,
            twin: Vec::new(),
            tail: Vec::new(),
            next: Vec::new(),
            prev: Vec::new(),
            owner: Vec::new(),
            vnext: Vec::new(),
            parent: Vec::new(),
            dist: Vec::new(),
            ring: Vec::new(),
            face_first: Vec::new(),
            face_degree: Vec::new(),
            holes: Vec::new(),
            root: NIL,
            fleft: NIL,
            fright: NIL,
            exposed: 0,
            left_outer: NIL,
            right_outer: NIL,
            ext_vertex: NIL,
            radius: 0,
        }
    }

    pub fn num_darts(&self) -> usize {
        self.twin.len()
    }

    pub fn alive(&self, d: u32) -> bool {
        self.owner[d as usize] != DEAD
    }

    pub fn find(&self, mut v: u32) -> u32 {
        while self.parent[v as usize] != v {
            v = self.parent[v as usize];
        }
        v
    }

    fn find_mut(&mut self, mut v: u32) -> u32 {
        while self.parent[v as usize] != v {
            let p = self.parent[v as usize];
            self.parent[v as usize] = self.parent[p as usize];
            v = p;
        }
        v
    }

    /// Live dart on the inner side of the root edge; the root dart itself dies when
    /// the root edge is glued to another edge.
    pub fn root_inner(&self) -> u32 {
        self.twin[self.twin[self.root as usize] as usize]
    }

    pub fn head(&self, d: u32) -> u32 {
        self.tail[self.twin[d as usize] as usize]
    }

    pub fn vertex_of(&self, d: u32) -> u32 {
        self.find(self.tail[d as usize])
    }

    pub fn distance(&self, v: u32) -> u32 {
        self.dist[self.find(v) as usize]
    }

    fn add_vertex(&mut self, dist: u32) -> u32 {
        let v = self.parent.len() as u32;
        self.parent.push(v);
        self.dist.push(dist);
        self.ring.push(NIL);
        v
    }

    /// Darts `u -> v` and `v -> u`, unowned.
    fn add_edge(&mut self, u: u32, v: u32) -> (u32, u32) {
        let d = self.twin.len() as u32;
        let t = d + 1;
        self.twin.extend([t, d]);
        self.tail.extend([u, v]);
        self.next.extend([NIL, NIL]);
        self.prev.extend([NIL, NIL]);
        self.owner.extend([DEAD, DEAD]);
        self.vnext.extend([d, t]);
        let ru = self.find_mut(u);
        self.ring_insert(ru, d);
        let rv = self.find_mut(v);
        self.ring_insert(rv, t);
        (d, t)
    }

    fn ring_insert(&mut self, r: u32, d: u32) {
        let head = self.ring[r as usize];
        if head == NIL {
            self.ring[r as usize] = d;
            self.vnext[d as usize] = d;
        } else {
            self.vnext[d as usize] = self.vnext[head as usize];
            self.vnext[head as usize] = d;
        }
    }

    /// Merges two vertex classes and returns the surviving root.
    fn union(&mut self, a: u32, b: u32) -> u32 {
        let ra = self.find_mut(a);
        let rb = self.find_mut(b);
        if ra == rb {
            return ra;
        }
        let (r, o) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[o as usize] = r;
        self.dist[r as usize] = self.dist[r as usize].min(self.dist[o as usize]);
        let (hr, ho) = (self.ring[r as usize], self.ring[o as usize]);
        if hr == NIL {
            self.ring[r as usize] = ho;
        } else if ho != NIL {
            self.vnext.swap(hr as usize, ho as usize);
        }
        r
    }

    /// Smaller endpoint distance of a dart.
    pub fn key(&self, d: u32) -> u32 {
        let a = self.distance(self.tail[d as usize]);
        let b = self.distance(self.head(d));
        a.min(b)
    }

    /// Live darts around a vertex class.
    pub fn darts_around(&self, v: u32) -> Vec<u32> {
        let r = self.find(v);
        let start = self.ring[r as usize];
        let mut out = Vec::new();
        if start == NIL {
            return out;
        }
        let mut x = start;
        loop {
            if self.alive(x) {
                out.push(x);
            }
            x = self.vnext[x as usize];
            if x == start {
                break;
            }
        }
        out
    }

    pub fn num_inner_faces(&self) -> usize {
        self.face_first.len() - 1
    }

    pub fn face_darts(&self, f: usize) -> Vec<u32> {
        let first = self.face_first[f];
        let mut out = vec![first];
        let mut x = self.next[first as usize];
        while x != first && x != NIL {
            out.push(x);
            x = self.next[x as usize];
        }
        out
    }

    pub fn face_vertices(&self, f: usize) -> Vec<u32> {
        self.face_darts(f).iter().map(|d| self.vertex_of(*d)).collect()
    }

    /// Darts of a hole in contour order.
    pub fn hole_darts(&self, h: usize) -> Vec<u32> {
        let hole = &self.holes[h];
        if !hole.alive {
            return Vec::new();
        }
        if hole.infinite {
            let mut out = Vec::new();
            let mut x = self.fleft;
            while x != NIL {
                out.push(x);
                x = self.next[x as usize];
            }
            return out;
        }
        let first = hole.anchor;
        let mut out = vec![first];
        let mut x = self.next[first as usize];
        while x != first {
            out.push(x);
            x = self.next[x as usize];
        }
        out
    }

    /// Outer darts of the root face in contour order (east to west for the half-plane).
    pub fn root_face_darts(&self) -> Vec<u32> {
        match self.mode {
            Mode::Finite(_) => {
                if self.root == NIL {
                    return Vec::new();
                }
                self.face_darts(ROOT_FACE as usize)
            }
            _ => {
                let mut out = Vec::new();
                let mut x = self.right_outer;
                while x != NIL {
                    out.push(x);
                    x = self.next[x as usize];
                }
                out
            }
        }
    }

    /// Vertex classes that lie on some hole.
    pub fn frontier_vertices(&self) -> Vec<bool> {
        let mut out = vec![false; self.parent.len()];
        for (h, hole) in self.holes.iter().enumerate() {
            if !hole.alive {
                continue;
            }
            for d in self.hole_darts(h) {
                out[self.vertex_of(d) as usize] = true;
                out[self.find(self.head(d)) as usize] = true;
            }
        }
        if !matches!(self.mode, Mode::Finite(_)) {
            // extremities continue into the implicit rays
            if self.fleft != NIL {
                out[self.vertex_of(self.fleft) as usize] = true;
                out[self.find(self.head(self.fright)) as usize] = true;
            } else if self.ext_vertex != NIL {
                out[self.find(self.ext_vertex) as usize] = true;
            }
            if self.left_outer != NIL {
                out[self.find(self.head(self.left_outer)) as usize] = true;
                out[self.vertex_of(self.right_outer) as usize] = true;
            }
        }
        out
    }

    /// Vertex classes that future peeling steps may still identify with others:
    /// vertices of alive holes and the two ends of the explored contour.
    pub fn open_vertices(&self) -> Vec<bool> {
        let mut out = vec![false; self.parent.len()];
        match self.mode {
            Mode::Finite(_) => {
                for (h, hole) in self.holes.iter().enumerate() {
                    for d in self.hole_darts(h) {
                        out[self.vertex_of(d) as usize] = hole.alive;
                    }
                }
            }
            _ => {
                for (h, hole) in self.holes.iter().enumerate() {
                    if hole.alive && !hole.infinite {
                        for d in self.hole_darts(h) {
                            out[self.vertex_of(d) as usize] = true;
                        }
                    }
                }
                let mut x = self.fleft;
                while x != NIL {
                    out[self.vertex_of(x) as usize] = true;
                    out[self.find(self.head(x)) as usize] = true;
                    x = self.next[x as usize];
                }
                if self.ext_vertex != NIL {
                    out[self.find(self.ext_vertex) as usize] = true;
                }
                if self.left_outer != NIL {
                    out[self.find(self.head(self.left_outer)) as usize] = true;
                    out[self.vertex_of(self.right_outer) as usize] = true;
                }
            }
        }
        out
    }

    /// Root-face contour as a vertex sequence, starting with the outer dart of the root edge
    /// for finite maps (closed, last equals first) and running east to west for half-plane maps.
    pub fn contour_vertices(&self) -> Vec<u32> {
        let darts = self.root_face_darts();
        let mut out: Vec<u32> = darts.iter().map(|d| self.vertex_of(*d)).collect();
        if let Some(last) = darts.last() {
            out.push(self.find(self.head(*last)));
        }
        out
    }

    pub fn vertex_classes(&self) -> Vec<u32> {
        let mut seen = vec![false; self.parent.len()];
        let mut out = Vec::new();
        for d in 0..self.num_darts() as u32 {
            if self.alive(d) {
                let r = self.vertex_of(d);
                if !seen[r as usize] {
                    seen[r as usize] = true;
                    out.push(r);
                }
            }
        }
        if out.is_empty() && !self.parent.is_empty() {
            out.push(self.find(0));
        }
        out
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_classes().len()
    }

    pub fn num_edges(&self) -> usize {
        (0..self.num_darts() as u32).filter(|d| self.alive(*d)).count() / 2
    }

    pub fn euler_characteristic(&self) -> i64 {
        let finite_holes = self.holes.iter().filter(|h| h.alive && !h.infinite).count();
        let faces = self.num_inner_faces() + finite_holes + 1;
        self.num_vertices() as i64 - self.num_edges() as i64 + faces as i64
    }

    /// Structural checks: Euler relation, bipartiteness, face contours and simple holes.
    pub fn check_structure(&self, support: &[usize]) -> StructureReport {
        let mut errors = Vec::new();
        let euler = self.euler_characteristic();
        if euler != 2 {
            errors.push(format!("Euler characteristic {euler}"));
        }
        // twins and contours
        for d in 0..self.num_darts() as u32 {
            if !self.alive(d) {
                continue;
            }
            let t = self.twin[d as usize];
            if self.twin[t as usize] != d || !self.alive(t) {
                errors.push(format!("dart {d}: broken twin"));
                break;
            }
            if is_hole(self.owner[d as usize]) && is_hole(self.owner[t as usize]) {
                errors.push(format!("dart {d}: both sides are holes"));
                break;
            }
            let n = self.next[d as usize];
            if n != NIL && self.vertex_of(n) != self.find(self.head(d)) {
                errors.push(format!("dart {d}: contour does not continue at its head"));
                break;
            }
        }
        let mut faces_even = true;
        for f in 1..self.face_first.len() {
            let darts = self.face_darts(f);
            let deg = darts.len();
            if deg != self.face_degree[f] as usize || deg % 2 != 0 || !support.contains(&(deg / 2)) {
                faces_even = false;
                errors.push(format!("face {f}: degree {deg}"));
                break;
            }
            if darts.iter().any(|d| self.owner[*d as usize] != f as u32) {
                errors.push(format!("face {f}: foreign dart on contour"));
                break;
            }
        }
        let mut holes_simple = true;
        for (h, hole) in self.holes.iter().enumerate() {
            if !hole.alive {
                continue;
            }
            let darts = self.hole_darts(h);
            if !hole.infinite && darts.len() != 2 * hole.half {
                errors.push(format!("hole {h}: {} darts for half-perimeter {}", darts.len(), hole.half));
            }
            let mut verts: Vec<u32> = darts.iter().map(|d| self.vertex_of(*d)).collect();
            if hole.infinite {
                if let Some(last) = darts.last() {
                    verts.push(self.find(self.head(*last)));
                }
            }
            let n = verts.len();
            verts.sort_unstable();
            verts.dedup();
            if verts.len() != n {
                holes_simple = false;
                errors.push(format!("hole {h}: contour not simple"));
            }
        }
        let bipartite = self.two_coloring().is_some();
        if !bipartite {
            errors.push("odd cycle".into());
        }
        let root_degree = match self.mode {
            Mode::Finite(l) => {
                let deg = if self.root == NIL { 0 } else { self.face_darts(ROOT_FACE as usize).len() };
                if deg != 2 * l {
                    errors.push(format!("root face degree {deg}, expected {}", 2 * l));
                }
                Some(deg)
            }
            _ => None,
        };
        StructureReport {
            euler,
            bipartite,
            faces_even,
            holes_simple,
            root_degree,
            ok: errors.is_empty(),
            errors,
        }
    }

    pub fn two_coloring(&self) -> Option<HashMap<u32, bool>> {
        let mut color: HashMap<u32, bool> = HashMap::new();
        for start in self.vertex_classes() {
            if color.contains_key(&start) {
                continue;
            }
            color.insert(start, false);
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                let cv = color[&v];
                for d in self.darts_around(v) {
                    let w = self.find(self.head(d));
                    match color.get(&w) {
                        Some(&cw) if cw == cv => return None,
                        Some(_) => {}
                        None => {
                            color.insert(w, !cv);
                            queue.push_back(w);
                        }
                    }
                }
            }
        }
        Some(color)
    }

    /// Compact vertex numbering: class root to index.
    pub fn compact_ids(&self) -> (Vec<u32>, Vec<u32>) {
        let classes = self.vertex_classes();
        let mut id = vec![NIL; self.parent.len()];
        for (i, r) in classes.iter().enumerate() {
            id[*r as usize] = i as u32;
        }
        (classes, id)
    }

    pub fn export(&self) -> MapExport {
        let (classes, id) = self.compact_ids();
        let cid = |v: u32| id[self.find(v) as usize];
        let mut edges = Vec::new();
        for d in 0..self.num_darts() as u32 {
            if self.alive(d) && d < self.twin[d as usize] {
                edges.push([cid(self.tail[d as usize]), cid(self.head(d))]);
            }
        }
        let faces = (1..self.face_first.len())
            .map(|f| self.face_darts(f).iter().map(|d| cid(self.tail[*d as usize])).collect())
            .collect();
        let holes = self
            .holes
            .iter()
            .enumerate()
            .filter(|(_, h)| h.alive)
            .map(|(h, hole)| HoleExport {
                infinite: hole.infinite,
                half_perimeter: if hole.infinite { None } else { Some(hole.half) },
                vertices: self.hole_darts(h).iter().map(|d| cid(self.tail[*d as usize])).collect(),
            })
            .collect();
        let root_face = self.root_face_darts().iter().map(|d| cid(self.tail[*d as usize])).collect();
        MapExport {
            mode: self.mode,
            vertices: classes.len(),
            distance: classes.iter().map(|r| self.dist[*r as usize]).collect(),
            root: if self.root == NIL {
                None
            } else {
                Some([cid(self.tail[self.root as usize]), cid(self.head(self.root))])
            },
            edges,
            faces,
            holes,
            root_face,
            root_face_closed: matches!(self.mode, Mode::Finite(_)),
        }
    }
}

impl PlanarMapBall {
    /// Half-plane map from inner faces (counterclockwise vertex lists) and a west-to-east
    /// boundary path; edge `boundary[root]` to `boundary[root + 1]` is the root.
    /// Darts not used by a face or the root face form the infinite hole, which must be a
    /// simple path from the first to the last boundary vertex.
    pub fn from_faces(faces: &[Vec<u32>], boundary: &[u32], root: usize) -> Result<Self> {
        if boundary.len() < 2 || root + 1 >= boundary.len() {
            return Err(Error::InvalidArgument("boundary needs the root edge".into()));
        }
        let mut m = Self::empty(Mode::General);
        let mut darts: HashMap<(u32, u32), u32> = HashMap::new();
        let n = faces.iter().flatten().chain(boundary).copied().max().unwrap_or(0) + 1;
        for _ in 0..n {
            m.add_vertex(INF);
        }
        let mut edge = |m: &mut Self, a: u32, b: u32| -> u32 {
            if let Some(&d) = darts.get(&(a, b)) {
                return d;
            }
            let (d, t) = m.add_edge(a, b);
            darts.insert((a, b), d);
            darts.insert((b, a), t);
            d
        };
        m.face_first.push(NIL);
        m.face_degree.push(0);
        for face in faces {
            let f = m.face_first.len() as u32;
            let ids: Vec<u32> = (0..face.len()).map(|i| edge(&mut m, face[i], face[(i + 1) % face.len()])).collect();
            for (i, &d) in ids.iter().enumerate() {
                if m.owner[d as usize] != DEAD {
                    return Err(Error::InvalidArgument(format!("dart {}->{} used twice", face[i], face[(i + 1) % face.len()])));
                }
                m.owner[d as usize] = f;
                m.next[d as usize] = ids[(i + 1) % ids.len()];
                m.prev[d as usize] = ids[(i + ids.len() - 1) % ids.len()];
            }
            m.face_first.push(ids[0]);
            m.face_degree.push(ids.len() as u32);
        }
        let mut outer = Vec::new();
        for w in boundary.windows(2) {
            let i = edge(&mut m, w[0], w[1]);
            let o = m.twin[i as usize];
            if m.owner[o as usize] != DEAD {
                return Err(Error::InvalidArgument(format!("boundary dart {}->{} already used", w[1], w[0])));
            }
            m.owner[o as usize] = ROOT_FACE;
            outer.push(o);
        }
        for w in outer.windows(2) {
            m.next[w[1] as usize] = w[0];
            m.prev[w[0] as usize] = w[1];
        }
        m.left_outer = outer[0];
        m.right_outer = *outer.last().unwrap();
        m.face_first[0] = m.right_outer;
        m.root = m.twin[outer[root] as usize];
        // remaining darts: the infinite hole
        let free: Vec<u32> = (0..m.num_darts() as u32).filter(|d| m.owner[*d as usize] == DEAD).collect();
        let mut by_tail: HashMap<u32, u32> = HashMap::new();
        for &d in &free {
            if by_tail.insert(m.tail[d as usize], d).is_some() {
                return Err(Error::InvalidArgument("infinite hole is not a simple path".into()));
            }
        }
        let mut x = boundary[0];
        let mut prev = NIL;
        while let Some(&d) = by_tail.get(&x) {
            m.owner[d as usize] = INF_HOLE;
            m.prev[d as usize] = prev;
            if prev == NIL {
                m.fleft = d;
            } else {
                m.next[prev as usize] = d;
            }
            prev = d;
            m.exposed += 1;
            x = m.head(d);
            if m.exposed > free.len() {
                return Err(Error::InvalidArgument("infinite hole loops".into()));
            }
        }
        m.fright = prev;
        if m.exposed != free.len() || x != *boundary.last().unwrap() {
            return Err(Error::InvalidArgument("infinite hole must join the boundary ends".into()));
        }
        m.holes.push(Hole { half: 0, anchor: m.fleft, alive: m.fleft != NIL, infinite: true });
        m.set_distances(boundary[root]);
        Ok(m)
    }

    /// Finite map from inner faces and the root-face contour (face on the left),
    /// whose first dart is the outer side of the root edge.
    pub fn from_faces_finite(faces: &[Vec<u32>], root_face: &[u32]) -> Result<Self> {
        let l = root_face.len();
        if l < 2 || l % 2 != 0 {
            return Err(Error::InvalidArgument("root face needs an even positive degree".into()));
        }
        let mut all: Vec<&[u32]> = vec![root_face];
        all.extend(faces.iter().map(|f| f.as_slice()));
        let mut m = Self::empty(Mode::Finite(l / 2));
        let n = all.iter().flat_map(|f| f.iter()).copied().max().unwrap_or(0) + 1;
        for _ in 0..n {
            m.add_vertex(INF);
        }
        let mut darts: HashMap<(u32, u32), u32> = HashMap::new();
        for (f, face) in all.iter().enumerate() {
            let mut ids = Vec::with_capacity(face.len());
            for i in 0..face.len() {
                let (a, b) = (face[i], face[(i + 1) % face.len()]);
                let d = match darts.get(&(a, b)) {
                    Some(&d) => d,
                    None => {
                        let (d, t) = m.add_edge(a, b);
                        darts.insert((a, b), d);
                        darts.insert((b, a), t);
                        d
                    }
                };
                if m.owner[d as usize] != DEAD {
                    return Err(Error::InvalidArgument(format!("dart {a}->{b} used twice")));
                }
                m.owner[d as usize] = f as u32;
                ids.push(d);
            }
            for i in 0..ids.len() {
                m.next[ids[i] as usize] = ids[(i + 1) % ids.len()];
                m.prev[ids[i] as usize] = ids[(i + ids.len() - 1) % ids.len()];
            }
            m.face_first.push(ids[0]);
            m.face_degree.push(ids.len() as u32);
        }
        if (0..m.num_darts() as u32).any(|d| m.owner[d as usize] == DEAD) {
            return Err(Error::InvalidArgument("every dart must lie on a face".into()));
        }
        m.root = m.twin[m.face_first[0] as usize];
        m.set_distances(root_face[1]);
        Ok(m)
    }

    fn set_distances(&mut self, origin: u32) {
        let r = self.find_mut(origin);
        self.dist[r as usize] = 0;
        let mut queue = VecDeque::from([r]);
        while let Some(v) = queue.pop_front() {
            let dv = self.dist[v as usize];
            for d in self.darts_around(v) {
                let w = self.find(self.head(d));
                if self.dist[w as usize] == INF {
                    self.dist[w as usize] = dv + 1;
                    queue.push_back(w);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub euler: i64,
    pub bipartite: bool,
    pub faces_even: bool,
    pub holes_simple: bool,
    pub root_degree: Option<usize>,
    pub ok: bool,
    pub errors: Vec<String>,
}

/// Edge-list and face-list form of a map.
///
/// Vertices are numbered `0..vertices`; `faces` lists each inner face by its
/// vertices in counterclockwise order; `root_face` lists the root-face contour
/// (east to west and open for half-plane maps).
#[derive(Debug, Clone, Serialize)]
pub struct MapExport {
    pub mode: Mode,
    pub vertices: usize,
    pub distance: Vec<u32>,
    pub root: Option<[u32; 2]>,
    pub edges: Vec<[u32; 2]>,
    pub faces: Vec<Vec<u32>>,
    pub holes: Vec<HoleExport>,
    pub root_face: Vec<u32>,
    pub root_face_closed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HoleExport {
    pub infinite: bool,
    pub half_perimeter: Option<usize>,
    pub vertices: Vec<u32>,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ExploreStats {
    pub steps: u64,
    pub finite_steps: u64,
    pub tail_draws: u64,
    pub materialized: u64,
    pub max_mass_error: f64,
}

/// A peeling exploration in progress.
pub struct Explorer<'k> {
    pub map: PlanarMapBall,
    kit: &'k WalkKit,
    qf: Vec<(usize, f64)>,
    rng: Rng,
    heap_fin: BinaryHeap<Reverse<(u32, u32)>>,
    heap_inf: BinaryHeap<Reverse<(u32, u32)>>,
    queue: VecDeque<u32>,
    pub stats: ExploreStats,
    pub verify: bool,
    pub max_darts: usize,
    /// Event log of the first steps: (dart, event).
    pub first_events: Vec<(u32, HalfPlaneEvent)>,
}

enum Candidate {
    Finite(u32),
    Infinite(u32, usize),
    MaterializeLeft,
    MaterializeRight,
}

impl<'k> Explorer<'k> {
    pub fn new(kit: &'k WalkKit, mode: Mode, rng: Rng) -> Self {
        let mut map = PlanarMapBall::empty(mode);
        let qf = kit.disk.q.iter().map(|(k, q)| (k, crate::hp::rational_to_f64(q))).collect();
        let mut ex = Explorer {
            map: PlanarMapBall::empty(mode),
            kit,
            qf,
            rng,
            heap_fin: BinaryHeap::new(),
            heap_inf: BinaryHeap::new(),
            queue: VecDeque::new(),
            stats: ExploreStats::default(),
            verify: false,
            max_darts: 1 << 28,
            first_events: Vec::new(),
        };
        match mode {
            Mode::Finite(l) => {
                map.face_first.push(NIL);
                map.face_degree.push(2 * l as u32);
                if l == 0 {
                    map.add_vertex(0);
                } else {
                    let verts: Vec<u32> = (0..2 * l).map(|i| map.add_vertex(if i == 0 { 0 } else { INF })).collect();
                    let mut inner = Vec::new();
                    let mut outer = Vec::new();
                    for i in 0..2 * l {
                        let (d, t) = map.add_edge(verts[i], verts[(i + 1) % (2 * l)]);
                        inner.push(d);
                        outer.push(t);
                    }
                    map.holes.push(Hole { half: l, anchor: inner[0], alive: true, infinite: false });
                    let n = 2 * l;
                    for i in 0..n {
                        let d = inner[i] as usize;
                        map.owner[d] = HOLE_BIT;
                        map.next[d] = inner[(i + 1) % n];
                        map.prev[d] = inner[(i + n - 1) % n];
                        let o = outer[i] as usize;
                        map.owner[o] = ROOT_FACE;
                        map.next[o] = outer[(i + n - 1) % n];
                        map.prev[o] = outer[(i + 1) % n];
                    }
                    map.root = inner[0];
                    map.face_first[0] = outer[0];
                }
            }
            Mode::General | Mode::Tilde => {
                let b0 = map.add_vertex(0);
                let b1 = map.add_vertex(1);
                let (d, t) = map.add_edge(b0, b1);
                map.owner[d as usize] = INF_HOLE;
                map.owner[t as usize] = ROOT_FACE;
                map.face_first.push(t);
                map.face_degree.push(0);
                map.holes.push(Hole { half: 0, anchor: d, alive: true, infinite: true });
                map.root = d;
                map.fleft = d;
                map.fright = d;
                map.exposed = 1;
                map.left_outer = t;
                map.right_outer = t;
            }
        }
        ex.map = map;
        let n = ex.map.parent.len() as u32;
        if n > 0 {
            ex.queue.push_back(0);
            ex.relax();
        }
        ex
    }

    pub fn kit(&self) -> &'k WalkKit {
        self.kit
    }

    fn touch(&mut self, d: u32) {
        let o = self.map.owner[d as usize];
        if !is_hole(o) {
            return;
        }
        let k = self.map.key(d);
        if k == INF {
            return;
        }
        if o == INF_HOLE {
            if self.map.mode == Mode::General {
                self.heap_inf.push(Reverse((k, d)));
            }
        } else {
            self.heap_fin.push(Reverse((k, d)));
        }
    }

    fn relax(&mut self) {
        while let Some(v) = self.queue.pop_front() {
            let v = self.map.find_mut(v);
            let dv = self.map.dist[v as usize];
            let start = self.map.ring[v as usize];
            if start == NIL {
                continue;
            }
            let mut x = start;
            loop {
                if self.map.alive(x) {
                    let w = self.map.find_mut(self.map.head(x));
                    if dv != INF && self.map.dist[w as usize] > dv + 1 {
                        self.map.dist[w as usize] = dv + 1;
                        self.queue.push_back(w);
                    }
                    self.touch(x);
                    let t = self.map.twin[x as usize];
                    self.touch(t);
                }
                x = self.map.vnext[x as usize];
                if x == start {
                    break;
                }
            }
        }
    }

    fn check_budget(&self) -> Result<()> {
        if self.map.num_darts() > self.max_darts {
            return Err(Error::Budget(self.max_darts));
        }
        Ok(())
    }

    fn set_hole_links(&mut self, a: u32, b: u32) {
        if a != NIL {
            self.map.next[a as usize] = b;
        } else {
            self.map.fleft = b;
        }
        if b != NIL {
            self.map.prev[b as usize] = a;
        } else {
            self.map.fright = a;
        }
    }

    /// New face of half-degree `k` glued on frontier dart `d`.
    fn peel_c(&mut self, d: u32, k: usize) {
        let m = &mut self.map;
        let owner = m.owner[d as usize];
        let before = m.prev[d as usize];
        let after = m.next[d as usize];
        let u = m.tail[d as usize];
        let v = m.head(d);
        let du = m.distance(u);
        let dv = m.distance(v);
        let f = m.face_first.len() as u32;
        m.face_first.push(d);
        m.face_degree.push(2 * k as u32);
        let n = 2 * k - 1;
        let mut path = Vec::with_capacity(n + 1);
        path.push(v);
        for i in 1..n {
            let di = dv.saturating_add(i as u32).min(du.saturating_add((n - i) as u32));
            path.push(m.add_vertex(di));
        }
        path.push(u);
        let mut face_side = Vec::with_capacity(n);
        let mut hole_side = Vec::with_capacity(n);
        for i in 1..=n {
            let (e, t) = m.add_edge(path[i - 1], path[i]);
            m.owner[e as usize] = f;
            m.owner[t as usize] = owner;
            face_side.push(e);
            hole_side.push(t);
        }
        // face cycle d, e_1, ..., e_n
        let mut cyc = vec![d];
        cyc.extend(&face_side);
        for i in 0..cyc.len() {
            let a = cyc[i];
            let b = cyc[(i + 1) % cyc.len()];
            m.next[a as usize] = b;
            m.prev[b as usize] = a;
        }
        // hole side in contour order: t_n, ..., t_1
        m.owner[d as usize] = f;
        let order: Vec<u32> = hole_side.iter().rev().copied().collect();
        for w in order.windows(2) {
            m.next[w[0] as usize] = w[1];
            m.prev[w[1] as usize] = w[0];
        }
        let first = order[0];
        let last = *order.last().unwrap();
        if owner == INF_HOLE {
            self.set_hole_links(before, first);
            self.set_hole_links(last, after);
            self.map.exposed += 2 * k - 2;
        } else {
            let h = hole_id(owner);
            let m = &mut self.map;
            m.next[before as usize] = first;
            m.prev[first as usize] = before;
            m.next[last as usize] = after;
            m.prev[after as usize] = last;
            m.holes[h].half += k - 1;
            m.holes[h].anchor = first;
        }
        for i in 1..n {
            self.queue.push_back(path[i]);
        }
        self.relax();
        for t in order {
            self.touch(t);
        }
    }

    fn materialize_left(&mut self) -> u32 {
        let m = &mut self.map;
        let b = if m.fleft != NIL { m.tail[m.fleft as usize] } else { m.ext_vertex };
        let a = m.add_vertex(INF);
        let (i, o) = m.add_edge(a, b);
        m.owner[i as usize] = INF_HOLE;
        m.owner[o as usize] = ROOT_FACE;
        let old = m.fleft;
        m.prev[i as usize] = NIL;
        m.next[i as usize] = old;
        if old != NIL {
            m.prev[old as usize] = i;
        } else {
            m.fright = i;
        }
        m.fleft = i;
        let lo = m.left_outer;
        m.next[lo as usize] = o;
        m.prev[o as usize] = lo;
        m.next[o as usize] = NIL;
        m.left_outer = o;
        m.exposed += 1;
        self.stats.materialized += 1;
        self.queue.push_back(b);
        self.relax();
        i
    }

    fn materialize_right(&mut self) -> u32 {
        let m = &mut self.map;
        let b = if m.fright != NIL { m.head(m.fright) } else { m.ext_vertex };
        let a = m.add_vertex(INF);
        let (i, o) = m.add_edge(b, a);
        m.owner[i as usize] = INF_HOLE;
        m.owner[o as usize] = ROOT_FACE;
        let old = m.fright;
        m.next[i as usize] = NIL;
        m.prev[i as usize] = old;
        if old != NIL {
            m.next[old as usize] = i;
        } else {
            m.fleft = i;
        }
        m.fright = i;
        let ro = m.right_outer;
        m.prev[ro as usize] = o;
        m.next[o as usize] = ro;
        m.prev[o as usize] = NIL;
        m.right_outer = o;
        m.exposed += 1;
        self.stats.materialized += 1;
        self.queue.push_back(b);
        self.relax();
        i
    }

    /// Walks `steps` darts along the infinite frontier, materializing ray edges as needed.
    fn walk_infinite(&mut self, d: u32, steps: usize, left: bool) -> u32 {
        let mut x = d;
        for _ in 0..steps {
            let y = if left { self.map.prev[x as usize] } else { self.map.next[x as usize] };
            x = if y != NIL {
                y
            } else if left {
                self.materialize_left()
            } else {
                self.materialize_right()
            };
        }
        x
    }

    /// Glues frontier dart `d` onto `partner`, which lies `left` or right of it.
    fn identify(&mut self, d: u32, partner: u32, left: bool) {
        let owner = self.map.owner[d as usize];
        let (west, east) = if left { (partner, d) } else { (d, partner) };
        let m = &mut self.map;
        // enclosed segment strictly between west and east
        let seg_first = m.next[west as usize];
        let seg_last = m.prev[east as usize];
        let enclosed = seg_first != east;
        // remaining contour
        let before = m.prev[west as usize];
        let after = m.next[east as usize];
        // west: x -> y, east: u -> v; glue y~u and x~v
        let (x, y) = (m.tail[west as usize], m.head(west));
        let (u, v) = (m.tail[east as usize], m.head(east));
        let tw = m.twin[west as usize];
        let te = m.twin[east as usize];
        m.twin[tw as usize] = te;
        m.twin[te as usize] = tw;
        m.owner[west as usize] = DEAD;
        m.owner[east as usize] = DEAD;
        let r1 = m.union(y, u);
        let r2 = m.union(x, v);
        let inner_len = if enclosed {
            let mut n = 1;
            let mut z = seg_first;
            while z != seg_last {
                z = m.next[z as usize];
                n += 1;
            }
            n
        } else {
            0
        };
        if owner == INF_HOLE {
            self.set_hole_links(before, after);
            let m = &mut self.map;
            m.exposed -= 2 + inner_len;
            if m.fleft == NIL {
                m.ext_vertex = m.find(v);
            }
            if enclosed {
                self.new_hole(seg_first, seg_last, inner_len / 2);
            }
        } else {
            let h = hole_id(owner);
            let outer_len = 2 * self.map.holes[h].half - 2 - inner_len;
            let outer = (after != west && after != east && outer_len > 0).then_some((after, before));
            // the shorter side moves to a new hole
            match (enclosed, outer) {
                (false, None) => self.map.holes[h].alive = false,
                (true, None) => {
                    self.close_cycle(seg_first, seg_last);
                    self.map.holes[h].anchor = seg_first;
                    self.map.holes[h].half = inner_len / 2;
                }
                (false, Some((a, b))) => {
                    self.close_cycle(a, b);
                    self.map.holes[h].anchor = a;
                    self.map.holes[h].half = outer_len / 2;
                }
                (true, Some((a, b))) => {
                    self.close_cycle(a, b);
                    if inner_len <= outer_len {
                        self.map.holes[h].anchor = a;
                        self.map.holes[h].half = outer_len / 2;
                        self.new_hole(seg_first, seg_last, inner_len / 2);
                    } else {
                        self.map.holes[h].anchor = seg_first;
                        self.map.holes[h].half = inner_len / 2;
                        self.close_cycle(seg_first, seg_last);
                        self.new_hole(a, b, outer_len / 2);
                    }
                }
            }
        }
        self.queue.push_back(r1);
        self.queue.push_back(r2);
        self.relax();
    }

    fn close_cycle(&mut self, first: u32, last: u32) {
        self.map.next[last as usize] = first;
        self.map.prev[first as usize] = last;
    }

    /// Turns the path `first..=last` into a new finite hole.
    fn new_hole(&mut self, first: u32, last: u32, half: usize) {
        self.close_cycle(first, last);
        let id = self.map.holes.len() as u32;
        self.map.holes.push(Hole { half, anchor: first, alive: true, infinite: false });
        let tag = HOLE_BIT | id;
        let mut z = first;
        loop {
            self.map.owner[z as usize] = tag;
            self.touch(z);
            if z == last {
                break;
            }
            z = self.map.next[z as usize];
        }
    }

    fn peek_heap(&mut self, infinite: bool) -> Option<(u32, u32)> {
        loop {
            let heap = if infinite { &mut self.heap_inf } else { &mut self.heap_fin };
            let &Reverse((k, d)) = heap.peek()?;
            let o = self.map.owner[d as usize];
            let valid = is_hole(o) && (o == INF_HOLE) == infinite && self.map.key(d) == k;
            if valid {
                return Some((k, d));
            }
            let heap = if infinite { &mut self.heap_inf } else { &mut self.heap_fin };
            heap.pop();
        }
    }

    /// Leftmost exposed dart of minimal key with its 1-based position.
    fn leftmost_min(&self) -> Option<(u32, u32, usize)> {
        let mut best: Option<(u32, u32, usize)> = None;
        let mut x = self.map.fleft;
        let mut pos = 1;
        while x != NIL {
            let k = self.map.key(x);
            if best.map(|b| k < b.0).unwrap_or(true) {
                best = Some((k, x, pos));
            }
            x = self.map.next[x as usize];
            pos += 1;
        }
        best
    }

    fn position(&self, d: u32) -> usize {
        let mut pos = 1;
        let mut x = self.map.prev[d as usize];
        while x != NIL {
            pos += 1;
            x = self.map.prev[x as usize];
        }
        pos
    }

    fn next_candidate(&mut self) -> Option<(u32, Candidate)> {
        let fin = self.peek_heap(false).map(|(k, d)| (k, Candidate::Finite(d)));
        let inf = match self.map.mode {
            Mode::Finite(_) => None,
            Mode::Tilde => self.leftmost_min().map(|(k, d, pos)| (k, Candidate::Infinite(d, pos))),
            Mode::General => {
                let mut best = self.peek_heap(true).map(|(k, d)| (k, Candidate::Infinite(d, 0)));
                let (lv, rv) = if self.map.fleft != NIL {
                    (self.map.tail[self.map.fleft as usize], self.map.head(self.map.fright))
                } else {
                    (self.map.ext_vertex, self.map.ext_vertex)
                };
                let lk = self.map.distance(lv);
                let rk = self.map.distance(rv);
                if best.as_ref().map(|b| lk < b.0).unwrap_or(true) {
                    best = Some((lk, Candidate::MaterializeLeft));
                }
                if best.as_ref().map(|b| rk < b.0).unwrap_or(true) {
                    best = Some((rk, Candidate::MaterializeRight));
                }
                best
            }
        };
        match (fin, inf) {
            (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
            (a, b) => a.or(b),
        }
    }

    /// Smallest distance among vertices still on some hole.
    pub fn frontier_min(&mut self) -> Option<u32> {
        self.next_candidate().map(|c| c.0)
    }

    /// One peeling step if some hole vertex lies within distance `r`.
    pub fn step(&mut self, r: u32) -> Result<bool> {
        let Some((k, cand)) = self.next_candidate() else {
            return Ok(false);
        };
        if k > r {
            return Ok(false);
        }
        self.check_budget()?;
        match cand {
            Candidate::Finite(d) => self.step_finite(d)?,
            Candidate::Infinite(d, pos) => match self.map.mode {
                Mode::Tilde => self.step_tilde(d, pos)?,
                _ => self.step_general(d),
            },
            Candidate::MaterializeLeft => {
                let d = self.materialize_left();
                self.step_general(d);
            }
            Candidate::MaterializeRight => {
                let d = self.materialize_right();
                self.step_general(d);
            }
        }
        Ok(true)
    }

    /// Peels until every hole vertex is at distance greater than `r`.
    pub fn grow_to(&mut self, r: u32) -> Result<()> {
        while self.step(r)? {}
        self.map.radius = self.map.radius.max(r);
        Ok(())
    }

    /// Fills finite hole `h` completely, including the holes it splits into.
    pub fn fill_hole(&mut self, h: usize) -> Result<()> {
        let mut stack = vec![h];
        while let Some(h) = stack.pop() {
            while self.map.holes[h].alive && !self.map.holes[h].infinite {
                self.check_budget()?;
                let before = self.map.holes.len();
                let d = self.map.holes[h].anchor;
                self.step_finite(d)?;
                stack.extend(before..self.map.holes.len());
            }
        }
        Ok(())
    }

    /// Peels until no finite hole remains (finite mode) or the budget runs out.
    pub fn fill_all(&mut self) -> Result<()> {
        self.grow_to(INF - 1)
    }

    fn step_finite(&mut self, d: u32) -> Result<()> {
        let h = hole_id(self.map.owner[d as usize]);
        let l = self.map.holes[h].half;
        if self.verify {
            let total: f64 = finite_step_masses(&self.kit.disk, l).iter().map(|x| x.1).sum();
            self.stats.max_mass_error = self.stats.max_mass_error.max((total - 1.0).abs());
        }
        let ev = finite_peel_step(&self.kit.disk, &self.qf, l, &mut self.rng)?;
        self.stats.steps += 1;
        self.stats.finite_steps += 1;
        match ev {
            PeelEvent::C(k) => self.peel_c(d, k),
            PeelEvent::G(k1, k2) => {
                // same dart either way round the cycle; walk the shorter side
                let mut x = d;
                if k1 <= k2 {
                    for _ in 0..2 * k1 + 1 {
                        x = self.map.prev[x as usize];
                    }
                } else {
                    for _ in 0..2 * k2 + 1 {
                        x = self.map.next[x as usize];
                    }
                }
                let partner = x;
                self.identify(d, partner, true);
            }
        }
        Ok(())
    }

    fn apply_halfplane(&mut self, d: u32, ev: HalfPlaneEvent) {
        if self.first_events.len() < 8 {
            self.first_events.push((d, ev));
        }
        match ev {
            HalfPlaneEvent::C(k) => self.peel_c(d, k),
            HalfPlaneEvent::Left(j) => {
                let p = self.walk_infinite(d, 2 * j + 1, true);
                self.identify(d, p, true);
            }
            HalfPlaneEvent::Right(j) => {
                let p = self.walk_infinite(d, 2 * j + 1, false);
                self.identify(d, p, false);
            }
        }
    }

    fn step_general(&mut self, d: u32) {
        let (ev, tail) = general_step(self.kit, &mut self.rng);
        self.stats.steps += 1;
        if tail {
            self.stats.tail_draws += 1;
        }
        self.apply_halfplane(d, ev);
    }

    fn step_tilde(&mut self, d: u32, pos: usize) -> Result<()> {
        let p = self.map.exposed;
        let pos = if pos == 0 { self.position(d) } else { pos };
        let h = &self.kit.h;
        if self.verify {
            let total: f64 = super::tilde_masses(&self.kit.nu, h, p, pos).iter().map(|x| x.1).sum();
            self.stats.max_mass_error = self.stats.max_mass_error.max((total - 1.0).abs());
        }
        let (ev, tail) = sample_tilde_step(&self.kit.nu, |x| h.up(x), p, pos, &mut self.rng)?;
        self.stats.steps += 1;
        if tail {
            self.stats.tail_draws += 1;
        }
        self.apply_halfplane(d, ev);
        Ok(())
    }

    pub fn into_ball(mut self) -> PlanarMapBall {
        for v in 0..self.map.parent.len() as u32 {
            let r = self.map.find_mut(v);
            self.map.parent[v as usize] = r;
        }
        self.map
    }
}

/// Builds the ball of radius `r` around the root in the given mode.
pub fn build_ball(kit: &WalkKit, mode: Mode, r: u32, rng: Rng, max_darts: usize) -> Result<(PlanarMapBall, ExploreStats)> {
    let mut ex = Explorer::new(kit, mode, rng);
    ex.max_darts = max_darts;
    ex.grow_to(r)?;
    let stats = ex.stats;
    Ok((ex.into_ball(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::weights::make_2p_angulation;

    fn kit(p: usize) -> WalkKit {
        WalkKit::for_weights(&make_2p_angulation(p).unwrap(), 4000, 4096).unwrap()
    }

    #[test]
    fn finite_maps_are_valid() {
        let k = kit(2);
        let mut done = 0;
        for seed in 0..200 {
            let mut ex = Explorer::new(&k, Mode::Finite(1), stream(seed, &[0]));
            ex.max_darts = 2_000_000;
            ex.verify = true;
            match ex.fill_all() {
                Ok(()) => done += 1,
                Err(Error::Budget(_)) => continue,
                Err(e) => panic!("{e}"),
            }
            assert!(ex.stats.max_mass_error < 1e-9);
            let ball = ex.into_ball();
            let rep = ball.check_structure(&[2]);
            assert!(rep.ok, "seed {seed}: {:?}", rep.errors);
            assert_eq!(rep.root_degree, Some(2));
        }
        assert!(done > 190, "{done}");
    }

    #[test]
    fn finite_larger_boundary() {
        let k = kit(3);
        let mut done = 0;
        for seed in 0..50 {
            let mut ex = Explorer::new(&k, Mode::Finite(4), stream(seed, &[1]));
            ex.max_darts = 2_000_000;
            if ex.fill_all().is_err() {
                continue;
            }
            done += 1;
            let rep = ex.into_ball().check_structure(&[3]);
            assert!(rep.ok, "seed {seed}: {:?}", rep.errors);
        }
        assert!(done > 40, "{done}");
    }

    #[test]
    fn halfplane_balls_are_valid() {
        let k = kit(2);
        for mode in [Mode::General, Mode::Tilde] {
            for seed in 0..40 {
                let mut ex = Explorer::new(&k, mode, stream(seed, &[2]));
                ex.verify = true;
                ex.grow_to(4).unwrap();
                assert!(ex.stats.max_mass_error < 1e-9);
                let ball = ex.into_ball();
                let rep = ball.check_structure(&[2]);
                assert!(rep.ok, "{mode:?} seed {seed}: {:?}", rep.errors);
            }
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let k = kit(2);
        let a = build_ball(&k, Mode::General, 5, stream(11, &[3]), 1 << 24).unwrap().0.export();
        let b = build_ball(&k, Mode::General, 5, stream(11, &[3]), 1 << 24).unwrap().0.export();
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.faces, b.faces);
    }
}
