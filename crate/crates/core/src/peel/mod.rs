//! Peeling events, step laws and the free Boltzmann perimeter.

pub mod map;

use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::walks::{RenewalFunctions, StepTable, WalkKit};
use crate::weights::{DiskData, NuMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PeelEvent {
    /// New face of half-degree `k`.
    C(usize),
    /// Identification leaving holes of half-perimeters `k1` (left) and `k2` (right).
    G(usize, usize),
}

/// Event in the infinite hole. `None` marks the infinite side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum HalfPlaneEvent {
    C(usize),
    /// Swallow to the left enclosing a hole of half-perimeter `j`.
    Left(usize),
    Right(usize),
}

/// Largest half-perimeter the finite step accepts.
pub const FINITE_CEILING: usize = 1 << 26;

/// All events of the finite step from half-perimeter `l` with their masses.
pub fn finite_step_masses(disk: &DiskData, l: usize) -> Vec<(PeelEvent, f64)> {
    let wl = disk.w(l);
    let mut out = Vec::new();
    for (k, q) in disk.q.iter() {
        let m = crate::hp::rational_to_f64(q) * disk.c.powi(k as i32 - 1) * disk.w(l + k - 1) / wl;
        out.push((PeelEvent::C(k), m));
    }
    for k1 in 0..l {
        let k2 = l - 1 - k1;
        out.push((PeelEvent::G(k1, k2), disk.w(k1) * disk.w(k2) / (disk.c * wl)));
    }
    out
}

/// Samples one finite peeling step from a hole of half-perimeter `l >= 1`.
pub fn finite_peel_step(disk: &DiskData, qf: &[(usize, f64)], l: usize, rng: &mut Rng) -> Result<PeelEvent> {
    if l == 0 {
        return Err(Error::InvalidArgument("cannot peel an empty hole".into()));
    }
    if l > FINITE_CEILING {
        return Err(Error::Truncation(format!("hole half-perimeter {l} beyond the tail-model ceiling")));
    }
    let wl = disk.w(l);
    let mut u: f64 = rng.random();
    for &(k, qk) in qf {
        let m = qk * disk.c.powi(k as i32 - 1) * disk.w(l + k - 1) / wl;
        if u < m {
            return Ok(PeelEvent::C(k));
        }
        u -= m;
    }
    // G masses are symmetric under k1 <-> k2; scan from both ends.
    let scale = 1.0 / (disk.c * wl);
    let mut last = PeelEvent::G(0, l - 1);
    for i in 0..=(l - 1) / 2 {
        let j = l - 1 - i;
        let m = disk.w(i) * disk.w(j) * scale;
        if u < m {
            return Ok(PeelEvent::G(i, j));
        }
        u -= m;
        if i != j {
            if u < m {
                return Ok(PeelEvent::G(j, i));
            }
            u -= m;
        }
        last = PeelEvent::G(j, i);
    }
    Ok(last)
}

/// Half-perimeter law of the free Boltzmann map: `P(l) = W^(l) c^-l / W_c`.
#[derive(Debug, Clone)]
pub struct FreeLaw {
    pub pmf: Vec<f64>,
    cumulative: Vec<f64>,
    tail_from: usize,
    tail_mass: f64,
}

impl FreeLaw {
    pub fn new(disk: &DiskData) -> Self {
        let pmf: Vec<f64> = disk.w.iter().map(|w| w / disk.w_c).collect();
        let mut cumulative = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cumulative.push(acc);
        }
        let tail_from = pmf.len();
        FreeLaw {
            tail_mass: disk.tail.mass_from(tail_from) / disk.w_c,
            pmf,
            cumulative,
            tail_from,
        }
    }

    pub fn prob(&self, l: usize) -> f64 {
        self.pmf.get(l).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0) + self.tail_mass
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random::<f64>() * self.total();
        let i = self.cumulative.partition_point(|c| *c <= u);
        if i < self.pmf.len() {
            i
        } else {
            sample_power_tail(self.tail_from, rng)
        }
    }
}

pub fn sample_free_perimeter(law: &FreeLaw, rng: &mut Rng) -> usize {
    law.sample(rng)
}

/// Draws `k >= m` with `P(k >= x) ~ (x/m)^-3/2`.
pub fn sample_power_tail(m: usize, rng: &mut Rng) -> usize {
    let u: f64 = 1.0 - rng.random::<f64>();
    let x = (m as f64 - 0.5) * u.powf(-2.0 / 3.0);
    (x.round() as usize).max(m)
}

/// Masses of the half-plane step reweighted by `H_up`, for exposed length `p`
/// and peel position `pos` (1-based from the left). Swallows reaching the
/// internal boundary are aggregated into one entry per side, keyed by the
/// smallest hole they contain.
pub fn tilde_masses(nu: &NuMeasure, h: &RenewalFunctions, p: usize, pos: usize) -> Vec<(HalfPlaneEvent, f64)> {
    tilde_masses_with(nu, |x| h.up(x), p, pos)
}

/// Same as [`tilde_masses`] for an arbitrary weight function in place of `H_up`.
pub fn tilde_masses_with(nu: &NuMeasure, hup: impl Fn(i64) -> f64, p: usize, pos: usize) -> Vec<(HalfPlaneEvent, f64)> {
    let (pi, li) = (p as i64, pos as i64);
    let hp = hup(pi);
    let mut out = Vec::new();
    for (k, v) in nu.nu_pos.iter().enumerate() {
        if *v > 0.0 {
            out.push((HalfPlaneEvent::C(k + 1), v * hup(pi + 2 * k as i64) / hp));
        }
    }
    for (left, floor) in [(true, pi - li), (false, li - 1)] {
        let side = |j: i64| if left { HalfPlaneEvent::Left(j as usize) } else { HalfPlaneEvent::Right(j as usize) };
        let mut j = 0i64;
        while pi - 2 * j - 2 > floor {
            out.push((side(j), 0.5 * nu.nu(-(j + 1)) * hup(pi - 2 * j - 2) / hp));
            j += 1;
        }
        out.push((side(j), 0.5 * nu.neg_tail(j as usize + 1) * hup(floor) / hp));
    }
    out
}

/// Samples one reweighted half-plane step. The flag reports a draw from the tail model.
pub fn sample_tilde_step(
    nu: &NuMeasure,
    hup: impl Fn(i64) -> f64,
    p: usize,
    pos: usize,
    rng: &mut Rng,
) -> Result<(HalfPlaneEvent, bool)> {
    let (pi, li) = (p as i64, pos as i64);
    let hp = hup(pi);
    let mut u: f64 = rng.random();
    for (k, v) in nu.nu_pos.iter().enumerate() {
        if *v > 0.0 {
            let m = v * hup(pi + 2 * k as i64) / hp;
            if u < m {
                return Ok((HalfPlaneEvent::C(k + 1), false));
            }
            u -= m;
        }
    }
    let mut fallback = None;
    for (left, floor) in [(true, pi - li), (false, li - 1)] {
        let side = |j: usize| if left { HalfPlaneEvent::Left(j) } else { HalfPlaneEvent::Right(j) };
        let mut j = 0i64;
        while pi - 2 * j - 2 > floor {
            let m = 0.5 * nu.nu(-(j + 1)) * hup(pi - 2 * j - 2) / hp;
            if u < m {
                return Ok((side(j as usize), false));
            }
            u -= m;
            j += 1;
        }
        let m = 0.5 * nu.neg_tail(j as usize + 1) * hup(floor) / hp;
        if m > 0.0 {
            if u < m {
                let (jj, tail) = sample_neg_tail(nu, j as usize, rng);
                return Ok((side(jj), tail));
            }
            fallback = Some((left, j as usize));
        }
        u -= m;
    }
    // rounding leftover: only tolerated at the level of the mass error
    match fallback {
        Some((left, j0)) if u < 1e-9 => {
            let (jj, tail) = sample_neg_tail(nu, j0, rng);
            Ok((if left { HalfPlaneEvent::Left(jj) } else { HalfPlaneEvent::Right(jj) }, tail))
        }
        _ => Err(Error::Normalization { sum: 1.0 - u, state: format!("tilde step p = {p}, position {pos}") }),
    }
}

/// Samples the hole size `j >= j0` of an aggregated swallow, i.e. `|k| = j + 1` from `nu` restricted to `|k| >= j0 + 1`.
pub fn sample_neg_tail(nu: &NuMeasure, j0: usize, rng: &mut Rng) -> (usize, bool) {
    let m = j0 + 1;
    let total = nu.neg_tail(m);
    let u: f64 = rng.random::<f64>() * total;
    // neg_tail is decreasing: find the largest k with neg_tail(k) > total - u
    let target = total - u;
    let k_max = nu.k_max();
    if m > k_max {
        return (sample_power_tail(m, rng) - 1, true);
    }
    if nu.neg_tail(k_max + 1) > target {
        return (sample_power_tail(k_max + 1, rng) - 1, true);
    }
    let (mut lo, mut hi) = (m, k_max + 1);
    // invariant: neg_tail(lo) > target >= neg_tail(hi)
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if nu.neg_tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo - 1, false)
}

/// Samples a plain half-plane step from the `nu` table.
pub fn general_step(kit: &WalkKit, rng: &mut Rng) -> (HalfPlaneEvent, bool) {
    let table: &StepTable = &kit.nu_table;
    let u: f64 = rng.random();
    let (k, tail) = if u < table.total() {
        (table.sample_scaled(u), false)
    } else {
        (-(sample_power_tail(kit.nu.k_max() + 1, rng) as i64), true)
    };
    if k >= 0 {
        return (HalfPlaneEvent::C(k as usize + 1), tail);
    }
    let j = (-k - 1) as usize;
    let ev = if rng.random::<bool>() { HalfPlaneEvent::Left(j) } else { HalfPlaneEvent::Right(j) };
    (ev, tail)
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
    fn finite_masses_oracles() {
        let k = kit();
        let m1 = finite_step_masses(&k.disk, 1);
        assert!((m1[0].1 - 0.25).abs() < 1e-12);
        assert!((m1[1].1 - 0.75).abs() < 1e-12);
        let m2 = finite_step_masses(&k.disk, 2);
        assert!((m2[0].1 - 1.0 / 3.0).abs() < 1e-12);
        let g: f64 = m2[1..].iter().map(|x| x.1).sum();
        assert!((g - 2.0 / 3.0).abs() < 1e-12);
        for l in [1, 5, 50, 500, 3000, 10000] {
            let t: f64 = finite_step_masses(&k.disk, l).iter().map(|x| x.1).sum();
            assert!((t - 1.0).abs() < 1e-9, "l={l} total={t}");
        }
    }

    #[test]
    fn free_law_head() {
        let k = kit();
        let f = FreeLaw::new(&k.disk);
        assert!((f.prob(0) - 0.75).abs() < 1e-12);
        assert!((f.prob(1) - 0.125).abs() < 1e-12);
        assert!((f.total() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn tilde_masses_sum_to_one() {
        let k = kit();
        for p in 1..=40 {
            for pos in 1..=p {
                let t: f64 = tilde_masses(&k.nu, &k.h, p, pos).iter().map(|x| x.1).sum();
                assert!((t - 1.0).abs() < 1e-10, "p={p} pos={pos} t={t}");
            }
        }
        // constant weight: the plain nu-step split evenly between both sides
        for (p, pos) in [(1, 1), (7, 3), (20, 20)] {
            let m = tilde_masses_with(&k.nu, |_| 1.0, p, pos);
            let c: f64 = m.iter().filter(|x| matches!(x.0, HalfPlaneEvent::C(_))).map(|x| x.1).sum();
            let left: f64 = m.iter().filter(|x| matches!(x.0, HalfPlaneEvent::Left(_))).map(|x| x.1).sum();
            assert!((c - k.nu.nu_pos.iter().sum::<f64>()).abs() < 1e-12);
            assert!((left - k.nu.s / 2.0).abs() < 1e-12);
        }
        let m = tilde_masses(&k.nu, &k.h, 1, 1);
        let c2 = m.iter().find(|x| x.0 == HalfPlaneEvent::C(2)).unwrap().1;
        assert!((c2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neg_tail_sampler_is_conditional_nu() {
        let k = kit();
        let mut rng = stream(5, &[1]);
        let n = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let (j, _) = sample_neg_tail(&k.nu, 1, &mut rng);
            assert!(j >= 1);
            if j < 5 {
                counts[j - 1] += 1;
            }
        }
        let total = k.nu.neg_tail(2);
        for j in 1..5 {
            let p = k.nu.nu(-(j as i64 + 1)) / total;
            let f = counts[j - 1] as f64 / n as f64;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-4, "j={j} f={f} p={p}");
        }
    }

    #[test]
    fn finite_step_frequencies() {
        let k = kit();
        let qf: Vec<(usize, f64)> = vec![(2, 1.0 / 12.0)];
        let mut rng = stream(9, &[2]);
        let n = 100_000;
        let c = (0..n)
            .filter(|_| finite_peel_step(&k.disk, &qf, 2, &mut rng).unwrap() == PeelEvent::C(2))
            .count();
        let f = c as f64 / n as f64;
        assert!((f - 1.0 / 3.0).abs() < 0.006);
    }
}
