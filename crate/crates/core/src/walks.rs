//! The walk measure `mu`, the functions `H_down` and `H_up`, and Doob-transformed chains.

use std::sync::OnceLock;

use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::weights::{DiskData, NuMeasure};

/// `mu(2l) = nu(l)`, `mu(-1) = S/2`, `mu(-2l) = nu(-l)/2`.
#[derive(Debug, Clone)]
pub struct MuMeasure<'a> {
    pub nu: &'a NuMeasure,
}

impl MuMeasure<'_> {
    pub fn mass(&self, j: i64) -> f64 {
        if j >= 0 {
            if j % 2 == 0 {
                self.nu.nu(j / 2)
            } else {
                0.0
            }
        } else if j == -1 {
            self.nu.s / 2.0
        } else if j % 2 == 0 {
            self.nu.nu(j / 2) / 2.0
        } else {
            0.0
        }
    }

    pub fn total(&self) -> f64 {
        self.nu.nu_pos.iter().sum::<f64>() + self.nu.s
    }
}

/// Tabulated `H_down(0..=M)` and `H_up(0..=M+1)`.
#[derive(Debug, Clone)]
pub struct RenewalFunctions {
    pub h_down: Vec<f64>,
    pub h_up: Vec<f64>,
    /// `sum_{k >= m} nu(-k) ~ tail_coef * m^-3/2` for the extension past `M`.
    tail_coef: f64,
    s: f64,
}

/// `H_down(l) = nu((-inf, -1 - l/2]) / nu(Z_<0)`.
pub fn h_down_nu(nu: &NuMeasure, l: usize) -> f64 {
    if l == 0 {
        return 1.0;
    }
    nu.neg_tail(l.div_ceil(2) + 1) / nu.s
}

/// `H_down(l) = (1/W_c) sum_{2j >= l} W^(j) c^-j`.
pub fn h_down_w(disk: &DiskData, l: usize) -> f64 {
    if l == 0 {
        return 1.0;
    }
    disk.w_tail_sum(l.div_ceil(2)) / disk.w_c
}

/// Largest disagreement between the two expressions of `H_down` on `0..=l_max`.
pub fn dual_formula_gap(nu: &NuMeasure, disk: &DiskData, l_max: usize) -> (usize, f64) {
    (0..=l_max)
        .map(|l| (l, (h_down_nu(nu, l) - h_down_w(disk, l)).abs()))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
}

pub fn h_down(nu: &NuMeasure, disk: &DiskData, m: usize, tol: f64) -> Result<Vec<f64>> {
    let check = m.min(4 * disk.l_max() / 2).min(2 * nu.k_max());
    let (at, gap) = dual_formula_gap(nu, disk, check.min(2000));
    if gap > tol {
        return Err(Error::Consistency(format!("H_down dual formulas differ by {gap:e} at l = {at}")));
    }
    Ok((0..=m).map(|l| h_down_nu(nu, l)).collect())
}

pub fn h_up(h_down: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(h_down.len() + 1);
    out.push(0.0);
    let mut acc = 0.0;
    let mut comp = 0.0;
    for x in h_down {
        let y = x - comp;
        let t = acc + y;
        comp = (t - acc) - y;
        acc = t;
        out.push(acc);
    }
    out
}

impl RenewalFunctions {
    pub fn build(nu: &NuMeasure, disk: &DiskData, m: usize) -> Result<Self> {
        let hd = h_down(nu, disk, m, 1e-10)?;
        let hu = h_up(&hd);
        let k = nu.k_max() as f64;
        Ok(RenewalFunctions {
            h_down: hd,
            h_up: hu,
            tail_coef: nu.neg_tail(nu.k_max() + 1) * k.powf(1.5),
            s: nu.s,
        })
    }

    pub fn from_tables(h_down: Vec<f64>, nu: &NuMeasure) -> Self {
        let h_up = h_up(&h_down);
        let k = nu.k_max() as f64;
        RenewalFunctions {
            h_down,
            h_up,
            tail_coef: nu.neg_tail(nu.k_max() + 1) * k.powf(1.5),
            s: nu.s,
        }
    }

    pub fn m(&self) -> usize {
        self.h_down.len() - 1
    }

    pub fn down(&self, l: i64) -> f64 {
        if l < 0 {
            return 0.0;
        }
        let l = l as usize;
        if l < self.h_down.len() {
            self.h_down[l]
        } else {
            self.tail_coef * ((l.div_ceil(2) + 1) as f64).powf(-1.5) / self.s
        }
    }

    pub fn up(&self, l: i64) -> f64 {
        if l <= 0 {
            return 0.0;
        }
        let l = l as usize;
        if l < self.h_up.len() {
            self.h_up[l]
        } else {
            // integral of the extended H_down from M+1 to l
            let m = self.h_up.len() - 1;
            let k = self.tail_coef / self.s;
            let f = |x: f64| -> f64 { -2.0 * k * 2f64.powf(1.5) * (x + 2.0).powf(-0.5) };
            self.h_up[m] + f(l as f64 - 0.5) - f(m as f64 - 0.5)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub harmonic_max: f64,
    pub harmonic_at: usize,
    pub sum_to_one_max: f64,
    pub sum_to_one_at: (usize, usize),
    pub first_peel_total: f64,
    pub passed: bool,
    pub tol: f64,
}

/// Residual of the sum-to-one identity at `(p, l)`.
pub fn sum_to_one_residual(nu: &NuMeasure, h: &RenewalFunctions, p: usize, l: usize) -> f64 {
    let p = p as i64;
    let l = l as i64;
    let mut acc = 0.0;
    for (k, nk) in nu.nu_pos.iter().enumerate() {
        acc += nk * h.up(p + 2 * k as i64);
    }
    for floor in [p - l, l - 1] {
        let mut k = 1i64;
        while p - 2 * k > floor {
            acc += 0.5 * nu.nu(-k) * h.up(p - 2 * k);
            k += 1;
        }
        acc += 0.5 * nu.neg_tail(k as usize) * h.up(floor);
    }
    acc / h.up(p) - 1.0
}

/// `sum_k mu(k) H_down(x + k) - H_down(x)` relative to `H_down(x)`.
pub fn harmonic_residual(nu: &NuMeasure, h: &RenewalFunctions, x: usize) -> f64 {
    let x = x as i64;
    let mut acc = 0.0;
    for (k, nk) in nu.nu_pos.iter().enumerate() {
        acc += nk * h.down(x + 2 * k as i64);
    }
    acc += 0.5 * nu.s * h.down(x - 1);
    let mut k = 1;
    while 2 * k <= x {
        acc += 0.5 * nu.nu(-k) * h.down(x - 2 * k);
        k += 1;
    }
    acc / h.down(x) - 1.0
}

/// `sum_k q_k c^{k-1} H_up(2k - 1)`.
pub fn first_peel_total(nu: &NuMeasure, h: &RenewalFunctions) -> f64 {
    nu.nu_pos.iter().enumerate().map(|(k, v)| v * h.up(2 * k as i64 + 1)).sum()
}

pub fn check_h_identities(nu: &NuMeasure, h: &RenewalFunctions, p_max: usize, tol: f64) -> IdentityReport {
    let mut harmonic_max = 0.0;
    let mut harmonic_at = 0;
    for x in 1..=p_max {
        let r = harmonic_residual(nu, h, x).abs();
        if r > harmonic_max {
            harmonic_max = r;
            harmonic_at = x;
        }
    }
    let mut sum_max = 0.0;
    let mut sum_at = (1, 1);
    for p in 1..=p_max {
        for l in 1..=p {
            let r = sum_to_one_residual(nu, h, p, l).abs();
            if r > sum_max {
                sum_max = r;
                sum_at = (p, l);
            }
        }
    }
    let total = first_peel_total(nu, h);
    IdentityReport {
        harmonic_max,
        harmonic_at,
        sum_to_one_max: sum_max,
        sum_to_one_at: sum_at,
        first_peel_total: total,
        passed: harmonic_max < tol && sum_max < tol && (total - 1.0).abs() < tol,
        tol,
    }
}

/// One step of the `h`-transform of a finitely supported kernel.
pub fn doob_step(h: impl Fn(i64) -> f64, base: &[(i64, f64)], x: i64, rng: &mut Rng, tol: f64) -> Result<i64> {
    let hx = h(x);
    if !(hx > 0.0) {
        return Err(Error::InvalidArgument(format!("h({x}) = {hx} is not positive")));
    }
    let masses: Vec<(i64, f64)> = base.iter().map(|&(j, p)| (x + j, p * h(x + j) / hx)).collect();
    let total: f64 = masses.iter().map(|m| m.1).sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::Normalization { sum: total, state: format!("x = {x}") });
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(y, m) in &masses {
        acc += m;
        if u < acc && m > 0.0 {
            return Ok(y);
        }
    }
    Ok(masses.iter().rev().find(|m| m.1 > 0.0).map(|m| m.0).unwrap_or(x))
}

/// Transition table from one state.
#[derive(Debug, Clone)]
pub struct StepTable {
    pub targets: Vec<i64>,
    pub cumulative: Vec<f64>,
}

impl StepTable {
    pub fn new(moves: Vec<(i64, f64)>) -> Self {
        let mut targets = Vec::with_capacity(moves.len());
        let mut cumulative = Vec::with_capacity(moves.len());
        let mut acc = 0.0;
        for (y, m) in moves {
            if m > 0.0 {
                acc += m;
                targets.push(y);
                cumulative.push(acc);
            }
        }
        StepTable { targets, cumulative }
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn sample(&self, rng: &mut Rng) -> i64 {
        let u = rng.random::<f64>() * self.total();
        let i = self.cumulative.partition_point(|c| *c <= u);
        self.targets[i.min(self.targets.len() - 1)]
    }

    /// Target for a uniform `u` already scaled to `[0, total)`.
    pub fn sample_scaled(&self, u: f64) -> i64 {
        let i = self.cumulative.partition_point(|c| *c <= u);
        self.targets[i.min(self.targets.len() - 1)]
    }

    pub fn prob(&self, y: i64) -> f64 {
        let total = self.total();
        let mut prev = 0.0;
        let mut out = 0.0;
        for (t, c) in self.targets.iter().zip(&self.cumulative) {
            if *t == y {
                out += c - prev;
            }
            prev = *c;
        }
        out / total
    }
}

/// Bundle of everything the explorations need.
#[derive(Debug)]
pub struct WalkKit {
    pub disk: DiskData,
    pub nu: NuMeasure,
    pub h: RenewalFunctions,
    e_tables: Vec<OnceLock<StepTable>>,
    /// `nu` table over jumps `k`, for plain half-plane steps.
    pub nu_table: StepTable,
}

pub const DEFAULT_L: usize = 4000;
pub const DEFAULT_M: usize = 1 << 16;

impl WalkKit {
    pub fn build(disk: DiskData, nu: NuMeasure, m: usize) -> Result<Self> {
        let h = RenewalFunctions::build(&nu, &disk, m)?;
        let mut moves: Vec<(i64, f64)> = nu.nu_pos.iter().enumerate().map(|(k, v)| (k as i64, *v)).collect();
        for k in 1..=nu.k_max() {
            moves.push((-(k as i64), nu.nu_neg[k]));
        }
        let nu_table = StepTable::new(moves);
        Ok(WalkKit {
            e_tables: (0..4096).map(|_| OnceLock::new()).collect(),
            disk,
            nu,
            h,
            nu_table,
        })
    }

    pub fn for_weights(q: &crate::weights::WeightSequence, l: usize, m: usize) -> Result<Self> {
        let disk = DiskData::solve(q, l)?;
        let nu = crate::weights::nu_measure(&disk, l)?;
        Self::build(disk, nu, m)
    }

    pub fn mu(&self) -> MuMeasure<'_> {
        MuMeasure { nu: &self.nu }
    }

    /// Moves of the `H_down`-transformed `mu`-chain from `e >= 1`.
    pub fn e_moves(&self, e: i64) -> Vec<(i64, f64)> {
        let h = &self.h;
        let he = h.down(e);
        let mut out = Vec::new();
        for (k, nk) in self.nu.nu_pos.iter().enumerate() {
            let y = e + 2 * k as i64;
            out.push((y, nk * h.down(y) / he));
        }
        out.push((e - 1, 0.5 * self.nu.s * h.down(e - 1) / he));
        let mut k = 1;
        while 2 * k <= e {
            out.push((e - 2 * k, 0.5 * self.nu.nu(-k) * h.down(e - 2 * k) / he));
            k += 1;
        }
        out
    }

    pub fn e_table(&self, e: i64) -> std::borrow::Cow<'_, StepTable> {
        match self.e_tables.get(e as usize) {
            Some(cell) => std::borrow::Cow::Borrowed(cell.get_or_init(|| StepTable::new(self.e_moves(e)))),
            None => std::borrow::Cow::Owned(StepTable::new(self.e_moves(e))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoreRun {
    pub d: u64,
    pub tau: u64,
    pub trace: Option<Vec<i64>>,
}

impl CoreRun {
    /// Half-perimeter of the core: `2 |core| = D + 1`.
    pub fn core_half_perimeter(&self) -> u64 {
        (self.d + 1) / 2
    }
}

/// Runs the exposed-length chain from `E = 1` until absorption at 0.
pub fn run_a_core(kit: &WalkKit, rng: &mut Rng, budget: u64, keep_trace: bool) -> Result<CoreRun> {
    let mut e: i64 = 1;
    let mut d = 0;
    let mut tau = 0;
    let mut trace = keep_trace.then(|| vec![1]);
    while e > 0 {
        if tau >= budget {
            return Err(Error::Budget(budget as usize));
        }
        let next = kit.e_table(e).sample(rng);
        if next == e - 1 {
            d += 1;
        }
        e = next;
        tau += 1;
        if let Some(t) = trace.as_mut() {
            t.push(e);
        }
    }
    Ok(CoreRun { d, tau, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::weights::{make_2p_angulation, nu_measure};

    fn kit() -> WalkKit {
        let q = make_2p_angulation(2).unwrap();
        WalkKit::for_weights(&q, 4000, 4096).unwrap()
    }

    #[test]
    fn quadrangulation_values() {
        let k = kit();
        let want = [1.0, 0.25, 0.25, 0.125, 0.125, 5.0 / 64.0, 5.0 / 64.0, 7.0 / 128.0, 7.0 / 128.0, 21.0 / 512.0];
        for (l, v) in want.iter().enumerate() {
            assert!((k.h.down(l as i64) - v).abs() < 1e-12, "l={l}");
        }
        let up = [0.0, 1.0, 1.25, 1.5, 1.625, 1.75];
        for (l, v) in up.iter().enumerate() {
            assert!((k.h.up(l as i64) - v).abs() < 1e-12, "l={l}");
        }
    }

    #[test]
    fn e_chain_oracles() {
        let k = kit();
        let t = k.e_table(1);
        assert!((t.prob(3) - 1.0 / 3.0).abs() < 1e-12);
        assert!((t.prob(0) - 2.0 / 3.0).abs() < 1e-12);
        let t = k.e_table(3);
        assert!((t.prob(5) - 5.0 / 12.0).abs() < 1e-12);
        assert!((t.prob(2) - 1.0 / 3.0).abs() < 1e-12);
        assert!((t.prob(1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identities_hold() {
        let k = kit();
        let r = check_h_identities(&k.nu, &k.h, 40, 1e-10);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn perturbation_is_detected() {
        let k = kit();
        let mut neg = k.nu.nu_neg.clone();
        neg[1] += 1e-3;
        let nu2 = NuMeasure::from_parts(k.nu.c, k.nu.nu_pos.clone(), neg, k.nu.regime).unwrap();
        let hd: Vec<f64> = (0..=200).map(|l| h_down_nu(&nu2, l)).collect();
        let h2 = RenewalFunctions::from_tables(hd, &nu2);
        let r = check_h_identities(&nu2, &h2, 40, 1e-10);
        assert!(r.sum_to_one_max > 1e-4, "{r:?}");
    }

    #[test]
    fn constant_h_gives_base_walk() {
        let base = [(-1, 0.25), (1, 0.75)];
        let mut rng = stream(3, &[0]);
        let ups = (0..4000).filter(|_| doob_step(|_| 1.0, &base, 0, &mut rng, 1e-9).unwrap() == 1).count();
        assert!((ups as f64 / 4000.0 - 0.75).abs() < 0.03);
    }

    #[test]
    fn core_runs_have_odd_d() {
        let k = kit();
        let mut rng = stream(1, &[0]);
        for _ in 0..2000 {
            let r = run_a_core(&k, &mut rng, 1_000_000, false).unwrap();
            assert_eq!(r.d % 2, 1);
        }
    }

    #[test]
    fn disk_nu_consistency() {
        let q = make_2p_angulation(3).unwrap();
        let d = DiskData::solve(&q, 2000).unwrap();
        let nu = nu_measure(&d, 2000).unwrap();
        let (_, gap) = dual_formula_gap(&nu, &d, 100);
        assert!(gap < 1e-10);
    }
}
