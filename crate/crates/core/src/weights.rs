//! Weight sequences, disk functions and the step measure `nu`.
//!
//! Conventions. For a weight sequence `q` with finite support, set
//! `phi(z) = 1 + sum_k binom(2k-1, k) q_k z^k`. The sequence is admissible when
//! `phi(z) = z` has a positive root, `Z_q` is the smallest one and
//! `c_q = 4 Z_q`. It is critical when additionally `phi'(Z_q) = 1`.
//!
//! The step measure is `nu(k) = q_{k+1} c^k` for `k >= 0` and
//! `nu(-k) = 2 W^(k-1) c^-k` for `k >= 1`. The negative part is obtained from
//! the positive part through the harmonicity of `h(n) = binom(2n, n) / 4^n`
//! on the positive integers, which gives a triangular recursion.
//!
//! Disk functions are stored scaled: `w[l] = W^(l) c^-l`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hp::{self, rational_to_f64, Fixed};

pub fn binomial(n: u64, k: u64) -> BigInt {
    let k = k.min(n - k.min(n));
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSequence {
    entries: BTreeMap<usize, BigRational>,
}

impl WeightSequence {
    pub fn new(entries: BTreeMap<usize, BigRational>) -> Result<Self> {
        let mut clean = BTreeMap::new();
        for (k, q) in entries {
            if k == 0 {
                return Err(Error::InvalidWeights("half-degree must be at least 1".into()));
            }
            if q.is_negative() {
                return Err(Error::InvalidWeights(format!("negative weight q_{k}")));
            }
            if !q.is_zero() {
                clean.insert(k, q);
            }
        }
        if clean.is_empty() {
            return Err(Error::InvalidWeights("empty support".into()));
        }
        Ok(WeightSequence { entries: clean })
    }

    pub fn from_pairs(pairs: &[(usize, BigRational)]) -> Result<Self> {
        Self::new(pairs.iter().cloned().collect())
    }

    pub fn single(k: usize, q: BigRational) -> Result<Self> {
        Self::from_pairs(&[(k, q)])
    }

    /// Parses lines `k q_k`, with `q_k` a decimal or `num/den`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(k), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::InvalidWeights(format!("line {}: expected `k q_k`", lineno + 1)));
            };
            let k: usize = k
                .parse()
                .map_err(|_| Error::InvalidWeights(format!("line {}: bad half-degree `{k}`", lineno + 1)))?;
            let v = parse_number(v)
                .ok_or_else(|| Error::InvalidWeights(format!("line {}: bad weight `{v}`", lineno + 1)))?;
            if entries.insert(k, v).is_some() {
                return Err(Error::InvalidWeights(format!("line {}: duplicate half-degree {k}", lineno + 1)));
            }
        }
        Self::new(entries)
    }

    pub fn support_bound(&self) -> usize {
        *self.entries.keys().next_back().expect("nonempty support")
    }

    pub fn get(&self, k: usize) -> BigRational {
        self.entries.get(&k).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn get_f64(&self, k: usize) -> f64 {
        self.entries.get(&k).map(rational_to_f64).unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &BigRational)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn scaled(&self, lambda: &BigRational) -> Self {
        WeightSequence {
            entries: self.entries.iter().map(|(k, v)| (*k, v * lambda)).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} {v}\n")).collect()
    }

    fn phi(&self, z: &BigRational) -> BigRational {
        let mut acc = BigRational::one();
        for (k, q) in &self.entries {
            let b = BigRational::from_integer(binomial(2 * *k as u64 - 1, *k as u64));
            acc += b * q * pow(z, *k);
        }
        acc
    }

    fn dphi(&self, z: &BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for (k, q) in &self.entries {
            let b = BigRational::from_integer(binomial(2 * *k as u64 - 1, *k as u64) * BigInt::from(*k));
            acc += b * q * pow(z, *k - 1);
        }
        acc
    }
}

impl fmt::Display for WeightSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(|(k, v)| format!("q_{k}={v}")).collect();
        write!(f, "{}", parts.join(", "))
    }
}

fn pow(z: &BigRational, n: usize) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..n {
        acc *= z;
    }
    acc
}

/// Parses `a/b`, `123`, `0.0625`, `1.5e-3`.
pub fn parse_number(s: &str) -> Option<BigRational> {
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut r = BigRational::from_integer(digits);
    if scale >= 0 {
        r *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        r /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if neg { -r } else { r })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Critical,
    Subcritical,
}

/// Solution of the admissibility equation.
#[derive(Debug, Clone)]
pub struct Admissibility {
    pub z: BigRational,
    pub c: BigRational,
    /// `z` satisfies the defining equations exactly in rational arithmetic.
    pub exact: bool,
    pub regime: Regime,
    /// `phi(z*) - z*` at the tangency point `phi'(z*) = 1`; zero when critical.
    pub tangency_gap: f64,
}

impl Admissibility {
    pub fn c_f64(&self) -> f64 {
        rational_to_f64(&self.c)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Bisection steps for the root search.
    pub bisection_steps: usize,
    /// `|phi(z*) - z*|` below which the sequence counts as critical.
    pub critical_tol: f64,
    /// Largest denominator tried when snapping to an exact rational root.
    pub max_denominator: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            bisection_steps: 240,
            critical_tol: 1e-50,
            max_denominator: 1_000_000_000_000_000,
        }
    }
}

fn tangency_point(q: &WeightSequence, steps: usize) -> Option<BigRational> {
    if q.support_bound() == 1 {
        return None;
    }
    let one = BigRational::one();
    let mut hi = one.clone();
    while q.dphi(&hi) < one {
        hi *= BigRational::from_integer(2.into());
        if hi > BigRational::from_integer(BigInt::one() << 200usize) {
            return None;
        }
    }
    let mut lo = BigRational::zero();
    let half = rat(1, 2);
    for _ in 0..steps {
        let mid = (&lo + &hi) * &half;
        if q.dphi(&mid) < one {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((lo + hi) * half)
}

fn snap(x: &BigRational, max_den: u64, check: impl Fn(&BigRational) -> bool) -> Option<BigRational> {
    hp::convergents(x, &BigInt::from(max_den)).into_iter().rev().find(|c| check(c))
}

/// Solves for `c_q = 4 Z_q`.
pub fn solve_admissible_c(q: &WeightSequence, opts: &SolverOptions) -> Result<Admissibility> {
    let one = BigRational::one();
    if q.support_bound() == 1 {
        // phi(z) = 1 + q_1 z.
        let q1 = q.get(1);
        if q1 >= one {
            return Err(Error::NotAdmissible {
                gap: rational_to_f64(&q1),
                low_sign: "negative",
                high_sign: "negative",
            });
        }
        let z = (&one - &q1).recip();
        return Ok(Admissibility {
            c: &z * BigRational::from_integer(4.into()),
            z,
            exact: true,
            regime: Regime::Subcritical,
            tangency_gap: f64::NEG_INFINITY,
        });
    }
    let zs = tangency_point(q, opts.bisection_steps)
        .ok_or_else(|| Error::InvalidWeights("no tangency point found".into()))?;
    let gap_exact = q.phi(&zs) - &zs;
    let gap = rational_to_f64(&gap_exact);
    if gap > opts.critical_tol {
        return Err(Error::NotAdmissible {
            gap,
            low_sign: "negative",
            high_sign: "negative",
        });
    }
    if gap.abs() <= opts.critical_tol {
        let exact = snap(&zs, opts.max_denominator, |z| q.phi(z) == *z && q.dphi(z) == one);
        let z = exact.clone().unwrap_or(zs);
        return Ok(Admissibility {
            c: &z * BigRational::from_integer(4.into()),
            z,
            exact: exact.is_some(),
            regime: Regime::Critical,
            tangency_gap: 0.0,
        });
    }
    // phi(z) - z decreases on [0, z*] from 1 to a negative value.
    let mut lo = BigRational::zero();
    let mut hi = zs;
    let half = rat(1, 2);
    for _ in 0..opts.bisection_steps {
        let mid = (&lo + &hi) * &half;
        if q.phi(&mid) > mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z0 = (lo + hi) * half;
    let exact = snap(&z0, opts.max_denominator, |z| q.phi(z) == *z);
    let z = exact.clone().unwrap_or(z0);
    Ok(Admissibility {
        c: &z * BigRational::from_integer(4.into()),
        z,
        exact: exact.is_some(),
        regime: Regime::Subcritical,
        tangency_gap: gap,
    })
}

/// Finds `lambda > 0` such that `lambda * shape` is critical.
pub fn critical_multiple(shape: &WeightSequence, opts: &SolverOptions) -> Result<BigRational> {
    if shape.support_bound() == 1 {
        return Err(Error::InvalidWeights("2-gon-only sequences are never critical".into()));
    }
    let steps = opts.bisection_steps.min(160);
    let gap = |lambda: &BigRational| -> Option<BigRational> {
        let q = shape.scaled(lambda);
        let zs = tangency_point(&q, steps)?;
        Some(q.phi(&zs) - zs)
    };
    let two = BigRational::from_integer(2.into());
    let mut hi = BigRational::one();
    let mut iterations = 0;
    while gap(&hi).map(|g| !g.is_positive()).unwrap_or(true) {
        hi *= &two;
        iterations += 1;
        if iterations > 400 {
            return Err(Error::NoConvergence { iterations, residual: f64::NAN });
        }
    }
    let mut lo = hi.clone() / &two;
    while gap(&lo).map(|g| g.is_positive()).unwrap_or(false) {
        lo /= &two;
        iterations += 1;
        if iterations > 800 {
            return Err(Error::NoConvergence { iterations, residual: f64::NAN });
        }
    }
    for _ in 0..steps {
        let mid = (&lo + &hi) / &two;
        if gap(&mid).map(|g| g.is_positive()).unwrap_or(true) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lambda = (lo + hi) / two;
    let exact = snap(&lambda, opts.max_denominator, |l| {
        let q = shape.scaled(l);
        matches!(solve_admissible_c(&q, opts), Ok(a) if a.exact && a.regime == Regime::Critical)
    });
    match exact {
        Some(l) => Ok(l),
        None => {
            let residual = gap(&lambda).map(|g| rational_to_f64(&g)).unwrap_or(f64::NAN);
            if residual.abs() > 1e-30 {
                return Err(Error::NoConvergence { iterations: steps, residual });
            }
            Ok(lambda)
        }
    }
}

/// The critical sequence supported on faces of degree `2p`.
pub fn make_2p_angulation(p: usize) -> Result<WeightSequence> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("2p-angulations need p >= 2, got {p}")));
    }
    let shape = WeightSequence::single(p, BigRational::one())?;
    let lambda = critical_multiple(&shape, &SolverOptions::default())?;
    Ok(shape.scaled(&lambda))
}

/// Parses `2p:<p>` into a weight sequence.
pub fn model_from_spec(spec: &str) -> Result<WeightSequence> {
    let p = spec
        .strip_prefix("2p:")
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::InvalidArgument(format!("unknown model `{spec}` (expected 2p:<p>)")))?;
    make_2p_angulation(p)
}

pub fn h_down_exact(n: usize) -> BigRational {
    BigRational::new(binomial(2 * n as u64, n as u64), BigInt::one() << (2 * n))
}

/// Step measure in exact rational arithmetic, for a rational `c`.
#[derive(Debug, Clone)]
pub struct ExactNu {
    pub c: BigRational,
    pub nu_pos: Vec<BigRational>,
    /// `nu_neg[k] = nu(-k)`; index 0 unused.
    pub nu_neg: Vec<BigRational>,
}

impl ExactNu {
    pub fn new(q: &WeightSequence, c: &BigRational, k_max: usize) -> Self {
        let s = q.support_bound();
        let nu_pos: Vec<BigRational> = (0..s).map(|k| q.get(k + 1) * pow(c, k)).collect();
        let h: Vec<BigRational> = (0..=k_max + s + 1).map(h_down_exact).collect();
        let mut nu_neg = vec![BigRational::zero(); k_max + 1];
        for l in 1..=k_max {
            let mut v = h[l].clone();
            for (k, nk) in nu_pos.iter().enumerate() {
                if !nk.is_zero() {
                    v -= nk * &h[l + k];
                }
            }
            for j in 1..l {
                v -= &nu_neg[j] * &h[l - j];
            }
            nu_neg[l] = v;
        }
        ExactNu { c: c.clone(), nu_pos, nu_neg }
    }

    /// `W^(l)` for `l < k_max`.
    pub fn disk(&self, l: usize) -> BigRational {
        &self.nu_neg[l + 1] * pow(&self.c, l + 1) / BigRational::from_integer(2.into())
    }
}

/// Constants that follow from finite sums once `sum nu = 1` and `mean nu = 0`.
#[derive(Debug, Clone)]
pub struct ExactConstants {
    pub c: BigRational,
    pub s: BigRational,
    pub nu_minus_one: BigRational,
    pub gulp: BigRational,
    pub exposure: BigRational,
}

impl ExactConstants {
    pub fn new(q: &WeightSequence, adm: &Admissibility) -> Result<Self> {
        if !adm.exact {
            return Err(Error::InvalidArgument("c_q is not known exactly".into()));
        }
        if adm.regime != Regime::Critical {
            return Err(Error::NotCritical("exact constants need a critical sequence".into()));
        }
        let c = adm.c.clone();
        let mut total = BigRational::zero();
        let mut first = BigRational::zero();
        let mut exposure = BigRational::zero();
        for (k1, qk) in q.iter() {
            let k = k1 - 1;
            let nu = qk * pow(&c, k);
            first += &nu * BigRational::from_integer(k.into());
            exposure += &nu * BigRational::from_integer((2 * k + 1).into());
            total += nu;
        }
        let s = BigRational::one() - total;
        let gulp = first - &s / BigRational::from_integer(2.into());
        Ok(ExactConstants {
            nu_minus_one: BigRational::from_integer(2.into()) / &c,
            c,
            s,
            gulp,
            exposure,
        })
    }
}

/// Fractional bits for the disk table recursion.
pub const DISK_BITS: u32 = 160;

/// Fixed-point scaled disk function `w[l] = W^(l) c^-l`, `l = 0..len`.
pub fn fixed_scaled_disk(q: &WeightSequence, c: &BigRational, len: usize, fx: Fixed) -> Vec<BigInt> {
    let s = q.support_bound();
    let nu_pos: Vec<BigInt> = (0..s).map(|k| fx.from_rational(&(q.get(k + 1) * pow(c, k)))).collect();
    let top = len + s + 2;
    let mut h = Vec::with_capacity(top + 1);
    h.push(fx.one());
    for n in 1..=top {
        let prev: &BigInt = &h[n - 1];
        h.push(prev * BigInt::from(2 * n - 1) / BigInt::from(2 * n));
    }
    let mut nu_neg = vec![BigInt::zero(); len + 2];
    for l in 1..=len + 1 {
        let mut acc = BigInt::zero();
        for (k, nk) in nu_pos.iter().enumerate() {
            if !nk.is_zero() {
                acc += nk * &h[l + k];
            }
        }
        for j in 1..l {
            acc += &nu_neg[j] * &h[l - j];
        }
        nu_neg[l] = &h[l] - (acc >> fx.bits);
    }
    let half_c = fx.from_rational(&(c / BigRational::from_integer(2.into())));
    (0..len).map(|l| fx.mul(&nu_neg[l + 1], &half_c)).collect()
}

/// `sum_{k >= m} k^-s` by Euler-Maclaurin.
pub fn zeta_tail(s: f64, m: f64) -> f64 {
    m.powf(1.0 - s) / (s - 1.0) + 0.5 * m.powf(-s) + s * m.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * m.powf(-s - 3.0) / 720.0
}

/// Model `x_k ~ k^-5/2 (a0 + a1/k + a2/k^2)` for large `k`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailModel {
    pub coeffs: [f64; 3],
}

impl TailModel {
    /// Least-squares fit of `x_k k^{5/2}` as a quadratic in `1/k`.
    pub fn fit(points: impl Iterator<Item = (usize, f64)>) -> TailModel {
        let pts: Vec<(f64, f64)> = points
            .map(|(k, v)| (1.0 / k as f64, v * (k as f64).powf(2.5)))
            .collect();
        let n = pts.len();
        if n < 3 {
            let a = if n > 0 { pts.iter().map(|p| p.1).sum::<f64>() / n as f64 } else { 0.0 };
            return TailModel { coeffs: [a, 0.0, 0.0] };
        }
        // scale the regressor to keep the normal equations well conditioned
        let x0 = pts[0].0;
        let a = DMatrix::from_fn(n, 3, |i, j| (pts[i].0 / x0).powi(j as i32));
        let b = DVector::from_iterator(n, pts.iter().map(|p| p.1));
        let ata = a.transpose() * &a;
        let atb = a.transpose() * b;
        match ata.lu().solve(&atb) {
            Some(sol) => TailModel { coeffs: [sol[0], sol[1] / x0, sol[2] / (x0 * x0)] },
            None => TailModel { coeffs: [pts.iter().map(|p| p.1).sum::<f64>() / n as f64, 0.0, 0.0] },
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn value(&self, k: usize) -> f64 {
        let k = k as f64;
        k.powf(-2.5) * (self.coeffs[0] + self.coeffs[1] / k + self.coeffs[2] / (k * k))
    }

    /// `sum_{k >= m} x_k`.
    pub fn mass_from(&self, m: usize) -> f64 {
        let m = m as f64;
        (0..3).map(|j| self.coeffs[j] * zeta_tail(2.5 + j as f64, m)).sum()
    }

    /// `sum_{k >= m} k x_k`.
    pub fn first_moment_from(&self, m: usize) -> f64 {
        let m = m as f64;
        (0..3).map(|j| self.coeffs[j] * zeta_tail(1.5 + j as f64, m)).sum()
    }
}

/// Scaled disk function with its growth constant.
#[derive(Debug, Clone)]
pub struct DiskData {
    pub q: WeightSequence,
    pub adm: Admissibility,
    pub c: f64,
    /// `w[l] = W^(l) c^-l` for `l = 0..=L`.
    pub w: Vec<f64>,
    pub w_c: f64,
    pub tail: TailModel,
}

impl DiskData {
    pub fn solve(q: &WeightSequence, l_max: usize) -> Result<DiskData> {
        let adm = solve_admissible_c(q, &SolverOptions::default())?;
        Self::with_admissibility(q, adm, l_max)
    }

    pub fn with_admissibility(q: &WeightSequence, adm: Admissibility, l_max: usize) -> Result<DiskData> {
        if l_max < 8 {
            return Err(Error::Truncation(format!("L = {l_max} is too small")));
        }
        let c = adm.c_f64();
        let fx = Fixed::new(DISK_BITS);
        let w: Vec<f64> = fixed_scaled_disk(q, &adm.c, l_max + 1, fx)
            .iter()
            .map(|x| fx.to_f64(x))
            .collect();
        if let Some(bad) = w.iter().position(|x| !(*x > 0.0)) {
            return Err(Error::Consistency(format!("nonpositive disk value at l = {bad}")));
        }
        let tail = TailModel::fit((l_max / 2..=l_max).map(|l| (l, w[l])));
        let w_c = kahan(w.iter().copied()) + tail.mass_from(l_max + 1);
        Ok(DiskData {
            q: q.clone(),
            adm,
            c,
            w,
            w_c,
            tail,
        })
    }

    pub fn l_max(&self) -> usize {
        self.w.len() - 1
    }

    /// `W^(l) c^-l`, using the tail model past the table.
    pub fn w(&self, l: usize) -> f64 {
        self.w.get(l).copied().unwrap_or_else(|| self.tail.value(l))
    }

    /// Unscaled `W^(l)`; overflows to infinity for large `l`.
    pub fn big_w(&self, l: usize) -> f64 {
        self.w(l) * self.c.powi(l as i32)
    }

    /// `sum_{j >= m} w_j`.
    pub fn w_tail_sum(&self, m: usize) -> f64 {
        if m > self.l_max() {
            return self.tail.mass_from(m);
        }
        kahan(self.w[m..].iter().copied()) + self.tail.mass_from(self.l_max() + 1)
    }

    pub fn hat_c(&self) -> f64 {
        self.c / (self.w_c * self.w_c)
    }
}

pub(crate) fn kahan(it: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in it {
        let y = x - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// The step measure with derived constants.
#[derive(Debug, Clone)]
pub struct NuMeasure {
    pub c: f64,
    /// `nu(k)` for `k = 0..support`.
    pub nu_pos: Vec<f64>,
    /// `nu(-k)` at index `k`, `k = 1..=K`; index 0 unused.
    pub nu_neg: Vec<f64>,
    pub tail: TailModel,
    pub tail_mass: f64,
    /// `nu` of the negative integers.
    pub s: f64,
    pub total: f64,
    pub mean: f64,
    pub gulp: f64,
    /// The unhalved sum `sum_k nu(-k)(2k - 1)`.
    pub gulp_unhalved: f64,
    pub exposure: f64,
    pub regime: Regime,
    neg_suffix: Vec<f64>,
}

pub fn nu_measure(disk: &DiskData, k_max: usize) -> Result<NuMeasure> {
    if k_max > disk.l_max() + 1 || k_max < 8 {
        return Err(Error::Truncation(format!("K = {k_max} must lie in [8, L+1 = {}]", disk.l_max() + 1)));
    }
    let c = disk.c;
    let s_bound = disk.q.support_bound();
    let nu_pos: Vec<f64> = (0..s_bound).map(|k| disk.q.get_f64(k + 1) * c.powi(k as i32)).collect();
    let mut nu_neg = vec![0.0; k_max + 1];
    for k in 1..=k_max {
        nu_neg[k] = 2.0 * disk.w[k - 1] / c;
    }
    NuMeasure::from_parts(c, nu_pos, nu_neg, disk.adm.regime)
}

impl NuMeasure {
    pub fn from_parts(c: f64, nu_pos: Vec<f64>, nu_neg: Vec<f64>, regime: Regime) -> Result<NuMeasure> {
        let k_max = nu_neg.len() - 1;
        let tail = TailModel::fit((k_max / 2..=k_max).map(|k| (k, nu_neg[k])));
        let tail_mass = tail.mass_from(k_max + 1);
        let mut neg_suffix = vec![0.0; k_max + 2];
        neg_suffix[k_max + 1] = tail_mass;
        for k in (1..=k_max).rev() {
            neg_suffix[k] = neg_suffix[k + 1] + nu_neg[k];
        }
        let s = neg_suffix[1];
        let pos_total = kahan(nu_pos.iter().copied());
        let pos_first = kahan(nu_pos.iter().enumerate().map(|(k, v)| k as f64 * v));
        let neg_first = kahan((1..=k_max).map(|k| k as f64 * nu_neg[k])) + tail.first_moment_from(k_max + 1);
        let gulp_unhalved = 2.0 * neg_first - s;
        Ok(NuMeasure {
            c,
            total: pos_total + s,
            mean: pos_first - neg_first,
            gulp: gulp_unhalved / 2.0,
            gulp_unhalved,
            exposure: kahan(nu_pos.iter().enumerate().map(|(k, v)| (2 * k + 1) as f64 * v)),
            nu_pos,
            nu_neg,
            tail,
            tail_mass,
            s,
            regime,
            neg_suffix,
        })
    }

    pub fn k_max(&self) -> usize {
        self.nu_neg.len() - 1
    }

    pub fn nu(&self, k: i64) -> f64 {
        if k >= 0 {
            self.nu_pos.get(k as usize).copied().unwrap_or(0.0)
        } else {
            let m = (-k) as usize;
            self.nu_neg.get(m).copied().unwrap_or_else(|| self.tail.value(m))
        }
    }

    /// `nu` of `{..., -m-1, -m}` for `m >= 1`.
    pub fn neg_tail(&self, m: usize) -> f64 {
        let m = m.max(1);
        if m < self.neg_suffix.len() {
            self.neg_suffix[m]
        } else {
            self.tail.mass_from(m)
        }
    }

    pub fn prob_gulp_positive(&self) -> f64 {
        self.s * self.s / (2.0 * self.nu(-1))
    }

    /// `|nu(-l-1) - 1/2 sum_k nu(k) nu(-l-k-1)|`.
    pub fn tutte_residual(&self, l: usize) -> f64 {
        let mut acc = 0.0;
        // k >= 0 and k <= -l-1 contribute the same terms
        for (k, nk) in self.nu_pos.iter().enumerate() {
            acc += 2.0 * nk * self.nu(-((l + k + 1) as i64));
        }
        for k in 1..=l {
            acc += self.nu(-(k as i64)) * self.nu(-((l + 1 - k) as i64));
        }
        (self.nu(-((l + 1) as i64)) - 0.5 * acc).abs()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalityReport {
    pub normalization_residual: f64,
    pub mean_residual: f64,
    pub tutte_residual_max: f64,
    pub tutte_range: usize,
    pub nu_minus_one_times_c: f64,
    pub tail_exponent: f64,
    pub tail_flatness: f64,
    pub exposure_identity_residual: f64,
    pub admissible: bool,
    pub critical: bool,
    pub dilute: bool,
}

pub fn criticality_report(nu: &NuMeasure, mean_tol: f64) -> CriticalityReport {
    let k_max = nu.k_max();
    let range = k_max.saturating_sub(nu.nu_pos.len() + 1).max(1);
    let tutte = (1..=range).map(|l| nu.tutte_residual(l)).fold(0.0, f64::max);
    // slope of log nu(-k) against log k over [K/2, K]
    let pts: Vec<(f64, f64)> = (k_max / 2..=k_max)
        .map(|k| ((k as f64).ln(), nu.nu_neg[k].ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let amps: Vec<f64> = (k_max / 2..=k_max)
        .map(|k| (nu.nu_neg[k] * (k as f64).powf(2.5)).ln())
        .collect();
    let flat = amps.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - amps.iter().cloned().fold(f64::INFINITY, f64::min);
    CriticalityReport {
        normalization_residual: nu.total - 1.0,
        mean_residual: nu.mean,
        tutte_residual_max: tutte,
        tutte_range: range,
        nu_minus_one_times_c: nu.nu(-1) * nu.c,
        tail_exponent: slope,
        tail_flatness: flat,
        exposure_identity_residual: nu.exposure - 2.0 * nu.gulp - 1.0,
        admissible: true,
        critical: nu.regime == Regime::Critical && nu.mean.abs() < mean_tol,
        dilute: true,
    }
}

/// Result of the monotone fixed-point solver.
#[derive(Debug, Clone)]
pub struct SeriesSolution {
    /// `W^(l) c^-l`, `l = 0..=L`.
    pub w: Vec<f64>,
    pub w_c: f64,
    pub kleene_iterations: usize,
    pub newton_iterations: usize,
    pub residual: f64,
    /// Snapshots of the first Kleene iterates, for monotonicity checks.
    pub history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SeriesOptions {
    pub tol: f64,
    pub kleene_max: usize,
    pub newton_max: usize,
    pub overflow_guard: f64,
    pub keep_history: usize,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            tol: 1e-13,
            kleene_max: 4000,
            newton_max: 200,
            overflow_guard: 1e6,
            keep_history: 0,
        }
    }
}

struct TutteSystem {
    /// `nu(k) = q_{k+1} c^k`, coefficient of `w_{l+k}`.
    lin: Vec<f64>,
    inv_c: f64,
    l_max: usize,
}

impl TutteSystem {
    /// Extended value: past `L`, `w_m = w_L (L/m)^{5/2}`.
    fn ext(&self, w: &[f64], m: usize) -> (f64, f64) {
        if m <= self.l_max {
            (w[m], 1.0)
        } else {
            let f = (self.l_max as f64 / m as f64).powf(2.5);
            (w[self.l_max] * f, f)
        }
    }

    fn apply(&self, w: &[f64]) -> Vec<f64> {
        let n = self.l_max + 1;
        let mut out = vec![0.0; n];
        out[0] = 1.0;
        for l in 1..n {
            let mut v = 0.0;
            for (k, a) in self.lin.iter().enumerate() {
                if *a != 0.0 {
                    v += a * self.ext(w, l + k).0;
                }
            }
            let mut conv = 0.0;
            for a in 0..l {
                conv += w[a] * w[l - 1 - a];
            }
            out[l] = v + self.inv_c * conv;
        }
        out
    }

    fn jacobian(&self, w: &[f64]) -> DMatrix<f64> {
        let n = self.l_max + 1;
        let mut j = DMatrix::zeros(n, n);
        for l in 1..n {
            for (k, a) in self.lin.iter().enumerate() {
                if *a != 0.0 {
                    let m = l + k;
                    let (_, f) = self.ext(w, m);
                    let col = m.min(self.l_max);
                    j[(l, col)] += a * f;
                }
            }
            for a in 0..l {
                j[(l, a)] += self.inv_c * w[l - 1 - a];
                j[(l, l - 1 - a)] += self.inv_c * w[a];
            }
        }
        j
    }
}

/// Minimal nonnegative solution of the truncated disk Tutte equation at a given `c`.
pub fn solve_disk_series(q: &WeightSequence, c: f64, l_max: usize, opts: &SeriesOptions) -> Result<SeriesSolution> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("c must be positive, got {c}")));
    }
    if l_max < 2 {
        return Err(Error::InvalidArgument(format!("L must be at least 2, got {l_max}")));
    }
    let s = q.support_bound();
    let sys = TutteSystem {
        lin: (0..s).map(|k| q.get_f64(k + 1) * c.powi(k as i32)).collect(),
        inv_c: 1.0 / c,
        l_max,
    };
    let n = l_max + 1;
    let mut w = vec![0.0; n];
    w[0] = 1.0;
    let mut history = Vec::new();
    let mut kleene = 0;
    let mut last_delta = f64::INFINITY;
    let mut stalled = 0;
    while kleene < opts.kleene_max {
        let next = sys.apply(&w);
        kleene += 1;
        let delta = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if history.len() < opts.keep_history {
            history.push(next.clone());
        }
        w = next;
        if w.iter().any(|x| !x.is_finite() || *x > opts.overflow_guard) {
            return Err(Error::Divergence(format!("iterate exceeded {} after {kleene} steps", opts.overflow_guard)));
        }
        if delta < 1e-4 {
            break;
        }
        if delta >= last_delta {
            stalled += 1;
            if stalled > 50 {
                return Err(Error::Truncation("Kleene residual stopped decreasing".into()));
            }
        }
        last_delta = delta;
    }
    let mut newton = 0;
    let mut residual = f64::INFINITY;
    while newton < opts.newton_max {
        let fw = sys.apply(&w);
        let r = DVector::from_iterator(n, fw.iter().zip(&w).map(|(a, b)| a - b));
        residual = r.amax();
        if residual < opts.tol {
            break;
        }
        let a = DMatrix::identity(n, n) - sys.jacobian(&w);
        let step = a
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::NoConvergence { iterations: newton, residual })?;
        for i in 0..n {
            w[i] += step[i];
        }
        w[0] = 1.0;
        newton += 1;
        if w.iter().any(|x| !x.is_finite() || *x > opts.overflow_guard) {
            return Err(Error::Divergence("Newton iterate left the admissible range".into()));
        }
    }
    if residual >= opts.tol.max(1e-10) {
        return Err(Error::NoConvergence { iterations: newton, residual });
    }
    let a = w[l_max] * (l_max as f64).powf(2.5);
    let tail = TailModel { coeffs: [a, 0.0, 0.0] };
    let w_c = kahan(w.iter().copied()) + tail.mass_from(l_max + 1);
    Ok(SeriesSolution {
        w,
        w_c,
        kleene_iterations: kleene,
        newton_iterations: newton,
        residual,
        history,
    })
}

/// Ratio sequence `x[l+1] / x[l]` with the deviation of its last value from `target`.
#[derive(Debug, Clone, Serialize)]
pub struct RatioReport {
    pub ratios: Vec<f64>,
    pub last: f64,
    pub deviation: f64,
}

pub fn ratio_diagnostics(series: &[f64], target: f64) -> Result<RatioReport> {
    if series.len() < 10 {
        return Err(Error::InvalidArgument("ratio diagnostics need at least 10 terms".into()));
    }
    let ratios: Vec<f64> = series.windows(2).map(|p| p[1] / p[0]).collect();
    let last = *ratios.last().unwrap();
    Ok(RatioReport { deviation: (last - target).abs(), last, ratios })
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().filter(|x| x.is_finite()).unwrap_or_else(|| rational_to_f64(r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> WeightSequence {
        WeightSequence::single(2, rat(1, 12)).unwrap()
    }

    /// Coefficients of N(x) = (x - 2/3 + (2/3)(1-x)^{3/2}) / x, so that N = sum_{k>=1} nu(-k) x^k.
    fn quad_oracle(n: usize) -> Vec<f64> {
        // (1-x)^{3/2} = sum_j b_j x^j with b_0 = 1, b_j = b_{j-1} (j - 1 - 3/2) / j
        let mut b = vec![1.0f64; n + 2];
        for j in 1..n + 2 {
            b[j] = b[j - 1] * (j as f64 - 2.5) / j as f64;
        }
        // the constant and linear terms of the numerator vanish
        let mut out = vec![0.0; n + 1];
        for k in 1..=n {
            out[k] = (2.0 / 3.0) * b[k + 1];
        }
        out
    }

    #[test]
    fn oracle_matches_known_values() {
        let o = quad_oracle(4);
        for (k, v) in [(1, 0.25), (2, 1.0 / 24.0), (3, 1.0 / 64.0), (4, 1.0 / 128.0)] {
            assert!((o[k] - v).abs() < 1e-15, "k={k}: {}", o[k]);
        }
    }

    #[test]
    fn parse_formats() {
        let q = WeightSequence::parse("# quads\n2 1/12\n3 0.5e-2\n").unwrap();
        assert_eq!(q.get(2), rat(1, 12));
        assert_eq!(q.get(3), rat(1, 200));
        assert_eq!(q.support_bound(), 3);
        assert!(WeightSequence::parse("1 0\n").is_err());
        assert!(WeightSequence::parse("2 -1/3\n").is_err());
        assert!(WeightSequence::parse("2 x\n").is_err());
        assert_eq!(parse_number("0.0625"), Some(rat(1, 16)));
    }

    #[test]
    fn quadrangulation_admissibility() {
        let a = solve_admissible_c(&quad(), &SolverOptions::default()).unwrap();
        assert!(a.exact);
        assert_eq!(a.regime, Regime::Critical);
        assert_eq!(a.c, rat(8, 1));
    }

    #[test]
    fn two_p_angulations_are_critical() {
        let expect = [(2, rat(1, 12), rat(8, 1)), (3, rat(2, 135), rat(6, 1)), (4, rat(27, 8960), rat(16, 3))];
        for (p, qp, c) in expect {
            let q = make_2p_angulation(p).unwrap();
            assert_eq!(q.get(p), qp, "p={p}");
            let a = solve_admissible_c(&q, &SolverOptions::default()).unwrap();
            assert_eq!(a.c, c);
        }
    }

    #[test]
    fn exact_nu_matches_oracle() {
        let e = ExactNu::new(&quad(), &rat(8, 1), 6);
        assert_eq!(e.nu_neg[1], rat(1, 4));
        assert_eq!(e.nu_neg[2], rat(1, 24));
        assert_eq!(e.nu_neg[3], rat(1, 64));
        assert_eq!(e.nu_neg[4], rat(1, 128));
        let ws: Vec<BigRational> = (0..5).map(|l| e.disk(l)).collect();
        assert_eq!(ws, vec![rat(1, 1), rat(4, 3), rat(4, 1), rat(16, 1), rat(224, 3)]);
    }

    #[test]
    fn float_recursion_tracks_oracle() {
        let d = DiskData::solve(&quad(), 2000).unwrap();
        let nu = nu_measure(&d, 2000).unwrap();
        let o = quad_oracle(2000);
        for (k, tol) in [(1usize, 1e-14), (10, 1e-13), (100, 1e-11), (1000, 1e-9), (2000, 1e-8)] {
            let rel = (nu.nu(-(k as i64)) - o[k]).abs() / o[k];
            assert!(rel < tol, "k={k} rel={rel}");
        }
    }

    #[test]
    fn fixed_point_disk_matches_exact() {
        let fx = Fixed::new(256);
        let w = fixed_scaled_disk(&quad(), &rat(8, 1), 6, fx);
        let exact = ExactNu::new(&quad(), &rat(8, 1), 8);
        for l in 0..5 {
            let want = exact.disk(l) / pow(&rat(8, 1), l);
            assert!((fx.to_f64(&w[l]) - to_f64(&want)).abs() < 1e-15);
        }
    }

    #[test]
    fn quadrangulation_constants() {
        let d = DiskData::solve(&quad(), 4000).unwrap();
        let nu = nu_measure(&d, 4000).unwrap();
        assert!((nu.total - 1.0).abs() < 1e-10, "{}", nu.total);
        assert!(nu.mean.abs() < 1e-8, "{}", nu.mean);
        assert!((nu.s - 1.0 / 3.0).abs() < 1e-10);
        assert!((nu.gulp - 0.5).abs() < 1e-8);
        assert!((nu.gulp_unhalved - 1.0).abs() < 1e-8);
        assert!((nu.exposure - 2.0).abs() < 1e-14);
        assert!((d.w_c - 4.0 / 3.0).abs() < 1e-10);
        assert!((nu.nu(1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn eight_angulation_constants() {
        let q = make_2p_angulation(4).unwrap();
        let d = DiskData::solve(&q, 3000).unwrap();
        let nu = nu_measure(&d, 3000).unwrap();
        assert!((nu.gulp - 1.1).abs() < 1e-8);
        assert!((nu.exposure - 3.2).abs() < 1e-12);
    }

    #[test]
    fn exact_constants() {
        let q = make_2p_angulation(3).unwrap();
        let a = solve_admissible_c(&q, &SolverOptions::default()).unwrap();
        let e = ExactConstants::new(&q, &a).unwrap();
        assert_eq!(e.exposure, rat(8, 3));
        assert_eq!(e.gulp, rat(5, 6));
    }

    #[test]
    fn subcritical_is_flagged() {
        let q = WeightSequence::single(2, rat(1, 13)).unwrap();
        let a = solve_admissible_c(&q, &SolverOptions::default()).unwrap();
        assert_eq!(a.regime, Regime::Subcritical);
        let d = DiskData::with_admissibility(&q, a, 2000).unwrap();
        let nu = nu_measure(&d, 2000).unwrap();
        let r = criticality_report(&nu, 1e-6);
        assert!(!r.critical);
        assert!(r.admissible);
    }

    #[test]
    fn supercritical_is_rejected() {
        let q = WeightSequence::single(2, rat(1, 11)).unwrap();
        match solve_admissible_c(&q, &SolverOptions::default()) {
            Err(Error::NotAdmissible { gap, .. }) => assert!(gap > 0.0),
            other => panic!("expected a diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn series_solver_reproduces_oracle() {
        let sol = solve_disk_series(&quad(), 8.0, 400, &SeriesOptions::default()).unwrap();
        let exact = [1.0, 4.0 / 3.0, 4.0, 16.0, 224.0 / 3.0];
        for (l, v) in exact.iter().enumerate() {
            let got = sol.w[l] * 8f64.powi(l as i32);
            assert!((got - v).abs() < 1e-6 * v, "l={l}: {got}");
        }
        assert!((sol.w_c - 4.0 / 3.0).abs() < 1e-6, "{}", sol.w_c);
    }

    #[test]
    fn series_solver_rejects_small_c() {
        let r = solve_disk_series(&quad(), 6.0, 100, &SeriesOptions::default());
        assert!(matches!(r, Err(Error::Divergence(_)) | Err(Error::Truncation(_)) | Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn tutte_equation_holds() {
        for p in [2, 3] {
            let disk = DiskData::solve(&make_2p_angulation(p).unwrap(), 2000).unwrap();
            let nu = nu_measure(&disk, 2000).unwrap();
            let worst = (1..=50).map(|l| nu.tutte_residual(l)).fold(0.0, f64::max);
            assert!(worst < 1e-12, "2p:{p}: {worst}");
        }
    }
}
