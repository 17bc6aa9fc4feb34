//! Simple-boundary disk functions by compositional inversion.
//!
//! With `y(z) = z W(z)^2`, the simple-boundary series satisfies `What(y(z)) = W(z)`.
//! Working with `x = c z`, `w(x) = sum_l W^(l) c^-l x^l` and `u(x) = x w(x)^2`, the
//! coefficients `a_l` of `w = sum_l a_l u^l` are `What^(l) c^-l`. Cancellations in
//! the triangular solve grow like `W_c^{2l}`, so the float path runs in big
//! fixed point with precision scaled to `L`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hp::Fixed;
use crate::weights::{self, kahan, DiskData, TailModel, WeightSequence};

/// Rational `What^(0..len)` from rational `W^(0..len)`.
pub fn invert_exact(w: &[BigRational]) -> Vec<BigRational> {
    let n = w.len();
    // y = z W(z)^2
    let mut y = vec![BigRational::zero(); n];
    for i in 0..n {
        for j in 0..n - i {
            if i + j + 1 < n {
                y[i + j + 1] += &w[i] * &w[j];
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut comp = vec![BigRational::zero(); n];
    let mut power = vec![BigRational::zero(); n];
    power[0] = BigRational::one();
    for l in 0..n {
        let a = &w[l] - &comp[l];
        for i in l..n {
            if !power[i].is_zero() {
                comp[i] += &a * &power[i];
            }
        }
        out.push(a);
        let mut next = vec![BigRational::zero(); n];
        for i in l..n {
            if power[i].is_zero() {
                continue;
            }
            for j in 1..n - i {
                if !y[j].is_zero() {
                    next[i + j] += &power[i] * &y[j];
                }
            }
        }
        power = next;
    }
    out
}

/// Fixed-point `a_l` from fixed-point `w_l` (both scaled by `2^bits`).
pub fn invert_fixed(w: &[BigInt], fx: Fixed) -> Vec<BigInt> {
    let n = w.len();
    let mut ww = vec![BigInt::zero(); n];
    for i in 0..n {
        for j in 0..n - i {
            ww[i + j] += &w[i] * &w[j];
        }
    }
    let mut u = vec![BigInt::zero(); n];
    for i in 1..n {
        u[i] = &ww[i - 1] >> fx.bits;
    }
    let mut a = vec![BigInt::zero(); n];
    let mut comp = vec![BigInt::zero(); n];
    let mut power = vec![BigInt::zero(); n];
    power[0] = fx.one();
    for l in 0..n {
        a[l] = &w[l] - (&comp[l] >> fx.bits);
        for i in l + 1..n {
            if !power[i].is_zero() {
                comp[i] += &a[l] * &power[i];
            }
        }
        if l + 1 == n {
            break;
        }
        let mut next = vec![BigInt::zero(); n];
        for i in l..n {
            if power[i].is_zero() {
                continue;
            }
            for j in 1..n - i {
                next[i + j] += &power[i] * &u[j];
            }
        }
        for x in next.iter_mut() {
            *x = &*x >> fx.bits;
        }
        power = next;
    }
    a
}

/// Simple-boundary disk function, stored as `hat_w[l] = What^(l) hat_c^-l`.
#[derive(Debug, Clone, Serialize)]
pub struct SimpleDiskData {
    pub hat_w: Vec<f64>,
    pub hat_c: f64,
    pub c: f64,
    pub w_c: f64,
    pub tail: TailModel,
    pub bits: u32,
}

impl SimpleDiskData {
    pub fn l_max(&self) -> usize {
        self.hat_w.len() - 1
    }

    /// `ln What^(l)`.
    pub fn ln_hat_w(&self, l: usize) -> f64 {
        self.hat_w[l].ln() + l as f64 * self.hat_c.ln()
    }

    /// `What^(l)` unscaled; may overflow for large `l`.
    pub fn big_hat_w(&self, l: usize) -> f64 {
        self.ln_hat_w(l).exp()
    }

    /// `sum_l What^(l) hat_c^-l` over the table plus the fitted tail.
    pub fn total(&self) -> f64 {
        kahan(self.hat_w.iter().copied()) + self.tail.mass_from(self.l_max() + 1)
    }

    pub fn table_sum(&self) -> f64 {
        kahan(self.hat_w.iter().copied())
    }
}

pub fn hat_c(disk: &DiskData) -> f64 {
    disk.c / (disk.w_c * disk.w_c)
}

/// Bits needed for the fixed-point inversion up to order `l_max`.
pub fn precision_for(disk: &DiskData, l_max: usize) -> u32 {
    let growth = 2.0 * disk.w_c.log2();
    192 + (1.3 * l_max as f64 * growth).ceil() as u32
}

pub fn invert_boundary(disk: &DiskData, l_max: usize) -> Result<SimpleDiskData> {
    if l_max < 10 {
        return Err(Error::InvalidArgument("inversion needs L >= 10".into()));
    }
    let fx = Fixed::new(precision_for(disk, l_max));
    let w = weights::fixed_scaled_disk(&disk.q, &disk.adm.c, l_max + 1, fx);
    let a = invert_fixed(&w, fx);
    let ln_wc2 = 2.0 * disk.w_c.ln();
    let mut hat_w = Vec::with_capacity(l_max + 1);
    for (l, al) in a.iter().enumerate() {
        if al <= &BigInt::zero() {
            return Err(Error::Consistency(format!("nonpositive simple disk coefficient at l = {l}")));
        }
        let ln_a = ln_fixed(al, fx);
        hat_w.push((ln_a + l as f64 * ln_wc2).exp());
    }
    let tail = TailModel::fit((l_max / 2..=l_max).map(|l| (l, hat_w[l])));
    Ok(SimpleDiskData {
        hat_w,
        hat_c: hat_c(disk),
        c: disk.c,
        w_c: disk.w_c,
        tail,
        bits: fx.bits,
    })
}

fn ln_fixed(a: &BigInt, fx: Fixed) -> f64 {
    let bits = a.bits() as i64;
    let shift = (bits - 60).max(0);
    let top = crate::hp::to_f64_scaled(&(a >> shift as usize), 0);
    top.ln() + (shift - fx.bits as i64) as f64 * std::f64::consts::LN_2
}

/// Rational `What^(0..=l_max)` for a sequence whose `c` is known exactly.
pub fn invert_boundary_exact(q: &WeightSequence, c: &BigRational, l_max: usize) -> Vec<BigRational> {
    let nu = weights::ExactNu::new(q, c, l_max + 2);
    let w: Vec<BigRational> = (0..=l_max).map(|l| nu.disk(l)).collect();
    invert_exact(&w)
}

#[derive(Debug, Clone, Serialize)]
pub struct CorePmf {
    pub pmf: Vec<f64>,
    pub tail_mass: f64,
    pub normalization_residual: f64,
    pub warning: Option<String>,
}

impl CorePmf {
    /// Law of the half-perimeter conditioned on being at least 1.
    pub fn conditioned_nonvertex(&self) -> Vec<f64> {
        let z = 1.0 - self.pmf[0];
        self.pmf.iter().skip(1).map(|p| p / z).collect()
    }
}

/// `P(|core boundary| = 2l) = What^(l) hat_c^-l / W_c` under the free law.
pub fn core_perimeter_pmf(sdisk: &SimpleDiskData, l_max: usize) -> CorePmf {
    let top = l_max.min(sdisk.l_max());
    let pmf: Vec<f64> = (0..=top).map(|l| sdisk.hat_w[l] / sdisk.w_c).collect();
    let tail_mass = if top < sdisk.l_max() {
        kahan(sdisk.hat_w[top + 1..].iter().copied()) / sdisk.w_c + sdisk.tail.mass_from(sdisk.l_max() + 1) / sdisk.w_c
    } else {
        sdisk.tail.mass_from(top + 1) / sdisk.w_c
    };
    let normalization_residual = kahan(pmf.iter().copied()) + tail_mass - 1.0;
    let warning = (tail_mass > 0.01).then(|| format!("tail mass {tail_mass:.3e} beyond l = {top}"));
    CorePmf { pmf, tail_mass, normalization_residual, warning }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::DiskData;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn quad() -> WeightSequence {
        WeightSequence::single(2, rat(1, 12)).unwrap()
    }

    #[test]
    fn exact_inversion_quadrangulation() {
        let h = invert_boundary_exact(&quad(), &rat(8, 1), 5);
        assert_eq!(h, vec![rat(1, 1), rat(4, 3), rat(4, 9), rat(16, 27), rat(32, 27), rat(704, 243)]);
    }

    #[test]
    fn exact_round_trip() {
        let nu = weights::ExactNu::new(&quad(), &rat(8, 1), 12);
        let w: Vec<BigRational> = (0..10).map(|l| nu.disk(l)).collect();
        let h = invert_exact(&w);
        // recompose What(z W(z)^2)
        let n = w.len();
        let mut y = vec![BigRational::zero(); n];
        for i in 0..n {
            for j in 0..n - i - 1 {
                y[i + j + 1] += &w[i] * &w[j];
            }
        }
        let mut total = vec![BigRational::zero(); n];
        let mut power = vec![BigRational::zero(); n];
        power[0] = BigRational::one();
        for hl in &h {
            for i in 0..n {
                total[i] += hl * &power[i];
            }
            let mut next = vec![BigRational::zero(); n];
            for i in 0..n {
                for j in 1..n - i {
                    next[i + j] += &power[i] * &y[j];
                }
            }
            power = next;
        }
        assert_eq!(total, w);
    }

    #[test]
    fn float_inversion_matches_exact() {
        let disk = DiskData::solve(&quad(), 4000).unwrap();
        let s = invert_boundary(&disk, 40).unwrap();
        let exact = invert_boundary_exact(&quad(), &rat(8, 1), 40);
        for l in 0..=40 {
            let want = weights::to_f64(&exact[l]);
            let got = s.big_hat_w(l);
            assert!(((got - want) / want).abs() < 1e-9, "l={l}: {got} vs {want}");
        }
    }

    #[test]
    fn core_pmf_head() {
        let disk = DiskData::solve(&quad(), 4000).unwrap();
        let s = invert_boundary(&disk, 60).unwrap();
        let pmf = core_perimeter_pmf(&s, 60);
        let want = [0.75, 2.0 / 9.0, 4.0 / 243.0, 32.0 / 6561.0];
        for (l, v) in want.iter().enumerate() {
            assert!((pmf.pmf[l] - v).abs() < 1e-10, "l={l}");
        }
        assert!((s.hat_c - 4.5).abs() < 1e-9);
    }
}
