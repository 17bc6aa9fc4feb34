//! Binary fixed-point arithmetic on big integers.
//!
//! A value `x` is stored as the integer `floor(x * 2^bits)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fixed {
    pub bits: u32,
}

impl Fixed {
    pub fn new(bits: u32) -> Self {
        Fixed { bits }
    }

    pub fn one(&self) -> BigInt {
        BigInt::one() << self.bits
    }

    pub fn from_rational(&self, r: &BigRational) -> BigInt {
        let num = r.numer() << self.bits;
        num.div_floor_ref(r.denom())
    }

    pub fn from_int(&self, n: i64) -> BigInt {
        BigInt::from(n) << self.bits
    }

    pub fn mul(&self, a: &BigInt, b: &BigInt) -> BigInt {
        (a * b) >> self.bits
    }

    pub fn to_rational(&self, a: &BigInt) -> BigRational {
        BigRational::new(a.clone(), self.one())
    }

    pub fn to_f64(&self, a: &BigInt) -> f64 {
        to_f64_scaled(a, self.bits as i64)
    }
}

/// `a * 2^-shift` as f64 without intermediate overflow.
pub fn to_f64_scaled(a: &BigInt, shift: i64) -> f64 {
    if a.is_zero() {
        return 0.0;
    }
    let len = a.bits() as i64;
    let keep = 64i64;
    let (m, e) = if len > keep {
        (a >> ((len - keep) as usize), len - keep - shift)
    } else {
        (a.clone(), -shift)
    };
    let m = m.to_f64().unwrap_or(0.0);
    m * 2f64.powi(e.clamp(-1074, 1023) as i32)
}

/// Exact rational to f64 via fixed point, robust for huge numerators and denominators.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let nb = r.numer().bits() as i64;
    let db = r.denom().bits() as i64;
    let shift = 80 + db - nb;
    let scaled = if shift >= 0 {
        (r.numer() << shift as usize) / r.denom()
    } else {
        (r.numer() >> (-shift) as usize) / r.denom()
    };
    to_f64_scaled(&scaled, shift)
}

/// Exact dyadic value of a finite float.
pub fn f64_to_rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap_or_else(BigRational::zero)
}

pub(crate) trait DivFloor {
    fn div_floor_ref(&self, d: &BigInt) -> BigInt;
}

impl DivFloor for BigInt {
    fn div_floor_ref(&self, d: &BigInt) -> BigInt {
        use num_integer::Integer;
        Integer::div_floor(self, d)
    }
}

/// Continued-fraction convergents of `x` with denominator at most `max_den`.
pub fn convergents(x: &BigRational, max_den: &BigInt) -> Vec<BigRational> {
    let mut out = Vec::new();
    let (mut h0, mut h1) = (BigInt::zero(), BigInt::one());
    let (mut k0, mut k1) = (BigInt::one(), BigInt::zero());
    let mut rem = x.clone();
    for _ in 0..200 {
        let a = rem.floor().to_integer();
        let h2 = &a * &h1 + &h0;
        let k2 = &a * &k1 + &k0;
        if &k2 > max_den {
            break;
        }
        out.push(BigRational::new(h2.clone(), k2.clone()));
        h0 = std::mem::replace(&mut h1, h2);
        k0 = std::mem::replace(&mut k1, k2);
        let frac = &rem - BigRational::from_integer(a);
        if frac.is_zero() {
            break;
        }
        rem = frac.recip();
    }
    out
}

pub fn sign_str(x: f64) -> &'static str {
    if x > 0.0 {
        "positive"
    } else if x < 0.0 {
        "negative"
    } else {
        "zero"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_roundtrip() {
        let fx = Fixed::new(200);
        let third = BigRational::new(1.into(), 3.into());
        let v = fx.from_rational(&third);
        assert!((fx.to_f64(&v) - 1.0 / 3.0).abs() < 1e-16);
        let sq = fx.mul(&v, &v);
        assert!((fx.to_f64(&sq) - 1.0 / 9.0).abs() < 1e-16);
    }

    #[test]
    fn huge_rational_to_f64() {
        let big = BigInt::from(3) << 5000usize;
        let r = BigRational::new(big.clone() + 1, big);
        assert!((rational_to_f64(&r) - 1.0).abs() < 1e-15);
        let r = BigRational::new(1.into(), BigInt::from(7) << 900usize);
        let expect = (1.0 / 7.0) * 2f64.powi(-900);
        assert!(((rational_to_f64(&r) - expect) / expect).abs() < 1e-14);
    }

    #[test]
    fn convergents_recover_fraction() {
        let x = BigRational::new(27.into(), 8960.into()) + BigRational::new(1.into(), BigInt::from(1) << 300usize);
        let c = convergents(&x, &BigInt::from(1_000_000_000_000i64));
        assert!(c.contains(&BigRational::new(27.into(), 8960.into())));
    }
}
