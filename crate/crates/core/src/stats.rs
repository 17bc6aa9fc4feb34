//! Small statistics helpers for Monte Carlo checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let den = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Empirical pmf on `0..len`; larger values are dropped from the bins but count in the total.
pub fn empirical_pmf(samples: &[usize], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for s in samples {
        if *s < len {
            out[*s] += 1.0;
        }
    }
    let n = samples.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// Total variation distance between an empirical sample and a reference pmf.
/// Mass outside the table on either side counts in full.
pub fn tv_to_pmf(samples: &[usize], pmf: &[f64]) -> f64 {
    let emp = empirical_pmf(samples, pmf.len());
    let inside: f64 = emp.iter().zip(pmf).map(|(a, b)| (a - b).abs()).sum();
    let emp_out = 1.0 - emp.iter().sum::<f64>();
    let ref_out = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
    0.5 * (inside + (emp_out - ref_out).abs())
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pools adjacent bins from the right until each pooled bin has expected count >= `min`.
fn pooled_bins(expected: &[f64], min: f64) -> Vec<std::ops::Range<usize>> {
    let mut bins = Vec::new();
    let mut start = 0;
    let mut acc = 0.0;
    for (i, e) in expected.iter().enumerate() {
        acc += e;
        if acc >= min {
            bins.push(start..i + 1);
            start = i + 1;
            acc = 0.0;
        }
    }
    if start < expected.len() {
        match bins.last_mut() {
            Some(last) => last.end = expected.len(),
            None => bins.push(0..expected.len()),
        }
    }
    bins
}

fn chi_square_p(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(df as f64).expect("positive df").cdf(statistic)
}

/// Goodness of fit of integer samples against a pmf; values past the table share the last bin.
pub fn chi_square_gof(samples: &[usize], pmf: &[f64]) -> ChiSquareTest {
    let n = samples.len() as f64;
    let len = pmf.len();
    let mut counts = vec![0.0; len + 1];
    for s in samples {
        counts[(*s).min(len)] += 1.0;
    }
    let mut expected: Vec<f64> = pmf.iter().map(|p| p * n).collect();
    expected.push((1.0 - pmf.iter().sum::<f64>()).max(0.0) * n);
    let bins = pooled_bins(&expected, 5.0);
    let statistic = bins
        .iter()
        .map(|b| {
            let o: f64 = counts[b.clone()].iter().sum();
            let e: f64 = expected[b.clone()].iter().sum();
            if e > 0.0 { (o - e).powi(2) / e } else { 0.0 }
        })
        .sum();
    let df = bins.len().saturating_sub(1);
    ChiSquareTest { statistic, df, p_value: chi_square_p(statistic, df) }
}

/// Two-sample chi-square homogeneity test on integer samples.
pub fn chi_square_two_sample(a: &[usize], b: &[usize]) -> ChiSquareTest {
    let len = a.iter().chain(b).copied().max().unwrap_or(0) + 1;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut ca = vec![0.0; len];
    let mut cb = vec![0.0; len];
    a.iter().for_each(|x| ca[*x] += 1.0);
    b.iter().for_each(|x| cb[*x] += 1.0);
    let pooled: Vec<f64> = (0..len).map(|i| (ca[i] + cb[i]) * na.min(nb) / (na + nb)).collect();
    let bins = pooled_bins(&pooled, 5.0);
    let mut statistic = 0.0;
    for bin in &bins {
        let oa: f64 = ca[bin.clone()].iter().sum();
        let ob: f64 = cb[bin.clone()].iter().sum();
        let tot = oa + ob;
        if tot == 0.0 {
            continue;
        }
        let ea = tot * na / (na + nb);
        let eb = tot * nb / (na + nb);
        statistic += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let df = bins.len().saturating_sub(1);
    ChiSquareTest { statistic, df, p_value: chi_square_p(statistic, df) }
}

/// Percentile of a sorted slice by linear interpolation.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = x.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (x - i as f64) * (sorted[j] - sorted[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_brackets() {
        let (lo, hi) = wilson(50, 100, 1.96);
        assert!(lo < 0.5 && hi > 0.5 && hi - lo < 0.2);
        assert_eq!(wilson(0, 0, 1.96), (0.0, 1.0));
    }

    #[test]
    fn chi_square_detects_shift() {
        let a: Vec<usize> = (0..2000).map(|i| i % 4).collect();
        let b: Vec<usize> = (0..2000).map(|i| i % 4).collect();
        assert!(chi_square_two_sample(&a, &b).p_value > 0.99);
        let c: Vec<usize> = (0..2000).map(|i| (i % 4).min(2)).collect();
        assert!(chi_square_two_sample(&a, &c).p_value < 1e-6);
        let gof = chi_square_gof(&a, &[0.25; 4]);
        assert!(gof.p_value > 0.99);
    }

    #[test]
    fn tv_counts_outside_mass() {
        assert!((tv_to_pmf(&[0, 1, 5, 5], &[0.5, 0.5]) - 0.5).abs() < 1e-12);
        assert!((tv(&[1.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
    }
}
