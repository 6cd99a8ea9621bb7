use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p: f64,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro-Wilk W with Royston's p-value approximation (algorithm AS R94).
pub fn shapiro_wilk(sample: &[f64]) -> Result<TestResult> {
    const SMALL: f64 = 1e-19;
    const G: [f64; 2] = [-2.273, 0.459];
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];

    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::InvalidInput(format!("Shapiro-Wilk needs 3..=5000 values, got {n}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let mut x = sample.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let range = x[n - 1] - x[0];
    if range < SMALL {
        return Err(Error::Degenerate("zero variance sample".into()));
    }

    // Half-coefficients a[0..n/2] for the upper half, largest first.
    let an = n as f64;
    let nn2 = n / 2;
    let mut a = vec![0.0; nn2];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let normal = std_normal();
        let an25 = an + 0.25;
        let m: Vec<f64> = (1..=nn2)
            .map(|i| normal.inverse_cdf((i as f64 - 0.375) / an25))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first..nn2 {
            a[i] = -m[i] / fac;
        }
    }

    // Full antisymmetric coefficient vector against the sorted sample.
    let coef: Vec<f64> = (0..n)
        .map(|i| {
            let j = n - 1 - i;
            match i.cmp(&j) {
                std::cmp::Ordering::Less => -a[i],
                std::cmp::Ordering::Greater => a[j],
                std::cmp::Ordering::Equal => 0.0,
            }
        })
        .collect();
    let sa = coef.iter().sum::<f64>() / an;
    let sx = x.iter().map(|v| v / range).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (c, v) in coef.iter().zip(&x) {
        let asa = c - sa;
        let xsx = v / range - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    // 1 − W, formed to keep precision when W is near 1.
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        const PI6: f64 = 6.0 / std::f64::consts::PI;
        const STQR: f64 = std::f64::consts::FRAC_PI_3;
        let p = (PI6 * (w.sqrt().asin() - STQR)).clamp(0.0, 1.0);
        return Ok(TestResult { statistic: w, p });
    }
    let mut y = w1.ln();
    let (m, s) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok(TestResult { statistic: w, p: 1e-99 });
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let xx = an.ln();
        (poly(&C5, xx), poly(&C6, xx).exp())
    };
    let p = 1.0 - std_normal().cdf((y - m) / s);
    Ok(TestResult { statistic: w, p })
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Insufficient("Welch t-test needs at least 2 values per group".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0) || !se2.is_finite() {
        return Err(Error::Degenerate("both groups have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Degenerate(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TestResult { statistic: t, p })
}

/// Midranks of the pooled sample, plus the tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = pooled.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of arrangements of `n1 + n2` distinct values giving each U, for
/// U counting pairs with the first group's value above the second's.
pub fn mann_whitney_counts(n1: usize, n2: usize) -> Vec<u128> {
    // f[m][u] for the current n; built up one n at a time.
    let umax = n1 * n2;
    let mut prev: Vec<Vec<u128>> = (0..=n1)
        .map(|_| {
            let mut v = vec![0u128; umax + 1];
            v[0] = 1;
            v
        })
        .collect();
    for n in 1..=n2 {
        let mut cur: Vec<Vec<u128>> = vec![vec![0u128; umax + 1]; n1 + 1];
        cur[0][0] = 1;
        for m in 1..=n1 {
            for u in 0..=m * n {
                // Largest value in the first group beats all n of the second.
                let take = if u >= n { cur[m - 1][u - n] } else { 0 };
                cur[m][u] = take + prev[m][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n1)
}

/// Exact two-sided p for an untied U.
pub fn mann_whitney_exact_p(u: f64, n1: usize, n2: usize) -> f64 {
    let counts = mann_whitney_counts(n1, n2);
    let total: u128 = counts.iter().sum();
    let k = u.round() as usize;
    let lower: u128 = counts[..=k.min(counts.len() - 1)].iter().sum();
    let upper: u128 = counts[k.min(counts.len())..].iter().sum();
    let tail = lower.min(upper) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

/// Mann-Whitney U for the first group, two-sided. Exact when `n1·n2 ≤ 400`
/// and there are no ties; otherwise normal with tie and continuity
/// corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Insufficient("Mann-Whitney U needs nonempty groups".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    if ties.is_empty() && n1 * n2 <= 400 {
        return Ok(TestResult { statistic: u, p: mann_whitney_exact_p(u, n1, n2) });
    }
    let (f1, f2) = (n1 as f64, n2 as f64);
    let n = f1 + f2;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let sigma = (f1 * f2 / 12.0 * ((n + 1.0) - tie_term)).sqrt();
    let dev = ((u - f1 * f2 / 2.0).abs() - 0.5).max(0.0);
    let p = if sigma > 0.0 {
        (2.0 * (1.0 - std_normal().cdf(dev / sigma))).min(1.0)
    } else {
        1.0
    };
    Ok(TestResult { statistic: u, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::function::gamma::ln_gamma;

    /// (data, W, p) from the reference Fortran implementation of AS R94.
    const SW_CASES: &[(&[f64], f64, f64)] = &[
        (&[1.0, 2.5, 7.0], 0.923076923076923, 0.46326287493379903),
        (&[1.0, 2.0, 3.0, 4.0, 5.0], 0.986762155211559, 0.9671739349728582),
        (&[148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0], 0.9822817035169561, 0.9733029149412554),
        (&[2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 6.1, 3.9, 4.0, 2.2], 0.9383388423703053, 0.5011706653366735),
        (
            &[6.1, 5.2, 4.9, 7.3, 5.5, 6.6, 5.9, 4.4, 8.1, 5.0, 6.3, 5.7, 4.8, 7.0, 6.2, 5.4, 9.6, 5.1, 6.0, 5.8],
            0.8960577893729336,
            0.034807231968462866,
        ),
        (
            &[0.1, 0.2, 0.2, 0.3, 0.5, 0.8, 1.3, 2.1, 3.4, 5.5, 8.9, 14.4, 23.3],
            0.7115644591035517,
            0.0007260507434397744,
        ),
        (
            &[
                10.002, 10.597, 9.452, 8.219, 9.091, 8.017, 10.12, 12.68, 9.016, 8.759, 10.98, 10.714, 10.211,
                8.139, 9.941, 11.391, 7.312, 9.085, 6.198, 7.421, 6.317, 9.53, 7.465, 10.543, 10.314, 9.626,
                4.966, 8.923, 9.903, 10.227, 6.94, 9.044, 8.043, 8.382, 12.122, 8.385, 9.935, 11.769, 8.833,
                9.777, 10.221, 10.128, 7.55, 10.152, 12.718, 6.906, 11.719, 10.239, 8.717, 14.001,
            ],
            0.9897379274497573,
            0.9398697696000714,
        ),
    ];

    #[test]
    fn shapiro_matches_reference() {
        for (data, w, p) in SW_CASES {
            let r = shapiro_wilk(data).unwrap();
            assert!((r.statistic - w).abs() < 1e-3, "n = {}: W {} vs {w}", data.len(), r.statistic);
            assert!((r.p - p).abs() < 1e-3, "n = {}: p {} vs {p}", data.len(), r.p);
        }
    }

    #[test]
    fn shapiro_edge_cases() {
        assert!(shapiro_wilk(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().statistic > 0.98);
        assert!(matches!(shapiro_wilk(&[2.0; 6]), Err(Error::Degenerate(_))));
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
        // Order of the input does not matter.
        let a = shapiro_wilk(&[3.0, 1.0, 2.0, 9.0, 4.0]).unwrap();
        let b = shapiro_wilk(&[1.0, 2.0, 3.0, 4.0, 9.0]).unwrap();
        assert_eq!(a, b);
    }

    /// Two-sided p by Simpson integration of the t density.
    fn t_p_quadrature(t: f64, df: f64) -> f64 {
        let log_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
        let f = |x: f64| (log_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let n = 200_000;
        let h = t.abs() / n as f64;
        let mut s = f(0.0) + f(t.abs());
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn welch_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            let na = rng.random_range(2..15);
            let nb = rng.random_range(2..15);
            let a: Vec<f64> = (0..na).map(|_| rng.random_range(0.0..10.0)).collect();
            let b: Vec<f64> = (0..nb).map(|_| rng.random_range(1.0..12.0) * 1.5).collect();
            let r = welch_t_test(&a, &b).unwrap();
            let (ma, va) = mean_var(&a);
            let (mb, vb) = mean_var(&b);
            let (sa, sb) = (va / na as f64, vb / nb as f64);
            let df = (sa + sb).powi(2) / (sa * sa / (na as f64 - 1.0) + sb * sb / (nb as f64 - 1.0));
            assert!((r.statistic - (ma - mb) / (sa + sb).sqrt()).abs() < 1e-12);
            let q = t_p_quadrature(r.statistic, df);
            assert!((r.p - q).abs() < 1e-6, "t {} df {df}: {} vs {q}", r.statistic, r.p);
        }
    }

    #[test]
    fn welch_trivial_cases() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
        let far = welch_t_test(&[1.0, 2.0, 3.0], &[1001.0, 1002.0, 1003.0]).unwrap();
        assert!(far.p < 1e-4);
        assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(welch_t_test(&[1.0], &[2.0, 3.0]).is_err());
    }

    /// Two-sided exact p by listing every split of the pooled ranks.
    fn brute_force_p(a: &[f64], b: &[f64]) -> (f64, f64) {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let n1 = a.len();
        let u_of = |mask: u32| -> f64 {
            let mut u = 0.0;
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    for j in 0..n {
                        if mask >> j & 1 == 0 && pooled[i] > pooled[j] {
                            u += 1.0;
                        }
                    }
                }
            }
            u
        };
        let observed = u_of((1u32 << n1) - 1);
        let (mut lo, mut hi, mut total) = (0u64, 0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != n1 {
                continue;
            }
            let u = u_of(mask);
            total += 1;
            lo += (u <= observed) as u64;
            hi += (u >= observed) as u64;
        }
        (observed, (2.0 * lo.min(hi) as f64 / total as f64).min(1.0))
    }

    #[test]
    fn exact_mann_whitney_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=10 {
            for n1 in 1..n {
                let n2 = n - n1;
                let mut vals: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
                for i in (1..n).rev() {
                    vals.swap(i, rng.random_range(0..=i));
                }
                let (a, b) = vals.split_at(n1);
                let r = mann_whitney_u(a, b).unwrap();
                let (u, p) = brute_force_p(a, b);
                assert_eq!(r.statistic, u);
                assert!((r.p - p).abs() < 1e-12, "n1 {n1} n2 {n2}: {} vs {p}", r.p);
            }
        }
    }

    #[test]
    fn mann_whitney_cases() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p - 2.0 / 6.0).abs() < 1e-15);
        let same = [1.0, 2.0, 3.0, 4.0];
        let r = mann_whitney_u(&same, &same).unwrap();
        assert_eq!(r.statistic, 8.0);
        assert_eq!(r.p, 1.0);
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
        let constant = mann_whitney_u(&[0.0; 5], &[0.0; 5]).unwrap();
        assert_eq!(constant.p, 1.0);
    }

    #[test]
    fn normal_approximation_for_large_samples() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 0.5).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        // 900 > 400 → normal path; U = 435, μ = 450, σ² = 900·61/12.
        let z = (15.0 - 0.5) / (900.0 * 61.0 / 12.0f64).sqrt();
        let expect = 2.0 * (1.0 - std_normal().cdf(z));
        assert_eq!(r.statistic, 435.0);
        assert!((r.p - expect).abs() < 1e-12);
    }

    #[test]
    fn counts_sum_to_binomial() {
        let c = mann_whitney_counts(20, 20);
        let total: u128 = c.iter().sum();
        assert_eq!(total, 137_846_528_820);
        assert_eq!(c.len(), 401);
        assert!(c.iter().zip(c.iter().rev()).all(|(a, b)| a == b));
    }
}
