//! Special functions and small exact tests used by the diagnostics.

use crate::error::{Error, Result};

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = LANCZOS[0];
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// Regularized upper incomplete gamma `Q(a, x) = Γ(a, x) / Γ(a)`.
///
/// Series for `P` below `x = a + 1`, modified Lentz continued fraction above.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "gamma_q needs a > 0");
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    let tiny = f64::MIN_POSITIVE / EPS;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Upper tail `Pr(χ²_df > x)`.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if df == 0 {
        return if x < 0.0 { 1.0 } else { 0.0 };
    }
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(df as f64 / 2.0, x / 2.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Two-sided Fisher exact test on `[[a, b], [c, d]]`: the total probability
/// of tables with the same margins that are no more likely than the
/// observed one.
pub fn fisher_exact_two_sided(table: [[u64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = table;
    let row1 = a + b;
    let col1 = a + c;
    let total = a + b + c + d;
    if total == 0 {
        return 1.0;
    }
    let row2 = total - row1;
    let lo = col1.saturating_sub(row2);
    let hi = row1.min(col1);
    let denom = ln_choose(total, col1);
    let log_pmf = |x: u64| ln_choose(row1, x) + ln_choose(row2, col1 - x) - denom;
    let observed = log_pmf(a);
    // relative slack so that ties in exact arithmetic count as ties
    let cutoff = observed + 1e-7;
    let p: f64 = (lo..=hi)
        .map(log_pmf)
        .filter(|&lp| lp <= cutoff)
        .map(f64::exp)
        .sum();
    p.min(1.0)
}

/// Maximum-weight perfect matching on a square matrix (Hungarian method).
/// Returns `assignment[row] = column`.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = weights.len();
    if weights.iter().any(|r| r.len() != n) {
        return Err(Error::contract("assignment matrix must be square"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // min-cost formulation with 1-based potentials
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_integers() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n={n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn chi2_critical_value() {
        assert!((chi2_sf(3.841, 1) - 0.05).abs() < 1e-4);
        // frozen from an independent implementation: 0.050013683763956804
        assert!((chi2_sf(3.841, 1) - 0.050_013_683_763_956_8).abs() < 1e-12);
        assert_eq!(chi2_sf(0.0, 3), 1.0);
    }

    #[test]
    fn chi2_even_df_closed_form() {
        // df = 2k: Q = e^{-x/2} Σ_{j<k} (x/2)^j / j!
        for k in 1..6usize {
            for &x in &[0.3, 2.0, 9.0, 40.0] {
                let h: f64 = x / 2.0;
                let mut term = 1.0;
                let mut sum = 0.0;
                for j in 0..k {
                    if j > 0 {
                        term *= h / j as f64;
                    }
                    sum += term;
                }
                let exact = (-h).exp() * sum;
                let got = chi2_sf(x, 2 * k);
                assert!(((got - exact) / exact).abs() < 1e-12, "k={k} x={x}");
            }
        }
    }

    #[test]
    fn fisher_symmetric_under_transpose() {
        let t = [[12, 5], [3, 9]];
        let tt = [[12, 3], [5, 9]];
        assert!((fisher_exact_two_sided(t) - fisher_exact_two_sided(tt)).abs() < 1e-14);
    }

    #[test]
    fn fisher_proportional_rows() {
        assert!((fisher_exact_two_sided([[10, 20], [5, 10]]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fisher_tea_tasting() {
        // classic table; two-sided p = 0.4857142857 (= 34/70)
        let p = fisher_exact_two_sided([[3, 1], [1, 3]]);
        assert!((p - 34.0 / 70.0).abs() < 1e-12, "{p}");
    }

    #[test]
    fn assignment_finds_permutation() {
        let w = vec![vec![1.0, 9.0, 0.0], vec![8.0, 0.0, 1.0], vec![0.0, 2.0, 7.0]];
        assert_eq!(max_weight_assignment(&w).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn assignment_matches_brute_force() {
        use rand::Rng;
        let mut rng = crate::rng::rng(5);
        for _ in 0..50 {
            let n = 4;
            let w: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0..20) as f64).collect()).collect();
            let got = max_weight_assignment(&w).unwrap();
            let score = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| w[i][j]).sum::<f64>();
            let mut best = f64::NEG_INFINITY;
            let mut perm: Vec<usize> = (0..n).collect();
            permute(&mut perm, 0, &mut |p| best = best.max(score(p)));
            assert_eq!(score(&got), best);
        }
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }
}
