//! Reference computations that share no code with the library: quadrature
//! for distribution functions, normal equations for least squares and
//! textbook sums for the paired test.

use std::f64::consts::PI;

/// Composite Simpson rule with `panels` (even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let m = panels + panels % 2;
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn normal_cdf(x: f64) -> f64 {
    let pdf = |u: f64| (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
    0.5 + simpson(pdf, 0.0, x, 4_000)
}

/// Gamma((k+1)/2) / Gamma(k/2) by the recurrence r(k+1) = (k/2) / r(k).
fn half_gamma_ratio(df: u32) -> f64 {
    let mut r = 1.0 / PI.sqrt();
    for k in 1..df {
        r = (k as f64 / 2.0) / r;
    }
    r
}

/// Student t CDF for integer degrees of freedom.
pub fn t_cdf(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    let c = half_gamma_ratio(df) / (nu * PI).sqrt();
    let pdf = |u: f64| c * (1.0 + u * u / nu).powf(-(nu + 1.0) / 2.0);
    0.5 + simpson(pdf, 0.0, t, 8_000)
}

pub fn t_two_tailed(t: f64, df: u32) -> f64 {
    2.0 * (1.0 - t_cdf(t.abs(), df))
}

/// Inverse of an increasing function on [lo, hi] by bisection.
pub fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn normal_quantile(p: f64) -> f64 {
    bisect(normal_cdf, p, -9.0, 9.0)
}

pub fn required_d(n: usize, alpha: f64, power: f64) -> f64 {
    (normal_quantile(1.0 - alpha / 2.0) + normal_quantile(power)) / (n as f64).sqrt()
}

pub fn power_at(effect: f64, sd: f64, n: usize, alpha: f64) -> f64 {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let shift = effect.abs() * (n as f64).sqrt() / sd;
    normal_cdf(shift - z) + normal_cdf(-shift - z)
}

pub struct PairedOracle {
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t: f64,
    pub p: f64,
}

/// Paired t on after - before using running sums.
pub fn paired_t(before: &[f64], after: &[f64]) -> PairedOracle {
    let n = before.len() as f64;
    let (mut s, mut ss) = (0.0, 0.0);
    for (b, a) in before.iter().zip(after) {
        let d = a - b;
        s += d;
        ss += d * d;
    }
    let mean = s / n;
    let var = (ss - s * s / n) / (n - 1.0);
    let sd = var.sqrt();
    let t = mean / (sd / n.sqrt());
    PairedOracle {
        mean_diff: mean,
        sd_diff: sd,
        t,
        p: t_two_tailed(t, before.len() as u32 - 1),
    }
}

pub struct OlsOracle {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub df: usize,
}

/// Least squares through the normal equations, solved by Gauss-Jordan
/// elimination on [X'X | I | X'y]. `x` is row-major, `n x k`.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> OlsOracle {
    let n = x.len();
    let k = x[0].len();
    let w = 2 * k + 1;
    let mut m = vec![vec![0.0; w]; k];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                m[i][j] += row[i] * row[j];
            }
            m[i][2 * k] += row[i] * yi;
        }
    }
    for (i, r) in m.iter_mut().enumerate() {
        r[k + i] = 1.0;
    }
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..k {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..w {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    let beta: Vec<f64> = (0..k).map(|i| m[i][2 * k]).collect();
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    let df = n - k;
    let sigma2 = rss / df as f64;
    let se: Vec<f64> = (0..k).map(|i| (sigma2 * m[i][k + i]).sqrt()).collect();
    let t = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    OlsOracle { beta, se, t, df }
}
