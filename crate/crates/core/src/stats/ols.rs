//! Ordinary least squares on a dummy-coded categorical predictor.
//!
//! Solved by Householder QR of the design matrix; standard errors come from
//! `s^2 (R^T R)^{-1}` with the unbiased residual variance.

use std::collections::BTreeSet;
use std::fmt::Display;

use serde::Serialize;

use super::dist::student_t_two_tailed;
use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    /// Intercept first, then one dummy per non-reference level in sorted order.
    pub coefficients: Vec<Coefficient>,
    pub n: usize,
    pub df_resid: usize,
    pub reference_level: String,
    pub residual_se: f64,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Regress `outcome` on the categorical `levels` with `reference` absorbed
/// into the intercept.
pub fn ols_dummy<L>(outcome: &[f64], levels: &[L], reference: &L) -> Result<RegressionResult, StatsError>
where
    L: Ord + Clone + Display,
{
    if outcome.len() != levels.len() {
        return Err(StatsError::LengthMismatch {
            left: outcome.len(),
            right: levels.len(),
        });
    }
    if outcome.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite outcome".into()));
    }
    let present: BTreeSet<&L> = levels.iter().collect();
    if !present.contains(reference) {
        return Err(StatsError::RankDeficient(format!(
            "reference level {reference} absent"
        )));
    }
    if present.len() < 2 {
        return Err(StatsError::RankDeficient("only one level present".into()));
    }
    let others: Vec<&L> = present.into_iter().filter(|l| *l != reference).collect();
    let n = outcome.len();
    let k = others.len() + 1;
    if n <= k {
        return Err(StatsError::TooFewObservations { needed: k + 1, got: n });
    }

    // column-major design matrix
    let mut x = vec![0.0; n * k];
    for row in 0..n {
        x[row] = 1.0;
        for (j, lvl) in others.iter().enumerate() {
            if &levels[row] == *lvl {
                x[(j + 1) * n + row] = 1.0;
            }
        }
    }
    let mut y = outcome.to_vec();
    householder_qr(&mut x, &mut y, n, k)?;

    // back-substitute R beta = Q^T y
    let r = |i: usize, j: usize| x[j * n + i];
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for j in i + 1..k {
            s -= r(i, j) * beta[j];
        }
        beta[i] = s / r(i, i);
    }
    let rss: f64 = y[k..].iter().map(|v| v * v).sum();
    let df_resid = n - k;
    let sigma2 = rss / df_resid as f64;

    // R^{-1}, upper triangular
    let mut rinv = vec![0.0; k * k];
    for col in 0..k {
        rinv[col * k + col] = 1.0 / r(col, col);
        for i in (0..col).rev() {
            let mut s = 0.0;
            for m in i + 1..=col {
                s += r(i, m) * rinv[col * k + m];
            }
            rinv[col * k + i] = -s / r(i, i);
        }
    }

    let mut coefficients = Vec::with_capacity(k);
    for j in 0..k {
        // (R^T R)^{-1}_jj = sum_m Rinv[j, m]^2
        let v: f64 = (j..k).map(|m| rinv[m * k + j].powi(2)).sum();
        let se = (sigma2 * v).sqrt();
        let t = beta[j] / se;
        let name = if j == 0 {
            "Intercept".to_string()
        } else {
            others[j - 1].to_string()
        };
        coefficients.push(Coefficient {
            name,
            beta: beta[j],
            se,
            t,
            p: student_t_two_tailed(t, df_resid as f64),
        });
    }
    Ok(RegressionResult {
        coefficients,
        n,
        df_resid,
        reference_level: reference.to_string(),
        residual_se: sigma2.sqrt(),
    })
}

/// In-place Householder QR of the column-major `n x k` matrix `a`, applying
/// the same reflections to `y`. On return the upper triangle of `a` holds R.
fn householder_qr(a: &mut [f64], y: &mut [f64], n: usize, k: usize) -> Result<(), StatsError> {
    let col_scale: f64 = (0..k)
        .map(|j| a[j * n..(j + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    for j in 0..k {
        let norm: f64 = a[j * n + j..(j + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= col_scale * 1e-12 {
            return Err(StatsError::RankDeficient(format!("column {j} is collinear")));
        }
        let alpha = if a[j * n + j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j * n + j..(j + 1) * n].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in j..k {
            let col = &mut a[c * n + j..(c + 1) * n];
            let dot: f64 = col.iter().zip(&v).map(|(x, w)| x * w).sum();
            let f = 2.0 * dot / vnorm2;
            for (x, w) in col.iter_mut().zip(&v) {
                *x -= f * w;
            }
        }
        let tail = &mut y[j..];
        let dot: f64 = tail.iter().zip(&v).map(|(x, w)| x * w).sum();
        let f = 2.0 * dot / vnorm2;
        for (x, w) in tail.iter_mut().zip(&v) {
            *x -= f * w;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_group_means_give_zero_effect() {
        let y = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let g = ["a", "a", "a", "b", "b", "b"];
        let r = ols_dummy(&y, &g, &"a").unwrap();
        let b = r.coefficient("b").unwrap();
        assert!(b.beta.abs() < 1e-14);
        assert!(b.t.abs() < 1e-12);
        assert!((r.coefficients[0].beta - 2.0).abs() < 1e-14);
    }

    #[test]
    fn balanced_layout_reproduces_group_means() {
        let y = [0.5, 0.7, 0.6, 1.5, 1.1, 1.3, -0.2, 0.2, 0.0];
        let g = [0, 0, 0, 1, 1, 1, 2, 2, 2];
        let r = ols_dummy(&y, &g, &0).unwrap();
        assert!((r.coefficients[0].beta - 0.6).abs() < 1e-12);
        assert!((r.coefficient("1").unwrap().beta - 0.7).abs() < 1e-12);
        assert!((r.coefficient("2").unwrap().beta + 0.6).abs() < 1e-12);
        assert_eq!(r.df_resid, 6);
    }

    #[test]
    fn absent_reference_is_rank_deficient() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let g = ["b", "b", "c", "c"];
        assert!(matches!(ols_dummy(&y, &g, &"a"), Err(StatsError::RankDeficient(_))));
        let g = ["a", "a", "a", "a"];
        assert!(matches!(ols_dummy(&y, &g, &"a"), Err(StatsError::RankDeficient(_))));
    }
}
