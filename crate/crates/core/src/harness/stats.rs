//! Two-sample significance tests and the bold-mask reduction.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{MacaError, Result};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Pooled-variance Student test.
    #[default]
    Student,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p value.
    pub p: f64,
    /// `p < 0.05`; a p value of exactly 0.05 counts as not significant.
    pub significant: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Student's pooled-variance two-sample t-test.
pub fn ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    ttest_with(a, b, TTestKind::Student)
}

pub fn ttest_with(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MacaError::invalid(format!(
            "t-test needs at least two samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(MacaError::NonFinite("t-test samples".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (se2, df) = match kind {
        TTestKind::Student => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            (pooled * (1.0 / na + 1.0 / nb), na + nb - 2.0)
        }
        TTestKind::Welch => {
            let (ua, ub) = (va / na, vb / nb);
            let df = if ua + ub > 0.0 {
                (ua + ub).powi(2) / (ua * ua / (na - 1.0) + ub * ub / (nb - 1.0))
            } else {
                na + nb - 2.0
            };
            (ua + ub, df)
        }
    };
    let diff = ma - mb;
    let (t, p) = if se2 > 0.0 {
        let t = diff / se2.sqrt();
        (t, t_two_sided_p(t, df))
    } else if diff == 0.0 {
        (0.0, 1.0)
    } else {
        (diff.signum() * f64::INFINITY, 0.0)
    };
    Ok(TTest {
        t,
        df,
        p,
        significant: p < ALPHA,
    })
}

/// Labels whose samples are not significantly worse than the best-mean group.
/// The best group is always included; a group with fewer than two samples
/// cannot be tested and is included only if it is the best.
pub fn bold_mask<L: Clone>(groups: &[(L, Vec<f64>)], kind: TTestKind) -> Result<Vec<L>> {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let mut best: Option<(usize, f64)> = None;
    for (k, (_, xs)) in groups.iter().enumerate() {
        if xs.is_empty() {
            continue;
        }
        let m = mean(xs);
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((k, m));
        }
    }
    let Some((best, _)) = best else {
        return Ok(Vec::new());
    };
    let reference = &groups[best].1;
    let mut out = Vec::new();
    for (k, (label, xs)) in groups.iter().enumerate() {
        let keep = if k == best {
            true
        } else if xs.len() < 2 || reference.len() < 2 {
            false
        } else {
            !ttest_with(xs, reference, kind)?.significant
        };
        if keep {
            out.push(label.clone());
        }
    }
    Ok(out)
}
