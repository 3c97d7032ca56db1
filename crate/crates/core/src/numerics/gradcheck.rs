use crate::error::{Error, Result};

/// Central differences `(f(p + eps e_k) - f(p - eps e_k)) / 2 eps` per coordinate.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Argument(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + eps;
        let plus = f(&p);
        p[k] = orig - eps;
        let minus = f(&p);
        p[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is not finite around coordinate {k}"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Largest gradient-check error over all coordinates: relative error where the
/// coordinate scale is at least `abs_floor`, absolute error otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel: f64,
    pub max_abs_small: f64,
}

impl GradCheck {
    pub fn compare(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> Self {
        let mut max_rel: f64 = 0.0;
        let mut max_abs_small: f64 = 0.0;
        for (a, n) in analytic.iter().zip(numeric) {
            let scale = a.abs().max(n.abs());
            let diff = (a - n).abs();
            if scale < abs_floor {
                max_abs_small = max_abs_small.max(diff);
            } else {
                max_rel = max_rel.max(diff / scale);
            }
        }
        Self {
            max_rel,
            max_abs_small,
        }
    }

    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel <= rel_tol && self.max_abs_small <= abs_tol
    }
}
