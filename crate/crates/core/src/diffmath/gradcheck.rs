/// Per-coordinate comparison of analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }

    /// Coordinate with the largest relative error.
    pub fn worst(&self) -> Option<usize> {
        self.relative_errors
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

/// `|a - g| / max(1e-8, |a| + |g|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks `analytic` against central differences of `f` around `point`.
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], step: f64, tolerance: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "one analytic entry per coordinate");
    let mut x = point.to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let up = f(&x);
            x[i] = orig - step;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect();
    report(analytic.to_vec(), numeric, tolerance)
}

pub(crate) fn report(analytic: Vec<f64>, numeric: Vec<f64>, tolerance: f64) -> GradCheckReport {
    let relative_errors: Vec<f64> =
        analytic.iter().zip(&numeric).map(|(&a, &g)| relative_error(a, g)).collect();
    let max_relative_error = relative_errors.iter().copied().fold(0.0, f64::max);
    GradCheckReport { analytic, numeric, relative_errors, max_relative_error, tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form() {
        // f(x) = x^T A x with symmetric A ; grad = 2 A x
        let a = [[2.0, 0.5, -0.3], [0.5, 1.0, 0.2], [-0.3, 0.2, 3.0]];
        let f = |x: &[f64]| -> f64 {
            (0..3).map(|i| (0..3).map(|j| x[i] * a[i][j] * x[j]).sum::<f64>()).sum()
        };
        let p = [0.7, -1.3, 0.4];
        let g: Vec<f64> = (0..3).map(|i| 2.0 * (0..3).map(|j| a[i][j] * p[j]).sum::<f64>()).collect();
        let r = grad_check(f, &p, &g, 1e-5, 1e-8);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn constant_function_passes() {
        let r = grad_check(|_| 4.2, &[1.0, 2.0], &[0.0, 0.0], 1e-5, 1e-4);
        assert!(r.passed());
        assert_eq!(r.max_relative_error, 0.0);
    }

    #[test]
    fn wrong_gradient_fails() {
        let r = grad_check(|x| x[0] * x[0], &[1.0], &[3.0], 1e-5, 1e-4);
        assert!(!r.passed());
        assert_eq!(r.worst(), Some(0));
    }
}
