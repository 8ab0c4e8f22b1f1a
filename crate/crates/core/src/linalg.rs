//! Small dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution of `a · x ≈ b`.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let tol = svd.singular_values.max() * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, tol).expect("u and v were computed")
}

/// Ratio of largest to smallest singular value (infinite when singular).
pub(crate) fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = a.singular_values();
    let max = s.max();
    let min = s.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Lawson–Hanson non-negative least squares: `min ‖a·x − b‖₂` s.t. `x ≥ 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.norm().max(1.0);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&idx);
        let z = lstsq(&sub, b);
        let mut s = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            s[j] = z[k];
        }
        s
    };

    for _outer in 0..3 * n + 1 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        for _inner in 0..3 * n + 1 {
            let s = solve_passive(&passive);
            let blocking: Vec<usize> = (0..n).filter(|&i| passive[i] && s[i] <= 0.0).collect();
            if blocking.is_empty() {
                x = s;
                break;
            }
            let step = blocking
                .iter()
                .map(|&i| x[i] / (x[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            x += (s - &x) * step;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_matches_unconstrained_when_solution_is_positive() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_components() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let x = nnls(&a, &b);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }
}
