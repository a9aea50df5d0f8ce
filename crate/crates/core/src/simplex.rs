//! Derivative-free Nelder–Mead simplex minimization.
//!
//! Small, deterministic implementation with a hard evaluation budget. The
//! returned point is the best seen across *all* evaluations, so the result
//! never regresses below the starting point.

use crate::{Error, Result, Scalar};

/// Stopping controls for [`minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions<T> {
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
    /// Converged when the simplex f-spread falls below
    /// `f_tolerance * (|f_best| + f_tolerance)`.
    pub f_tolerance: T,
}

impl<T: Scalar> Default for SimplexOptions<T> {
    fn default() -> Self {
        Self {
            max_evals: 200,
            f_tolerance: T::from_f64(1e-9),
        }
    }
}

/// Outcome of a simplex run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult<T> {
    /// Best point seen.
    pub x: Vec<T>,
    /// Objective at `x`.
    pub f: T,
    /// Objective evaluations spent.
    pub evaluations: usize,
    /// False when the evaluation budget ran out first.
    pub converged: bool,
}

/// Non-finite objective values sort as worse than any finite value.
fn rank<T: Scalar>(f: T) -> T {
    if f.is_finite() {
        f
    } else {
        T::infinity()
    }
}

/// Minimizes `f` starting from `x0`, with the initial simplex spanned by
/// `x0 + scale[i] * e_i`.
///
/// Errors when `x0` is empty, the scales do not match its length, a scale is
/// zero, or `max_evals` is zero.
pub fn minimize<T: Scalar>(
    mut f: impl FnMut(&[T]) -> T,
    x0: &[T],
    scale: &[T],
    opts: &SimplexOptions<T>,
) -> Result<SimplexResult<T>> {
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::invalid("simplex needs at least one dimension"));
    }
    if scale.len() != dim {
        return Err(Error::LengthMismatch {
            left: scale.len(),
            right: dim,
        });
    }
    if scale.iter().any(|s| s.is_zero() || !s.is_finite()) {
        return Err(Error::invalid("simplex scales must be nonzero and finite"));
    }
    if opts.max_evals == 0 {
        return Err(Error::invalid("simplex evaluation budget must be positive"));
    }

    let (alpha, gamma, rho, sigma) = (
        T::one(),
        T::from_f64(2.0),
        T::from_f64(0.5),
        T::from_f64(0.5),
    );

    let mut evals = 0usize;
    let mut best_x = x0.to_vec();
    let mut best_f = T::infinity();
    let mut budget_left = opts.max_evals;

    let mut eval = |x: &[T], evals: &mut usize, best_x: &mut Vec<T>, best_f: &mut T| {
        *evals += 1;
        let v = rank(f(x));
        if v < *best_f {
            *best_f = v;
            best_x.clear();
            best_x.extend_from_slice(x);
        }
        v
    };

    // Orthogonal initial simplex.
    let mut points: Vec<Vec<T>> = Vec::with_capacity(dim + 1);
    points.push(x0.to_vec());
    for i in 0..dim {
        let mut p = x0.to_vec();
        p[i] = p[i] + scale[i];
        points.push(p);
    }
    let mut values: Vec<T> = Vec::with_capacity(dim + 1);
    for p in &points {
        if budget_left == 0 {
            break;
        }
        budget_left -= 1;
        values.push(eval(p, &mut evals, &mut best_x, &mut best_f));
    }
    while values.len() < points.len() {
        values.push(T::infinity());
    }

    let mut converged = false;
    while budget_left > 0 {
        // Sort vertices, stable so ties keep insertion order.
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        points = order.iter().map(|&i| points[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[dim] - values[0];
        if spread <= opts.f_tolerance * (values[0].abs() + opts.f_tolerance) {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![T::zero(); dim];
        for p in points.iter().take(dim) {
            for (c, &v) in centroid.iter_mut().zip(p.iter()) {
                *c += v;
            }
        }
        let inv = T::one() / T::from_f64(dim as f64);
        for c in &mut centroid {
            *c = *c * inv;
        }

        let lerp = |a: &[T], b: &[T], w: T| -> Vec<T> {
            a.iter()
                .zip(b.iter())
                .map(|(&x, &y)| x + w * (y - x))
                .collect()
        };

        // Reflection.
        let reflected = lerp(&centroid, &points[dim], -alpha);
        budget_left -= 1;
        let f_r = eval(&reflected, &mut evals, &mut best_x, &mut best_f);

        if f_r < values[0] && budget_left > 0 {
            // Expansion.
            let expanded = lerp(&centroid, &points[dim], -gamma);
            budget_left -= 1;
            let f_e = eval(&expanded, &mut evals, &mut best_x, &mut best_f);
            if f_e < f_r {
                points[dim] = expanded;
                values[dim] = f_e;
            } else {
                points[dim] = reflected;
                values[dim] = f_r;
            }
            continue;
        }
        if f_r < values[dim - 1] {
            points[dim] = reflected;
            values[dim] = f_r;
            continue;
        }
        if budget_left == 0 {
            break;
        }
        // Contraction, toward the better of the worst vertex and reflection.
        let (toward, f_t) = if f_r < values[dim] {
            (reflected.clone(), f_r)
        } else {
            (points[dim].clone(), values[dim])
        };
        let contracted = lerp(&centroid, &toward, rho);
        budget_left -= 1;
        let f_c = eval(&contracted, &mut evals, &mut best_x, &mut best_f);
        if f_c < f_t {
            points[dim] = contracted;
            values[dim] = f_c;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=dim {
            let shrunk = lerp(&points[0], &points[i], sigma);
            points[i] = shrunk;
            if budget_left == 0 {
                break;
            }
            budget_left -= 1;
            values[i] = eval(&points[i], &mut evals, &mut best_x, &mut best_f);
        }
    }

    if best_f.is_infinite() {
        return Err(Error::numeric("simplex objective never returned a finite value"));
    }
    Ok(SimplexResult {
        x: best_x,
        f: best_f,
        evaluations: evals,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_opts() -> SimplexOptions<f64> {
        SimplexOptions {
            max_evals: 500,
            f_tolerance: 1e-12,
        }
    }

    #[test]
    fn finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2);
        let res = minimize(f, &[0.0, 0.0], &[1.0, 1.0], &default_opts()).unwrap();
        assert!(res.converged);
        assert!((res.x[0] - 3.0).abs() < 1e-4, "x0 = {}", res.x[0]);
        assert!((res.x[1] + 1.0).abs() < 1e-4, "x1 = {}", res.x[1]);
    }

    #[test]
    fn never_returns_worse_than_start() {
        // Awkward objective plus a tiny budget: the result must still be no
        // worse than f(x0).
        let f = |x: &[f64]| x[0].abs().sqrt() + (x[1] * 10.0).cos();
        let start = [0.5, 0.2];
        let f0 = f(&start);
        let opts = SimplexOptions {
            max_evals: 5,
            f_tolerance: 1e-12,
        };
        let res = minimize(f, &start, &[0.1, 0.1], &opts).unwrap();
        assert!(res.f <= f0);
        assert!(!res.converged);
        assert!(res.evaluations <= 5);
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = |_: &[f64]| 0.0;
        assert!(minimize(f, &[], &[], &default_opts()).is_err());
        assert!(minimize(f, &[1.0], &[0.0], &default_opts()).is_err());
        let opts = SimplexOptions {
            max_evals: 0,
            f_tolerance: 1e-12,
        };
        assert!(minimize(f, &[1.0], &[1.0], &opts).is_err());
    }

    #[test]
    fn deterministic_across_runs() {
        let f = |x: &[f64]| (x[0] - 0.25).powi(2) * (1.0 + x[1].powi(2)) + x[1].powi(2);
        let a = minimize(f, &[2.0, 2.0], &[0.5, 0.5], &default_opts()).unwrap();
        let b = minimize(f, &[2.0, 2.0], &[0.5, 0.5], &default_opts()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.evaluations, b.evaluations);
    }
}
