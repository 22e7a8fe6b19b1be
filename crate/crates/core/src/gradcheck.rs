//! Finite-difference gradient checking.
//!
//! These helpers only ever evaluate the function forward; they never touch
//! the tape, so they act as an independent oracle for analytic gradients.

/// Default central-difference step for `f64`.
pub const STEP: f64 = 1e-5;

/// Central-difference estimate of `df/dx_i` for each `i` in `coords`
/// (all coordinates when `coords` is `None`).
pub fn numerical_gradient<F>(x: &[f64], coords: Option<&[usize]>, step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic() {
        let x = [1.0, -2.0, 0.5];
        let g = numerical_gradient(&x, None, STEP, |v| v.iter().map(|t| t * t * t).sum());
        let exact: Vec<f64> = x.iter().map(|t| 3.0 * t * t).collect();
        assert!(relative_error(&g, &exact) < 1e-9);
    }

    #[test]
    fn subset_of_coordinates() {
        let x = [1.0, 2.0, 3.0];
        let g = numerical_gradient(&x, Some(&[2]), STEP, |v| v[2] * v[0]);
        assert_eq!(g.len(), 1);
        assert!((g[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn relative_error_of_zero_vectors() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }
}
