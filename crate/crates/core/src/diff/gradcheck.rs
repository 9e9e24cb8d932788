//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use super::params::ParamStore;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for [`relative_error`]; below this magnitude the
/// comparison is effectively absolute.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Finite differences over every scalar of every tensor in a store.
pub fn finite_diff_params(mut f: impl FnMut(&ParamStore) -> f64, params: &mut ParamStore, h: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids().collect::<Vec<_>>() {
        let n = params.get(id).len();
        let mut g = Vec::with_capacity(n);
        for j in 0..n {
            let orig = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = orig + h;
            let up = f(params);
            params.get_mut(id).data_mut()[j] = orig - h;
            let down = f(params);
            params.get_mut(id).data_mut()[j] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|p| p[0] * p[0], &[3.0], DEFAULT_STEP);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, 2.0], DEFAULT_STEP);
        assert_eq!(g, vec![0.0, 0.0]);
    }
}
