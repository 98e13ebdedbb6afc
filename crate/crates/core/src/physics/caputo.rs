//! L1 discretization of the left-sided Caputo derivative of order
//! alpha in (0,1) on a uniform grid. Exact on piecewise-linear functions,
//! order 2 - alpha otherwise.

use super::gamma::{dgamma_inv, gamma_fn};
use super::PhysicsError;

fn check_alpha(alpha: f64) -> Result<(), PhysicsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PhysicsError::AlphaDomain { alpha });
    }
    Ok(())
}

/// `D_t^alpha u` at `t_n` from samples `u(t_0) .. u(t_n)`:
///
/// `(dt^-alpha / Gamma(2 - alpha)) * sum_{j=0}^{n-1} b_j (u_{n-j} - u_{n-j-1})`
/// with `b_j = (j+1)^{1-alpha} - j^{1-alpha}`.
pub fn caputo_l1(values: &[f64], alpha: f64, dt: f64) -> Result<f64, PhysicsError> {
    check_alpha(alpha)?;
    if values.len() < 2 {
        return Err(PhysicsError::HistoryTooShort { len: values.len() });
    }
    if !(dt > 0.0) {
        return Err(PhysicsError::InvalidStep { dt });
    }
    let n = values.len() - 1;
    let e = 1.0 - alpha;
    let mut acc = 0.0;
    for j in 0..n {
        let b = ((j + 1) as f64).powf(e) - (j as f64).powf(e);
        acc += b * (values[n - j] - values[n - j - 1]);
    }
    Ok(dt.powf(-alpha) / gamma_fn(2.0 - alpha)? * acc)
}

/// The same operator as a linear functional: weights `c_m` such that
/// `caputo_l1(u) = sum_m c_m u_m` for a history of `n` steps.
pub fn caputo_weights(n: usize, alpha: f64, dt: f64) -> Result<Vec<f64>, PhysicsError> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(PhysicsError::HistoryTooShort { len: 1 });
    }
    let e = 1.0 - alpha;
    let kappa = dt.powf(-alpha) / gamma_fn(2.0 - alpha)?;
    let b = |j: usize| ((j + 1) as f64).powf(e) - (j as f64).powf(e);
    let mut c = vec![0.0; n + 1];
    c[n] = kappa * b(0);
    c[0] = -kappa * b(n - 1);
    for m in 1..n {
        c[m] = kappa * (b(n - m) - b(n - m - 1));
    }
    Ok(c)
}

/// `d c_m / d alpha` for the weights above. The explicit powers are
/// differentiated analytically; the 1/Gamma(2 - alpha) factor by central
/// finite difference on the scalar alpha.
pub fn caputo_weights_dalpha(n: usize, alpha: f64, dt: f64) -> Result<Vec<f64>, PhysicsError> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(PhysicsError::HistoryTooShort { len: 1 });
    }
    let e = 1.0 - alpha;
    let invg = 1.0 / gamma_fn(2.0 - alpha)?;
    // d/dalpha [1/Gamma(2 - alpha)] = -(d/dz 1/Gamma)(2 - alpha) * (-1)
    let dinvg = dgamma_inv(2.0 - alpha)?;
    let kappa = dt.powf(-alpha) * invg;
    let dkappa = dt.powf(-alpha) * (-dt.ln()) * invg + dt.powf(-alpha) * (-dinvg);
    let b = |j: usize| ((j + 1) as f64).powf(e) - (j as f64).powf(e);
    let db = |j: usize| {
        let jp = (j + 1) as f64;
        let dj = if j == 0 { 0.0 } else { (j as f64).powf(e) * (j as f64).ln() };
        -jp.powf(e) * jp.ln() + dj
    };
    let mut dc = vec![0.0; n + 1];
    dc[n] = dkappa * b(0) + kappa * db(0);
    dc[0] = -(dkappa * b(n - 1) + kappa * db(n - 1));
    for m in 1..n {
        dc[m] = dkappa * (b(n - m) - b(n - m - 1)) + kappa * (db(n - m) - db(n - m - 1));
    }
    Ok(dc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn history(f: impl Fn(f64) -> f64, t: f64, n: usize) -> (Vec<f64>, f64) {
        let dt = t / n as f64;
        ((0..=n).map(|j| f(j as f64 * dt)).collect(), dt)
    }

    #[test]
    fn constant_has_zero_derivative() {
        let (vals, dt) = history(|_| 3.25, 1.0, 17);
        assert_relative_eq!(caputo_l1(&vals, 0.5, dt).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_is_exact_for_every_step_and_order() {
        // Caputo of u(t) = t is t^{1-alpha} / Gamma(2 - alpha); L1 reproduces
        // it exactly because the scheme integrates piecewise-linear data.
        for k in 1..=9 {
            let alpha = 0.1 * k as f64;
            for n in [1usize, 4, 64, 333] {
                let (vals, dt) = history(|t| t, 1.0, n);
                let got = caputo_l1(&vals, alpha, dt).unwrap();
                let want = 1.0 / gamma_fn(2.0 - alpha).unwrap();
                assert!(
                    (got - want).abs() < 1e-12,
                    "alpha {alpha} n {n}: {got} vs {want}"
                );
            }
        }
        // Headline value: alpha = 1/2 at t = 1 gives 1/Gamma(1.5).
        let (vals, dt) = history(|t| t, 1.0, 10);
        assert_relative_eq!(caputo_l1(&vals, 0.5, dt).unwrap(), 1.128_379_167, max_relative = 1e-9);
    }

    #[test]
    fn cubic_converges_at_order_two_minus_alpha() {
        // At t = 1 the target is Gamma(4)/Gamma(3.5) for alpha = 1/2; the
        // Richardson fit of the error over dt in {1/40, 1/80, 1/160} must
        // sit within +-0.2 of 2 - alpha for each alpha.
        for alpha in [0.25, 0.5, 0.75] {
            let exact = 6.0 / gamma_fn(4.0 - alpha).unwrap();
            let errs: Vec<f64> = [40usize, 80, 160]
                .iter()
                .map(|&n| {
                    let (vals, dt) = history(|t| t * t * t, 1.0, n);
                    (caputo_l1(&vals, alpha, dt).unwrap() - exact).abs()
                })
                .collect();
            let order1 = (errs[0] / errs[1]).log2();
            let order2 = (errs[1] / errs[2]).log2();
            let order = 0.5 * (order1 + order2);
            assert!(
                (order - (2.0 - alpha)).abs() <= 0.2,
                "alpha {alpha}: empirical order {order}"
            );
        }
    }

    #[test]
    fn weights_reproduce_direct_formula() {
        let mut rng_state = 0x1234_5678_u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &n in &[1usize, 2, 7, 40] {
            let vals: Vec<f64> = (0..=n).map(|_| next()).collect();
            let (alpha, dt) = (0.37, 0.01);
            let direct = caputo_l1(&vals, alpha, dt).unwrap();
            let w = caputo_weights(n, alpha, dt).unwrap();
            let via: f64 = w.iter().zip(&vals).map(|(c, u)| c * u).sum();
            assert_relative_eq!(direct, via, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_alpha_derivative_matches_finite_difference() {
        let (n, dt) = (12usize, 0.05);
        for alpha in [0.3, 0.5, 0.8] {
            let h = 1e-6;
            let wp = caputo_weights(n, alpha + h, dt).unwrap();
            let wm = caputo_weights(n, alpha - h, dt).unwrap();
            let dw = caputo_weights_dalpha(n, alpha, dt).unwrap();
            for m in 0..=n {
                let fd = (wp[m] - wm[m]) / (2.0 * h);
                assert_relative_eq!(dw[m], fd, max_relative = 1e-4, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn domain_errors() {
        assert!(caputo_l1(&[0.0, 1.0], 0.0, 0.1).is_err());
        assert!(caputo_l1(&[0.0, 1.0], 1.0, 0.1).is_err());
        assert!(caputo_l1(&[1.0], 0.5, 0.1).is_err());
        assert!(caputo_l1(&[0.0, 1.0], 0.5, 0.0).is_err());
    }
}
