//! Cole-Hopf integral solution of viscous Burgers for the -sin(pi x) initial
//! condition, evaluated by Gauss-Hermite quadrature.

use std::collections::HashMap;
use std::sync::Mutex;

use once_cell::sync::Lazy;

use super::SolveError;

/// Nodes and weights of n-point Gauss-Hermite quadrature for
/// `int e^{-z^2} f(z) dz`, by Newton iteration on the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let pim4 = 0.751_125_544_464_942_5_f64; // pi^{-1/4}
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

static GH_CACHE: Lazy<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn gh_cached(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut cache = GH_CACHE.lock().expect("quadrature cache");
    cache.entry(n).or_insert_with(|| gauss_hermite(n)).clone()
}

/// One quadrature evaluation at `n` nodes. The Cole-Hopf transform of the
/// benchmark initial condition gives
///
/// `u(x,t) = int 2 sqrt(nu/t) z g(x - 2 sqrt(nu t) z) e^{-z^2} dz
///         / int                 g(x - 2 sqrt(nu t) z) e^{-z^2} dz`
///
/// with `g(y) = exp((1 - cos(pi y)) / (2 pi nu))`, normalized by its maximum
/// so the exponentials stay inside f64 range.
fn eval_nodes(x: f64, t: f64, nu: f64, n: usize) -> f64 {
    let (z, w) = gh_cached(n);
    let s = 2.0 * (nu * t).sqrt();
    let peak = 1.0 / (std::f64::consts::PI * nu);
    let mut num = 0.0;
    let mut den = 0.0;
    for (zi, wi) in z.iter().zip(&w) {
        let y = x - s * zi;
        let e = (1.0 - (std::f64::consts::PI * y).cos()) / (2.0 * std::f64::consts::PI * nu);
        let g = (e - peak).exp();
        num += wi * zi * g;
        den += wi * g;
    }
    2.0 * (nu / t).sqrt() * num / den
}

/// Quadrature-evaluated exact Burgers solution; errors when the 100- and
/// 200-node evaluations disagree beyond 1e-8.
pub fn cole_hopf_eval(x: f64, t: f64, nu: f64) -> Result<f64, SolveError> {
    if !(t > 0.0) {
        return Err(SolveError::BadGrid(format!("cole_hopf_eval needs t > 0, got {t}")));
    }
    if !(nu > 0.0) {
        return Err(SolveError::BadGrid(format!("non-positive viscosity {nu}")));
    }
    let coarse = eval_nodes(x, t, nu, 100);
    let fine = eval_nodes(x, t, nu, 200);
    let diff = (coarse - fine).abs();
    if !fine.is_finite() || diff > 1e-8 {
        return Err(SolveError::QuadratureNotConverged { x, t, diff });
    }
    Ok(fine)
}
