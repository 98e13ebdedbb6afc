//! Second-order forward-mode jets with respect to one scalar input.
//!
//! A [`Jet2`] carries `(f, f', f'')` of a scalar chain evaluated at a point,
//! which is exactly what the PDE residuals need for `u_x`, `u_xx` and `u_t`.

use std::ops::{Add, Mul, Neg, Sub};

use super::DiffError;

/// Value plus first and second derivative with respect to the designated input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    /// The designated input itself: derivative 1, curvature 0.
    pub fn seed(x0: f64) -> Self {
        Jet2 { value: x0, d1: 1.0, d2: 0.0 }
    }

    /// A quantity that does not depend on the designated input.
    pub fn constant(c: f64) -> Self {
        Jet2 { value: c, d1: 0.0, d2: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }

    /// Unary chain rule for `f` given `(f(v), f'(v), f''(v))`.
    fn lift(self, f: f64, f1: f64, f2: f64) -> Jet2 {
        Jet2 {
            value: f,
            d1: f1 * self.d1,
            d2: f2 * self.d1 * self.d1 + f1 * self.d2,
        }
    }

    pub fn tanh(self) -> Jet2 {
        let y = self.value.tanh();
        let s1 = 1.0 - y * y;
        self.lift(y, s1, -2.0 * y * s1)
    }

    pub fn sin(self) -> Jet2 {
        let (s, c) = self.value.sin_cos();
        self.lift(s, c, -s)
    }

    pub fn cos(self) -> Jet2 {
        let (s, c) = self.value.sin_cos();
        self.lift(c, -s, -c)
    }

    pub fn exp(self) -> Jet2 {
        let e = self.value.exp();
        self.lift(e, e, e)
    }

    /// `a * self + b` with scalar constants.
    pub fn affine(self, a: f64, b: f64) -> Jet2 {
        Jet2 {
            value: a * self.value + b,
            d1: a * self.d1,
            d2: a * self.d2,
        }
    }

    pub fn scale(self, a: f64) -> Jet2 {
        self.affine(a, 0.0)
    }

    /// Integer power by repeated multiplication.
    pub fn powi(self, n: u32) -> Jet2 {
        let mut acc = Jet2::constant(1.0);
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value + rhs.value,
            d1: self.d1 + rhs.d1,
            d2: self.d2 + rhs.d2,
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value - rhs.value,
            d1: self.d1 - rhs.d1,
            d2: self.d2 - rhs.d2,
        }
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value * rhs.value,
            d1: self.d1 * rhs.value + self.value * rhs.d1,
            d2: self.d2 * rhs.value + 2.0 * self.d1 * rhs.d1 + self.value * rhs.d2,
        }
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

/// Evaluates a composed elementary chain as a second-order jet at `x0`.
pub fn input_jet2(chain: impl FnOnce(Jet2) -> Jet2, x0: f64) -> Result<Jet2, DiffError> {
    let out = chain(Jet2::seed(x0));
    if out.is_finite() {
        Ok(out)
    } else {
        Err(DiffError::NonFinite { op: "input_jet2" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn square_at_two() {
        let j = input_jet2(|x| x * x, 2.0).unwrap();
        assert_eq!((j.value, j.d1, j.d2), (4.0, 4.0, 2.0));
    }

    #[test]
    fn sine_at_origin() {
        let j = input_jet2(|x| x.sin(), 0.0).unwrap();
        assert_relative_eq!(j.value, 0.0);
        assert_relative_eq!(j.d1, 1.0);
        assert_relative_eq!(j.d2, 0.0);
    }

    /// 5-point central stencils for f' and f''.
    fn fd5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
        let (f2m, f1m, f0, f1p, f2p) =
            (f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h));
        let d1 = (f2m - 8.0 * f1m + 8.0 * f1p - f2p) / (12.0 * h);
        let d2 = (-f2m + 16.0 * f1m - 30.0 * f0 + 16.0 * f1p - f2p) / (12.0 * h * h);
        (d1, d2)
    }

    #[test]
    fn tanh_of_scaled_input_matches_stencil() {
        let j = input_jet2(|x| x.scale(2.0).tanh(), 0.3).unwrap();
        let (d1, d2) = fd5(|x| (2.0 * x).tanh(), 0.3, 1e-4);
        assert_relative_eq!(j.d1, d1, max_relative = 1e-5);
        assert_relative_eq!(j.d2, d2, max_relative = 1e-5);
    }

    #[test]
    fn composed_chains_match_nested_differences() {
        use rand::Rng;
        let mut rng = crate::rngutil::rng_for(11, &[0]);
        for _ in 0..100 {
            // Random smooth chain of depth <= 8 built from the registered ops.
            let depth = rng.gen_range(1..=8);
            let ops: Vec<(u8, f64, f64)> = (0..depth)
                .map(|_| {
                    (
                        rng.gen_range(0u8..5),
                        rng.gen_range(-1.2..1.2),
                        rng.gen_range(-0.5..0.5),
                    )
                })
                .collect();
            let apply = |mut x: Jet2| {
                for &(k, a, b) in &ops {
                    x = match k {
                        0 => x.tanh(),
                        1 => x.sin(),
                        2 => x.cos(),
                        3 => x.affine(a, b),
                        // keep exp arguments tame so chains stay smooth in f64
                        _ => x.scale(0.3).exp().affine(0.5, -0.4),
                    };
                }
                x
            };
            let x0: f64 = rng.gen_range(-1.0..1.0);
            let j = input_jet2(apply, x0).unwrap();
            let scalar = |x: f64| apply(Jet2::constant(x)).value;
            let (d1, d2) = fd5(scalar, x0, 1e-4);
            let tol = 1e-4;
            assert!(
                (j.d1 - d1).abs() <= tol * (1.0 + d1.abs()),
                "d1 mismatch: {} vs {}",
                j.d1,
                d1
            );
            assert!(
                (j.d2 - d2).abs() <= tol.max(1e-3 * d2.abs().max(1.0)) * (1.0 + d2.abs()),
                "d2 mismatch: {} vs {}",
                j.d2,
                d2
            );
        }
    }

    #[test]
    fn nonfinite_propagation_is_an_error() {
        let r = input_jet2(|x| x.scale(1e308).exp(), 1.0);
        assert!(r.is_err());
    }
}
