//! Combinatorial coefficients behind the bias bounds.
//!
//! `f_coef(A, K)` is the integral of `(1 - y^K)^A` over `[0, 1]`, which is
//! also `(1/K) B(1/K, A + 1)`. `g_coef(A, M)` is `(1/M) I_{0.5}(1/M, A + 1)`
//! with `I_x` the lower regularized incomplete beta function.

use crate::error::{Error, Result};

/// Shape parameters of a beta function, both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    a: f64,
    b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
            return Err(Error::domain(format!(
                "beta parameters must be positive and finite, got a={a}, b={b}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

pub fn ln_beta(p: BetaParams) -> f64 {
    ln_gamma(p.a) + ln_gamma(p.b) - ln_gamma(p.a + p.b)
}

/// The complete beta function `B(a, b)`.
pub fn beta(p: BetaParams) -> f64 {
    ln_beta(p).exp()
}

const CF_MAX_ITER: usize = 500;
const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;

/// Regularized incomplete beta `I_x(a, b)` for `x` in `[0, 1]`.
///
/// Continued fraction evaluated with the modified Lentz method; the
/// symmetry `I_x(a, b) = 1 - I_{1-x}(b, a)` keeps it in its fast region.
pub fn reg_inc_beta(x: f64, p: BetaParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("x must lie in [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let (a, b) = (p.a, p.b);
    if x > (a + 1.0) / (a + b + 2.0) {
        let flipped = BetaParams { a: b, b: a };
        Ok(1.0 - inc_beta_cf(1.0 - x, flipped)?)
    } else {
        inc_beta_cf(x, p)
    }
}

fn inc_beta_cf(x: f64, p: BetaParams) -> Result<f64> {
    let (a, b) = (p.a, p.b);
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(p) - a.ln();

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            return Ok(ln_front.exp() * h);
        }
    }
    Err(Error::NonConvergence {
        iterations: CF_MAX_ITER,
        residual: f64::NAN,
    })
}

fn check_positive(name: &str, v: u32) -> Result<()> {
    if v == 0 {
        Err(Error::domain(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

/// `f_{AK} = A! / prod_{j=1..A} (j + 1/K)`, evaluated as a running product
/// of factors `j / (j + 1/K)` so it never overflows. For `K = 1` the
/// product telescopes to `1 / (A + 1)`.
pub fn f_coef(actions: u32, size: u32) -> Result<f64> {
    check_positive("A", actions)?;
    check_positive("K", size)?;
    if size == 1 {
        return Ok(1.0 / (f64::from(actions) + 1.0));
    }
    let inv = 1.0 / f64::from(size);
    let mut prod = 1.0;
    for j in 1..=actions {
        let j = f64::from(j);
        prod *= j / (j + inv);
    }
    Ok(prod)
}

/// `g_{AM} = (1/M) I_{0.5}(1/M, A + 1)`.
pub fn g_coef(actions: u32, size: u32) -> Result<f64> {
    check_positive("A", actions)?;
    check_positive("M", size)?;
    let m = f64::from(size);
    let p = BetaParams::new(1.0 / m, f64::from(actions) + 1.0)?;
    Ok(reg_inc_beta(0.5, p)? / m)
}

/// `beta_K = (1/2 - tau2 / (2 tau1))^K`, defined for `tau1 > tau2 > 0`.
pub fn beta_k(tau1: f64, tau2: f64, k: u32) -> Result<f64> {
    if !(tau2 > 0.0 && tau1 > tau2 && tau1.is_finite()) {
        return Err(Error::domain(format!(
            "beta_K needs tau1 > tau2 > 0, got tau1={tau1}, tau2={tau2}"
        )));
    }
    check_positive("K", k)?;
    Ok((0.5 - tau2 / (2.0 * tau1)).powi(k as i32))
}
