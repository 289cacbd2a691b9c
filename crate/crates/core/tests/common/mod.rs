#![allow(dead_code)]

/// Adaptive Simpson quadrature with Richardson correction.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `int_0^1 (1 - y^K)^A dy`.
pub fn f_quad(actions: u32, size: u32) -> f64 {
    integrate(&|y: f64| (1.0 - y.powi(size as i32)).powi(actions as i32), 0.0, 1.0, 1e-15)
}

/// `(1/M) I_{1/2}(1/M, A + 1)` after substituting `t = y^M`.
pub fn g_quad(actions: u32, size: u32) -> f64 {
    let h = |y: f64| (1.0 - y.powi(size as i32)).powi(actions as i32);
    let cut = 0.5f64.powf(1.0 / f64::from(size));
    let part = integrate(&h, 0.0, cut, 1e-15);
    let whole = part + integrate(&h, cut, 1.0, 1e-15);
    part / whole / f64::from(size)
}

/// `E[max_a min_i e_i(a)]` for independent `e_i(a) ~ U(-tau_i, tau_i)`,
/// computed as `tau_max - int F_min(x)^A dx` over `[-tau_max, tau_max]`.
pub fn exact_bias(taus: &[f64], actions: u32, gamma: f64) -> f64 {
    let tmax = taus.iter().copied().fold(0.0, f64::max);
    let cdf = |x: f64| {
        let survive: f64 = taus.iter().map(|t| 1.0 - ((x + t) / (2.0 * t)).clamp(0.0, 1.0)).product();
        (1.0 - survive).powi(actions as i32)
    };
    let mut knots: Vec<f64> = taus.iter().flat_map(|t| [-t, *t]).chain([0.0, -tmax, tmax]).collect();
    knots.retain(|k| k.abs() <= tmax);
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    let area: f64 = knots.windows(2).map(|w| integrate(&cdf, w[0], w[1], 1e-13)).sum();
    gamma * (tmax - area)
}
