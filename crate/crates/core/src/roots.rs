//! Polynomial roots, used to verify filter stability.

use num_complex::Complex64;

/// Roots of `z^M + a[0] z^(M-1) + ... + a[M-1]`, the pole polynomial of
/// `1 / (1 + a[0] z^-1 + ... + a[M-1] z^-M)`, by Aberth-Ehrlich iteration.
pub fn poly_roots(a: &[f64]) -> Vec<Complex64> {
    let m = a.len();
    match m {
        0 => return Vec::new(),
        1 => return vec![Complex64::new(-a[0], 0.0)],
        2 => {
            let (r1, r2) = quadratic_roots(a[0], a[1]);
            return vec![r1, r2];
        }
        _ => {}
    }
    // monic coefficients, highest power first
    let coeffs: Vec<f64> = std::iter::once(1.0).chain(a.iter().copied()).collect();
    let eval = |z: Complex64| -> (Complex64, Complex64) {
        let mut p = Complex64::new(coeffs[0], 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for &c in &coeffs[1..] {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    };
    // Cauchy bound for the initial circle
    let radius = 1.0 + a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let mut z: Vec<Complex64> = (0..m)
        .map(|k| {
            let angle = std::f64::consts::TAU * (k as f64 + 0.25) / m as f64 + 0.4;
            Complex64::from_polar(0.5 * radius, angle)
        })
        .collect();
    for _ in 0..500 {
        let mut converged = true;
        for k in 0..m {
            let (p, dp) = eval(z[k]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..m)
                .filter(|&j| j != k)
                .map(|j| 1.0 / (z[k] - z[j]))
                .sum();
            let step = ratio / (1.0 - ratio * repulsion);
            z[k] -= step;
            if step.norm() > 1e-14 * z[k].norm().max(1e-3) {
                converged = false;
            }
        }
        if converged {
            break;
        }
    }
    z
}

/// Roots of `z^2 + b z + c`, avoiding cancellation.
pub fn quadratic_roots(b: f64, c: f64) -> (Complex64, Complex64) {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        let re = -0.5 * b;
        let im = 0.5 * (-disc).sqrt();
        (Complex64::new(re, im), Complex64::new(re, -im))
    } else {
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        if q == 0.0 {
            return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        }
        (Complex64::new(q, 0.0), Complex64::new(c / q, 0.0))
    }
}

/// Largest pole magnitude of `1 / A(z)` with `A(z) = 1 + a[0] z^-1 + ...`.
pub fn max_pole_magnitude(a: &[f64]) -> f64 {
    poly_roots(a).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
