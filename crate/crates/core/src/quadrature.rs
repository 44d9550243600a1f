//! One-dimensional quadrature helpers: fixed Gauss-Legendre panels and
//! an adaptive panel-splitting integrator.

use crate::error::{FhError, Result};

/// 8-point Gauss-Legendre nodes/weights on [-1, 1].
pub const GL8_NODES: [f64; 8] = [
    -0.960289856497536231684,
    -0.796666477413626739592,
    -0.525532409916328985818,
    -0.183434642495649804939,
    0.183434642495649804939,
    0.525532409916328985818,
    0.796666477413626739592,
    0.960289856497536231684,
];
pub const GL8_WEIGHTS: [f64; 8] = [
    0.101228536290376259153,
    0.222381034453374470544,
    0.313706645877887287338,
    0.362683783378361982965,
    0.362683783378361982965,
    0.313706645877887287338,
    0.222381034453374470544,
    0.101228536290376259153,
];

/// Integral of f over [a, b] with a single 8-point panel.
pub fn gl8<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for k in 0..8 {
        s += GL8_WEIGHTS[k] * f(c + h * GL8_NODES[k]);
    }
    s * h
}

/// Adaptive integration by panel bisection: a panel is accepted when the
/// 8-point estimate agrees with the sum of its two halves.
pub fn adaptive<F: FnMut(f64) -> f64>(a: f64, b: f64, abs_tol: f64, f: &mut F) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(FhError::Integration {
            lo: a,
            hi: b,
            reason: "non-finite interval".into(),
        });
    }
    if a == b {
        return Ok(0.0);
    }
    adaptive_rec(a, b, abs_tol.max(1e-300), f, 0)
}

fn adaptive_rec<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    tol: f64,
    f: &mut F,
    depth: u32,
) -> Result<f64> {
    let whole = gl8(a, b, &mut *f);
    let mid = 0.5 * (a + b);
    let left = gl8(a, mid, &mut *f);
    let right = gl8(mid, b, &mut *f);
    let err = (left + right - whole).abs();
    if err <= tol || (b - a).abs() <= 1e-14 * (a.abs() + b.abs() + 1.0) {
        if !whole.is_finite() {
            return Err(FhError::Integration {
                lo: a,
                hi: b,
                reason: "non-finite integrand".into(),
            });
        }
        return Ok(left + right);
    }
    if depth >= 48 {
        return Err(FhError::Integration {
            lo: a,
            hi: b,
            reason: format!("adaptive depth exceeded (err {err:.3e} > tol {tol:.3e})"),
        });
    }
    Ok(adaptive_rec(a, mid, 0.5 * tol, f, depth + 1)?
        + adaptive_rec(mid, b, 0.5 * tol, f, depth + 1)?)
}
