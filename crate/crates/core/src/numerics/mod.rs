pub mod ode;
pub mod quad;

/// `q(b, t) = (1 - e^{-bt}) / b`, continued by `q(0, t) = t`.
pub fn q_factor(b: f64, t: f64) -> f64 {
    let bt = b * t;
    if bt.abs() < 1e-300 {
        t
    } else {
        -(-bt).exp_m1() / b
    }
}

/// Bisection on a bracket `[lo, hi]` where `f(lo)` and `f(hi)` have opposite
/// signs. Stops when the bracket is below `x_tol` relative width.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, x_tol: f64) -> Option<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Some(lo);
    }
    if f_hi == 0.0 {
        return Some(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return None;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= x_tol * mid.abs().max(f64::MIN_POSITIVE) || mid <= lo || mid >= hi {
            return Some(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Some(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
