use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use super::EmpiricalLaw;
use crate::error::{Error, Result};
use crate::numerics::q_factor;
use crate::numerics::quad::{integrate, QuadOptions};

/// Histogram estimate of `||P - Q||_var` in `[0, 2]`.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct TvEstimate {
    pub value: f64,
    /// Largest change of the estimate when the bin count is halved or doubled.
    pub spread: f64,
    /// `|P({0}) - Q({0})|`.
    pub atom_gap: f64,
    pub bins: usize,
}

pub fn tv_empirical(a: &EmpiricalLaw, b: &EmpiricalLaw, bins: usize) -> Result<TvEstimate> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    let value = histogram_tv(a, b, bins);
    let spread = (histogram_tv(a, b, bins / 2) - value).abs().max((histogram_tv(a, b, bins * 2) - value).abs());
    let za = a.samples().iter().filter(|s| s.is_zero()).count() as f64 / a.len() as f64;
    let zb = b.samples().iter().filter(|s| s.is_zero()).count() as f64 / b.len() as f64;
    Ok(TvEstimate { value, spread, atom_gap: (za - zb).abs(), bins })
}

fn histogram_tv(a: &EmpiricalLaw, b: &EmpiricalLaw, bins: usize) -> f64 {
    let d = a.dim();
    let per_axis = ((bins as f64).powf(1.0 / d as f64).round() as usize).max(1);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for s in a.samples().iter().chain(b.samples()).filter(|s| !s.is_zero()) {
        for k in 0..d {
            lo[k] = lo[k].min(s[k]);
            hi[k] = hi[k].max(s[k]);
        }
    }
    let cells = per_axis.pow(d as u32);
    let index = |s: &crate::mechanism::MassVector| -> usize {
        let mut idx = 0;
        for k in 0..d {
            let width = hi[k] - lo[k];
            let j = if width > 0.0 {
                (((s[k] - lo[k]) / width * per_axis as f64) as usize).min(per_axis - 1)
            } else {
                0
            };
            idx = idx * per_axis + j;
        }
        idx
    };
    let mut ca = vec![0.0; cells + 1];
    let mut cb = vec![0.0; cells + 1];
    let (wa, wb) = (1.0 / a.len() as f64, 1.0 / b.len() as f64);
    // the last cell holds the atom at 0
    for s in a.samples() {
        ca[if s.is_zero() { cells } else { index(s) }] += wa;
    }
    for s in b.samples() {
        cb[if s.is_zero() { cells } else { index(s) }] += wb;
    }
    ca.iter().zip(&cb).map(|(x, y)| (x - y).abs()).sum()
}

/// `sum_k Poisson(k; mean_count) Gamma(k + shape0, scale)` on `[0, inf)`,
/// where `Gamma(0, .)` is the point mass at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonGammaLaw {
    pub mean_count: f64,
    pub shape0: f64,
    pub scale: f64,
}

impl PoissonGammaLaw {
    /// Law of the one-type quadratic CBI at time `t` from `x`, with
    /// continuous immigration rate `beta`.
    pub fn quadratic_cbi(x: f64, beta: f64, b: f64, c: f64, t: f64) -> Self {
        let theta = c * q_factor(b, t);
        Self { mean_count: x * (-b * t).exp() / theta, shape0: beta / c, scale: theta }
    }

    /// Stationary law `Gamma(beta / c, c / b)`.
    pub fn quadratic_stationary(beta: f64, b: f64, c: f64) -> Self {
        Self { mean_count: 0.0, shape0: beta / c, scale: c / b }
    }

    pub fn atom(&self) -> f64 {
        if self.shape0 == 0.0 {
            (-self.mean_count).exp()
        } else {
            0.0
        }
    }

    /// Range of counts carrying all but a negligible Poisson mass.
    fn count_range(&self) -> (u64, u64) {
        let m = self.mean_count;
        let spread = 12.0 * m.sqrt() + 30.0;
        let lo = (m - spread).floor().max(0.0) as u64;
        let hi = (m + spread).ceil() as u64;
        let lo = if self.shape0 == 0.0 { lo.max(1) } else { lo };
        (lo, hi)
    }

    fn log_weight(&self, k: u64) -> f64 {
        let m = self.mean_count;
        if m == 0.0 {
            return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        k as f64 * m.ln() - m - ln_gamma(k as f64 + 1.0)
    }

    /// Density of the part away from 0.
    pub fn density(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        let (lo, hi) = self.count_range();
        let lz = z.ln();
        let ls = self.scale.ln();
        (lo..=hi)
            .map(|k| {
                let s = k as f64 + self.shape0;
                if s == 0.0 {
                    return 0.0;
                }
                (self.log_weight(k) + (s - 1.0) * lz - z / self.scale - s * ls - ln_gamma(s)).exp()
            })
            .sum()
    }

    fn smallest_shape(&self) -> f64 {
        let (lo, _) = self.count_range();
        if self.mean_count == 0.0 {
            self.shape0
        } else {
            lo as f64 + self.shape0
        }
    }

    fn largest_shape(&self) -> f64 {
        let (_, hi) = self.count_range();
        if self.mean_count == 0.0 {
            self.shape0
        } else {
            hi as f64 + self.shape0
        }
    }
}

/// `||P - Q||_var = |P{0} - Q{0}| + int |f_P - f_Q|`, with the integral taken
/// in `y = ln z` and split at sign changes of `f_P - f_Q`.
pub fn tv_poisson_gamma(p: &PoissonGammaLaw, q: &PoissonGammaLaw) -> Result<f64> {
    for law in [p, q] {
        if !(law.mean_count >= 0.0 && law.shape0 >= 0.0 && law.scale > 0.0)
            || !(law.mean_count.is_finite() && law.shape0.is_finite() && law.scale.is_finite())
        {
            return Err(Error::InvalidParameter(format!("invalid Poisson-Gamma law {law:?}")));
        }
    }
    if p == q {
        return Ok(0.0);
    }
    let atom_gap = (p.atom() - q.atom()).abs();
    let active: Vec<&PoissonGammaLaw> =
        [p, q].into_iter().filter(|l| !(l.mean_count == 0.0 && l.shape0 == 0.0)).collect();
    if active.is_empty() {
        return Ok(atom_gap);
    }
    // Mass of Gamma(s, theta) below z is at most (z/theta)^s / Gamma(s+1).
    let y_lo = active
        .iter()
        .map(|l| {
            let s = l.smallest_shape();
            l.scale.ln() + (-40.0 + ln_gamma(s + 1.0)) / s
        })
        .fold(f64::INFINITY, f64::min)
        .max(-700.0);
    let y_hi = active
        .iter()
        .map(|l| {
            let s = l.largest_shape();
            (l.scale * (s + 15.0 * s.sqrt() + 60.0)).ln()
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let diff = |y: f64| {
        let z = y.exp();
        (p.density(z) - q.density(z)) * z
    };
    let grid = 4000;
    let h = (y_hi - y_lo) / grid as f64;
    let mut cuts = vec![y_lo];
    let mut prev = diff(y_lo);
    for k in 1..=grid {
        let y = y_lo + k as f64 * h;
        let cur = diff(y);
        if prev != 0.0 && cur != 0.0 && prev.signum() != cur.signum() {
            let root = crate::numerics::bisect(&diff, y - h, y, 1e-15).unwrap_or(y - 0.5 * h);
            cuts.push(root);
        }
        if cur != 0.0 {
            prev = cur;
        }
    }
    cuts.push(y_hi);

    let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-12, max_intervals: 2000 };
    let mut total = atom_gap;
    let mut err = 0.0;
    for w in cuts.windows(2) {
        let r = integrate(|y| diff(y).abs(), w[0], w[1], opts)?;
        total += r.value;
        err += r.error;
    }
    if err > 1e-9 {
        return Err(Error::Quadrature(format!("TV integral error estimate {err} too large")));
    }
    Ok(total.min(2.0))
}

/// Exact total variation between the one-type quadratic CB laws at time `t`
/// from `x` and from `y`.
pub fn tv_exact_quadratic(x: f64, y: f64, b: f64, c: f64, t: f64) -> Result<f64> {
    if !(c > 0.0) || !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("need c > 0 and t > 0, got c = {c}, t = {t}")));
    }
    for v in [x, y] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::NegativeInput { what: "initial mass", value: v });
        }
    }
    if x == y {
        return Ok(0.0);
    }
    tv_poisson_gamma(
        &PoissonGammaLaw::quadratic_cbi(x, 0.0, b, c, t),
        &PoissonGammaLaw::quadratic_cbi(y, 0.0, b, c, t),
    )
}
