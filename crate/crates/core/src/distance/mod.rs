//! Wasserstein-1 distance with l1 ground cost and total-variation distance
//! between laws on the nonnegative orthant.

pub mod assignment;
mod tv;

pub use tv::{tv_empirical, tv_exact_quadratic, tv_poisson_gamma, PoissonGammaLaw, TvEstimate};

use xsum::{Xsum, XsumAuto};

use crate::error::{Error, Result};
use crate::mechanism::MassVector;

/// Default sample cap for the exact assignment solver.
pub const ASSIGNMENT_CAP: usize = 2048;

/// Uniform empirical measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    samples: Vec<MassVector>,
}

impl EmpiricalLaw {
    pub fn new(samples: Vec<MassVector>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptySamples)?;
        let d = first.dim();
        if let Some(s) = samples.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: s.dim() });
        }
        Ok(Self { samples })
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(xs.iter().map(|&x| MassVector::new(vec![x])).collect::<Result<_>>()?)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn samples(&self) -> &[MassVector] {
        &self.samples
    }

    fn scalars(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s[0]).collect()
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> EmpiricalLaw {
        EmpiricalLaw { samples: self.samples[..n.min(self.len())].to_vec() }
    }
}

fn same_dim(a: &EmpiricalLaw, b: &EmpiricalLaw) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(())
}

/// Optimal transport between two uniform empirical measures of equal size
/// under the l1 ground cost, solved as an assignment problem.
pub fn w1_exact_empirical(a: &EmpiricalLaw, b: &EmpiricalLaw, cap: usize) -> Result<f64> {
    same_dim(a, b)?;
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "assignment needs equal sample counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    // A fixed argument order makes the result exactly symmetric.
    let flat = |l: &EmpiricalLaw| l.samples.iter().flat_map(|s| s.as_slice().to_vec()).collect::<Vec<f64>>();
    let swap = flat(a).iter().zip(&flat(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne())
        == Some(std::cmp::Ordering::Greater);
    let (a, b) = if swap { (b, a) } else { (a, b) };
    let (_, matching) = assignment::solve(n, |i, j| a.samples[i].var_distance(&b.samples[j]));
    Ok(matched_cost(a, b, &matching) / n as f64)
}

/// Total cost of `row_to_col`. The signed coordinates are summed exactly and
/// rounded once, so matchings with equal real cost give equal values.
pub fn matched_cost(a: &EmpiricalLaw, b: &EmpiricalLaw, row_to_col: &[usize]) -> f64 {
    let mut acc = XsumAuto::new();
    for (i, &j) in row_to_col.iter().enumerate() {
        for (&x, &y) in a.samples[i].as_slice().iter().zip(b.samples[j].as_slice()) {
            let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
            acc.add(hi);
            acc.add(-lo);
        }
    }
    acc.sum()
}

/// One-dimensional `W_1` by comonotone pairing of order statistics; for
/// unequal sizes, `int |F_a - F_b|` evaluated exactly.
pub fn w1_1d_quantile(a: &EmpiricalLaw, b: &EmpiricalLaw) -> Result<f64> {
    same_dim(a, b)?;
    if a.dim() != 1 {
        return Err(Error::InvalidParameter(format!("quantile W1 needs d = 1, got d = {}", a.dim())));
    }
    let mut xs = a.scalars();
    let mut ys = b.scalars();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    if xs.len() == ys.len() {
        let total: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / xs.len() as f64);
    }
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = xs[0].min(ys[0]);
    let mut total = 0.0;
    while i < xs.len() || j < ys.len() {
        let next = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / n - j as f64 / m).abs() * (next - prev);
        while i < xs.len() && xs[i] <= next {
            i += 1;
        }
        while j < ys.len() && ys[j] <= next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Empirical `W_1`: exact quantile pairing in one dimension, the assignment
/// solver on the common prefix of at most `cap` samples otherwise.
pub fn w1_empirical(a: &EmpiricalLaw, b: &EmpiricalLaw, cap: usize) -> Result<f64> {
    same_dim(a, b)?;
    if a.dim() == 1 {
        return w1_1d_quantile(a, b);
    }
    let n = a.len().min(b.len()).min(cap);
    w1_exact_empirical(&a.truncated(n), &b.truncated(n), cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law(xs: &[f64]) -> EmpiricalLaw {
        EmpiricalLaw::from_scalars(xs).unwrap()
    }

    #[test]
    fn identical_samples_have_zero_distance() {
        let a = law(&[0.5, 2.0, 1.0]);
        assert_eq!(w1_exact_empirical(&a, &a, ASSIGNMENT_CAP).unwrap(), 0.0);
        assert_eq!(w1_1d_quantile(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn three_point_example() {
        let a = law(&[0.0, 0.0, 3.0]);
        let b = law(&[1.0, 1.0, 1.0]);
        assert!((w1_exact_empirical(&a, &b, ASSIGNMENT_CAP).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((w1_1d_quantile(&a, &b).unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn translation_gives_shift() {
        let a = law(&[0.5, 2.0, 1.0, 7.0]);
        let b = law(&[2.75, 4.25, 3.25, 9.25]);
        assert!((w1_1d_quantile(&a, &b).unwrap() - 2.25).abs() < 1e-15);
    }

    #[test]
    fn unequal_sizes_use_cdf_integral() {
        // F_a: mass 1 at 0; F_b: 1/2 at 0, 1/2 at 2 -> W1 = 1
        let a = law(&[0.0]);
        let b = law(&[0.0, 2.0]);
        assert!((w1_1d_quantile(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        // duplicating every sample leaves the law unchanged
        let c = law(&[0.3, 1.1, 4.0]);
        let d = law(&[0.3, 0.3, 1.1, 1.1, 4.0, 4.0]);
        let e = law(&[1.0, 2.0]);
        assert!(w1_1d_quantile(&c, &d).unwrap().abs() < 1e-15);
        assert!((w1_1d_quantile(&c, &e).unwrap() - w1_1d_quantile(&d, &e).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn cap_and_dimension_errors() {
        let a = law(&[1.0, 2.0, 3.0]);
        assert!(matches!(w1_exact_empirical(&a, &a, 2), Err(Error::CapExceeded { n: 3, cap: 2 })));
        let two = EmpiricalLaw::new(vec![MassVector::new(vec![1.0, 1.0]).unwrap()]).unwrap();
        assert!(w1_1d_quantile(&two, &two).is_err());
        assert!(EmpiricalLaw::new(vec![]).is_err());
    }

    #[test]
    fn two_dimensional_assignment() {
        let mv = |x: f64, y: f64| MassVector::new(vec![x, y]).unwrap();
        let a = EmpiricalLaw::new(vec![mv(0.0, 0.0), mv(1.0, 1.0)]).unwrap();
        let b = EmpiricalLaw::new(vec![mv(1.0, 1.5), mv(0.0, 0.5)]).unwrap();
        assert!((w1_empirical(&a, &b, ASSIGNMENT_CAP).unwrap() - 0.5).abs() < 1e-15);
    }
}
