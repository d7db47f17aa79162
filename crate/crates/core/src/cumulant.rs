//! Cumulant semigroup `v(t, l)`, its limit `V̄_t`, and the first-moment
//! semigroup.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanism::{BranchingMechanism, DominationGrid, ImmigrationMechanism, MassVector, ScalarMechanism};
use crate::numerics::ode::{dopri5, OdeOptions};
use crate::numerics::{bisect, q_factor};

/// Solution of `v' = -phi(v)`, `v(0) = lambda0`, at the accepted solver steps.
#[derive(Debug, Clone, Serialize)]
pub struct CumulantPath {
    pub t_grid: Vec<f64>,
    pub v_values: Vec<Vec<f64>>,
    pub lambda0: Vec<f64>,
    pub tol: f64,
}

impl CumulantPath {
    pub fn final_value(&self) -> &[f64] {
        self.v_values.last().expect("path has at least the initial point")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.lambda0.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("v_{i}")));
        w.write_record(&header)?;
        for (t, v) in self.t_grid.iter().zip(&self.v_values) {
            let mut row = vec![t.to_string()];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn ode_options(tol: f64, d: usize, lambda_max: f64) -> OdeOptions {
    OdeOptions {
        rtol: tol,
        // v decays like e^{-bt}; keep the control relative down to tiny values
        atol: tol * 1e-6,
        clamp_nonneg: d,
        ceiling: OdeOptions::default().ceiling.max(10.0 * lambda_max),
        ..OdeOptions::default()
    }
}

fn check_lambda(mech: &BranchingMechanism, lambda0: &[f64], tol: f64) -> Result<()> {
    if lambda0.len() != mech.dim() {
        return Err(Error::DimensionMismatch { expected: mech.dim(), got: lambda0.len() });
    }
    if let Some(&l) = lambda0.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::NegativeInput { what: "lambda0", value: l });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Solves the cumulant equation up to `t_end` with default solver settings.
pub fn solve_cumulant(
    mech: &BranchingMechanism,
    lambda0: &[f64],
    t_end: f64,
    tol: f64,
) -> Result<CumulantPath> {
    let lmax = lambda0.iter().copied().fold(0.0, f64::max);
    solve_cumulant_with(mech, lambda0, t_end, &ode_options(tol, mech.dim(), lmax))
}

/// Like [`solve_cumulant`] with explicit solver options.
pub fn solve_cumulant_with(
    mech: &BranchingMechanism,
    lambda0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
) -> Result<CumulantPath> {
    check_lambda(mech, lambda0, opts.rtol)?;
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end must be finite and >= 0, got {t_end}")));
    }
    let mut t_grid = Vec::new();
    let mut v_values = Vec::new();
    dopri5(
        |_t, v, dv| {
            mech.phi_into(v, dv);
            dv.iter_mut().for_each(|x| *x = -*x);
        },
        0.0,
        lambda0,
        t_end,
        opts,
        |t, v| {
            t_grid.push(t);
            v_values.push(v.to_vec());
        },
    )?;
    Ok(CumulantPath { t_grid, v_values, lambda0: lambda0.to_vec(), tol: opts.rtol })
}

/// `v(t, lambda0)` at each of the increasing `times`.
pub fn cumulant_at(
    mech: &BranchingMechanism,
    lambda0: &[f64],
    times: &[f64],
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    check_lambda(mech, lambda0, tol)?;
    let lmax = lambda0.iter().copied().fold(0.0, f64::max);
    let opts = ode_options(tol, mech.dim(), lmax);
    let mut out = Vec::with_capacity(times.len());
    let mut t_prev = 0.0;
    let mut v = lambda0.to_vec();
    for &t in times {
        if !(t >= t_prev) {
            return Err(Error::InvalidParameter("times must be nonnegative and increasing".into()));
        }
        v = solve_cumulant_with(mech, &v, t - t_prev, &opts)?.final_value().to_vec();
        out.push(v.clone());
        t_prev = t;
    }
    Ok(out)
}

/// `(v(t, lambda), int_0^t psi(v(s, lambda)) ds)`, solved jointly.
pub fn cumulant_with_immigration(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    lambda: &[f64],
    t: f64,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    check_lambda(mech, lambda, tol)?;
    let d = mech.dim();
    if imm.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: imm.dim() });
    }
    let lmax = lambda.iter().copied().fold(0.0, f64::max);
    let opts = ode_options(tol, d, lmax);
    let mut y0 = lambda.to_vec();
    y0.push(0.0);
    let (y, _) = dopri5(
        |_t, y, dy| {
            let v = &y[..d];
            mech.phi_into(v, &mut dy[..d]);
            dy[..d].iter_mut().for_each(|x| *x = -*x);
            dy[d] = imm.psi_unchecked(v);
        },
        0.0,
        &y0,
        t,
        &opts,
        |_, _| {},
    )?;
    Ok((y[..d].to_vec(), y[d]))
}

/// `-log E exp(-<lambda, X_t>)` for the process started at `mu`:
/// `<mu, v(t, lambda)> + int_0^t psi(v(s, lambda)) ds`.
pub fn laplace_exponent(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    mu: &MassVector,
    lambda: &[f64],
    t: f64,
    tol: f64,
) -> Result<f64> {
    if mu.dim() != mech.dim() {
        return Err(Error::DimensionMismatch { expected: mech.dim(), got: mu.dim() });
    }
    let (v, w) = cumulant_with_immigration(mech, imm, lambda, t, tol)?;
    Ok(mu.pair(&v) + w)
}

/// Laplace exponent `int_0^inf psi(v(s, lambda)) ds` of the stationary law.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StationaryExponent {
    pub value: f64,
    /// Bound on the truncated tail beyond `horizon`.
    pub tail_bound: f64,
    pub horizon: f64,
}

pub fn stationary_laplace_exponent(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    lambda: &[f64],
    tol: f64,
) -> Result<StationaryExponent> {
    let beta_star = mech.beta_star();
    if !(beta_star > 0.0) {
        return Err(Error::Supercritical { beta_star });
    }
    let horizon = (10.0 / beta_star).max(20.0);
    let (_, value) = cumulant_with_immigration(mech, imm, lambda, horizon, tol)?;
    // v(s) <= pi_s lambda <= e^{-beta* s} |lambda|_inf and psi(v) <= <beta + m_nu, v>.
    let rate: f64 = imm.mean_rate().iter().sum();
    let lmax = lambda.iter().copied().fold(0.0, f64::max);
    let tail_bound = rate * lmax * (-beta_star * horizon).exp() / beta_star;
    Ok(StationaryExponent { value, tail_bound, horizon })
}

/// Mean of the stationary law: `(-M^T)^{-1} (beta + int u nu(du))`.
pub fn stationary_mean(mech: &BranchingMechanism, imm: &ImmigrationMechanism) -> Result<Vec<f64>> {
    let beta_star = mech.beta_star();
    if !(beta_star > 0.0) {
        return Err(Error::Supercritical { beta_star });
    }
    if imm.dim() != mech.dim() {
        return Err(Error::DimensionMismatch { expected: mech.dim(), got: imm.dim() });
    }
    let a = -mech.moment_generator().transpose();
    let rhs = nalgebra::DVector::from_vec(imm.mean_rate());
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular moment generator".into()))?;
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

/// `int_t^inf <beta + m_nu, pi_s 1> ds = (beta + m_nu)^T (-M)^{-1} e^{tM} 1`,
/// the exact `W_1(N_t, N_inf)`.
pub fn stationary_w1_tail(mech: &BranchingMechanism, imm: &ImmigrationMechanism, t: f64) -> Result<f64> {
    let mean = stationary_mean(mech, imm)?;
    let p = moment_semigroup(mech, t)?;
    // (beta+m)^T (-M)^{-1} e^{tM} 1 = <(-M^T)^{-1}(beta+m), pi_t 1>
    let ones = vec![1.0; mech.dim()];
    Ok(mean.iter().zip(p.apply(&ones)).map(|(a, b)| a * b).sum())
}

/// `v*_t(lambda) = e^{-bt} lambda / (1 + c q(b,t) lambda)`.
pub fn closed_form_quadratic(b_star: f64, c_star: f64, lambda: f64, t: f64) -> f64 {
    debug_assert!(c_star >= 0.0 && lambda >= 0.0);
    if lambda == 0.0 {
        return 0.0;
    }
    (-b_star * t).exp() * lambda / (1.0 + c_star * q_factor(b_star, t) * lambda)
}

/// `lim_{lambda -> inf} v*_t(lambda) = e^{-bt} / (c q(b,t))` for quadratic `phi*`.
pub fn vbar_quadratic_closed_form(b_star: f64, c_star: f64, t: f64) -> Result<f64> {
    if !(c_star > 0.0) {
        return Err(Error::GreyConditionFails);
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    Ok((-b_star * t).exp() / (c_star * q_factor(b_star, t)))
}

/// Solves `int_v^inf dz / phi*(z) = t` for `v`.
pub fn vbar_scalar_root(phi: &ScalarMechanism, t: f64) -> Result<f64> {
    if !phi.grey_condition() {
        return Err(Error::GreyConditionFails);
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    // Largest zero of phi* (only nonzero when b* < 0).
    let mut floor = 0.0;
    if phi.b_star < 0.0 {
        let mut hi = 1.0;
        while phi.phi(hi) <= 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::GreyConditionFails);
            }
        }
        floor = bisect(|z| phi.phi(z), f64::MIN_POSITIVE.max(hi * 1e-300), hi, 1e-15).unwrap_or(hi);
        floor = floor.max(0.0);
    }
    let g = |v: f64| phi.grey_tail_integral(v);
    // log-scale bracket around the root of g(v) = t, v > floor.
    let mut hi = floor.max(1.0) * 2.0;
    while g(hi)? > t {
        hi *= 4.0;
        if hi > 1e300 {
            return Err(Error::Solver("could not bracket V̄ from above".into()));
        }
    }
    let mut lo = hi;
    if floor == 0.0 {
        while g(lo)? < t {
            lo *= 0.25;
            if lo < 1e-300 {
                return Err(Error::Solver("could not bracket V̄ from below".into()));
            }
        }
    } else {
        // g blows up logarithmically at the zero of phi*; approach it gradually.
        let mut gap = 1e-2;
        loop {
            lo = floor * (1.0 + gap);
            if g(lo)? >= t {
                break;
            }
            gap *= 0.1;
            if gap < 1e-14 {
                return Err(Error::Solver("V̄ lies too close to the zero of phi*".into()));
            }
        }
    }
    let err = std::cell::Cell::new(None);
    let root = bisect(
        |y| match g(y.exp()) {
            Ok(val) => val - t,
            Err(e) => {
                err.set(Some(e.to_string()));
                0.0
            }
        },
        lo.ln(),
        hi.ln(),
        1e-15,
    );
    if let Some(msg) = err.take() {
        return Err(Error::Quadrature(msg));
    }
    root.map(f64::exp).ok_or_else(|| Error::Solver("V̄ bracket lost".into()))
}

/// `v̄*_t` for a one-type mechanism. Quadratic mechanisms are cross-checked
/// against the closed form to `1e-8` relative.
pub fn vbar_scalar(phi: &ScalarMechanism, t: f64) -> Result<f64> {
    let root = vbar_scalar_root(phi, t)?;
    if phi.is_quadratic() {
        let exact = vbar_quadratic_closed_form(phi.b_star, phi.c_star, t)?;
        if ((root - exact) / exact).abs() > 1e-8 {
            return Err(Error::Solver(format!(
                "V̄ methods disagree: root-find {root}, closed form {exact}"
            )));
        }
        return Ok(exact);
    }
    Ok(root)
}

/// Settings for the `lambda -> inf` ladder.
#[derive(Debug, Clone, Copy)]
pub struct VbarOptions {
    pub tol: f64,
    pub lambda_start: f64,
    pub lambda_factor: f64,
    pub lambda_max: f64,
    pub grid: DominationGrid,
}

impl Default for VbarOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            lambda_start: 10.0,
            lambda_factor: 10.0,
            lambda_max: 1e40,
            grid: DominationGrid::default(),
        }
    }
}

/// `V̄_t = lim v(t, lambda 1)` by a geometric ladder in `lambda`.
pub fn vbar_vector(mech: &BranchingMechanism, t: f64, tol: f64) -> Result<Vec<f64>> {
    vbar_vector_with(mech, t, &VbarOptions { tol, ..Default::default() })
}

pub fn vbar_vector_with(mech: &BranchingMechanism, t: f64, opts: &VbarOptions) -> Result<Vec<f64>> {
    let star = mech.dominating_mechanism(opts.grid)?;
    let bound = vbar_scalar(&star, t)?;
    let d = mech.dim();
    let inner_tol = (opts.tol * 1e-3).max(1e-13);
    let mut lambda = opts.lambda_start;
    let mut prev: Option<Vec<f64>> = None;
    let mut last_diff = f64::INFINITY;
    while lambda <= opts.lambda_max {
        let v = solve_cumulant(mech, &vec![lambda; d], t, inner_tol)?.final_value().to_vec();
        if let Some(&vi) = v.iter().find(|&&vi| vi > bound + opts.tol) {
            return Err(Error::Solver(format!(
                "ladder iterate {vi} exceeds the dominating bound {bound} at lambda = {lambda}"
            )));
        }
        if let Some(p) = &prev {
            last_diff = v.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if last_diff < opts.tol {
                return Ok(v);
            }
        }
        prev = Some(v);
        lambda *= opts.lambda_factor;
    }
    Err(Error::NotStabilized { lambda: lambda / opts.lambda_factor, last_diff })
}

/// Extinction probability `Q_t(mu, {0}) = exp(-<mu, V̄_t>)`.
pub fn extinction_probability(mech: &BranchingMechanism, mu: &MassVector, t: f64, tol: f64) -> Result<f64> {
    let vbar = vbar_vector(mech, t, tol)?;
    Ok((-mu.pair(&vbar)).exp())
}

/// First-moment operator `pi_t = exp(tM)` as a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    pub t: f64,
    pub p: DMatrix<f64>,
}

impl MomentMatrix {
    /// `pi_t f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.p.nrows())
            .map(|i| (0..self.p.ncols()).map(|j| self.p[(i, j)] * f[j]).sum())
            .collect()
    }

    /// Mean vector of `X_t` started at `mu`: `(<mu, pi_t e_j>)_j`.
    pub fn mean_from(&self, mu: &MassVector) -> Vec<f64> {
        (0..self.p.ncols())
            .map(|j| (0..self.p.nrows()).map(|i| mu[i] * self.p[(i, j)]).sum())
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.p.row_iter().map(|r| r.sum()).collect()
    }
}

pub fn moment_semigroup(mech: &BranchingMechanism, t: f64) -> Result<MomentMatrix> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t must be finite and >= 0, got {t}")));
    }
    let m = mech.moment_generator() * t;
    let mut p = m.exp();
    // exp of a Metzler matrix is entrywise nonnegative.
    p.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(MomentMatrix { t, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{fold_motion, matrix_from_rows, JumpComponent, MotionGenerator};

    fn quad1(b: f64, c: f64) -> BranchingMechanism {
        BranchingMechanism::quadratic(vec![b], vec![c]).unwrap()
    }

    #[test]
    fn zero_initial_condition_stays_zero() {
        let p = solve_cumulant(&quad1(1.0, 1.0), &[0.0], 2.0, 1e-10).unwrap();
        assert!(p.v_values.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn solve_matches_closed_form_examples() {
        let m = quad1(1.0, 1.0);
        let v = solve_cumulant(&m, &[1.0], 1.0, 1e-10).unwrap().final_value()[0];
        let e = (-1.0f64).exp();
        let expected = e / (2.0 - e);
        assert!((v - expected).abs() / expected < 1e-8);
        assert!((expected - 0.22541).abs() < 1e-4);
        let v = solve_cumulant(&m, &[1.0], 2f64.ln(), 1e-10).unwrap().final_value()[0];
        assert!((v - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn path_starts_at_lambda_and_decreases() {
        let p = solve_cumulant(&quad1(0.5, 1.0), &[3.0], 2.0, 1e-10).unwrap();
        assert_eq!(p.t_grid[0], 0.0);
        assert_eq!(p.v_values[0], vec![3.0]);
        for w in p.v_values.windows(2) {
            assert!(w[1][0] <= w[0][0]);
        }
    }

    #[test]
    fn blow_up_reported() {
        let m = quad1(-5.0, 0.0);
        let opts = OdeOptions { ceiling: 1e3, clamp_nonneg: 1, ..Default::default() };
        assert!(matches!(
            solve_cumulant_with(&m, &[1.0], 10.0, &opts),
            Err(Error::BlowUp { .. })
        ));
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_quadratic(1.0, 1.0, 0.0, 1.0), 0.0);
        assert!((closed_form_quadratic(1.0, 1.0, 1.0, 2f64.ln()) - 1.0 / 3.0).abs() < 1e-15);
        assert!((closed_form_quadratic(0.0, 1.0, 2.0, 1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn vbar_scalar_examples() {
        let s = ScalarMechanism::quadratic(1.0, 1.0).unwrap();
        assert!((vbar_scalar(&s, 2f64.ln()).unwrap() - 1.0).abs() < 1e-12);
        let s0 = ScalarMechanism::quadratic(0.0, 1.0).unwrap();
        for t in [0.3, 1.0, 4.0] {
            assert!((vbar_scalar(&s0, t).unwrap() - 1.0 / t).abs() < 1e-12);
        }
        let lin = ScalarMechanism::quadratic(1.0, 0.0).unwrap();
        assert!(matches!(vbar_scalar(&lin, 1.0), Err(Error::GreyConditionFails)));
    }

    #[test]
    fn vbar_root_agrees_with_closed_form_including_supercritical() {
        for (b, c, t) in [(1.0, 1.0, 0.5), (2.0, 0.5, 1.5), (-1.0, 1.0, 0.7), (0.0, 2.0, 3.0)] {
            let s = ScalarMechanism::quadratic(b, c).unwrap();
            let root = vbar_scalar_root(&s, t).unwrap();
            let exact = vbar_quadratic_closed_form(b, c, t).unwrap();
            assert!(((root - exact) / exact).abs() < 1e-8, "{b} {c} {t}: {root} vs {exact}");
        }
    }

    #[test]
    fn vbar_root_for_stable_mechanism() {
        // int_v^inf dz/(b z + k z^{1+a}) = ln(1 + b/(k v^a)) / (a b)
        let (b, a, scale) = (1.0, 0.5, 1.0);
        let k = scale * crate::mechanism::stable_constant(a);
        let s = ScalarMechanism::new(b, 0.0, vec![JumpComponent::StableAxis { axis: 0, alpha: a, scale }]).unwrap();
        for t in [0.2, 1.0, 3.0] {
            let exact = (b / (k * ((a * b * t).exp() - 1.0))).powf(1.0 / a);
            let got = vbar_scalar(&s, t).unwrap();
            assert!(((got - exact) / exact).abs() < 1e-8, "{t}: {got} vs {exact}");
        }
    }

    #[test]
    fn vbar_vector_examples() {
        let v = vbar_vector(&quad1(1.0, 1.0), 2f64.ln(), 1e-8).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-7, "{v:?}");

        let sym = BranchingMechanism::from_rows(
            vec![1.5, 1.5],
            vec![1.0, 1.0],
            &[vec![0.0, 0.5], vec![0.5, 0.0]],
            vec![vec![], vec![]],
        )
        .unwrap();
        let a = vbar_vector(&sym, 0.5, 1e-8).unwrap();
        let b = vbar_vector(&sym, 1.0, 1e-8).unwrap();
        assert!((a[0] - a[1]).abs() < 1e-8);
        assert!(a[0] >= b[0] && a[1] >= b[1]);
    }

    #[test]
    fn vbar_vector_for_stable_branching() {
        let m = BranchingMechanism::new(
            vec![1.0],
            vec![0.0],
            DMatrix::zeros(1, 1),
            vec![vec![JumpComponent::StableAxis { axis: 0, alpha: 0.5, scale: 1.0 }]],
        )
        .unwrap();
        let star = m.dominating_mechanism(DominationGrid::default()).unwrap();
        let v = vbar_vector(&m, 1.0, 1e-7).unwrap();
        let s = vbar_scalar(&star, 1.0).unwrap();
        assert!((v[0] - s).abs() < 1e-6, "{v:?} vs {s}");
    }

    #[test]
    fn moment_semigroup_examples() {
        let m = quad1(1.0, 1.0);
        assert_eq!(moment_semigroup(&m, 0.0).unwrap().p, DMatrix::identity(1, 1));
        let p = moment_semigroup(&m, 1.0).unwrap();
        assert!((p.p[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);

        let base = BranchingMechanism::quadratic(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let motion =
            MotionGenerator::new(matrix_from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap()).unwrap();
        let folded = fold_motion(&base, &motion).unwrap();
        assert_eq!(
            folded.moment_generator(),
            matrix_from_rows(&[vec![-2.0, 1.0], vec![1.0, -3.0]]).unwrap()
        );
        assert_eq!(folded.beta_star(), 1.0);
        let p = moment_semigroup(&folded, 1.0).unwrap();
        let oracle = taylor_exp(&folded.moment_generator());
        assert!((&p.p - &oracle).amax() < 1e-13);
        for r in p.row_sums() {
            assert!(r <= (-1.0f64).exp() + 1e-12);
        }
    }

    #[test]
    fn two_by_two_exponential_closed_form() {
        // symmetric M = [[a, g], [g, a]]: exp = e^a [[cosh g, sinh g], [sinh g, cosh g]]
        let (a, g): (f64, f64) = (-1.5, 0.5);
        let m = BranchingMechanism::from_rows(
            vec![-a, -a],
            vec![0.0, 0.0],
            &[vec![0.0, g], vec![g, 0.0]],
            vec![vec![], vec![]],
        )
        .unwrap();
        let p = moment_semigroup(&m, 1.0).unwrap().p;
        assert!((p[(0, 0)] - a.exp() * g.cosh()).abs() < 1e-14);
        assert!((p[(0, 1)] - a.exp() * g.sinh()).abs() < 1e-14);
    }

    // Taylor series with scaling and squaring.
    fn taylor_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let norm = m.amax() * n as f64;
        let s = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
        let a = m / 2f64.powi(s);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &a / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn immigration_integral_matches_log_formula() {
        // int_0^t beta v*_s(l) ds = (beta/c) log(1 + c q(b,t) l)
        let (b, c, beta, l, t) = (1.0, 1.0, 2.0, 1.5, 1.3);
        let imm = ImmigrationMechanism::new(vec![beta], vec![]).unwrap();
        let (_, w) = cumulant_with_immigration(&quad1(b, c), &imm, &[l], t, 1e-11).unwrap();
        let exact = beta / c * (1.0 + c * q_factor(b, t) * l).ln();
        assert!((w - exact).abs() < 1e-9, "{w} vs {exact}");
    }

    #[test]
    fn stationary_exponent_is_gamma_laplace() {
        // N_inf ~ Gamma(beta/c, c/b): exponent (beta/c) log(1 + c l / b)
        let imm = ImmigrationMechanism::new(vec![2.0], vec![]).unwrap();
        let e = stationary_laplace_exponent(&quad1(1.0, 1.0), &imm, &[0.7], 1e-11).unwrap();
        let exact = 2.0 * 1.7f64.ln();
        assert!((e.value - exact).abs() < 1e-8 + e.tail_bound);
        assert!(e.tail_bound < 1e-7);
    }

    #[test]
    fn stationary_mean_and_w1_tail() {
        let imm = ImmigrationMechanism::new(vec![2.0], vec![]).unwrap();
        let m = quad1(1.0, 1.0);
        assert!((stationary_mean(&m, &imm).unwrap()[0] - 2.0).abs() < 1e-14);
        for t in [0.5f64, 1.0, 2.0] {
            assert!((stationary_w1_tail(&m, &imm, t).unwrap() - 2.0 * (-t).exp()).abs() < 1e-13);
        }
        assert!(matches!(stationary_mean(&quad1(-1.0, 1.0), &imm), Err(Error::Supercritical { .. })));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let p = solve_cumulant(&quad1(1.0, 1.0), &[1.0], 0.5, 1e-8).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,v_1\n0,1\n"));
        assert_eq!(text.lines().count(), p.t_grid.len() + 1);
    }
}
