//! Branching and immigration mechanisms on a finite type space.
//!
//! A state is a [`MassVector`]: the mass carried by each of `d` types. The
//! branching mechanism of type `i` is
//!
//! ```text
//! phi_i(l) = b_i l_i + c_i l_i^2 - <eta_i, l> + int (e^{-<l,u>} - 1 + l_i u_i) H_i(du)
//! ```
//!
//! where every `H_i` is a finite mixture of [`JumpComponent`]s with closed-form
//! Laplace integrals. The immigration mechanism is
//! `psi(l) = <beta, l> + int (1 - e^{-<l,u>}) nu(du)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Nonnegative mass per type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MassVector(Vec<f64>);

impl MassVector {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::InvalidParameter("mass vector must have d >= 1".into()));
        }
        if let Some(&m) = masses.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::NegativeInput { what: "mass vector", value: m });
        }
        Ok(Self(masses))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    /// Wraps a vector whose entries are known to be nonnegative; small negative
    /// round-off is clamped.
    pub(crate) fn from_clamped(mut masses: Vec<f64>) -> Self {
        for m in &mut masses {
            if *m < 0.0 {
                *m = 0.0;
            }
        }
        Self(masses)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Total mass `<mu, 1>`.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&m| m == 0.0)
    }

    /// `<mu, f>`.
    pub fn pair(&self, f: &[f64]) -> f64 {
        self.0.iter().zip(f).map(|(m, x)| m * x).sum()
    }

    /// Total-variation norm of the difference, the l1 distance of the vectors.
    pub fn var_distance(&self, other: &MassVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn plus(&self, other: &MassVector) -> MassVector {
        MassVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl TryFrom<Vec<f64>> for MassVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MassVector::new(v)
    }
}

impl From<MassVector> for Vec<f64> {
    fn from(m: MassVector) -> Vec<f64> {
        m.0
    }
}

impl std::ops::Index<usize> for MassVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `Gamma(1 - alpha) / (alpha (1 + alpha))`, the value of
/// `int_0^inf (e^{-u} - 1 + u) u^{-2-alpha} du`.
pub fn stable_constant(alpha: f64) -> f64 {
    gamma(1.0 - alpha) / (alpha * (1.0 + alpha))
}

/// One parametric piece of a jump measure on `R_+^d \ {0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpComponent {
    /// `weight * delta_u`.
    PointMass { u: Vec<f64>, weight: f64 },
    /// Total mass `rate`, exponential profile with the given mean, carried by
    /// the half-axis `axis`.
    ExponentialAxis { axis: usize, mean: f64, rate: f64 },
    /// Density `scale * s^{-2-alpha}` on the half-axis `axis`.
    StableAxis { axis: usize, alpha: f64, scale: f64 },
}

impl JumpComponent {
    /// Checks the component against dimension `d`. `owner` is the type whose
    /// branching jump measure carries it, or `None` for an immigration measure.
    pub fn validate(&self, d: usize, owner: Option<usize>) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            JumpComponent::PointMass { u, weight } => {
                if u.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: u.len() });
                }
                if u.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return bad(format!("point-mass atom must be nonnegative and finite: {u:?}"));
                }
                if u.iter().all(|&x| x == 0.0) {
                    return bad("point-mass atom must be nonzero".into());
                }
                if !(weight.is_finite() && *weight > 0.0) {
                    return bad(format!("point-mass weight must be positive: {weight}"));
                }
            }
            JumpComponent::ExponentialAxis { axis, mean, rate } => {
                if *axis >= d {
                    return bad(format!("axis {axis} out of range for d = {d}"));
                }
                if !(mean.is_finite() && *mean > 0.0) || !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("exponential component needs mean > 0, rate > 0 (got {mean}, {rate})"));
                }
            }
            JumpComponent::StableAxis { axis, alpha, scale } => {
                if *axis >= d {
                    return bad(format!("axis {axis} out of range for d = {d}"));
                }
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return bad(format!("stable index requires alpha in (0,1), got {alpha}"));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return bad(format!("stable scale must be positive: {scale}"));
                }
                match owner {
                    Some(i) if i == *axis => {}
                    Some(i) => {
                        return Err(Error::Divergent(format!(
                            "stable component on axis {axis} in the jump measure of type {i}: off-axis first moment is infinite"
                        )))
                    }
                    None => {
                        return Err(Error::Divergent(
                            "stable component in an immigration measure has infinite first moment".into(),
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// `int (e^{-<l,u>} - 1 + l_owner u_owner) dH`.
    fn branching_integral(&self, lambda: &[f64], owner: usize) -> f64 {
        match self {
            JumpComponent::PointMass { u, weight } => {
                let dot: f64 = lambda.iter().zip(u).map(|(l, x)| l * x).sum();
                weight * ((-dot).exp_m1() + lambda[owner] * u[owner])
            }
            JumpComponent::ExponentialAxis { axis, mean, rate } => {
                let x = mean * lambda[*axis];
                if *axis == owner {
                    rate * x * (x / (1.0 + x))
                } else {
                    -rate * x / (1.0 + x)
                }
            }
            JumpComponent::StableAxis { axis, alpha, scale } => {
                debug_assert_eq!(*axis, owner);
                scale * lambda[*axis].powf(1.0 + alpha) * stable_constant(*alpha)
            }
        }
    }

    /// `int (e^{-z u_owner} - 1 + z u_owner) dH`.
    fn local_integral(&self, owner: usize, z: f64) -> f64 {
        match self {
            JumpComponent::PointMass { u, weight } => {
                let x = z * u[owner];
                weight * ((-x).exp_m1() + x)
            }
            JumpComponent::ExponentialAxis { axis, mean, rate } if *axis == owner => {
                let x = mean * z;
                rate * x * (x / (1.0 + x))
            }
            JumpComponent::ExponentialAxis { .. } => 0.0,
            JumpComponent::StableAxis { axis, alpha, scale } if *axis == owner => {
                scale * z.powf(1.0 + alpha) * stable_constant(*alpha)
            }
            JumpComponent::StableAxis { .. } => 0.0,
        }
    }

    /// `int (1 - e^{-<l,u>}) dnu`.
    fn immigration_integral(&self, lambda: &[f64]) -> f64 {
        match self {
            JumpComponent::PointMass { u, weight } => {
                let dot: f64 = lambda.iter().zip(u).map(|(l, x)| l * x).sum();
                -weight * (-dot).exp_m1()
            }
            JumpComponent::ExponentialAxis { axis, mean, rate } => {
                let x = mean * lambda[*axis];
                rate * x / (1.0 + x)
            }
            JumpComponent::StableAxis { .. } => f64::INFINITY,
        }
    }

    /// `int u_j dH`. Infinite for a stable component on its own axis.
    fn first_moment(&self, j: usize) -> f64 {
        match self {
            JumpComponent::PointMass { u, weight } => weight * u[j],
            JumpComponent::ExponentialAxis { axis, mean, rate } => {
                if *axis == j {
                    rate * mean
                } else {
                    0.0
                }
            }
            JumpComponent::StableAxis { axis, .. } => {
                if *axis == j {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    /// Intensity of jumps retained by the simulation scheme. Finite-activity
    /// components are kept whole; stable components are cut at `eps`.
    pub(crate) fn simulated_rate(&self, eps: f64) -> f64 {
        match self {
            JumpComponent::PointMass { weight, .. } => *weight,
            JumpComponent::ExponentialAxis { rate, .. } => *rate,
            JumpComponent::StableAxis { alpha, scale, .. } => {
                scale * eps.powf(-1.0 - alpha) / (1.0 + alpha)
            }
        }
    }

    /// First moment of the retained jumps along `j`.
    pub(crate) fn simulated_first_moment(&self, j: usize, eps: f64) -> f64 {
        match self {
            JumpComponent::StableAxis { axis, alpha, scale } if *axis == j => {
                scale * eps.powf(-alpha) / alpha
            }
            other => other.first_moment(j),
        }
    }

    /// Second moment of the discarded jumps (those below `eps`).
    pub(crate) fn discarded_second_moment(&self, eps: f64) -> f64 {
        match self {
            JumpComponent::StableAxis { alpha, scale, .. } => {
                scale * eps.powf(1.0 - alpha) / (1.0 - alpha)
            }
            _ => 0.0,
        }
    }

    /// Draws one retained jump, adding it into `target`.
    pub(crate) fn sample_into<R: Rng + ?Sized>(&self, eps: f64, target: &mut [f64], rng: &mut R) {
        match self {
            JumpComponent::PointMass { u, .. } => {
                for (t, x) in target.iter_mut().zip(u) {
                    *t += x;
                }
            }
            JumpComponent::ExponentialAxis { axis, mean, .. } => {
                let e: f64 = Exp::new(1.0).expect("unit rate").sample(rng);
                target[*axis] += mean * e;
            }
            JumpComponent::StableAxis { axis, alpha, .. } => {
                let u: f64 = rng.random::<f64>();
                // 1 - U is in (0, 1].
                target[*axis] += eps * (1.0 - u).powf(-1.0 / (1.0 + alpha));
            }
        }
    }
}

/// Generator of the finite-state spatial motion.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionGenerator {
    rates: DMatrix<f64>,
}

impl MotionGenerator {
    pub fn new(rates: DMatrix<f64>) -> Result<Self> {
        let d = rates.nrows();
        if rates.ncols() != d || d == 0 {
            return Err(Error::DimensionMismatch { expected: d, got: rates.ncols() });
        }
        for i in 0..d {
            let mut off = 0.0;
            for j in 0..d {
                let a = rates[(i, j)];
                if !a.is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite motion rate at ({i},{j})")));
                }
                if i != j {
                    if a < 0.0 {
                        return Err(Error::NegativeInput { what: "off-diagonal motion rate", value: a });
                    }
                    off += a;
                }
            }
            let kill = -rates[(i, i)] - off;
            if kill < -1e-12 * off.max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "motion row {i} sums to {} > 0", -kill
                )));
            }
        }
        Ok(Self { rates })
    }

    /// Pure jump motion with off-diagonal rates `jump_rates` plus killing.
    pub fn from_jump_rates(jump_rates: DMatrix<f64>, kill: &[f64]) -> Result<Self> {
        let d = jump_rates.nrows();
        if kill.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: kill.len() });
        }
        if let Some(&k) = kill.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return Err(Error::NegativeInput { what: "kill rate", value: k });
        }
        let mut rates = jump_rates;
        for i in 0..d {
            rates[(i, i)] = 0.0;
            let off: f64 = rates.row(i).iter().sum();
            rates[(i, i)] = -off - kill[i];
        }
        Self::new(rates)
    }

    pub fn identity(d: usize) -> Self {
        Self { rates: DMatrix::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }
}

/// Multi-type branching mechanism `(b, c, eta, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingMechanism {
    b: Vec<f64>,
    c: Vec<f64>,
    eta: DMatrix<f64>,
    jumps: Vec<Vec<JumpComponent>>,
}

impl BranchingMechanism {
    pub fn new(
        b: Vec<f64>,
        c: Vec<f64>,
        eta: DMatrix<f64>,
        jumps: Vec<Vec<JumpComponent>>,
    ) -> Result<Self> {
        let d = b.len();
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        for (len, _) in [(c.len(), "c"), (eta.nrows(), "eta"), (eta.ncols(), "eta"), (jumps.len(), "jumps")] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, got: len });
            }
        }
        if let Some(&x) = b.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite drift b: {x}")));
        }
        if let Some(&x) = c.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::NegativeInput { what: "quadratic coefficient c", value: x });
        }
        for i in 0..d {
            for j in 0..d {
                let e = eta[(i, j)];
                if i == j && e != 0.0 {
                    return Err(Error::InvalidParameter(format!("eta must have zero diagonal, eta[{i}][{i}] = {e}")));
                }
                if !(e.is_finite() && e >= 0.0) {
                    return Err(Error::NegativeInput { what: "nonlocal drift eta", value: e });
                }
            }
        }
        for (i, comps) in jumps.iter().enumerate() {
            for comp in comps {
                comp.validate(d, Some(i))?;
            }
        }
        Ok(Self { b, c, eta, jumps })
    }

    /// Local mechanism without jumps: `phi_i(l) = b_i l_i + c_i l_i^2`.
    pub fn quadratic(b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let d = b.len();
        Self::new(b, c, DMatrix::zeros(d, d), vec![Vec::new(); d])
    }

    pub fn from_rows(
        b: Vec<f64>,
        c: Vec<f64>,
        eta: &[Vec<f64>],
        jumps: Vec<Vec<JumpComponent>>,
    ) -> Result<Self> {
        Self::new(b, c, matrix_from_rows(eta)?, jumps)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
    pub fn b(&self) -> &[f64] {
        &self.b
    }
    pub fn c(&self) -> &[f64] {
        &self.c
    }
    pub fn eta(&self) -> &DMatrix<f64> {
        &self.eta
    }
    pub fn jumps(&self) -> &[Vec<JumpComponent>] {
        &self.jumps
    }

    pub fn has_jumps(&self) -> bool {
        self.jumps.iter().any(|j| !j.is_empty())
    }

    /// Evaluates `(phi_1(l), ..., phi_d(l))`.
    pub fn phi(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        let mut out = vec![0.0; self.dim()];
        self.phi_into(lambda, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation for solver inner loops; negative entries of
    /// `lambda` are read as 0.
    pub(crate) fn phi_into(&self, lambda: &[f64], out: &mut [f64]) {
        if lambda.iter().any(|&l| l < 0.0) {
            let clamped: Vec<f64> = lambda.iter().map(|l| l.max(0.0)).collect();
            return self.phi_into(&clamped, out);
        }
        let d = self.dim();
        for i in 0..d {
            let li = lambda[i];
            let mut v = self.b[i] * li + self.c[i] * li * li;
            for j in 0..d {
                if j != i {
                    v -= self.eta[(i, j)] * lambda[j];
                }
            }
            for comp in &self.jumps[i] {
                v += comp.branching_integral(lambda, i);
            }
            out[i] = v;
        }
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: lambda.len() });
        }
        if let Some(&l) = lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::NegativeInput { what: "lambda", value: l });
        }
        Ok(())
    }

    /// `gamma_ij = eta_ij + int 1_{i != j} u_j H_i(du)`.
    pub fn gamma_matrix(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut g = self.eta.clone();
        for i in 0..d {
            for comp in &self.jumps[i] {
                for j in (0..d).filter(|&j| j != i) {
                    let m = comp.first_moment(j);
                    if !m.is_finite() {
                        return Err(Error::Divergent(format!("off-axis moment gamma[{i}][{j}]")));
                    }
                    g[(i, j)] += m;
                }
            }
        }
        Ok(g)
    }

    /// Per-type linear decay `b_i - sum_j gamma_ij`.
    pub fn net_decay_rates(&self) -> Vec<f64> {
        let g = self.gamma_matrix().expect("validated mechanisms have finite off-axis moments");
        (0..self.dim()).map(|i| self.b[i] - g.row(i).sum()).collect()
    }

    /// `beta* = min_i (b_i - gamma_i(1))`.
    pub fn beta_star(&self) -> f64 {
        self.net_decay_rates().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Generator `M = -diag(b) + gamma` of the first-moment semigroup.
    pub fn moment_generator(&self) -> DMatrix<f64> {
        let mut m = self.gamma_matrix().expect("validated mechanisms have finite off-axis moments");
        for i in 0..self.dim() {
            m[(i, i)] -= self.b[i];
        }
        m
    }

    /// Local projection `phi_1(i, z)`.
    pub fn local_projection(&self, i: usize, z: f64) -> Result<f64> {
        if i >= self.dim() {
            return Err(Error::InvalidParameter(format!("type index {i} out of range")));
        }
        if !(z.is_finite() && z >= 0.0) {
            return Err(Error::NegativeInput { what: "z", value: z });
        }
        let lin = self.net_decay_rates()[i];
        Ok(self.local_projection_with(i, z, lin))
    }

    fn local_projection_with(&self, i: usize, z: f64, linear: f64) -> f64 {
        let jumps: f64 = self.jumps[i].iter().map(|c| c.local_integral(i, z)).sum();
        linear * z + self.c[i] * z * z + jumps
    }

    /// Builds the spatially independent minorant of the local projections and
    /// verifies it on `grid`.
    pub fn dominating_mechanism(&self, grid: DominationGrid) -> Result<ScalarMechanism> {
        let d = self.dim();
        let b_star = self.beta_star();
        let c_star = self.c.iter().copied().fold(f64::INFINITY, f64::min);

        // Stable parts common to every type on its own axis.
        let own_stable = |i: usize| -> Vec<(f64, f64)> {
            self.jumps[i]
                .iter()
                .filter_map(|c| match c {
                    JumpComponent::StableAxis { axis, alpha, scale } if *axis == i => Some((*alpha, *scale)),
                    _ => None,
                })
                .collect()
        };
        let mut candidates: Vec<f64> = own_stable(0).iter().map(|p| p.0).collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        let mut m_star = Vec::new();
        for alpha in candidates {
            let scales: Vec<f64> = (0..d)
                .map(|i| own_stable(i).iter().filter(|p| p.0 == alpha).map(|p| p.1).sum())
                .collect();
            if scales.iter().all(|&a| a > 0.0) {
                let a_star = scales.into_iter().fold(f64::INFINITY, f64::min);
                m_star.push(JumpComponent::StableAxis { axis: 0, alpha, scale: a_star });
                break;
            }
        }
        let phi_star = ScalarMechanism::new(b_star, c_star, m_star)?;

        let lin = self.net_decay_rates();
        let steps = (grid.z_max / grid.step).round() as usize;
        for k in 0..=steps {
            let z = k as f64 * grid.step;
            let lower = phi_star.phi(z);
            for i in 0..d {
                let local = self.local_projection_with(i, z, lin[i]);
                if local < lower - 1e-12 * lower.abs().max(1.0) {
                    return Err(Error::DominationViolated { type_index: i, z, local, minorant: lower });
                }
            }
        }
        Ok(phi_star)
    }
}

/// Grid on which domination of the local projections is verified.
#[derive(Debug, Clone, Copy)]
pub struct DominationGrid {
    pub z_max: f64,
    pub step: f64,
}

impl Default for DominationGrid {
    fn default() -> Self {
        Self { z_max: 50.0, step: 0.1 }
    }
}

/// Folds the motion generator into the mechanism:
/// `b_i -> b_i - A_ii`, `eta_ij -> eta_ij + A_ij` for `j != i`.
pub fn fold_motion(mech: &BranchingMechanism, motion: &MotionGenerator) -> Result<BranchingMechanism> {
    let d = mech.dim();
    if motion.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: motion.dim() });
    }
    let a = motion.rates();
    let b = (0..d).map(|i| mech.b[i] - a[(i, i)]).collect();
    let mut eta = mech.eta.clone();
    for i in 0..d {
        for j in (0..d).filter(|&j| j != i) {
            eta[(i, j)] += a[(i, j)];
        }
    }
    BranchingMechanism::new(b, mech.c.clone(), eta, mech.jumps.clone())
}

/// Spatially independent (one-type) branching mechanism
/// `phi*(z) = b* z + c* z^2 + int (e^{-zu} - 1 + zu) m*(du)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMechanism {
    pub b_star: f64,
    pub c_star: f64,
    pub m_star: Vec<JumpComponent>,
}

impl ScalarMechanism {
    pub fn new(b_star: f64, c_star: f64, m_star: Vec<JumpComponent>) -> Result<Self> {
        if !b_star.is_finite() {
            return Err(Error::InvalidParameter(format!("non-finite b*: {b_star}")));
        }
        if !(c_star.is_finite() && c_star >= 0.0) {
            return Err(Error::NegativeInput { what: "c*", value: c_star });
        }
        for comp in &m_star {
            comp.validate(1, Some(0))?;
        }
        Ok(Self { b_star, c_star, m_star })
    }

    pub fn quadratic(b_star: f64, c_star: f64) -> Result<Self> {
        Self::new(b_star, c_star, Vec::new())
    }

    pub fn phi(&self, z: f64) -> f64 {
        let jumps: f64 = self.m_star.iter().map(|c| c.local_integral(0, z)).sum();
        self.b_star * z + self.c_star * z * z + jumps
    }

    pub fn has_stable_part(&self) -> bool {
        self.m_star.iter().any(|c| matches!(c, JumpComponent::StableAxis { .. }))
    }

    pub fn is_quadratic(&self) -> bool {
        self.m_star.is_empty()
    }

    /// Grey's condition: `phi*` is eventually positive and `1/phi*` is
    /// integrable at infinity. Every admissible jump mixture grows at most
    /// linearly except the stable part, so the condition holds iff there is a
    /// superlinear term.
    pub fn grey_condition(&self) -> bool {
        self.c_star > 0.0 || self.has_stable_part()
    }

    /// Numerical value of `int_{z0}^inf dz / phi*(z)`, computed with the
    /// substitution `z = z0 e^y`. Errors when `phi*` is not positive on
    /// `[z0, inf)` or the tail does not converge.
    pub fn grey_tail_integral(&self, z0: f64) -> Result<f64> {
        if !(z0 > 0.0) {
            return Err(Error::InvalidParameter(format!("z0 must be positive, got {z0}")));
        }
        let bad = std::cell::Cell::new(false);
        let integrand = |y: f64| {
            let z = z0 * y.exp();
            let p = self.phi(z);
            if !(z.is_finite() && p > 0.0) {
                bad.set(true);
                return 0.0;
            }
            z / p
        };
        let r = crate::numerics::quad::integrate_semi_infinite(
            integrand,
            0.0,
            crate::numerics::quad::QuadOptions { abs_tol: 1e-15, rel_tol: 1e-13, max_intervals: 4000 },
            1e-15,
        )?;
        if bad.get() {
            return Err(Error::Divergent(format!("1/phi* is not integrable on [{z0}, inf)")));
        }
        Ok(r.value)
    }

    /// One-type branching mechanism with the same `phi`.
    pub fn as_branching(&self) -> BranchingMechanism {
        BranchingMechanism::new(
            vec![self.b_star],
            vec![self.c_star],
            DMatrix::zeros(1, 1),
            vec![self.m_star.clone()],
        )
        .expect("scalar mechanism is a valid one-type mechanism")
    }
}

/// Immigration mechanism `(beta, nu)` with `int <u,1> nu(du) < inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmigrationMechanism {
    beta: Vec<f64>,
    nu: Vec<JumpComponent>,
}

impl ImmigrationMechanism {
    pub fn new(beta: Vec<f64>, nu: Vec<JumpComponent>) -> Result<Self> {
        let d = beta.len();
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if let Some(&x) = beta.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::NegativeInput { what: "immigration rate beta", value: x });
        }
        for comp in &nu {
            comp.validate(d, None)?;
        }
        Ok(Self { beta, nu })
    }

    pub fn none(d: usize) -> Self {
        Self { beta: vec![0.0; d], nu: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
    pub fn nu(&self) -> &[JumpComponent] {
        &self.nu
    }

    pub fn is_zero(&self) -> bool {
        self.nu.is_empty() && self.beta.iter().all(|&b| b == 0.0)
    }

    /// `psi(l) = <beta, l> + int (1 - e^{-<l,u>}) nu(du)`.
    pub fn psi(&self, lambda: &[f64]) -> Result<f64> {
        if lambda.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: lambda.len() });
        }
        if let Some(&l) = lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::NegativeInput { what: "lambda", value: l });
        }
        Ok(self.psi_unchecked(lambda))
    }

    pub(crate) fn psi_unchecked(&self, lambda: &[f64]) -> f64 {
        if lambda.iter().any(|&l| l < 0.0) {
            let clamped: Vec<f64> = lambda.iter().map(|l| l.max(0.0)).collect();
            return self.psi_unchecked(&clamped);
        }
        let lin: f64 = self.beta.iter().zip(lambda).map(|(b, l)| b * l).sum();
        lin + self.nu.iter().map(|c| c.immigration_integral(lambda)).sum::<f64>()
    }

    /// Mean immigration rate per type: `beta + int u nu(du)`.
    pub fn mean_rate(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.beta[j] + self.nu.iter().map(|c| c.first_moment(j)).sum::<f64>())
            .collect()
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: r.len() });
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}
