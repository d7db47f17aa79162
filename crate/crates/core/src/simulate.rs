//! Samplers for transition laws `Q_t(mu, .)`, immigration laws `N_t` and
//! immigration-process transitions.
//!
//! One-type mechanisms without jumps are sampled exactly. Everything else
//! goes through a time-stepping scheme: per step a half step of the exact
//! quadratic branching update for every type, a half step of the linear
//! drift, the compound Poisson jumps, and the two half steps in reverse order.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::cumulant::stationary_mean;
use crate::error::{Error, Result};
use crate::mc::run_batch;
use crate::mechanism::{BranchingMechanism, ImmigrationMechanism, JumpComponent, MassVector};
use crate::numerics::q_factor;

/// Monte Carlo and discretisation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_samples: usize,
    pub dt: f64,
    /// Stable jumps below this size are replaced by their compensator and a
    /// matching Gaussian term.
    pub epsilon: f64,
    pub seed: u64,
    #[serde(default = "default_ceiling")]
    pub ceiling: f64,
}

fn default_ceiling() -> f64 {
    1e12
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n_samples: 10_000, dt: 1e-3, epsilon: 1e-3, seed: 0, ceiling: default_ceiling() }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.ceiling > 0.0) {
            return Err(Error::InvalidParameter("ceiling must be positive".into()));
        }
        Ok(())
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

fn gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, scale).expect("positive shape and scale").sample(rng)
}

/// Unchecked exact quadratic branching step.
fn cb_step<R: Rng + ?Sized>(x: f64, b: f64, c: f64, t: f64, rng: &mut R) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = (-b * t).exp();
    if c == 0.0 {
        return x * a;
    }
    let theta = c * q_factor(b, t);
    let k = poisson(x * a / theta, rng);
    if k == 0 {
        0.0
    } else {
        gamma(k as f64, theta, rng)
    }
}

/// Exact sample of the one-type quadratic CB process `phi(z) = b z + c z^2`
/// at time `t` from `x`: a Poisson(`x a / theta`) number of exponential
/// clusters of mean `theta`, where `a = e^{-bt}`, `theta = c q(b,t)`. With
/// `c = 0` the process is deterministic.
pub fn sample_cb_quadratic<R: Rng + ?Sized>(x: f64, b: f64, c: f64, t: f64, rng: &mut R) -> Result<f64> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::NegativeInput { what: "initial mass", value: x });
    }
    if !(c >= 0.0 && c.is_finite()) || !b.is_finite() {
        return Err(Error::InvalidParameter(format!("need finite b and c >= 0, got b = {b}, c = {c}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(x);
    }
    Ok(cb_step(x, b, c, t, rng))
}

#[derive(Debug, Clone)]
struct RetainedJump {
    component: JumpComponent,
    rate: f64,
}

#[derive(Debug, Clone)]
enum Kind {
    /// One type, no branching jumps.
    Exact { b: f64, c: f64 },
    Scheme { b_eff: Vec<f64>, c_eff: Vec<f64>, jumps: Vec<Vec<RetainedJump>> },
}

/// A sampler bound to a (motion-folded) mechanism, an immigration mechanism
/// and a configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    mech: BranchingMechanism,
    imm: ImmigrationMechanism,
    imm_jumps: Vec<RetainedJump>,
    cfg: SimConfig,
    kind: Kind,
}

impl Simulator {
    pub fn new(mech: &BranchingMechanism, imm: &ImmigrationMechanism, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let d = mech.dim();
        if imm.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: imm.dim() });
        }
        let eps = cfg.epsilon;
        let kind = if d == 1 && !mech.has_jumps() {
            Kind::Exact { b: mech.b()[0], c: mech.c()[0] }
        } else {
            let mut b_eff = mech.b().to_vec();
            let mut c_eff = mech.c().to_vec();
            let mut jumps = Vec::with_capacity(d);
            for (i, comps) in mech.jumps().iter().enumerate() {
                let mut kept = Vec::new();
                for comp in comps {
                    if matches!(comp, JumpComponent::StableAxis { .. }) && eps <= 0.0 {
                        return Err(Error::InvalidParameter(
                            "epsilon must be positive for stable jump components".into(),
                        ));
                    }
                    b_eff[i] += comp.simulated_first_moment(i, eps);
                    c_eff[i] += 0.5 * comp.discarded_second_moment(eps);
                    kept.push(RetainedJump { component: comp.clone(), rate: comp.simulated_rate(eps) });
                }
                jumps.push(kept);
            }
            Kind::Scheme { b_eff, c_eff, jumps }
        };
        let imm_jumps = imm
            .nu()
            .iter()
            .map(|c| RetainedJump { component: c.clone(), rate: c.simulated_rate(eps) })
            .collect();
        Ok(Self { mech: mech.clone(), imm: imm.clone(), imm_jumps, cfg: *cfg, kind })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }
    pub fn mechanism(&self) -> &BranchingMechanism {
        &self.mech
    }
    pub fn immigration(&self) -> &ImmigrationMechanism {
        &self.imm
    }
    pub fn is_exact(&self) -> bool {
        matches!(self.kind, Kind::Exact { .. })
    }

    fn check_mu(&self, mu: &MassVector) -> Result<()> {
        if mu.dim() != self.mech.dim() {
            return Err(Error::DimensionMismatch { expected: self.mech.dim(), got: mu.dim() });
        }
        Ok(())
    }

    /// Draw from `Q_t(mu, .)`.
    pub fn transition<R: Rng + ?Sized>(&self, mu: &MassVector, t: f64, rng: &mut R) -> Result<MassVector> {
        Ok(self.path(mu, &[t], false, rng)?.pop().expect("one time"))
    }

    /// Draw from `N_t`.
    pub fn immigration_law<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<MassVector> {
        let zero = MassVector::zeros(self.mech.dim());
        Ok(self.path(&zero, &[t], true, rng)?.pop().expect("one time"))
    }

    /// Draw from `Q^N_t(mu, .) = Q_t(mu, .) * N_t`.
    pub fn cbi_transition<R: Rng + ?Sized>(&self, mu: &MassVector, t: f64, rng: &mut R) -> Result<MassVector> {
        Ok(self.path(mu, &[t], true, rng)?.pop().expect("one time"))
    }

    /// States of one trajectory at the increasing `times`, with or without
    /// immigration.
    pub fn path<R: Rng + ?Sized>(
        &self,
        mu: &MassVector,
        times: &[f64],
        immigrate: bool,
        rng: &mut R,
    ) -> Result<Vec<MassVector>> {
        self.check_mu(mu)?;
        let mut x = mu.as_slice().to_vec();
        let mut out = Vec::with_capacity(times.len());
        let mut t_prev = 0.0;
        for &t in times {
            if !(t >= t_prev && t.is_finite()) {
                return Err(Error::InvalidParameter("times must be finite, nonnegative and increasing".into()));
            }
            self.advance(&mut x, t - t_prev, immigrate, rng)?;
            if let Some(&m) = x.iter().find(|m| !(**m <= self.cfg.ceiling)) {
                return Err(Error::BlowUp { what: "sampled mass", ceiling: self.cfg.ceiling, t: if m.is_finite() { t } else { f64::NAN } });
            }
            out.push(MassVector::from_clamped(x.clone()));
            t_prev = t;
        }
        Ok(out)
    }

    fn advance<R: Rng + ?Sized>(&self, x: &mut [f64], t: f64, immigrate: bool, rng: &mut R) -> Result<()> {
        if t == 0.0 {
            return Ok(());
        }
        let immigrate = immigrate && !self.imm.is_zero();
        match &self.kind {
            Kind::Exact { b, c } => {
                x[0] = cb_step(x[0], *b, *c, t, rng);
                if immigrate {
                    x[0] += self.exact_immigration(*b, *c, t, rng);
                }
                Ok(())
            }
            Kind::Scheme { b_eff, c_eff, jumps } => {
                let steps = (t / self.cfg.dt).ceil().max(1.0) as usize;
                let h = t / steps as f64;
                let mut scratch = vec![0.0; x.len()];
                for k in 0..steps {
                    if !immigrate && x.iter().all(|&m| m == 0.0) {
                        break;
                    }
                    self.step(x, h, immigrate, b_eff, c_eff, jumps, &mut scratch, rng);
                    if let Some(&m) = x.iter().find(|m| !(**m <= self.cfg.ceiling)) {
                        return Err(Error::BlowUp {
                            what: "sampled mass",
                            ceiling: self.cfg.ceiling,
                            t: if m.is_finite() { (k + 1) as f64 * h } else { f64::NAN },
                        });
                    }
                }
                Ok(())
            }
        }
    }

    /// `N_t` for the one-type quadratic mechanism: a Gamma variable for the
    /// continuous part plus Poisson arrivals of `nu`, each evolved exactly.
    fn exact_immigration<R: Rng + ?Sized>(&self, b: f64, c: f64, t: f64, rng: &mut R) -> f64 {
        let beta = self.imm.beta()[0];
        let mut total = 0.0;
        if beta > 0.0 {
            total += if c > 0.0 { gamma(beta / c, c * q_factor(b, t), rng) } else { beta * q_factor(b, t) };
        }
        for jump in &self.imm_jumps {
            let count = poisson(jump.rate * t, rng);
            for _ in 0..count {
                let mut u = [0.0];
                jump.component.sample_into(self.cfg.epsilon, &mut u, rng);
                let s: f64 = rng.random::<f64>() * t;
                total += cb_step(u[0], b, c, t - s, rng);
            }
        }
        total
    }

    #[allow(clippy::too_many_arguments)]
    fn step<R: Rng + ?Sized>(
        &self,
        x: &mut [f64],
        h: f64,
        immigrate: bool,
        b_eff: &[f64],
        c_eff: &[f64],
        jumps: &[Vec<RetainedJump>],
        scratch: &mut [f64],
        rng: &mut R,
    ) {
        let d = x.len();
        for i in 0..d {
            x[i] = cb_step(x[i], b_eff[i], c_eff[i], 0.5 * h, rng);
        }
        self.drift(x, 0.5 * h, immigrate, scratch);

        // Jumps are applied one at a time so that mass created inside the
        // step jumps as well; with frozen intensities the compensating decay
        // in `b_eff` overshoots by O((b_eff h)^2) per step.
        let own: Vec<f64> = jumps.iter().map(|js| js.iter().map(|j| j.rate).sum()).collect();
        let influx: f64 = if immigrate { self.imm_jumps.iter().map(|j| j.rate).sum() } else { 0.0 };
        let mut clock = 0.0;
        loop {
            let total: f64 = x.iter().zip(&own).map(|(m, r)| m * r).sum::<f64>() + influx;
            if !(total > 0.0) || !total.is_finite() || x.iter().any(|m| !(*m <= self.cfg.ceiling)) {
                break;
            }
            clock += rng.sample::<f64, _>(Exp1) / total;
            if clock > h {
                break;
            }
            let mut pick = rng.random::<f64>() * total;
            let mut source: &[RetainedJump] = &self.imm_jumps;
            for i in 0..d {
                let w = x[i] * own[i];
                if pick < w {
                    source = &jumps[i];
                    pick /= x[i];
                    break;
                }
                pick -= w;
            }
            let chosen = source
                .iter()
                .find(|j| {
                    if pick < j.rate {
                        true
                    } else {
                        pick -= j.rate;
                        false
                    }
                })
                .or_else(|| source.iter().rev().find(|j| j.rate > 0.0));
            if let Some(j) = chosen {
                j.component.sample_into(self.cfg.epsilon, x, rng);
            }
        }

        self.drift(x, 0.5 * h, immigrate, scratch);
        for i in 0..d {
            x[i] = cb_step(x[i], b_eff[i], c_eff[i], 0.5 * h, rng);
        }
    }

    /// Nonlocal transfer `x_j += h sum_i eta_ij x_i` plus influx `beta h`.
    fn drift(&self, x: &mut [f64], h: f64, immigrate: bool, scratch: &mut [f64]) {
        let d = x.len();
        let eta = self.mech.eta();
        for j in 0..d {
            let mut inflow = 0.0;
            for i in 0..d {
                if i != j {
                    inflow += eta[(i, j)] * x[i];
                }
            }
            if immigrate {
                inflow += self.imm.beta()[j];
            }
            scratch[j] = x[j] + h * inflow;
        }
        x.copy_from_slice(scratch);
    }

    /// Draw from the stationary law `N_inf`. Exact for the one-type quadratic
    /// mechanism with continuous immigration; otherwise `N_T` at a horizon
    /// where the remaining mean influx is below `1e-3` of the stationary mean.
    pub fn stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MassVector> {
        let beta_star = self.mech.beta_star();
        if !(beta_star > 0.0) {
            return Err(Error::Supercritical { beta_star });
        }
        if let Kind::Exact { b, c } = self.kind {
            if self.imm_jumps.is_empty() && c > 0.0 {
                let beta = self.imm.beta()[0];
                let v = if beta > 0.0 { gamma(beta / c, c / b, rng) } else { 0.0 };
                return Ok(MassVector::from_clamped(vec![v]));
            }
        }
        let horizon = self.stationary_horizon()?;
        self.immigration_law(horizon, rng)
    }

    /// Horizon used by the approximate stationary sampler.
    pub fn stationary_horizon(&self) -> Result<f64> {
        let beta_star = self.mech.beta_star();
        if !(beta_star > 0.0) {
            return Err(Error::Supercritical { beta_star });
        }
        let total: f64 = stationary_mean(&self.mech, &self.imm)?.iter().sum();
        let rate: f64 = self.imm.mean_rate().iter().sum();
        if total <= 0.0 || rate <= 0.0 {
            return Ok(0.0);
        }
        Ok(((rate / (beta_star * 1e-3 * total)).ln() / beta_star).max(1.0 / beta_star))
    }

    /// `n` draws from `draw`, reproducible for `(cfg.seed, stream)`.
    pub fn batch<T, F>(&self, n: usize, stream: u64, draw: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&Simulator, &mut rand_chacha::ChaCha8Rng) -> Result<T> + Sync,
    {
        run_batch(n, self.cfg.seed, stream, |rng| draw(self, rng))
    }
}

pub fn sample_transition<R: Rng + ?Sized>(
    mu: &MassVector,
    mech: &BranchingMechanism,
    t: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<MassVector> {
    Simulator::new(mech, &ImmigrationMechanism::none(mech.dim()), cfg)?.transition(mu, t, rng)
}

pub fn sample_immigration<R: Rng + ?Sized>(
    imm: &ImmigrationMechanism,
    mech: &BranchingMechanism,
    t: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<MassVector> {
    Simulator::new(mech, imm, cfg)?.immigration_law(t, rng)
}

pub fn sample_cbi_transition<R: Rng + ?Sized>(
    mu: &MassVector,
    imm: &ImmigrationMechanism,
    mech: &BranchingMechanism,
    t: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<MassVector> {
    Simulator::new(mech, imm, cfg)?.cbi_transition(mu, t, rng)
}

pub fn sample_stationary<R: Rng + ?Sized>(
    imm: &ImmigrationMechanism,
    mech: &BranchingMechanism,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<MassVector> {
    Simulator::new(mech, imm, cfg)?.stationary(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::rng_for;
    use crate::stats::{estimate_mean, ks_one_sample, ks_critical_one_sample, ks_two_sample, ks_critical_two_sample};
    use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

    fn quad1(b: f64, c: f64) -> BranchingMechanism {
        BranchingMechanism::quadratic(vec![b], vec![c]).unwrap()
    }

    #[test]
    fn cb_quadratic_identity_holds() {
        // x v*_t(l) = x (a/theta) (1 - 1/(1 + theta l))
        for (b, c, t, l) in [(1.0f64, 1.0, 0.7f64, 2.0), (-0.5, 2.0, 1.3, 0.4), (0.0, 0.5, 2.0, 3.0)] {
            let a = (-b * t).exp();
            let theta = c * q_factor(b, t);
            let lhs = crate::cumulant::closed_form_quadratic(b, c, l, t);
            let rhs = a / theta * (1.0 - 1.0 / (1.0 + theta * l));
            assert!((lhs - rhs).abs() < 1e-14 * lhs.max(1.0));
        }
    }

    #[test]
    fn cb_quadratic_trap_and_small_time() {
        let mut rng = rng_for(1, &[]);
        for _ in 0..100 {
            assert_eq!(sample_cb_quadratic(0.0, 1.0, 1.0, 1.0, &mut rng).unwrap(), 0.0);
        }
        let xs: Vec<f64> = (0..20_000).map(|_| sample_cb_quadratic(1.5, 1.0, 1.0, 1e-4, &mut rng).unwrap()).collect();
        let e = estimate_mean(&xs);
        assert!((e.mean - 1.5 * (-1e-4f64).exp()).abs() < 4.0 * e.std_error);
        assert!(sample_cb_quadratic(-1.0, 1.0, 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn cb_quadratic_atom_and_mean() {
        let mut rng = rng_for(2, &[]);
        let n = 100_000;
        let t = 2f64.ln();
        let xs: Vec<f64> = (0..n).map(|_| sample_cb_quadratic(2.0, 1.0, 1.0, t, &mut rng).unwrap()).collect();
        let zeros = xs.iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
        let p = (-2.0f64).exp();
        assert!((zeros - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
        let e = estimate_mean(&xs);
        assert!((e.mean - 1.0).abs() < 4.0 * e.std_error);
    }

    #[test]
    fn gamma_immigration_identity() {
        // int_0^t beta v*_s(l) ds = (beta/c) log(1 + c q(b,t) l)
        let (b, c, beta, t, l) = (1.0f64, 1.0f64, 2.0f64, 0.8f64, 1.7f64);
        let r = crate::numerics::quad::integrate(
            |s| beta * crate::cumulant::closed_form_quadratic(b, c, l, s),
            0.0,
            t,
            Default::default(),
        )
        .unwrap();
        assert!((r.value - beta / c * (1.0 + c * q_factor(b, t) * l).ln()).abs() < 1e-12);
    }

    #[test]
    fn immigration_ks_against_gamma() {
        let mech = quad1(1.0, 1.0);
        let imm = ImmigrationMechanism::new(vec![2.0], vec![]).unwrap();
        let sim = Simulator::new(&mech, &imm, &SimConfig { seed: 3, ..Default::default() }).unwrap();
        let n = 20_000;
        let xs: Vec<f64> = sim.batch(n, 0, |s, r| Ok(s.immigration_law(1.0, r)?[0])).unwrap();
        let g = GammaDist::new(2.0, 1.0 / q_factor(1.0, 1.0)).unwrap();
        assert!(ks_one_sample(&xs, |x| g.cdf(x.max(0.0))) < ks_critical_one_sample(n));
        let e = estimate_mean(&xs);
        assert!((e.mean - 2.0 * (1.0 - (-1.0f64).exp())).abs() < 4.0 * e.std_error);
    }

    #[test]
    fn zero_immigration_gives_zero() {
        let mech = quad1(1.0, 1.0);
        let sim = Simulator::new(&mech, &ImmigrationMechanism::none(1), &SimConfig::default()).unwrap();
        let mut rng = rng_for(0, &[]);
        assert!(sim.immigration_law(1.0, &mut rng).unwrap().is_zero());
        assert!(sim.transition(&MassVector::zeros(1), 1.0, &mut rng).unwrap().is_zero());
    }

    #[test]
    fn exact_immigration_with_jumps_has_right_mean() {
        // mean of N_t = int_0^t (beta + m) e^{-bs} ds
        let mech = quad1(1.0, 1.0);
        let imm = ImmigrationMechanism::new(
            vec![0.5],
            vec![JumpComponent::ExponentialAxis { axis: 0, mean: 2.0, rate: 0.75 }],
        )
        .unwrap();
        let sim = Simulator::new(&mech, &imm, &SimConfig { seed: 4, ..Default::default() }).unwrap();
        let xs: Vec<f64> = sim.batch(40_000, 0, |s, r| Ok(s.immigration_law(1.0, r)?[0])).unwrap();
        let e = estimate_mean(&xs);
        assert!((e.mean - 2.0 * q_factor(1.0, 1.0)).abs() < 4.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn scheme_matches_exact_sampler_in_one_dimension() {
        // Route a one-type quadratic mechanism through the scheme via a
        // negligible jump component and compare with the exact sampler.
        let exact = quad1(1.0, 1.0);
        let jumpy = BranchingMechanism::new(
            vec![1.0],
            vec![1.0],
            nalgebra::DMatrix::zeros(1, 1),
            vec![vec![JumpComponent::PointMass { u: vec![1.0], weight: 1e-12 }]],
        )
        .unwrap();
        let cfg = SimConfig { dt: 0.01, seed: 5, ..Default::default() };
        let mu = MassVector::new(vec![2.0]).unwrap();
        let a = Simulator::new(&exact, &ImmigrationMechanism::none(1), &cfg).unwrap();
        let b = Simulator::new(&jumpy, &ImmigrationMechanism::none(1), &cfg).unwrap();
        assert!(a.is_exact() && !b.is_exact());
        let n = 10_000;
        let xa: Vec<f64> = a.batch(n, 0, |s, r| Ok(s.transition(&mu, 1.0, r)?[0])).unwrap();
        let xb: Vec<f64> = b.batch(n, 1, |s, r| Ok(s.transition(&mu, 1.0, r)?[0])).unwrap();
        assert!(ks_two_sample(&xa, &xb) < ks_critical_two_sample(n, n));
    }

    #[test]
    fn branching_property_two_sample() {
        let mech = BranchingMechanism::from_rows(
            vec![1.0, 1.5],
            vec![1.0, 0.5],
            &[vec![0.0, 0.5], vec![0.3, 0.0]],
            vec![vec![], vec![]],
        )
        .unwrap();
        let cfg = SimConfig { dt: 0.02, seed: 6, ..Default::default() };
        let sim = Simulator::new(&mech, &ImmigrationMechanism::none(2), &cfg).unwrap();
        let m1 = MassVector::new(vec![1.0, 0.0]).unwrap();
        let m2 = MassVector::new(vec![0.0, 1.0]).unwrap();
        let both = m1.plus(&m2);
        let n = 5_000;
        let sum: Vec<f64> = sim
            .batch(n, 0, |s, r| Ok(s.transition(&m1, 0.5, r)?.plus(&s.transition(&m2, 0.5, r)?).total()))
            .unwrap();
        let joint: Vec<f64> = sim.batch(n, 1, |s, r| Ok(s.transition(&both, 0.5, r)?.total())).unwrap();
        assert!(ks_two_sample(&sum, &joint) < ks_critical_two_sample(n, n));
    }

    #[test]
    fn determinism() {
        let mech = quad1(1.0, 1.0);
        let imm = ImmigrationMechanism::new(vec![2.0], vec![]).unwrap();
        let cfg = SimConfig { seed: 11, ..Default::default() };
        let sim = Simulator::new(&mech, &imm, &cfg).unwrap();
        let mu = MassVector::new(vec![1.0]).unwrap();
        let a = sim.batch(600, 0, |s, r| s.cbi_transition(&mu, 1.0, r)).unwrap();
        let b = sim.batch(600, 0, |s, r| s.cbi_transition(&mu, 1.0, r)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stable_epsilon_must_be_positive() {
        let mech = BranchingMechanism::new(
            vec![1.0],
            vec![0.0],
            nalgebra::DMatrix::zeros(1, 1),
            vec![vec![JumpComponent::StableAxis { axis: 0, alpha: 0.5, scale: 1.0 }]],
        )
        .unwrap();
        let cfg = SimConfig { epsilon: 0.0, ..Default::default() };
        assert!(Simulator::new(&mech, &ImmigrationMechanism::none(1), &cfg).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let mech = quad1(-20.0, 0.0);
        let cfg = SimConfig { ceiling: 1e3, ..Default::default() };
        let mut rng = rng_for(0, &[]);
        let r = sample_transition(&MassVector::new(vec![1.0]).unwrap(), &mech, 1.0, &cfg, &mut rng);
        assert!(matches!(r, Err(Error::BlowUp { .. })));
    }
}
