//! Explicit couplings of transition and immigration laws.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanism::MassVector;
use crate::simulate::Simulator;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledPair {
    pub left: MassVector,
    pub right: MassVector,
}

impl CoupledPair {
    /// `||left - right||_1`.
    pub fn cost(&self) -> f64 {
        self.left.var_distance(&self.right)
    }
}

/// Componentwise Jordan decomposition of `mu - nu`: `(mu ^ nu, (mu - nu)^+, (mu - nu)^-)`.
pub fn jordan_decompose(mu: &MassVector, nu: &MassVector) -> Result<(MassVector, MassVector, MassVector)> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    let (a, b) = (mu.as_slice(), nu.as_slice());
    let meet = a.iter().zip(b).map(|(x, y)| x.min(*y)).collect();
    let pos = a.iter().zip(b).map(|(x, y)| (x - y).max(0.0)).collect();
    let neg = a.iter().zip(b).map(|(x, y)| (y - x).max(0.0)).collect();
    Ok((MassVector::from_clamped(meet), MassVector::from_clamped(pos), MassVector::from_clamped(neg)))
}

impl Simulator {
    /// `(eta0 + eta1, eta0 + eta2)` with independent `eta0 ~ Q_t(mu ^ nu)`,
    /// `eta1 ~ Q_t((mu - nu)^+)`, `eta2 ~ Q_t((mu - nu)^-)`.
    pub fn couple_transitions<R: Rng + ?Sized>(
        &self,
        mu: &MassVector,
        nu: &MassVector,
        t: f64,
        rng: &mut R,
    ) -> Result<CoupledPair> {
        Ok(self.couple_transitions_path(mu, nu, &[t], rng)?.pop().expect("one time"))
    }

    /// The same coupling along one trajectory, observed at `times`.
    pub fn couple_transitions_path<R: Rng + ?Sized>(
        &self,
        mu: &MassVector,
        nu: &MassVector,
        times: &[f64],
        rng: &mut R,
    ) -> Result<Vec<CoupledPair>> {
        let (meet, pos, neg) = jordan_decompose(mu, nu)?;
        let e0 = self.path(&meet, times, false, rng)?;
        let e1 = self.path(&pos, times, false, rng)?;
        let e2 = self.path(&neg, times, false, rng)?;
        Ok(e0
            .iter()
            .zip(e1.iter().zip(&e2))
            .map(|(z, (a, b))| CoupledPair { left: z.plus(a), right: z.plus(b) })
            .collect())
    }

    /// [`Self::couple_transitions`] with one shared draw from `N_t` added to
    /// both legs.
    pub fn couple_cbi<R: Rng + ?Sized>(
        &self,
        mu: &MassVector,
        nu: &MassVector,
        t: f64,
        rng: &mut R,
    ) -> Result<CoupledPair> {
        Ok(self.couple_cbi_path(mu, nu, &[t], rng)?.pop().expect("one time"))
    }

    pub fn couple_cbi_path<R: Rng + ?Sized>(
        &self,
        mu: &MassVector,
        nu: &MassVector,
        times: &[f64],
        rng: &mut R,
    ) -> Result<Vec<CoupledPair>> {
        let pairs = self.couple_transitions_path(mu, nu, times, rng)?;
        let shared = self.immigration_path(times, rng)?;
        Ok(pairs
            .into_iter()
            .zip(shared)
            .map(|(p, g)| CoupledPair { left: p.left.plus(&g), right: p.right.plus(&g) })
            .collect())
    }

    /// `left ~ N_t`, `right = left + xi` with `xi ~ N_inf Q_t`, so that
    /// `right ~ N_inf`.
    pub fn couple_stationary<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<CoupledPair> {
        Ok(self.couple_stationary_path(&[t], rng)?.pop().expect("one time"))
    }

    pub fn couple_stationary_path<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R) -> Result<Vec<CoupledPair>> {
        let left = self.immigration_path(times, rng)?;
        let eta = self.stationary(rng)?;
        let xi = self.path(&eta, times, false, rng)?;
        Ok(left
            .into_iter()
            .zip(xi)
            .map(|(l, x)| CoupledPair { right: l.plus(&x), left: l })
            .collect())
    }

    /// `left = g + X`, `right = g + xi` with independent `g ~ N_t`,
    /// `X ~ Q_t(mu)` and `xi ~ N_inf Q_t`: a coupling of `Q^N_t(mu)` and
    /// `N_inf`.
    pub fn couple_to_stationary<R: Rng + ?Sized>(
        &self,
        mu: &MassVector,
        t: f64,
        rng: &mut R,
    ) -> Result<CoupledPair> {
        Ok(self.couple_to_stationary_path(mu, &[t], rng)?.pop().expect("one time"))
    }

    pub fn couple_to_stationary_path<R: Rng + ?Sized>(
        &self,
        mu: &MassVector,
        times: &[f64],
        rng: &mut R,
    ) -> Result<Vec<CoupledPair>> {
        let shared = self.immigration_path(times, rng)?;
        let x = self.path(mu, times, false, rng)?;
        let eta = self.stationary(rng)?;
        let xi = self.path(&eta, times, false, rng)?;
        Ok(shared
            .into_iter()
            .zip(x.into_iter().zip(xi))
            .map(|(g, (a, b))| CoupledPair { left: g.plus(&a), right: g.plus(&b) })
            .collect())
    }

    fn immigration_path<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R) -> Result<Vec<MassVector>> {
        self.path(&MassVector::zeros(self.mechanism().dim()), times, true, rng)
    }
}
