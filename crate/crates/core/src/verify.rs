//! Analytic bounds and identities checked against Monte Carlo estimates.
//!
//! Every check returns report rows; a violated bound is a `fail` row, never an
//! error. Errors are reserved for invalid input and numerical breakdown.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::CoupledPair;
use crate::cumulant::{
    cumulant_at, laplace_exponent, moment_semigroup, stationary_laplace_exponent, stationary_mean,
    stationary_w1_tail, vbar_vector,
};
use crate::distance::{tv_empirical, tv_poisson_gamma, w1_empirical, EmpiricalLaw, PoissonGammaLaw, TvEstimate};
use crate::error::{Error, Result};
use crate::export::write_atomic;
use crate::mc::{derive_seed, rng_for};
use crate::mechanism::{JumpComponent, MassVector};
use crate::scenario::{CheckKind, Scenario, ScenarioDocument};
use crate::simulate::Simulator;
use crate::stats::{bonferroni_z, estimate_mean, estimate_proportion, linear_fit};

/// Samples per side fed to the assignment solver when `d >= 2`.
pub const ASSIGNMENT_SAMPLES: usize = 1024;
/// Histogram bins for empirical total variation.
pub const TV_BINS: usize = 128;
/// Width, in standard errors, of the acceptance band for Laplace and atom identities.
pub const IDENTITY_SIGMAS: f64 = 4.0;
/// Joint coverage of the confidence intervals within one family of rows
/// (one quantity over all replicates and times).
pub const FAMILY_LEVEL: f64 = 0.99;

const STREAM_W1: u64 = 1;
const STREAM_TV: u64 = 2;
const STREAM_STATIONARY: u64 = 3;
const STREAM_STATIONARY_W1: u64 = 4;
const STREAM_RATE: u64 = 5;
const STREAM_LIPSCHITZ: u64 = 6;
const STREAM_LAPLACE: u64 = 7;
const STREAM_EXTINCTION: u64 = 8;
const REPLICATE_TAG: u64 = 0x5245_504c;

pub mod anchor {
    pub const W1_SANDWICH: &str =
        "|<mu - nu, pi_t 1>| <= W1(Q_t(mu), Q_t(nu)) <= <|mu - nu|, pi_t 1>, equality for ordered mu, nu";
    pub const W1_SANDWICH_CBI: &str =
        "|<mu - nu, pi_t 1>| <= W1(Q^N_t(mu), Q^N_t(nu)) <= <|mu - nu|, pi_t 1>, equality for ordered mu, nu";
    pub const TV_SANDWICH: &str = "2|exp(-<mu, Vbar_t>) - exp(-<nu, Vbar_t>)| <= ||Q_t(mu) - Q_t(nu)||_var \
                                   <= 2(1 - exp(-<|mu - nu|, Vbar_t>))";
    pub const TV_CBI: &str = "||Q^N_t(mu) - Q^N_t(nu)||_var <= 2(1 - exp(-<|mu - nu|, Vbar_t>))";
    pub const STATIONARY_MEAN: &str = "mean of N_inf = (-M^T)^{-1} (beta + int u nu(du))";
    pub const STATIONARY_LAPLACE: &str = "-log int exp(-<lambda, eta>) N_inf(d eta) = int_0^inf psi(v(s, lambda)) ds";
    pub const STATIONARY_W1: &str = "W1(N_t, N_inf) = int_t^inf <beta + int u nu(du), pi_s 1> ds";
    pub const STATIONARY_TV: &str = "||N_t - N_inf||_var <= 2 int (1 - exp(-<eta, Vbar_t>)) N_inf(d eta)";
    pub const W1_RATE: &str = "W1(Q^N_t(mu), N_inf) <= C (1 + <mu, 1>) exp(-beta* t)";
    pub const TV_RATE: &str = "||Q^N_t(mu) - N_inf||_var <= C (1 + <mu, 1>) exp(-beta* t)";
    pub const LIPSCHITZ_MOMENT: &str = "L(Q_t F) <= ||pi_t 1||_inf L(F)";
    pub const LIPSCHITZ_VBAR: &str = "L(Q_t F) <= 2 ||Vbar_t||_inf ||F||";
    pub const LAPLACE: &str =
        "E exp(-<lambda, X_t>) = exp(-<mu, v(t, lambda)> - int_0^t psi(v(s, lambda)) ds)";
    pub const EXTINCTION: &str = "Q_t(mu, {0}) = exp(-<mu, Vbar_t>)";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Skipped(String),
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Skipped(_) => "skipped",
        }
    }
}

/// One report row. `ci` is the slack allowed around the analytic values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: CheckKind,
    pub quantity: String,
    pub anchor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<f64>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn row(check: CheckKind, quantity: impl Into<String>, anchor: &str) -> CheckRecord {
    CheckRecord {
        check,
        quantity: quantity.into(),
        anchor: anchor.into(),
        t: None,
        lambda: None,
        replicate: None,
        lower: None,
        upper: None,
        exact: None,
        empirical: None,
        ci: None,
        verdict: Verdict::Pass,
        note: None,
    }
}

fn skipped(check: CheckKind, quantity: &str, anchor: &str, reason: impl Into<String>) -> CheckRecord {
    CheckRecord { verdict: Verdict::Skipped(reason.into()), ..row(check, quantity, anchor) }
}

fn replicate_sim(sc: &Scenario, r: usize) -> Result<Simulator> {
    let mut cfg = sc.sim_config();
    cfg.seed = derive_seed(cfg.seed, &[REPLICATE_TAG, r as u64]);
    Simulator::new(&sc.mech, &sc.imm, &cfg)
}

/// `<mu, v>` where `v` may hold `+inf` and `0 * inf = 0`.
fn pair_extended(mu: &MassVector, v: &[f64]) -> f64 {
    mu.as_slice().iter().zip(v).filter(|(m, _)| **m > 0.0).map(|(m, x)| m * x).sum()
}

/// `V̄_t` at each time; infinite at `t = 0`.
fn vbar_at(sc: &Scenario, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                Ok(vec![f64::INFINITY; sc.dim()])
            } else {
                vbar_vector(&sc.mech, t, 1e-9)
            }
        })
        .collect()
}

const GREY_REASON: &str = "Grey's condition fails for the dominating mechanism";

fn grey_vbar(sc: &Scenario, times: &[f64]) -> Result<Option<Vec<Vec<f64>>>> {
    match vbar_at(sc, times) {
        Ok(v) => Ok(Some(v)),
        Err(Error::GreyConditionFails) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `(b, c, beta)` when every law involved is an explicit Poisson-Gamma
/// mixture: one type, no jumps, continuous immigration, `c > 0`.
fn quadratic_one_type(sc: &Scenario) -> Option<(f64, f64, f64)> {
    let m = &sc.mech;
    (m.dim() == 1 && !m.has_jumps() && sc.imm.nu().is_empty() && m.c()[0] > 0.0)
        .then(|| (m.b()[0], m.c()[0], sc.imm.beta()[0]))
}

/// Empirical `W_1` between the two legs and a standard error from the
/// per-pair costs and signed total differences.
fn w1_with_se(pairs: &[&CoupledPair]) -> Result<(f64, f64)> {
    let d = pairs.first().ok_or(Error::EmptySamples)?.left.dim();
    let m = if d == 1 { pairs.len() } else { pairs.len().min(ASSIGNMENT_SAMPLES) };
    let pairs = &pairs[..m];
    let left = EmpiricalLaw::new(pairs.iter().map(|p| p.left.clone()).collect())?;
    let right = EmpiricalLaw::new(pairs.iter().map(|p| p.right.clone()).collect())?;
    let w = w1_empirical(&left, &right, ASSIGNMENT_SAMPLES)?;
    let costs: Vec<f64> = pairs.iter().map(|p| p.cost()).collect();
    let signed: Vec<f64> = pairs.iter().map(|p| p.left.total() - p.right.total()).collect();
    let se = estimate_mean(&costs).std_error.max(estimate_mean(&signed).std_error);
    Ok((w, se))
}

fn tv_legs(pairs: &[&CoupledPair]) -> Result<TvEstimate> {
    let left = EmpiricalLaw::new(pairs.iter().map(|p| p.left.clone()).collect())?;
    let right = EmpiricalLaw::new(pairs.iter().map(|p| p.right.clone()).collect())?;
    tv_empirical(&left, &right, TV_BINS)
}

/// Slack below and above a histogram TV estimate: bin sensitivity plus
/// sampling noise, and above it also the positive bias of order
/// `sqrt(cells / n)`.
fn tv_slack(est: &TvEstimate, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let noise = z * 2.0 / n.sqrt();
    let bias = (2.0 * (est.bins + 1) as f64 / n).sqrt();
    (est.spread + noise, est.spread + noise + bias)
}

/// Allowance for the error of solver-derived analytic values.
fn numeric_slack(sc: &Scenario) -> f64 {
    100.0 * sc.doc.tolerance
}

fn family_z(sc: &Scenario, times: usize) -> f64 {
    bonferroni_z(FAMILY_LEVEL, sc.doc.replicates * times)
}

/// Stable components leave the sampled masses without a second moment, so a
/// sample mean has no normal band and tends to fall short of its target.
fn heavy_tailed(sc: &Scenario) -> bool {
    let stable = |c: &JumpComponent| matches!(c, JumpComponent::StableAxis { .. });
    sc.mech.jumps().iter().flatten().any(stable) || sc.imm.nu().iter().any(stable)
}

const HEAVY_NOTE: &str = "infinite variance: upper side only";

/// `|x - target| <= band`, or only `x <= target + band` when heavy tailed.
fn mean_within(heavy: bool, x: f64, target: f64, band: f64) -> bool {
    if heavy {
        x <= target + band
    } else {
        (x - target).abs() <= band
    }
}

fn ordered(mu: &MassVector, nu: &MassVector) -> bool {
    let (a, b) = (mu.as_slice(), nu.as_slice());
    a.iter().zip(b).all(|(x, y)| x >= y) || a.iter().zip(b).all(|(x, y)| x <= y)
}

pub fn check_wasserstein_sandwich(sc: &Scenario) -> Result<Vec<CheckRecord>> {
    let kind = CheckKind::WassersteinSandwich;
    let times = &sc.doc.times;
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let s = sc.analytic_scale();
    let cbi = sc.has_immigration();
    let anchor = if cbi { anchor::W1_SANDWICH_CBI } else { anchor::W1_SANDWICH };
    let diff: Vec<f64> = sc.mu.as_slice().iter().zip(sc.nu.as_slice()).map(|(a, b)| a - b).collect();
    let is_ordered = ordered(&sc.mu, &sc.nu);
    let bounds = times
        .iter()
        .map(|&t| {
            let pi1 = moment_semigroup(&sc.mech, t)?.row_sums();
            let lower: f64 = diff.iter().zip(&pi1).map(|(d, p)| d * p).sum::<f64>().abs();
            let upper: f64 = diff.iter().zip(&pi1).map(|(d, p)| d.abs() * p).sum();
            Ok((s * lower, s * upper))
        })
        .collect::<Result<Vec<_>>>()?;
    let z = family_z(sc, times.len());
    let fp = numeric_slack(sc);
    let heavy = heavy_tailed(sc);
    let mut rows = Vec::new();
    for r in 0..sc.doc.replicates {
        let sim = replicate_sim(sc, r)?;
        let paths = sim.batch(sc.doc.sim.n_samples, STREAM_W1, |sim, rng| {
            if cbi {
                sim.couple_cbi_path(&sc.mu, &sc.nu, times, rng)
            } else {
                sim.couple_transitions_path(&sc.mu, &sc.nu, times, rng)
            }
        })?;
        for (k, &t) in times.iter().enumerate() {
            let pairs: Vec<&CoupledPair> = paths.iter().map(|p| &p[k]).collect();
            let (w, se) = w1_with_se(&pairs)?;
            let ci = z * se + fp;
            let (lower, upper) = bounds[k];
            let mut ok = (heavy || w >= lower - ci) && w <= upper + ci;
            let (exact, mut note) = if is_ordered {
                ok &= mean_within(heavy, w, upper, (0.01 * upper).max(ci));
                (Some(upper), None)
            } else {
                (None, Some("sandwich only".to_string()))
            };
            if heavy {
                note = Some(note.map_or(HEAVY_NOTE.to_string(), |n| format!("{n}; {HEAVY_NOTE}")));
            }
            rows.push(CheckRecord {
                t: Some(t),
                replicate: Some(r),
                lower: Some(lower),
                upper: Some(upper),
                exact,
                empirical: Some(w),
                ci: Some(ci),
                verdict: Verdict::from_bool(ok),
                note,
                ..row(kind, "w1", anchor)
            });
        }
    }
    Ok(rows)
}

pub fn check_tv_sandwich(sc: &Scenario) -> Result<Vec<CheckRecord>> {
    let kind = CheckKind::TvSandwich;
    let times = &sc.doc.times;
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let cbi = sc.has_immigration();
    let anchor = if cbi { anchor::TV_CBI } else { anchor::TV_SANDWICH };
    let Some(vbars) = grey_vbar(sc, times)? else {
        return Ok(vec![skipped(kind, "tv", anchor, GREY_REASON)]);
    };
    let s = sc.analytic_scale();
    let absdiff = MassVector::from_clamped(
        sc.mu.as_slice().iter().zip(sc.nu.as_slice()).map(|(a, b)| (a - b).abs()).collect(),
    );
    let bounds: Vec<(Option<f64>, f64)> = vbars
        .iter()
        .map(|v| {
            let lower = (!cbi).then(|| {
                s * 2.0 * ((-pair_extended(&sc.mu, v)).exp() - (-pair_extended(&sc.nu, v)).exp()).abs()
            });
            (lower, s * 2.0 * (1.0 - (-pair_extended(&absdiff, v)).exp()))
        })
        .collect();
    let note = cbi.then(|| "upper bound only".to_string());
    let mut rows = Vec::new();
    if let Some((b, c, beta)) = quadratic_one_type(sc) {
        const QUAD_ERR: f64 = 1e-9;
        for (k, &t) in times.iter().enumerate() {
            let (x, y) = (sc.mu[0], sc.nu[0]);
            let tv = if x == y {
                0.0
            } else if t == 0.0 {
                2.0
            } else {
                tv_poisson_gamma(
                    &PoissonGammaLaw::quadratic_cbi(x, beta, b, c, t),
                    &PoissonGammaLaw::quadratic_cbi(y, beta, b, c, t),
                )?
            };
            let (lower, upper) = bounds[k];
            let ok = lower.is_none_or(|l| tv >= l - QUAD_ERR) && tv <= upper + QUAD_ERR;
            rows.push(CheckRecord {
                t: Some(t),
                lower,
                upper: Some(upper),
                empirical: Some(tv),
                ci: Some(QUAD_ERR),
                verdict: Verdict::from_bool(ok),
                note: Some(note.clone().map_or("exact law".into(), |n| format!("exact law; {n}"))),
                ..row(kind, "tv", anchor)
            });
        }
        return Ok(rows);
    }
    let n = sc.doc.sim.n_samples;
    let z = family_z(sc, times.len());
    for r in 0..sc.doc.replicates {
        let sim = replicate_sim(sc, r)?;
        let paths = sim.batch(n, STREAM_TV, |sim, rng| {
            if cbi {
                sim.couple_cbi_path(&sc.mu, &sc.nu, times, rng)
            } else {
                sim.couple_transitions_path(&sc.mu, &sc.nu, times, rng)
            }
        })?;
        for (k, &t) in times.iter().enumerate() {
            let pairs: Vec<&CoupledPair> = paths.iter().map(|p| &p[k]).collect();
            let est = tv_legs(&pairs)?;
            let (lo_slack, up_slack) = tv_slack(&est, n, z);
            let (lower, upper) = bounds[k];
            let ok = lower.is_none_or(|l| est.value >= l - lo_slack) && est.value <= upper + up_slack;
            rows.push(CheckRecord {
                t: Some(t),
                replicate: Some(r),
                lower,
                upper: Some(upper),
                empirical: Some(est.value),
                ci: Some(up_slack),
                verdict: Verdict::from_bool(ok),
                note: note.clone(),
                ..row(kind, "tv", anchor)
            });
        }
    }
    Ok(rows)
}

pub fn check_stationary(sc: &Scenario) -> Result<Vec<CheckRecord>> {
    let kind = CheckKind::Stationary;
    let beta_star = sc.mech.beta_star();
    if !(beta_star > 0.0) {
        return Ok(vec![skipped(
            kind,
            "stationary",
            anchor::STATIONARY_W1,
            format!("beta* = {beta_star} is not positive; no stationary law is guaranteed"),
        )]);
    }
    let times = &sc.doc.times;
    let s = sc.analytic_scale();
    let n = sc.doc.sim.n_samples;
    let tol = sc.doc.tolerance;
    let mean = stationary_mean(&sc.mech, &sc.imm)?;
    let total: f64 = mean.iter().sum();
    let exact_law = quadratic_one_type(sc);
    // The approximate N_inf sampler stops where the remaining mean is 1e-3 of the total.
    let truncation = if exact_law.is_some() { 0.0 } else { 1e-3 * total };
    let lambdas = sc.lambdas();
    let laplace = lambdas
        .iter()
        .map(|l| stationary_laplace_exponent(&sc.mech, &sc.imm, l, tol))
        .collect::<Result<Vec<_>>>()?;
    let heavy = heavy_tailed(sc);
    let heavy_note = heavy.then(|| HEAVY_NOTE.to_string());
    let mut rows = Vec::new();

    if let Some((b, c, beta)) = exact_law {
        for (li, l) in lambdas.iter().enumerate() {
            let closed = (1.0 + c * l[0] / b).powf(-beta / c);
            let quad = (-laplace[li].value).exp();
            let err = (quad - closed).abs();
            rows.push(CheckRecord {
                lambda: Some(l.clone()),
                exact: Some(s * closed),
                empirical: Some(quad),
                ci: Some(1e-8),
                verdict: Verdict::from_bool((quad - s * closed).abs() <= 1e-8),
                note: Some(format!("quadrature vs closed form (1 + c lambda / b)^(-beta / c), error {err:.1e}")),
                ..row(kind, format!("stationary_laplace_closed_form_l{li}"), anchor::STATIONARY_LAPLACE)
            });
        }
    }

    for r in 0..sc.doc.replicates {
        let sim = replicate_sim(sc, r)?;
        let draws = sim.batch(n, STREAM_STATIONARY, |sim, rng| sim.stationary(rng))?;
        let totals: Vec<f64> = draws.iter().map(MassVector::total).collect();
        let est = estimate_mean(&totals);
        let band = IDENTITY_SIGMAS * est.std_error + truncation + numeric_slack(sc) * (1.0 + total);
        rows.push(CheckRecord {
            replicate: Some(r),
            exact: Some(s * total),
            empirical: Some(est.mean),
            ci: Some(band),
            verdict: Verdict::from_bool(mean_within(heavy, est.mean, s * total, band)),
            note: heavy_note.clone(),
            ..row(kind, "stationary_mean", anchor::STATIONARY_MEAN)
        });
        for (li, l) in lambdas.iter().enumerate() {
            let vals: Vec<f64> = draws.iter().map(|x| (-x.pair(l)).exp()).collect();
            let est = estimate_mean(&vals);
            let exact = s * (-laplace[li].value).exp();
            let lmax = l.iter().copied().fold(0.0, f64::max);
            let band = IDENTITY_SIGMAS * est.std_error + lmax * truncation + laplace[li].tail_bound + numeric_slack(sc);
            rows.push(CheckRecord {
                lambda: Some(l.clone()),
                replicate: Some(r),
                exact: Some(exact),
                empirical: Some(est.mean),
                ci: Some(band),
                verdict: Verdict::from_bool((est.mean - exact).abs() <= band),
                ..row(kind, format!("stationary_laplace_l{li}"), anchor::STATIONARY_LAPLACE)
            });
        }
    }

    if !times.is_empty() {
        let exact_w1 = times
            .iter()
            .map(|&t| Ok(s * stationary_w1_tail(&sc.mech, &sc.imm, t)?))
            .collect::<Result<Vec<f64>>>()?;
        let vbars = grey_vbar(sc, times)?;
        let tv_bounds = match &vbars {
            Some(vs) => Some(
                vs.iter()
                    .map(|v| {
                        if v.iter().any(|x| x.is_infinite()) {
                            return Ok(2.0 * s);
                        }
                        let e = stationary_laplace_exponent(&sc.mech, &sc.imm, v, tol)?;
                        Ok(s * 2.0 * (1.0 - (-e.value).exp()))
                    })
                    .collect::<Result<Vec<f64>>>()?,
            ),
            None => None,
        };
        if tv_bounds.is_none() {
            rows.push(skipped(kind, "stationary_tv", anchor::STATIONARY_TV, GREY_REASON));
        }
        if let (Some(bounds), Some((b, c, beta))) = (&tv_bounds, exact_law) {
            for (k, &t) in times.iter().enumerate() {
                let tv = if beta == 0.0 {
                    0.0
                } else if t == 0.0 {
                    2.0
                } else {
                    tv_poisson_gamma(
                        &PoissonGammaLaw::quadratic_cbi(0.0, beta, b, c, t),
                        &PoissonGammaLaw::quadratic_stationary(beta, b, c),
                    )?
                };
                rows.push(CheckRecord {
                    t: Some(t),
                    upper: Some(bounds[k]),
                    empirical: Some(tv),
                    ci: Some(1e-9),
                    verdict: Verdict::from_bool(tv <= bounds[k] + 1e-9),
                    note: Some("exact law".into()),
                    ..row(kind, "stationary_tv", anchor::STATIONARY_TV)
                });
            }
        }
        let z = family_z(sc, times.len());
        for r in 0..sc.doc.replicates {
            let sim = replicate_sim(sc, r)?;
            let paths = sim.batch(n, STREAM_STATIONARY_W1, |sim, rng| sim.couple_stationary_path(times, rng))?;
            for (k, &t) in times.iter().enumerate() {
                let pairs: Vec<&CoupledPair> = paths.iter().map(|p| &p[k]).collect();
                let (w, se) = w1_with_se(&pairs)?;
                let exact = exact_w1[k];
                let band = (0.01 * exact).max(z * se) + truncation + numeric_slack(sc);
                rows.push(CheckRecord {
                    t: Some(t),
                    replicate: Some(r),
                    exact: Some(exact),
                    empirical: Some(w),
                    ci: Some(band),
                    verdict: Verdict::from_bool(mean_within(heavy, w, exact, band)),
                    note: heavy_note.clone(),
                    ..row(kind, "stationary_w1", anchor::STATIONARY_W1)
                });
                if let (Some(bounds), None) = (&tv_bounds, exact_law) {
                    let est = tv_legs(&pairs)?;
                    let (_, up_slack) = tv_slack(&est, n, z);
                    let up_slack = up_slack + 2.0 * truncation;
                    rows.push(CheckRecord {
                        t: Some(t),
                        replicate: Some(r),
                        upper: Some(bounds[k]),
                        empirical: Some(est.value),
                        ci: Some(up_slack),
                        verdict: Verdict::from_bool(est.value <= bounds[k] + up_slack),
                        ..row(kind, "stationary_tv", anchor::STATIONARY_TV)
                    });
                }
            }
        }
    }

    rows.extend(rate_fits(sc, beta_star, &mean)?);
    Ok(rows)
}

/// Log-linear fits of `W_1(Q^N_t(mu), N_inf)` and `||Q^N_t(mu) - N_inf||`
/// over `rate_times`, compared with `-beta*`.
fn rate_fits(sc: &Scenario, beta_star: f64, stationary: &[f64]) -> Result<Vec<CheckRecord>> {
    let kind = CheckKind::Stationary;
    let times = &sc.doc.rate_times;
    if times.len() < 3 {
        return Ok(vec![skipped(kind, "w1_rate", anchor::W1_RATE, "fewer than 3 rate_times")]);
    }
    let s = sc.analytic_scale();
    let target = -s * beta_star;
    // One type with a mean gap: the decay rate is exactly b = beta*.
    let m = stationary[0];
    let sharp = sc.dim() == 1 && (sc.mu[0] - m).abs() > 1e-6 * (1.0 + m);
    let note = if sharp {
        "two-sided: one type, decay rate is exactly beta*"
    } else {
        "one-sided: decay at least as fast as beta*"
    };
    let within = |slope: f64, rel: f64| {
        if sharp {
            (slope - target).abs() <= rel * beta_star
        } else {
            slope <= target + rel * beta_star
        }
    };
    let mut rows = Vec::new();
    if heavy_tailed(sc) {
        rows.push(skipped(kind, "w1_rate", anchor::W1_RATE, "infinite variance: log-linear fit of sample means is unreliable"));
        rows.push(skipped(kind, "tv_rate", anchor::TV_RATE, "needs the explicit one-type quadratic laws"));
        return Ok(rows);
    }
    if sc.mu.is_zero() && !sc.has_immigration() {
        rows.push(skipped(kind, "w1_rate", anchor::W1_RATE, "mu = 0 without immigration: distance is identically 0"));
        return Ok(rows);
    }
    for r in 0..sc.doc.replicates {
        let sim = replicate_sim(sc, r)?;
        let paths = sim.batch(sc.doc.sim.n_samples, STREAM_RATE, |sim, rng| {
            sim.couple_to_stationary_path(&sc.mu, times, rng)
        })?;
        let mut logs = Vec::with_capacity(times.len());
        for k in 0..times.len() {
            let pairs: Vec<&CoupledPair> = paths.iter().map(|p| &p[k]).collect();
            // For d >= 2 the mean coupling cost over all draws bounds W_1 from
            // above; an assignment subsample can coalesce entirely at late times.
            let w = if sc.dim() == 1 {
                w1_with_se(&pairs)?.0
            } else {
                estimate_mean(&pairs.iter().map(|p| p.cost()).collect::<Vec<_>>()).mean
            };
            logs.push(w.ln());
        }
        let (ok, slope) = if logs.iter().all(|x| x.is_finite()) {
            let fit = linear_fit(times, &logs);
            (within(fit.slope, 0.10), Some(fit.slope))
        } else {
            (false, None)
        };
        rows.push(CheckRecord {
            replicate: Some(r),
            exact: Some(target),
            empirical: slope,
            ci: Some(0.10 * beta_star),
            verdict: Verdict::from_bool(ok),
            note: Some(note.into()),
            ..row(kind, "w1_rate", anchor::W1_RATE)
        });
    }
    match quadratic_one_type(sc) {
        Some((b, c, beta)) => {
            let logs = times
                .iter()
                .map(|&t| {
                    let tv = tv_poisson_gamma(
                        &PoissonGammaLaw::quadratic_cbi(sc.mu[0], beta, b, c, t),
                        &PoissonGammaLaw::quadratic_stationary(beta, b, c),
                    )?;
                    Ok(tv.ln())
                })
                .collect::<Result<Vec<f64>>>()?;
            let (ok, slope) = if logs.iter().all(|x| x.is_finite()) {
                let fit = linear_fit(times, &logs);
                (within(fit.slope, 0.15), Some(fit.slope))
            } else {
                (false, None)
            };
            rows.push(CheckRecord {
                exact: Some(target),
                empirical: slope,
                ci: Some(0.15 * beta_star),
                verdict: Verdict::from_bool(ok),
                note: Some(format!("{note}; exact law")),
                ..row(kind, "tv_rate", anchor::TV_RATE)
            });
        }
        None => rows.push(skipped(
            kind,
            "tv_rate",
            anchor::TV_RATE,
            "needs the explicit one-type quadratic laws; histogram noise exceeds the distances being fitted",
        )),
    }
    Ok(rows)
}

/// Random pairs `(mu, nu)`: spread over `[0, 5]^d` and concentrated near 0,
/// where exponential functionals are steepest.
fn lipschitz_pairs(sc: &Scenario) -> Vec<(MassVector, MassVector)> {
    let d = sc.dim();
    let mut rng = rng_for(sc.doc.sim.seed, &[STREAM_LIPSCHITZ]);
    let mut draw = |scale: f64| MassVector::from_clamped((0..d).map(|_| scale * rng.random::<f64>()).collect());
    let mut pairs = Vec::new();
    for k in 0..240 {
        let scale = if k < 200 { 5.0 } else { 1e-2 };
        let (a, b) = (draw(scale), draw(scale));
        if a != b {
            pairs.push((a, b));
        }
    }
    pairs
}

pub fn check_lipschitz_contraction(sc: &Scenario) -> Result<Vec<CheckRecord>> {
    let kind = CheckKind::LipschitzContraction;
    let times = &sc.doc.times;
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let s = sc.analytic_scale();
    let pairs = lipschitz_pairs(sc);
    let vbars = grey_vbar(sc, times)?;
    let pi1 = times
        .iter()
        .map(|&t| Ok(moment_semigroup(&sc.mech, t)?.row_sums().into_iter().fold(0.0, f64::max)))
        .collect::<Result<Vec<f64>>>()?;
    let mut rows = Vec::new();
    if vbars.is_none() {
        rows.push(skipped(kind, "lipschitz_vbar", anchor::LIPSCHITZ_VBAR, GREY_REASON));
    }
    for (li, l) in sc.lambdas().iter().enumerate() {
        // F = exp(-<l, .>): Lipschitz constant |l|_inf in l1, sup norm 1.
        let lip = l.iter().copied().fold(0.0, f64::max);
        let vs = cumulant_at(&sc.mech, l, times, sc.doc.tolerance)?;
        for (k, &t) in times.iter().enumerate() {
            let v = &vs[k];
            let ratio = pairs
                .iter()
                .map(|(a, b)| ((-a.pair(v)).exp() - (-b.pair(v)).exp()).abs() / a.var_distance(b))
                .fold(0.0, f64::max);
            let upper = s * pi1[k] * lip;
            rows.push(CheckRecord {
                t: Some(t),
                lambda: Some(l.clone()),
                upper: Some(upper),
                empirical: Some(ratio),
                ci: Some(1e-10),
                verdict: Verdict::from_bool(ratio <= upper + 1e-10),
                ..row(kind, format!("lipschitz_moment_l{li}"), anchor::LIPSCHITZ_MOMENT)
            });
            if let Some(vb) = &vbars {
                let vmax = vb[k].iter().copied().fold(0.0, f64::max);
                let mut rec = CheckRecord {
                    t: Some(t),
                    lambda: Some(l.clone()),
                    empirical: Some(ratio),
                    ci: Some(1e-10),
                    ..row(kind, format!("lipschitz_vbar_l{li}"), anchor::LIPSCHITZ_VBAR)
                };
                if vmax.is_finite() {
                    let upper = s * 2.0 * vmax;
                    rec.upper = Some(upper);
                    rec.verdict = Verdict::from_bool(ratio <= upper + 1e-10);
                } else {
                    rec.note = Some("Vbar_0 is infinite; the bound is vacuous".into());
                }
                rows.push(rec);
            }
        }
    }
    Ok(rows)
}

pub fn check_laplace(sc: &Scenario) -> Result<Vec<CheckRecord>> {
    let kind = CheckKind::Laplace;
    let times = &sc.doc.times;
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let s = sc.analytic_scale();
    let lambdas = sc.lambdas();
    let exact = lambdas
        .iter()
        .map(|l| {
            times
                .iter()
                .map(|&t| Ok(s * (-laplace_exponent(&sc.mech, &sc.imm, &sc.mu, l, t, sc.doc.tolerance)?).exp()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for r in 0..sc.doc.replicates {
        let sim = replicate_sim(sc, r)?;
        let paths = sim.batch(sc.doc.sim.n_samples, STREAM_LAPLACE, |sim, rng| sim.path(&sc.mu, times, true, rng))?;
        for (li, l) in lambdas.iter().enumerate() {
            for (k, &t) in times.iter().enumerate() {
                let vals: Vec<f64> = paths.iter().map(|p| (-p[k].pair(l)).exp()).collect();
                let est = estimate_mean(&vals);
                let band = IDENTITY_SIGMAS * est.std_error + numeric_slack(sc);
                rows.push(CheckRecord {
                    t: Some(t),
                    lambda: Some(l.clone()),
                    replicate: Some(r),
                    exact: Some(exact[li][k]),
                    empirical: Some(est.mean),
                    ci: Some(band),
                    verdict: Verdict::from_bool((est.mean - exact[li][k]).abs() <= band),
                    ..row(kind, format!("laplace_l{li}"), anchor::LAPLACE)
                });
            }
        }
    }
    Ok(rows)
}

pub fn check_extinction(sc: &Scenario) -> Result<Vec<CheckRecord>> {
    let kind = CheckKind::Extinction;
    let times = &sc.doc.times;
    if times.is_empty() {
        return Ok(Vec::new());
    }
    if sc.has_immigration() {
        return Ok(vec![skipped(
            kind,
            "extinction",
            anchor::EXTINCTION,
            "immigration present: the process has no extinction atom",
        )]);
    }
    let Some(vbars) = grey_vbar(sc, times)? else {
        return Ok(vec![skipped(kind, "extinction", anchor::EXTINCTION, GREY_REASON)]);
    };
    let s = sc.analytic_scale();
    let probs: Vec<f64> = vbars.iter().map(|v| s * (-pair_extended(&sc.mu, v)).exp()).collect();
    let mut rows = Vec::new();
    let n = sc.doc.sim.n_samples;
    for r in 0..sc.doc.replicates {
        let sim = replicate_sim(sc, r)?;
        let paths = sim.batch(n, STREAM_EXTINCTION, |sim, rng| sim.path(&sc.mu, times, false, rng))?;
        for (k, &t) in times.iter().enumerate() {
            let hits = paths.iter().filter(|p| p[k].is_zero()).count();
            let p = probs[k];
            let est = estimate_proportion(hits, n, Some(p.clamp(0.0, 1.0)));
            let band = IDENTITY_SIGMAS * est.std_error + numeric_slack(sc);
            rows.push(CheckRecord {
                t: Some(t),
                replicate: Some(r),
                exact: Some(p),
                empirical: Some(est.mean),
                ci: Some(band),
                verdict: Verdict::from_bool((est.mean - p).abs() <= band),
                ..row(kind, "extinction", anchor::EXTINCTION)
            });
        }
    }
    Ok(rows)
}

pub fn run_check(sc: &Scenario, check: CheckKind) -> Result<Vec<CheckRecord>> {
    match check {
        CheckKind::WassersteinSandwich => check_wasserstein_sandwich(sc),
        CheckKind::TvSandwich => check_tv_sandwich(sc),
        CheckKind::Stationary => check_stationary(sc),
        CheckKind::LipschitzContraction => check_lipschitz_contraction(sc),
        CheckKind::Laplace => check_laplace(sc),
        CheckKind::Extinction => check_extinction(sc),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub replicates: usize,
    pub n_samples: usize,
    pub threads: usize,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub metadata: ReportMetadata,
    pub summary: Summary,
    pub scenario: ScenarioDocument,
    pub records: Vec<CheckRecord>,
}

/// Runs every requested check. An empty time grid yields an empty, passing
/// report.
pub fn run_scenario(sc: &Scenario) -> Result<VerificationReport> {
    let start = Instant::now();
    let records: Vec<CheckRecord> = if sc.doc.times.is_empty() {
        Vec::new()
    } else {
        sc.checks()
            .par_iter()
            .map(|&c| run_check(sc, c))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect()
    };
    let count = |f: fn(&Verdict) -> bool| records.iter().filter(|r| f(&r.verdict)).count();
    let summary = Summary {
        passed: count(|v| matches!(v, Verdict::Pass)),
        failed: count(|v| matches!(v, Verdict::Fail)),
        skipped: count(|v| matches!(v, Verdict::Skipped(_))),
    };
    Ok(VerificationReport {
        metadata: ReportMetadata {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: sc.doc.sim.seed,
            replicates: sc.doc.replicates,
            n_samples: sc.doc.sim.n_samples,
            threads: rayon::current_num_threads(),
            runtime_seconds: start.elapsed().as_secs_f64(),
        },
        summary,
        scenario: sc.doc.clone(),
        records,
    })
}

#[derive(Serialize)]
struct FlatRow<'a> {
    check: &'static str,
    quantity: &'a str,
    t: Option<f64>,
    lambda: Option<String>,
    replicate: Option<usize>,
    lower: Option<f64>,
    upper: Option<f64>,
    exact: Option<f64>,
    empirical: Option<f64>,
    ci: Option<f64>,
    verdict: &'static str,
    reason: Option<&'a str>,
    note: Option<&'a str>,
    anchor: &'a str,
}

#[derive(Serialize)]
struct SeriesRow {
    t: f64,
    replicate: Option<usize>,
    lower: Option<f64>,
    upper: Option<f64>,
    exact: Option<f64>,
    empirical: Option<f64>,
    ci: Option<f64>,
    verdict: &'static str,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

impl VerificationReport {
    /// No failed rows.
    pub fn passed(&self) -> bool {
        self.summary.failed == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Report without the run-dependent metadata, for reproducibility checks.
    pub fn records_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&(&self.summary, &self.scenario, &self.records))?)
    }

    pub fn csv(&self) -> Result<Vec<u8>> {
        csv_bytes(self.records.iter().map(|r| FlatRow {
            check: r.check.id(),
            quantity: &r.quantity,
            t: r.t,
            lambda: r
                .lambda
                .as_ref()
                .map(|l| l.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")),
            replicate: r.replicate,
            lower: r.lower,
            upper: r.upper,
            exact: r.exact,
            empirical: r.empirical,
            ci: r.ci,
            verdict: r.verdict.label(),
            reason: match &r.verdict {
                Verdict::Skipped(s) => Some(s),
                _ => None,
            },
            note: r.note.as_deref(),
            anchor: &r.anchor,
        }))
    }

    /// Plot-ready series: rows with a time coordinate, grouped by
    /// `<check>_<quantity>`.
    pub fn series(&self) -> Result<BTreeMap<String, Vec<u8>>> {
        let mut groups: BTreeMap<String, Vec<&CheckRecord>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.t.is_some()) {
            groups.entry(format!("{}_{}", r.check.id(), r.quantity)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|(k, rows)| {
                let bytes = csv_bytes(rows.into_iter().map(|r| SeriesRow {
                    t: r.t.expect("filtered"),
                    replicate: r.replicate,
                    lower: r.lower,
                    upper: r.upper,
                    exact: r.exact,
                    empirical: r.empirical,
                    ci: r.ci,
                    verdict: r.verdict.label(),
                }))?;
                Ok((k, bytes))
            })
            .collect()
    }

    /// Writes `report.json`, `report.csv` and `series_<name>.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join("report.json");
        write_atomic(&path, self.to_json()?.as_bytes())?;
        written.push(path);
        let path = dir.join("report.csv");
        write_atomic(&path, &self.csv()?)?;
        written.push(path);
        for (name, bytes) in self.series()? {
            let path = dir.join(format!("series_{name}.csv"));
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}
