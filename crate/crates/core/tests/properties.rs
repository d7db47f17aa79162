use cbilab::cumulant::{
    closed_form_quadratic, cumulant_at, moment_semigroup, solve_cumulant, vbar_quadratic_closed_form,
    vbar_scalar_root,
};
use cbilab::distance::{tv_exact_quadratic, w1_1d_quantile, w1_exact_empirical, EmpiricalLaw};
use cbilab::mc::rng_for;
use cbilab::mechanism::{
    BranchingMechanism, DominationGrid, ImmigrationMechanism, JumpComponent, MassVector, ScalarMechanism,
};
use cbilab::scenario::ScenarioDocument;
use cbilab::simulate::{SimConfig, Simulator};
use nalgebra::DMatrix;
use proptest::prelude::*;

const TOL: f64 = 1e-10;

fn jump_strategy(d: usize, owner: usize) -> impl Strategy<Value = Vec<JumpComponent>> {
    let exp = (0..d, 0.1..2.0f64, 0.05..1.5f64)
        .prop_map(|(axis, mean, rate)| JumpComponent::ExponentialAxis { axis, mean, rate });
    let stable = (0.1..0.9f64, 0.1..2.0f64).prop_map(move |(alpha, scale)| JumpComponent::StableAxis {
        axis: owner,
        alpha,
        scale,
    });
    let point = (prop::collection::vec(0.0..1.0f64, d), 0.1..1.0f64).prop_map(move |(mut u, weight)| {
        u[owner] += 0.1;
        JumpComponent::PointMass { u, weight }
    });
    (prop::option::of(exp), prop::option::of(stable), prop::option::of(point))
        .prop_map(|(a, b, c)| a.into_iter().chain(b).chain(c).collect())
}

fn mechanism_strategy() -> impl Strategy<Value = BranchingMechanism> {
    (1usize..=3)
        .prop_flat_map(|d| {
            let jumps: Vec<_> = (0..d).map(|i| jump_strategy(d, i)).collect();
            (
                prop::collection::vec(0.5..4.0f64, d),
                prop::collection::vec(0.0..2.0f64, d),
                prop::collection::vec(0.0..0.4f64, d * d),
                jumps,
            )
        })
        .prop_map(|(b, c, eta, jumps)| {
            let d = b.len();
            let eta = DMatrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { eta[i * d + j] });
            BranchingMechanism::new(b, c, eta, jumps).expect("generated mechanisms are valid")
        })
}

/// Jump-free mechanisms keep the ODE cheap for the semigroup properties.
fn quadratic_strategy() -> impl Strategy<Value = BranchingMechanism> {
    (1usize..=3)
        .prop_flat_map(|d| {
            (
                prop::collection::vec(0.5..3.0f64, d),
                prop::collection::vec(0.1..2.0f64, d),
                prop::collection::vec(0.0..0.3f64, d * d),
            )
        })
        .prop_map(|(b, c, eta)| {
            let d = b.len();
            let eta = DMatrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { eta[i * d + j] });
            BranchingMechanism::new(b, c, eta, vec![Vec::new(); d]).unwrap()
        })
}

fn lambda_for(d: usize, seed: &[f64]) -> Vec<f64> {
    (0..d).map(|i| seed[i % seed.len()]).collect()
}

fn immigration_strategy(d: usize) -> impl Strategy<Value = ImmigrationMechanism> {
    (
        prop::collection::vec(0.0..2.0f64, d),
        prop::option::of((0..d, 0.1..2.0f64, 0.1..1.0f64)),
    )
        .prop_map(|(beta, exp)| {
            let nu = exp
                .map(|(axis, mean, rate)| vec![JumpComponent::ExponentialAxis { axis, mean, rate }])
                .unwrap_or_default();
            ImmigrationMechanism::new(beta, nu).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mechanisms_vanish_at_zero(mech in mechanism_strategy()) {
        let d = mech.dim();
        prop_assert!(mech.phi(&vec![0.0; d]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn local_projection_shape(mech in mechanism_strategy()) {
        let g = mech.gamma_matrix().unwrap();
        prop_assert!(g.iter().all(|&x| x >= 0.0));
        let lin = mech.net_decay_rates();
        for i in 0..mech.dim() {
            let f: Vec<f64> = (0..=500)
                .map(|k| {
                    let z = k as f64 * 0.1;
                    mech.local_projection(i, z).unwrap() - lin[i] * z
                })
                .collect();
            for w in f.windows(3) {
                let scale = 1.0 + w[1].abs();
                prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-10 * scale, "{w:?}");
            }
            prop_assert!(f.iter().all(|&x| x >= -1e-12));
        }
    }

    #[test]
    fn dominating_mechanism_is_a_minorant(mech in mechanism_strategy()) {
        let dom = mech.dominating_mechanism(DominationGrid::default()).unwrap();
        for i in 0..mech.dim() {
            for k in 0..=500 {
                let z = k as f64 * 0.1;
                let local = mech.local_projection(i, z).unwrap();
                prop_assert!(local >= dom.phi(z) - 1e-12 * (1.0 + local.abs()), "i = {i}, z = {z}");
            }
        }
        prop_assert_eq!(dom.phi(0.0), 0.0);
    }

    #[test]
    fn immigration_is_concave_and_increasing(
        imm in immigration_strategy(2),
        w in prop::collection::vec(0.0..1.0f64, 2),
    ) {
        prop_assert_eq!(imm.psi(&[0.0, 0.0]).unwrap(), 0.0);
        let f: Vec<f64> = (0..=200).map(|k| imm.psi(&[k as f64 * 0.1 * w[0], k as f64 * 0.1 * w[1]]).unwrap()).collect();
        for p in f.windows(2) {
            prop_assert!(p[1] - p[0] >= 0.0);
        }
        for p in f.windows(3) {
            prop_assert!(p[0] - 2.0 * p[1] + p[2] <= 1e-10);
        }
    }

    #[test]
    fn cumulant_semigroup_law(
        mech in quadratic_strategy(),
        seed in prop::collection::vec(0.0..10.0f64, 3),
        t in prop::sample::select(vec![0.1, 0.5, 1.0]),
        s in prop::sample::select(vec![0.1, 0.5, 1.0]),
    ) {
        let l = lambda_for(mech.dim(), &seed);
        let direct = cumulant_at(&mech, &l, &[t + s], TOL).unwrap().remove(0);
        let vs = cumulant_at(&mech, &l, &[s], TOL).unwrap().remove(0);
        let composed = cumulant_at(&mech, &vs, &[t], TOL).unwrap().remove(0);
        for (a, b) in direct.iter().zip(&composed) {
            prop_assert!((a - b).abs() <= 10.0 * TOL * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn cumulant_is_monotone_in_lambda(
        mech in quadratic_strategy(),
        seed in prop::collection::vec(0.0..10.0f64, 3),
        bump in prop::collection::vec(0.0..5.0f64, 3),
        t in 0.05..3.0f64,
    ) {
        let d = mech.dim();
        let lo = lambda_for(d, &seed);
        let hi: Vec<f64> = lo.iter().zip(lambda_for(d, &bump)).map(|(a, b)| a + b).collect();
        let v_lo = cumulant_at(&mech, &lo, &[t], TOL).unwrap().remove(0);
        let v_hi = cumulant_at(&mech, &hi, &[t], TOL).unwrap().remove(0);
        for (a, b) in v_lo.iter().zip(&v_hi) {
            prop_assert!(*a <= b + 10.0 * TOL * (1.0 + b.abs()));
        }
    }

    #[test]
    fn cumulant_bounds(
        mech in quadratic_strategy(),
        seed in prop::collection::vec(0.0..20.0f64, 3),
        t in 0.05..4.0f64,
    ) {
        let l = lambda_for(mech.dim(), &seed);
        let v = cumulant_at(&mech, &l, &[t], TOL).unwrap().remove(0);
        prop_assert!(v.iter().all(|&x| x >= 0.0));

        // Linear bound through the first-moment semigroup.
        let pi = moment_semigroup(&mech, t).unwrap();
        let lin = pi.apply(&l);
        for (a, b) in v.iter().zip(&lin) {
            prop_assert!(*a <= b + 10.0 * TOL * (1.0 + b.abs()), "{a} > {b}");
        }

        // Scalar domination at the sup norm.
        let dom = mech.dominating_mechanism(DominationGrid::default()).unwrap();
        let lmax = l.iter().copied().fold(0.0, f64::max);
        let star = solve_cumulant(&dom.as_branching(), &[lmax], t, TOL).unwrap().final_value()[0];
        let vmax = v.iter().copied().fold(0.0, f64::max);
        prop_assert!(vmax <= star + 10.0 * TOL * (1.0 + star), "{vmax} > {star}");
    }

    #[test]
    fn first_moments_decay(
        mech in mechanism_strategy(),
        f in prop::collection::vec(0.0..10.0f64, 3),
        t in 0.0..5.0f64,
    ) {
        let f = lambda_for(mech.dim(), &f);
        let pi = moment_semigroup(&mech, t).unwrap();
        prop_assert!(pi.p.iter().all(|&x| x >= 0.0));
        let sup = |x: &[f64]| x.iter().copied().fold(0.0, f64::max);
        let bound = (-mech.beta_star() * t).exp() * sup(&f);
        prop_assert!(sup(&pi.apply(&f)) <= bound + 1e-10 * (1.0 + bound));
    }

    #[test]
    fn vbar_methods_agree(b in -1.0..3.0f64, c in 0.1..3.0f64, t in 0.05..5.0f64) {
        let phi = ScalarMechanism::quadratic(b, c).unwrap();
        let root = vbar_scalar_root(&phi, t).unwrap();
        let closed = vbar_quadratic_closed_form(b, c, t).unwrap();
        prop_assert!((root - closed).abs() <= 1e-8 * closed, "{root} vs {closed}");
        // The limit dominates every finite initial value.
        prop_assert!(closed_form_quadratic(b, c, 1e3, t) <= closed * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sample_streams_are_deterministic(
        mech in quadratic_strategy(),
        seed in any::<u64>(),
        t in 0.1..1.0f64,
    ) {
        let d = mech.dim();
        let imm = ImmigrationMechanism::new(vec![0.5; d], Vec::new()).unwrap();
        let cfg = SimConfig { n_samples: 40, dt: 0.01, seed, ..Default::default() };
        let sim = Simulator::new(&mech, &imm, &cfg).unwrap();
        let mu = MassVector::new(vec![1.0; d]).unwrap();
        let a = sim.batch(40, 5, |s, rng| s.cbi_transition(&mu, t, rng)).unwrap();
        let b = sim.batch(40, 5, |s, rng| s.cbi_transition(&mu, t, rng)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn shared_immigration_adds_no_cost(
        mech in quadratic_strategy(),
        mu in prop::collection::vec(0.0..3.0f64, 3),
        nu in prop::collection::vec(0.0..3.0f64, 3),
        seed in any::<u64>(),
    ) {
        let d = mech.dim();
        let imm = ImmigrationMechanism::new(vec![1.0; d], Vec::new()).unwrap();
        let cfg = SimConfig { dt: 0.01, ..Default::default() };
        let sim = Simulator::new(&mech, &imm, &cfg).unwrap();
        let mu = MassVector::new(lambda_for(d, &mu)).unwrap();
        let nu = MassVector::new(lambda_for(d, &nu)).unwrap();
        for k in 0..8u64 {
            let plain = sim.couple_transitions(&mu, &nu, 0.7, &mut rng_for(seed, &[k])).unwrap();
            let cbi = sim.couple_cbi(&mu, &nu, 0.7, &mut rng_for(seed, &[k])).unwrap();
            prop_assert!((plain.cost() - cbi.cost()).abs() <= 1e-12 * (1.0 + cbi.left.total() + cbi.right.total()));
        }
    }

    #[test]
    fn ordered_starts_give_ordered_legs(
        mech in quadratic_strategy(),
        nu in prop::collection::vec(0.0..2.0f64, 3),
        extra in prop::collection::vec(0.0..2.0f64, 3),
        seed in any::<u64>(),
    ) {
        let d = mech.dim();
        let cfg = SimConfig { dt: 0.01, ..Default::default() };
        let sim = Simulator::new(&mech, &ImmigrationMechanism::none(d), &cfg).unwrap();
        let nu_v = lambda_for(d, &nu);
        let mu_v: Vec<f64> = nu_v.iter().zip(lambda_for(d, &extra)).map(|(a, b)| a + b).collect();
        let (mu, nu) = (MassVector::new(mu_v).unwrap(), MassVector::new(nu_v).unwrap());
        let mut rng = rng_for(seed, &[0]);
        for _ in 0..8 {
            let p = sim.couple_transitions(&mu, &nu, 0.5, &mut rng).unwrap();
            for i in 0..d {
                prop_assert!(p.left[i] >= p.right[i]);
            }
            prop_assert!((p.cost() - (p.left.total() - p.right.total())).abs() <= 1e-12 * (1.0 + p.left.total()));
        }
    }
}

fn empirical(d: usize, n: usize) -> impl Strategy<Value = Vec<MassVector>> {
    prop::collection::vec(prop::collection::vec(0.0..5.0f64, d), n)
        .prop_map(|rows| rows.into_iter().map(|r| MassVector::new(r).unwrap()).collect())
}

fn triple() -> impl Strategy<Value = (Vec<MassVector>, Vec<MassVector>, Vec<MassVector>)> {
    (1usize..=3, 1usize..=12).prop_flat_map(|(d, n)| (empirical(d, n), empirical(d, n), empirical(d, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_is_a_metric((a, b, c) in triple()) {
        let (a, b, c) = (EmpiricalLaw::new(a).unwrap(), EmpiricalLaw::new(b).unwrap(), EmpiricalLaw::new(c).unwrap());
        let w = |x: &EmpiricalLaw, y: &EmpiricalLaw| w1_exact_empirical(x, y, 64).unwrap();
        prop_assert_eq!(w(&a, &b), w(&b, &a));
        prop_assert_eq!(w(&a, &a), 0.0);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
    }

    #[test]
    fn w1_is_below_any_pairing((a, b, _) in triple()) {
        let paired: f64 = a.iter().zip(&b).map(|(x, y)| x.var_distance(y)).sum::<f64>() / a.len() as f64;
        let w = w1_exact_empirical(&EmpiricalLaw::new(a.clone()).unwrap(), &EmpiricalLaw::new(b.clone()).unwrap(), 64).unwrap();
        prop_assert!(w <= paired + 1e-12);
    }

    #[test]
    fn w1_matches_quantile_pairing_in_one_dimension(
        a in prop::collection::vec(0.0..10.0f64, 1..40),
        b in prop::collection::vec(0.0..10.0f64, 40),
    ) {
        let b = &b[..a.len()];
        let (la, lb) = (EmpiricalLaw::from_scalars(&a).unwrap(), EmpiricalLaw::from_scalars(b).unwrap());
        let exact = w1_exact_empirical(&la, &lb, 64).unwrap();
        let quantile = w1_1d_quantile(&la, &lb).unwrap();
        prop_assert!((exact - quantile).abs() <= 1e-12, "{exact} vs {quantile}");
    }

    #[test]
    fn exact_tv_is_a_bounded_symmetric_distance(
        x in 0.0..4.0f64,
        gap in 0.1..3.0f64,
        b in 0.2..2.0f64,
        c in 0.2..2.0f64,
        t in 0.05..3.0f64,
    ) {
        let y = x + gap;
        let xy = tv_exact_quadratic(x, y, b, c, t).unwrap();
        let yx = tv_exact_quadratic(y, x, b, c, t).unwrap();
        prop_assert!(xy > 0.0 && xy <= 2.0);
        prop_assert!((xy - yx).abs() <= 1e-12);
        prop_assert_eq!(tv_exact_quadratic(x, x, b, c, t).unwrap(), 0.0);
    }

    #[test]
    fn scenario_documents_round_trip(
        b in prop::collection::vec(0.1..3.0f64, 2),
        c in prop::collection::vec(0.0..3.0f64, 2),
        mu in prop::collection::vec(0.0..5.0f64, 2),
        times in prop::collection::vec(0.0..5.0f64, 0..4),
        seed in any::<u64>(),
        n in 1usize..100_000,
    ) {
        let mut times = times;
        times.sort_by(f64::total_cmp);
        let text = serde_json::json!({
            "schema_version": 1,
            "dimension": 2,
            "mechanism": { "b": b, "c": c },
            "immigration": { "beta": [0.5, 1.0] },
            "initial": { "mu": mu, "nu": [1.0, 0.0] },
            "times": times,
            "sim": { "n_samples": n, "dt": 0.01, "epsilon": 0.001, "seed": seed },
        })
        .to_string();
        let doc = ScenarioDocument::from_json(&text).unwrap();
        let again = ScenarioDocument::from_json(&doc.to_json().unwrap()).unwrap();
        prop_assert_eq!(doc, again);
    }
}
