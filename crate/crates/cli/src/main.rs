use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use cbilab::cumulant::{
    cumulant_with_immigration, moment_semigroup, solve_cumulant, stationary_laplace_exponent, stationary_mean,
    stationary_w1_tail, vbar_vector,
};
use cbilab::distance::{tv_empirical, w1_empirical, EmpiricalLaw, ASSIGNMENT_CAP};
use cbilab::export::{pairs_csv, read_samples_csv, samples_csv, write_atomic};
use cbilab::mechanism::DominationGrid;
use cbilab::scenario::{Scenario, ScenarioDocument};
use cbilab::simulate::Simulator;
use cbilab::verify::{run_scenario, Verdict, TV_BINS};
use cbilab::Error;

/// Multi-type continuous-state branching processes with immigration:
/// cumulants, exact and approximate samplers, couplings and distance checks.
#[derive(Parser)]
#[command(name = "cbilab", version)]
struct Cli {
    /// Worker threads for Monte Carlo batches (default: one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Values that override the scenario document.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Relative tolerance of the cumulant solver.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Folded mechanism, beta*, dominating mechanism and Grey's condition as JSON.
    MechInfo {
        scenario: PathBuf,
    },
    /// Solve the cumulant equation and write `t,v_1..v_d` as CSV.
    Cumulant {
        scenario: PathBuf,
        /// Initial value; a single number is used for every type.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        lambda: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        /// Also report the limit V̄ at t_end.
        #[arg(long)]
        vbar: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// First-moment matrix pi_t = exp(tM) and its row sums as JSON.
    Moments {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
    },
    /// Draw samples and write them as CSV.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, value_enum, default_value_t = Law::Transition)]
        law: Law,
        /// Initial measure for transition laws.
        #[arg(long, value_enum, default_value_t = Start::Mu)]
        from: Start,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Draw coupled pairs and write `left, right, cost` as CSV.
    Couple {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, value_enum, default_value_t = Coupling::Transitions)]
        kind: Coupling,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// W1 and total variation between two sample files.
    Distance {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = TV_BINS)]
        bins: usize,
        /// Sample cap for the assignment solver (d >= 2).
        #[arg(long, default_value_t = ASSIGNMENT_CAP)]
        cap: usize,
    },
    /// Run the scenario's checks and write report.json, report.csv and series CSVs.
    Verify {
        scenario: PathBuf,
        #[arg(long, default_value = "cbilab-report")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Stationary mean, Laplace exponents and W1(N_t, N_inf) as JSON;
    /// optionally N_inf samples as CSV.
    Stationary {
        scenario: PathBuf,
        /// Also write `--samples` draws from N_inf to this CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Law {
    /// Q_t(start, .)
    Transition,
    /// Q^N_t(start, .)
    Cbi,
    /// N_t
    Immigration,
    /// N_inf
    Stationary,
}

#[derive(Clone, Copy, ValueEnum)]
enum Start {
    Mu,
    Nu,
}

#[derive(Clone, Copy, ValueEnum)]
enum Coupling {
    /// Q_t(mu) and Q_t(nu)
    Transitions,
    /// Q^N_t(mu) and Q^N_t(nu)
    Cbi,
    /// N_t and N_inf
    Stationary,
    /// Q^N_t(mu) and N_inf
    ToStationary,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_input_error() || matches!(e, Error::Io(_)) { 2 } else { 3 };
        Failure { code, message: e.to_string() }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CliResult<T> = Result<T, Failure>;

fn load(path: &Path, o: &Overrides) -> CliResult<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let mut doc = ScenarioDocument::from_json(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    if let Some(s) = o.seed {
        doc.sim.seed = s;
    }
    if let Some(n) = o.samples {
        doc.sim.n_samples = n;
    }
    if let Some(dt) = o.dt {
        doc.sim.dt = dt;
    }
    if let Some(e) = o.epsilon {
        doc.sim.epsilon = e;
    }
    if let Some(t) = o.tolerance {
        doc.tolerance = t;
    }
    Ok(Scenario::from_document(doc)?)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, bytes)?,
        None => std::io::stdout().write_all(bytes).map_err(Error::from)?,
    }
    Ok(())
}

fn print_json(value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    println!("{text}");
    Ok(())
}

fn simulator(sc: &Scenario) -> CliResult<Simulator> {
    Ok(Simulator::new(&sc.mech, &sc.imm, &sc.sim_config())?)
}

fn cmd_mech_info(sc: &Scenario) -> CliResult<()> {
    let m = &sc.mech;
    let eta: Vec<Vec<f64>> = m.eta().row_iter().map(|r| r.iter().copied().collect()).collect();
    let gamma: Vec<Vec<f64>> = m.gamma_matrix()?.row_iter().map(|r| r.iter().copied().collect()).collect();
    let beta_star = m.beta_star();
    let dominating = match m.dominating_mechanism(DominationGrid::default()) {
        Ok(s) => json!({
            "b_star": s.b_star,
            "c_star": s.c_star,
            "jumps": s.m_star,
            "grey_condition": s.grey_condition(),
        }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let stationary = if beta_star > 0.0 { Some(stationary_mean(m, &sc.imm)?) } else { None };
    print_json(&json!({
        "dimension": m.dim(),
        "b": m.b(),
        "c": m.c(),
        "eta": eta,
        "jumps": m.jumps(),
        "gamma": gamma,
        "net_decay_rates": m.net_decay_rates(),
        "beta_star": beta_star,
        "dominating": dominating,
        "immigration": { "beta": sc.imm.beta(), "jumps": sc.imm.nu(), "mean_rate": sc.imm.mean_rate() },
        "stationary_mean": stationary,
    }))
}

fn lambda_vector(lambda: &[f64], d: usize) -> CliResult<Vec<f64>> {
    match lambda.len() {
        1 => Ok(vec![lambda[0]; d]),
        n if n == d => Ok(lambda.to_vec()),
        n => Err(input_error(format!("--lambda has {n} entries, dimension is {d}"))),
    }
}

fn cmd_cumulant(sc: &Scenario, lambda: &[f64], t_end: f64, vbar: bool, out: Option<&Path>) -> CliResult<()> {
    let lambda = lambda_vector(lambda, sc.dim())?;
    let path = solve_cumulant(&sc.mech, &lambda, t_end, sc.doc.tolerance)?;
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    emit(out, &buf)?;
    if vbar {
        if t_end <= 0.0 {
            eprintln!("V̄ at t = 0 is infinite");
        } else {
            match vbar_vector(&sc.mech, t_end, 1e-9) {
                Ok(v) => eprintln!("vbar(t = {t_end}) = {v:?}"),
                Err(Error::GreyConditionFails) => eprintln!("Grey's condition fails: V̄ is infinite"),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(())
}

fn cmd_moments(sc: &Scenario, t: f64) -> CliResult<()> {
    let p = moment_semigroup(&sc.mech, t)?;
    let matrix: Vec<Vec<f64>> = p.p.row_iter().map(|r| r.iter().copied().collect()).collect();
    print_json(&json!({
        "t": t,
        "pi_t": matrix,
        "row_sums": p.row_sums(),
        "beta_star_bound": (-sc.mech.beta_star() * t).exp(),
    }))
}

fn cmd_simulate(sc: &Scenario, t: f64, law: Law, from: Start, out: Option<&Path>) -> CliResult<()> {
    let sim = simulator(sc)?;
    let start = match from {
        Start::Mu => &sc.mu,
        Start::Nu => &sc.nu,
    };
    let draws = sim.batch(sc.doc.sim.n_samples, 0, |s, rng| match law {
        Law::Transition => s.transition(start, t, rng),
        Law::Cbi => s.cbi_transition(start, t, rng),
        Law::Immigration => s.immigration_law(t, rng),
        Law::Stationary => s.stationary(rng),
    })?;
    emit(out, &samples_csv(&draws)?)
}

fn cmd_couple(sc: &Scenario, t: f64, kind: Coupling, out: Option<&Path>) -> CliResult<()> {
    let sim = simulator(sc)?;
    let pairs = sim.batch(sc.doc.sim.n_samples, 0, |s, rng| match kind {
        Coupling::Transitions => s.couple_transitions(&sc.mu, &sc.nu, t, rng),
        Coupling::Cbi => s.couple_cbi(&sc.mu, &sc.nu, t, rng),
        Coupling::Stationary => s.couple_stationary(t, rng),
        Coupling::ToStationary => s.couple_to_stationary(&sc.mu, t, rng),
    })?;
    emit(out, &pairs_csv(&pairs)?)
}

fn cmd_distance(a: &Path, b: &Path, bins: usize, cap: usize) -> CliResult<()> {
    let la = EmpiricalLaw::new(read_samples_csv(a)?)?;
    let lb = EmpiricalLaw::new(read_samples_csv(b)?)?;
    let used = if la.dim() == 1 { la.len().max(lb.len()) } else { la.len().min(lb.len()).min(cap) };
    let w1 = w1_empirical(&la, &lb, cap)?;
    let tv = tv_empirical(&la, &lb, bins)?;
    print_json(&json!({
        "w1": w1,
        "w1_samples_used": used,
        "tv": tv.value,
        "tv_bin_spread": tv.spread,
        "atom_gap": tv.atom_gap,
        "n_a": la.len(),
        "n_b": lb.len(),
    }))
}

fn cmd_verify(sc: &Scenario, out: &Path) -> CliResult<u8> {
    let report = run_scenario(sc)?;
    let files = report.write_to(out)?;
    let mut by_check = std::collections::BTreeMap::<&str, (usize, usize, usize)>::new();
    for r in &report.records {
        let e = by_check.entry(r.check.id()).or_default();
        match r.verdict {
            Verdict::Pass => e.0 += 1,
            Verdict::Fail => e.1 += 1,
            Verdict::Skipped(_) => e.2 += 1,
        }
    }
    for (check, (p, f, s)) in &by_check {
        let status = if *f > 0 { "FAIL" } else { "ok" };
        println!("{status:<4} {check:<24} pass {p:>4}  fail {f:>4}  skipped {s:>3}");
    }
    let sm = report.summary;
    println!("total: {} passed, {} failed, {} skipped", sm.passed, sm.failed, sm.skipped);
    eprintln!("wrote {} files to {}", files.len(), out.display());
    Ok(if report.passed() { 0 } else { 1 })
}

fn cmd_stationary(sc: &Scenario, out: Option<&Path>) -> CliResult<()> {
    let beta_star = sc.mech.beta_star();
    if !(beta_star > 0.0) {
        return Err(Error::Supercritical { beta_star }.into());
    }
    let tol = sc.doc.tolerance;
    let laplace = sc
        .lambdas()
        .into_iter()
        .map(|l| {
            let e = stationary_laplace_exponent(&sc.mech, &sc.imm, &l, tol)?;
            Ok(json!({ "lambda": l, "exponent": e.value, "laplace": (-e.value).exp(), "tail_bound": e.tail_bound }))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let w1 = sc
        .doc
        .times
        .iter()
        .map(|&t| Ok(json!({ "t": t, "w1": stationary_w1_tail(&sc.mech, &sc.imm, t)? })))
        .collect::<Result<Vec<_>, Error>>()?;
    let at_times = sc
        .doc
        .times
        .iter()
        .map(|&t| {
            let l = vec![1.0; sc.dim()];
            let (_, w) = cumulant_with_immigration(&sc.mech, &sc.imm, &l, t, tol)?;
            Ok(json!({ "t": t, "immigration_laplace_at_1": (-w).exp() }))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    print_json(&json!({
        "beta_star": beta_star,
        "stationary_mean": stationary_mean(&sc.mech, &sc.imm)?,
        "laplace": laplace,
        "w1_to_stationary": w1,
        "immigration_law": at_times,
    }))?;
    if let Some(path) = out {
        let sim = simulator(sc)?;
        let draws = sim.batch(sc.doc.sim.n_samples, 0, |s, rng| s.stationary(rng))?;
        write_atomic(path, &samples_csv(&draws)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<u8> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(input_error("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| input_error(e.to_string()))?;
    }
    match cli.command {
        Command::MechInfo { scenario } => cmd_mech_info(&load(&scenario, &Overrides::default())?)?,
        Command::Cumulant { scenario, lambda, t_end, vbar, out, overrides } => {
            cmd_cumulant(&load(&scenario, &overrides)?, &lambda, t_end, vbar, out.as_deref())?
        }
        Command::Moments { scenario, t } => cmd_moments(&load(&scenario, &Overrides::default())?, t)?,
        Command::Simulate { scenario, t, law, from, out, overrides } => {
            cmd_simulate(&load(&scenario, &overrides)?, t, law, from, out.as_deref())?
        }
        Command::Couple { scenario, t, kind, out, overrides } => {
            cmd_couple(&load(&scenario, &overrides)?, t, kind, out.as_deref())?
        }
        Command::Distance { a, b, bins, cap } => cmd_distance(&a, &b, bins, cap)?,
        Command::Verify { scenario, out, overrides } => return cmd_verify(&load(&scenario, &overrides)?, &out),
        Command::Stationary { scenario, out, overrides } => {
            cmd_stationary(&load(&scenario, &overrides)?, out.as_deref())?
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
