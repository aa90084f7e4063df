use std::path::Path;

use anyhow::Context;
use serde_json::{json, Value};

use ldpkit::determlimit::{find_fixed_point, integrate_ode, vector_field, OdeConfig};
use ldpkit::ldp::{hamiltonian, integrate_hamilton, minimize_action, MinimizeOptions, PhasePoint, Quadrature};
use ldpkit::master_cit::{
    affinity_coefficients, entropy_balance, evolve_master, free_energy_balance, relative_entropy,
    stationary_distribution, MasterEquationSpec, ProbabilityVector,
};
use ldpkit::quasipotential::{
    lyapunov_scan, ou_rate_function, stationary_hje_residual, Horizon, Potential,
    RateFunctionCandidate, TimeDependentOu,
};
use ldpkit::simulate::{
    empirical_rate_function, ensemble_mean, simulate_paths, simulate_terminal_states,
    write_rate_function_csv, EnsembleHistogram, SimConfig,
};
use ldpkit::thermo::{entropy_ledger, write_ledger_csv};
use ldpkit::{GeneratorSpec, ModelConfig, StateVector, Trajectory};

use crate::manifest::Recorder;
use crate::parse::{self, usage};
use crate::{
    BalanceKind, CandidateArgs, CandidateKind, Cli, Command, EntropyArgs, FixedpointArgs,
    HamiltonArgs, HjeCheckArgs, LdfArgs, LyapunovArgs, MasterArgs, OdeArgs, PathArgs,
    QuadratureKind, SamplingArgs, SimulateArgs,
};

pub fn run(cli: &Cli) -> anyhow::Result<Value> {
    let name = match &cli.command {
        Command::Simulate(_) => "simulate",
        Command::Ldf(_) => "ldf",
        Command::Ode(_) => "ode",
        Command::Fixedpoint(_) => "fixedpoint",
        Command::HjeCheck(_) => "hje-check",
        Command::Lyapunov(_) => "lyapunov",
        Command::Hamilton(_) => "hamilton",
        Command::Path(_) => "path",
        Command::Entropy(_) => "entropy",
        Command::Master(_) => "master",
    };
    let mut rec = Recorder::new(name);
    let mut summary = match &cli.command {
        Command::Simulate(a) => simulate(a, &mut rec)?,
        Command::Ldf(a) => ldf(a, &mut rec)?,
        Command::Ode(a) => ode(a, &mut rec)?,
        Command::Fixedpoint(a) => fixedpoint(a, &mut rec)?,
        Command::HjeCheck(a) => hje_check(a, &mut rec)?,
        Command::Lyapunov(a) => lyapunov(a, &mut rec)?,
        Command::Hamilton(a) => hamilton(a, &mut rec)?,
        Command::Path(a) => path(a, &mut rec)?,
        Command::Entropy(a) => entropy(a, &mut rec)?,
        Command::Master(a) => master(a, &mut rec)?,
    };
    let manifest = rec.finish(cli.manifest.as_deref())?;
    log::info!("{name}: manifest written to {}", manifest.display());
    summary["command"] = json!(name);
    summary["manifest"] = json!(manifest.display().to_string());
    Ok(summary)
}

fn load_model(rec: &mut Recorder, path: &Path) -> anyhow::Result<GeneratorSpec> {
    let bytes = parse::read_input(path)?;
    rec.input(path, &bytes);
    rec.param("model", path.display().to_string());
    let text = String::from_utf8(bytes).map_err(|_| usage("model file is not UTF-8"))?;
    let config = ModelConfig::from_json(&text)
        .with_context(|| format!("parsing model {}", path.display()))?;
    Ok(GeneratorSpec::new(config)?)
}

fn state(text: &str, what: &str, spec: &GeneratorSpec) -> anyhow::Result<StateVector> {
    let z = parse::vector(text, what)?;
    spec.check_state(&z)?;
    Ok(z)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Terminal states of the ensemble described by the sampling flags.
fn sample(
    a: &SamplingArgs,
    rec: &mut Recorder,
) -> anyhow::Result<(GeneratorSpec, SimConfig, StateVector, EnsembleHistogram, Vec<StateVector>)> {
    let spec = load_model(rec, &a.model)?;
    let z0 = match &a.z0 {
        Some(t) => state(t, "z0", &spec)?,
        None => vec![0.0; spec.dimension()],
    };
    let cfg = SimConfig::new(a.epsilon, a.t_end, a.dt, a.paths, a.seed);
    let bins = parse::bins(a.bins.as_deref())?;
    rec.seed = Some(a.seed);
    rec.param("epsilon", a.epsilon);
    rec.param("paths", a.paths);
    rec.param("t_end", a.t_end);
    rec.param("dt", a.dt);
    rec.param("z0", &z0);
    rec.param("bins", a.bins.as_deref().unwrap_or("auto"));
    let states = simulate_terminal_states(&spec, &z0, &cfg)?;
    let hist = EnsembleHistogram::from_states(&states, a.epsilon, a.t_end, &bins)?;
    Ok((spec, cfg, z0, hist, states))
}

fn simulate(a: &SimulateArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let (spec, cfg, z0, hist, states) = sample(&a.sampling, rec)?;
    rec.param("stride", a.stride);
    rec.output(&a.out, &csv_bytes(|w| hist.write_csv(w))?)?;
    if let Some(path) = &a.trajectory_out {
        // path 0 of the ensemble: substreams make it independent of n_paths
        let one = SimConfig { n_paths: 1, ..cfg }.with_stride(a.stride);
        let tr = &simulate_paths(&spec, &z0, &one)?[0];
        rec.output(path, &csv_bytes(|w| tr.write_csv(w))?)?;
    }
    let (mean, se) = ensemble_mean(&states)?;
    Ok(json!({
        "n_paths": hist.n_paths,
        "in_range": hist.counts.iter().sum::<u64>(),
        "out_of_range": hist.out_of_range,
        "mean": mean,
        "std_err": se,
        "time": cfg.t_end,
    }))
}

fn ldf(a: &LdfArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let (_, cfg, _, hist, _) = sample(&a.sampling, rec)?;
    rec.param("min_count", a.min_count);
    let points = empirical_rate_function(&hist, a.min_count)?;
    rec.output(&a.out, &csv_bytes(|w| write_rate_function_csv(&points, w))?)?;
    let mut summary = json!({
        "n_paths": hist.n_paths,
        "reported_bins": points.len(),
        "time": cfg.t_end,
    });
    if let Some(text) = &a.ou_reference {
        let ad = parse::vector(text, "ou-reference")?;
        let [oa, od] = ad[..] else {
            return Err(usage("ou-reference must be a,D"));
        };
        if hist.dimension() != 1 {
            return Err(usage("ou-reference needs a one-dimensional model"));
        }
        rec.param("ou_reference", &ad);
        let dev = points
            .iter()
            .map(|p| Ok(p.phi_hat - ou_rate_function(oa, od, p.z[0], Horizon::At(cfg.t_end))?))
            .collect::<anyhow::Result<Vec<f64>>>()?;
        summary["max_abs_deviation"] = json!(max_abs(dev));
    }
    Ok(summary)
}

fn ode(a: &OdeArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let spec = load_model(rec, &a.model)?;
    let z0 = state(&a.z0, "z0", &spec)?;
    rec.param("z0", &z0);
    rec.param("t_end", a.t_end);
    rec.param("dt", a.dt);
    rec.param("stride", a.stride);
    let tr = integrate_ode(&spec, &z0, &OdeConfig::new(a.t_end, a.dt).with_stride(a.stride))?;
    rec.output(&a.out, &csv_bytes(|w| tr.write_csv(w))?)?;
    let last = tr.last_state().expect("trajectory has a final state");
    Ok(json!({
        "final_time": tr.t_end(),
        "final_state": last,
        "final_field": vector_field(&spec, last)?,
        "points": tr.len(),
    }))
}

fn fixedpoint(a: &FixedpointArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let spec = load_model(rec, &a.model)?;
    let guess = state(&a.guess, "guess", &spec)?;
    rec.param("guess", &guess);
    rec.param("tol", a.tol);
    let z = find_fixed_point(&spec, &guess, a.tol)?;
    let f = vector_field(&spec, &z)?;
    Ok(json!({
        "fixed_point": z,
        "field_residual": max_abs(f),
    }))
}

fn candidate(
    c: &CandidateArgs,
    spec: &GeneratorSpec,
    rec: &mut Recorder,
) -> anyhow::Result<RateFunctionCandidate> {
    rec.param("candidate", format!("{:?}", c.candidate).to_lowercase());
    match c.candidate {
        CandidateKind::Ou => {
            rec.param("a", c.a);
            rec.param("D", c.diffusion);
            Ok(RateFunctionCandidate::ou_quadratic(c.a, c.diffusion)?)
        }
        CandidateKind::Relent => {
            let text = c.zss.as_deref().ok_or_else(|| usage("--zss is required for relent"))?;
            let zss = parse::vector(text, "zss")?;
            if zss.len() != spec.dimension() {
                return Err(usage(format!(
                    "zss has {} entries, model dimension is {}",
                    zss.len(),
                    spec.dimension()
                )));
            }
            rec.param("zss", &zss);
            Ok(RateFunctionCandidate::relative_entropy(zss)?)
        }
        CandidateKind::Table => {
            let path = c.table.as_deref().ok_or_else(|| usage("--table is required for table"))?;
            let bytes = parse::read_input(path)?;
            rec.input(path, &bytes);
            rec.param("table", path.display().to_string());
            let text = String::from_utf8(bytes).map_err(|_| usage("table is not UTF-8"))?;
            let (mut grid, mut values) = (vec![], vec![]);
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                let row: Vec<&str> = line.split(',').collect();
                let parsed: Option<Vec<f64>> = row.iter().map(|s| s.trim().parse().ok()).collect();
                match parsed.as_deref() {
                    Some(&[z, phi]) => {
                        grid.push(z);
                        values.push(phi);
                    }
                    // header
                    None if grid.is_empty() => {}
                    _ => return Err(usage(format!("table row {line:?} must be z,phi"))),
                }
            }
            if spec.dimension() != 1 {
                return Err(usage("tabulated candidates are one-dimensional"));
            }
            Ok(RateFunctionCandidate::tabulated(grid, values)?)
        }
    }
}

fn hje_check(a: &HjeCheckArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let spec = load_model(rec, &a.model)?;
    let cand = candidate(&a.candidate, &spec, rec)?;
    let points = parse::tensor_grid(&a.grid, spec.dimension())?;
    rec.param("grid", &a.grid);
    let n = spec.dimension();
    let header: Vec<String> = (1..=n).map(|i| format!("z{i}")).collect();
    let mut csv = String::new();
    let mut worst = 0.0_f64;
    let mut count = 0usize;
    if let Some(times) = &a.times {
        // transient OU candidate: d phi/dt + H(z, grad phi) = 0
        if a.candidate.candidate != CandidateKind::Ou || n != 1 {
            return Err(usage("--times needs the ou candidate and a one-dimensional model"));
        }
        rec.param("times", times);
        let ou = TimeDependentOu::new(a.candidate.a, a.candidate.diffusion)?;
        csv.push_str("t,z1,residual\n");
        for t in parse::grid(times)? {
            for z in &points {
                let g = ou.gradient(z[0], t)?;
                let r = ou.time_derivative(z[0], t)? + hamiltonian(&spec, z, &[g])?;
                worst = worst.max(r.abs());
                count += 1;
                csv.push_str(&format!("{t},{},{r}\n", z[0]));
            }
        }
    } else {
        csv.push_str(&format!("{},residual\n", header.join(",")));
        for z in &points {
            let r = stationary_hje_residual(&spec, &cand, z)?;
            worst = worst.max(r.abs());
            count += 1;
            let zs: Vec<String> = z.iter().map(f64::to_string).collect();
            csv.push_str(&format!("{},{r}\n", zs.join(",")));
        }
    }
    if let Some(out) = &a.out {
        rec.output(out, csv.as_bytes())?;
    }
    Ok(json!({
        "equation": if a.times.is_some() { "transient" } else { "stationary" },
        "points": count,
        "max_abs_residual": worst,
    }))
}

fn lyapunov(a: &LyapunovArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let spec = load_model(rec, &a.model)?;
    let cand = candidate(&a.candidate, &spec, rec)?;
    let z0 = state(&a.z0, "z0", &spec)?;
    rec.param("z0", &z0);
    rec.param("t_end", a.t_end);
    rec.param("dt", a.dt);
    let tr = integrate_ode(&spec, &z0, &OdeConfig::new(a.t_end, a.dt))?;
    let samples = lyapunov_scan(&spec, &cand, &tr)?;
    let mut csv = String::from("t,phi,dphi_dt,entropy\n");
    for s in &samples {
        csv.push_str(&format!("{},{},{},{}\n", s.t, s.phi, s.dphi_dt, s.entropy()));
    }
    rec.output(&a.out, csv.as_bytes())?;
    let max_rate = samples.iter().map(|s| s.dphi_dt).fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "samples": samples.len(),
        "max_dphi_dt": max_rate,
        "initial_phi": samples[0].phi,
        "final_phi": samples[samples.len() - 1].phi,
    }))
}

fn hamilton(a: &HamiltonArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let spec = load_model(rec, &a.model)?;
    let z0 = state(&a.z0, "z0", &spec)?;
    let y0 = state(&a.y0, "y0", &spec)?;
    rec.param("z0", &z0);
    rec.param("y0", &y0);
    rec.param("t_end", a.t_end);
    rec.param("dt", a.dt);
    let run = integrate_hamilton(&spec, &PhasePoint::new(z0, y0), a.t_end, a.dt)?;
    let n = spec.dimension();
    let names: Vec<String> = (1..=n)
        .map(|i| format!("z{i}"))
        .chain((1..=n).map(|i| format!("y{i}")))
        .collect();
    let mut csv = format!("t,{},H\n", names.join(","));
    for (t, p) in run.times.iter().zip(&run.points) {
        let h = hamiltonian(&spec, &p.z, &p.y)?;
        let vals: Vec<String> = p.z.iter().chain(&p.y).map(f64::to_string).collect();
        csv.push_str(&format!("{t},{},{h}\n", vals.join(",")));
    }
    rec.output(&a.out, csv.as_bytes())?;
    let last = &run.points[run.points.len() - 1];
    Ok(json!({
        "initial_energy": run.initial_energy,
        "max_energy_drift": run.max_energy_drift,
        "final_z": last.z,
        "final_y": last.y,
    }))
}

fn path(a: &PathArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let spec = load_model(rec, &a.model)?;
    let from = state(&a.from, "from", &spec)?;
    let to = state(&a.to, "to", &spec)?;
    let opts = MinimizeOptions {
        gtol: a.gtol,
        max_iters: a.max_iters,
        quadrature: match a.quadrature {
            QuadratureKind::Midpoint => Quadrature::Midpoint,
            QuadratureKind::Left => Quadrature::LeftEndpoint,
        },
        ..MinimizeOptions::default()
    };
    rec.param("from", &from);
    rec.param("to", &to);
    rec.param("T", a.horizon);
    rec.param("N", a.segments);
    rec.param("gtol", a.gtol);
    rec.param("max_iters", a.max_iters);
    rec.param("quadrature", format!("{:?}", a.quadrature).to_lowercase());
    let res = minimize_action(&spec, &from, &to, a.horizon, a.segments, &opts)?;
    if let Some(out) = &a.out {
        let tr: Trajectory = res.path.to_trajectory();
        rec.output(out, &csv_bytes(|w| tr.write_csv(w))?)?;
    }
    Ok(json!({
        "action": res.action,
        "iterations": res.iterations,
        "gradient_norm": res.gradient_norm,
        "converged": res.converged,
    }))
}

fn entropy(a: &EntropyArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let spec = load_model(rec, &a.model)?;
    let cand = candidate(&a.candidate, &spec, rec)?;
    let z0 = state(&a.z0, "z0", &spec)?;
    rec.param("z0", &z0);
    rec.param("t_end", a.t_end);
    rec.param("dt", a.dt);
    rec.param("stride", a.stride);
    let tr = integrate_ode(&spec, &z0, &OdeConfig::new(a.t_end, a.dt).with_stride(a.stride))?;
    let rows = entropy_ledger(&spec, &cand, &tr)?;
    rec.output(&a.out, &csv_bytes(|w| write_ledger_csv(&rows, w))?)?;
    let hje = tr
        .states
        .iter()
        .map(|z| stationary_hje_residual(&spec, &cand, z))
        .collect::<ldpkit::Result<Vec<f64>>>()?;
    Ok(json!({
        "rows": rows.len(),
        "max_identity_residual": max_abs(rows.iter().map(|r| r.terms.identity_residual())),
        "max_sigma_balance_residual": max_abs(rows.iter().map(|r| r.sigma.balance_residual())),
        "max_hje_residual": max_abs(hje),
        "min_production": rows.iter().map(|r| r.terms.entropy_production).fold(f64::INFINITY, f64::min),
        "min_sigma1": rows.iter().map(|r| r.sigma.sigma1).fold(f64::INFINITY, f64::min),
        "final_phi": cand.value(tr.last_state().expect("nonempty"))?,
    }))
}

fn master(a: &MasterArgs, rec: &mut Recorder) -> anyhow::Result<Value> {
    let bytes = parse::read_input(&a.rates)?;
    rec.input(&a.rates, &bytes);
    rec.param("rates", a.rates.display().to_string());
    let text = String::from_utf8(bytes).map_err(|_| usage("rate matrix is not UTF-8"))?;
    let spec = MasterEquationSpec::from_csv(&text)?;
    let n = spec.n_states();
    let p = match &a.p {
        Some(t) => parse::vector(t, "p")?,
        None => vec![1.0 / n as f64; n],
    };
    rec.param("p", &p);
    rec.param("balance", format!("{:?}", a.balance).to_lowercase());
    let p = ProbabilityVector::new(p)?;
    let pi = stationary_distribution(&spec)?;
    let ledger = match a.balance {
        BalanceKind::Entropy => entropy_balance(&spec, &p)?,
        BalanceKind::FreeEnergy => free_energy_balance(&spec, &p)?,
    };
    rec.output(&a.out, &csv_bytes(|w| ledger.write_csv(w))?)?;
    let aff = affinity_coefficients(&spec, &p)?;
    let mut summary = json!({
        "stationary_distribution": pi.as_slice(),
        "total_production": ledger.total_production(),
        "total_exchange": ledger.total_exchange(),
        "rate": ledger.rate,
        "split_residual": ledger.split_residual(),
        "m_positive": aff.m_positive(),
        "m_tilde_positive": aff.tilde_positive(),
    });
    if let Some(t_end) = a.t_end {
        rec.param("t_end", t_end);
        rec.param("dt", a.dt);
        let tr = evolve_master(&spec, &p, t_end, a.dt)?;
        let kl: Vec<f64> = tr
            .probabilities
            .iter()
            .map(|q| relative_entropy(q, pi.as_slice()))
            .collect();
        summary["max_normalization_drift"] = json!(tr.max_normalization_drift);
        summary["max_relative_entropy_increase"] = json!(kl
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max));
        summary["final_p"] = json!(tr.probabilities[tr.probabilities.len() - 1]);
    }
    Ok(summary)
}
