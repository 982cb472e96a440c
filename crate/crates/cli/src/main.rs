// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! `cavmem`: simulate, optimize and read back a cavity/spin-ensemble memory.

use cavmem::basis::{assemble_read, assemble_write, tables, BasisSet, CoefficientTable, GramMatrices};
use cavmem::config::RunConfig;
use cavmem::decay::free_decay;
use cavmem::kernel::Drive;
use cavmem::manifest::Manifest;
use cavmem::noise::{amplitude_sweep, grid_study, AmplitudeSweep, NoiseHarness, NoiseSpec, NoiseStudyResult};
use cavmem::optimizer::{efficiency, max_violation, optimize, ControlSolution};
use cavmem::pipeline::Setup;
use cavmem::retrieval::{rebit_grid, retrieve, save_sweep_csv, sphere_grid, sweep, RetrievalMatrices, RetrievalResult, Superposition, SweepRow};
use cavmem::solver::{propagate_sections, save_trajectory_csv};
use cavmem::{Error, Result, C64};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cavmem", version, about = "Pulse design and retrieval for a cavity coupled to a spin ensemble")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; keys override the selected preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base parameter set.
    #[arg(long, global = true, value_parser = ["paper-case-a", "paper-case-b"])]
    preset: Option<String>,
    /// Directory for CSV outputs and manifest.json.
    #[arg(long, global = true, default_value = "cavmem-out")]
    output_dir: PathBuf,
    /// Nominal time step in ns.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Optimizer restarts.
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Seed for optimizer restarts and noise streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (parallel builds only).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cavity response to a write pulse followed by a readout pulse.
    Simulate(SimulateArgs),
    /// Build the basis responses and their Gram matrices.
    Basis,
    /// Optimize write and readout pulses.
    Optimize,
    /// Encode a superposition, read it back and report the errors.
    Retrieve(RetrieveArgs),
    /// Maximum retrieval error against the noise amplitude.
    NoiseSweep(NoiseArgs),
    /// Run a complete preset study.
    Reproduce {
        #[arg(value_enum)]
        target: Target,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Bundled coefficient table and state: table1-ket0, table1-ket1, table2-ket0, table2-ket1, or zero.
    #[arg(long, conflicts_with = "coefficients")]
    pulse: Option<String>,
    /// Coefficient CSV (role,k,re,im,amp_scale).
    #[arg(long)]
    coefficients: Option<PathBuf>,
    /// Logical state to write when reading a coefficient CSV.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    state: u8,
}

#[derive(Args, Clone)]
struct NoiseArgs {
    /// Coefficient CSV, or `paper` for the bundled table. Optimizes when absent.
    #[arg(long)]
    coefficients: Option<String>,
    /// Absolute noise amplitude δη in rad/ns^(1/2).
    #[arg(long, conflicts_with = "noise_rel")]
    noise: Option<f64>,
    /// Noise amplitude relative to the drive unit η₀ = κ.
    #[arg(long)]
    noise_rel: Option<f64>,
    /// Realizations per point.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    noise: NoiseArgs,
    /// α as `re` or `re,im`.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    /// β as `re` or `re,im`.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    #[arg(long, value_enum, conflicts_with_all = ["alpha", "beta"])]
    sweep: Option<Sweep>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    /// Rebit grid on both branches.
    Fig3,
    /// ε against δη over the configured amplitudes.
    NoiseAmplitudes,
    /// 21 × 41 qubit grid over the Bloch sphere.
    Sphere,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    CaseA,
    CaseB,
    Fig3,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cavmem: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    set_threads(cli.common.threads)?;
    let default_preset = match &cli.command {
        Command::Reproduce { target: Target::CaseB } => Some("paper-case-b"),
        Command::Reproduce { .. } => Some("paper-case-a"),
        _ => None,
    };
    let cfg = load_config(&cli.common, default_preset)?;
    let out = &cli.common.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::Config(format!("output-dir: cannot create {}: {e}", out.display())))?;
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, &a, out),
        Command::Basis => basis(&cfg, out),
        Command::Optimize => {
            let mut m = Manifest::new("optimize", &cfg);
            let setup = Setup::new(&cfg)?;
            let (b, g) = build(&setup)?;
            optimize_into(&setup, &b, &g, out, &mut m)?;
            m.write(out)
        }
        Command::Retrieve(a) => retrieve_cmd(&cfg, &a, out),
        Command::NoiseSweep(a) => {
            let r = RetrieveArgs { noise: a, alpha: None, beta: None, sweep: Some(Sweep::NoiseAmplitudes) };
            retrieve_cmd(&cfg, &r, out)
        }
        Command::Reproduce { target } => reproduce(&cfg, target, out),
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn set_threads(n: Option<usize>) -> Result<()> {
    if n.is_some_and(|n| n != 1) {
        log::warn!("built without the `parallel` feature; --threads ignored");
    }
    Ok(())
}

fn load_config(c: &Common, default_preset: Option<&str>) -> Result<RunConfig> {
    let preset = c.preset.as_deref().or(default_preset);
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("config: cannot read {}: {e}", path.display())))?;
            let cfg = RunConfig::from_toml_with_preset(&text, preset)?;
            if let Some(p) = &c.preset {
                if cfg.preset.as_deref() != Some(p.as_str()) {
                    return Err(Error::Config(format!("preset: {} selects '{}' but --preset is '{p}'", path.display(), cfg.preset.as_deref().unwrap_or(""))));
                }
            }
            cfg
        }
        None => RunConfig::preset(preset.unwrap_or("paper-case-a"))?,
    };
    if let Some(dt) = c.dt {
        cfg.numerics.dt = dt;
    }
    if let Some(r) = c.restarts {
        cfg.optimizer.restarts = r;
    }
    if let Some(s) = c.seed {
        cfg.optimizer.seed = s;
        cfg.noise.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build(setup: &Setup) -> Result<(BasisSet, GramMatrices)> {
    let b = setup.basis()?;
    let g = setup.gram(&b)?;
    Ok((b, g))
}

fn bundled_table(name: &str, kappa: f64) -> Result<CoefficientTable> {
    match name {
        "table1" => Ok(tables::case_a(kappa)),
        "table2" => Ok(tables::case_b(kappa)),
        _ => Err(Error::Config(format!("pulse: unknown table '{name}'"))),
    }
}

fn preset_table(cfg: &RunConfig, kappa: f64) -> Result<CoefficientTable> {
    match cfg.preset.as_deref() {
        Some("paper-case-b") => bundled_table("table2", kappa),
        _ => bundled_table("table1", kappa),
    }
}

fn simulate(cfg: &RunConfig, a: &SimulateArgs, out: &Path) -> Result<()> {
    let setup = Setup::new(cfg)?;
    let kappa = setup.params.kappa;
    let mut m = Manifest::new("simulate", cfg);
    let (table, state, source) = match (&a.pulse, &a.coefficients) {
        (_, Some(path)) => (Some(CoefficientTable::load(path, kappa, false)?), a.state, path.display().to_string()),
        (Some(p), None) if p == "zero" => (None, 0, p.clone()),
        (Some(p), None) => {
            let (name, ket) = p.split_once('-').ok_or_else(|| Error::Config(format!("pulse: expected <table>-ket<0|1>, got '{p}'")))?;
            let state = match ket {
                "ket0" => 0,
                "ket1" => 1,
                _ => return Err(Error::Config(format!("pulse: unknown state '{ket}'"))),
            };
            (Some(bundled_table(name, kappa)?), state, p.clone())
        }
        (None, None) => (Some(preset_table(cfg, kappa)?), 0, "preset table, state 0".into()),
    };
    let drives = match &table {
        None => vec![Drive::Zero, Drive::Zero],
        Some(t) => {
            let xi = if state == 0 { &t.xi0 } else { &t.xi1 };
            vec![
                Drive::Sine(cavmem::basis::Pulse::on_section(xi.clone(), &setup.sections[0], t.write_scale)),
                Drive::Sine(cavmem::basis::Pulse::on_section(t.zeta.clone(), &setup.sections[1], t.read_scale)),
            ]
        }
    };
    let traj = propagate_sections(&setup.ensemble, &setup.kernels, &setup.sections, &drives)?;
    let path = out.join("trajectory.csv");
    save_trajectory_csv(&path, &traj)?;
    m.set("pulse", json!({ "source": source, "state": state }));
    m.output(&path)?;
    m.write(out)
}

fn basis(cfg: &RunConfig, out: &Path) -> Result<()> {
    let setup = Setup::new(cfg)?;
    let (b, g) = build(&setup)?;
    let path = out.join("gram.csv");
    let mut w = csv_file(&path)?;
    writeln!(w, "matrix,row,col,re,im")?;
    for (name, mat) in [("readout", &g.readout), ("bin_a", &g.bin_a), ("bin_b", &g.bin_b), ("delay", &g.delay)] {
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                let v = mat[(i, j)];
                writeln!(w, "{name},{i},{j},{:.16e},{:.16e}", v.re, v.im)?;
            }
        }
    }
    for (i, v) in g.endpoint.iter().enumerate() {
        writeln!(w, "endpoint,{i},0,{:.16e},{:.16e}", v.re, v.im)?;
    }
    w.flush()?;
    drop(w);
    let (wf, rf) = setup.fundamentals();
    let mut m = Manifest::new("basis", cfg);
    m.set("basis", json!({ "n_write": b.n_write(), "n_read": b.n_read(), "omega_f_write": wf, "omega_f_read": rf, "bins": [g.bins.start, g.bins.tau_a, g.bins.tau_b, g.bins.tau_c] }));
    m.output(&path)?;
    m.write(out)
}

fn csv_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Runs the optimizer and writes coefficients, solution and per-state trajectories.
fn optimize_into(setup: &Setup, b: &BasisSet, g: &GramMatrices, out: &Path, m: &mut Manifest) -> Result<ControlSolution> {
    let problem = setup.control_problem(b, g);
    let sol = optimize(&problem)?;
    let kappa = setup.params.kappa;
    let o = &setup.config.optimizer;
    let read_scale = match o.readout_power {
        Some(p) => p.sqrt() * kappa,
        None => cavmem::basis::half_power(&sol.zeta).sqrt(),
    };
    let table = CoefficientTable { xi0: sol.xi0.clone(), xi1: sol.xi1.clone(), zeta: sol.zeta.clone(), write_scale: o.write_power.sqrt() * kappa, read_scale };
    let coeff = out.join("coefficients.csv");
    table.save(&coeff, kappa)?;
    m.output(&coeff)?;
    let sol_path = out.join("solution.json");
    std::fs::write(&sol_path, serde_json::to_string_pretty(&sol).expect("solution serializes") + "\n")?;
    m.output(&sol_path)?;
    let mut effs = Vec::new();
    for (k, xi) in [&sol.xi0, &sol.xi1].into_iter().enumerate() {
        let path = out.join(format!("trajectory_ket{k}.csv"));
        save_trajectory_csv(&path, &[assemble_write(xi, b)?, assemble_read(&sol.zeta, xi, b)?])?;
        m.output(&path)?;
        effs.push(efficiency(b, g, &sol.zeta, xi)?);
    }
    m.set(
        "optimizer",
        json!({
            "s": sol.s_value,
            "objective": sol.objective_value,
            "max_violation": max_violation(&sol.residuals),
            "residuals": sol.residuals,
            "converged": sol.converged,
            "iterations": sol.iterations,
            "best_restart": sol.best_restart,
            "efficiency": effs,
        }),
    );
    println!(
        "S = {:.4e}, objective/S = {:.3e}, efficiency |A| {:.3}/{:.3}, energy {:.3}/{:.3}",
        sol.s_value,
        sol.objective_value / sol.s_value,
        effs[0].amplitude_ratio,
        effs[1].amplitude_ratio,
        effs[0].energy_ratio,
        effs[1].energy_ratio
    );
    Ok(sol)
}

fn solution_for(setup: &Setup, b: &BasisSet, g: &GramMatrices, source: Option<&str>, out: &Path, m: &mut Manifest) -> Result<ControlSolution> {
    let kappa = setup.params.kappa;
    let table = match source {
        None => return optimize_into(setup, b, g, out, m),
        Some("paper") => preset_table(&setup.config, kappa)?,
        Some(path) => {
            let p = Path::new(path);
            let t = CoefficientTable::load(p, kappa, false)?;
            m.set("coefficients_hash", json!(cavmem::config::file_hash(p)?));
            t
        }
    };
    if table.xi0.len() != b.n_write() || table.zeta.len() != b.n_read() {
        return Err(Error::Config(format!(
            "coefficients: table has {} write and {} readout harmonics, basis has {} and {}",
            table.xi0.len(),
            table.zeta.len(),
            b.n_write(),
            b.n_read()
        )));
    }
    m.set("coefficients", json!(source));
    Ok(ControlSolution::from_coefficients(table.xi0, table.xi1, table.zeta))
}

fn parse_complex(field: &str, s: &str) -> Result<C64> {
    let bad = || Error::Config(format!("{field}: expected `re` or `re,im`, got '{s}'"));
    let mut parts = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad()));
    let re = parts.next().ok_or_else(bad)??;
    let im = parts.next().transpose()?.unwrap_or(0.0);
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok(C64::new(re, im))
}

fn noise_spec(setup: &Setup, a: &NoiseArgs) -> Result<NoiseSpec> {
    // noiseless unless an amplitude is given
    let mut spec = setup.noise_spec(0.0);
    if let Some(abs) = a.noise {
        spec.delta_eta = abs;
    }
    if let Some(rel) = a.noise_rel {
        spec.delta_eta = rel * setup.eta0();
    }
    if let Some(n) = a.n {
        spec.n_realizations = n;
    }
    spec.validate()?;
    Ok(spec)
}

fn noisy_row(sup: &Superposition, r: &NoiseStudyResult) -> SweepRow {
    let result = RetrievalResult { alpha_r: r.mean_alpha, beta_r: r.mean_beta, o0: C64::new(f64::NAN, f64::NAN), o1: C64::new(f64::NAN, f64::NAN), eps_alpha: Some(r.eps_alpha), eps_beta: Some(r.eps_beta) };
    SweepRow { input: *sup, result }
}

fn max_eps(rows: &[SweepRow]) -> f64 {
    rows.iter().map(|r| r.result.eps_alpha.unwrap_or(f64::NAN).max(r.result.eps_beta.unwrap_or(f64::NAN))).fold(0.0, f64::max)
}

/// Retrieves every input, with Monte Carlo noise when δη > 0.
fn retrieve_rows(setup: &Setup, b: &BasisSet, g: &GramMatrices, sol: &ControlSolution, inputs: &[Superposition], spec: &NoiseSpec) -> Result<Vec<SweepRow>> {
    if spec.delta_eta == 0.0 {
        return sweep(g, b, sol, inputs);
    }
    let harness = NoiseHarness::new(&setup.ensemble, &setup.kernels, b, g, sol)?;
    let res = grid_study(&harness, inputs, spec, 0)?;
    Ok(inputs.iter().zip(&res).map(|(s, r)| noisy_row(s, r)).collect())
}

fn write_amplitudes(sw: &AmplitudeSweep, out: &Path, m: &mut Manifest) -> Result<()> {
    let path = out.join("noise_amplitudes.csv");
    let mut w = csv_file(&path)?;
    writeln!(w, "relative,delta_eta,max_eps,mean_eps")?;
    for p in &sw.points {
        writeln!(w, "{:.6e},{:.12e},{:.12e},{:.12e}", p.relative, p.delta_eta, p.max_eps, p.mean_eps)?;
    }
    w.flush()?;
    drop(w);
    m.output(&path)?;
    m.set("fit", json!({ "slope": sw.slope, "intercept": sw.intercept, "r_squared": sw.r_squared }));
    Ok(())
}

fn retrieve_cmd(cfg: &RunConfig, a: &RetrieveArgs, out: &Path) -> Result<()> {
    let setup = Setup::new(cfg)?;
    let (b, g) = build(&setup)?;
    let command = if matches!(a.sweep, Some(Sweep::NoiseAmplitudes)) { "noise-sweep" } else { "retrieve" };
    let mut m = Manifest::new(command, cfg);
    let sol = solution_for(&setup, &b, &g, a.noise.coefficients.as_deref(), out, &mut m)?;
    let spec = noise_spec(&setup, &a.noise)?;
    m.set("noise", json!(spec));
    let mats = RetrievalMatrices::from_gram(&g, &b, &sol)?;
    m.set("retrieval_cond", json!(mats.cond));
    match a.sweep {
        Some(Sweep::NoiseAmplitudes) => {
            let harness = NoiseHarness::new(&setup.ensemble, &setup.kernels, &b, &g, &sol)?;
            let inputs = rebit_grid(cfg.noise.rebit_points);
            let res = amplitude_sweep(&harness, &inputs, &cfg.noise.amplitudes, setup.eta0(), &spec)?;
            write_amplitudes(&res, out, &mut m)?;
            println!("max eps vs delta_eta: slope {:.4e}, intercept {:.4e}, R^2 {:.4}", res.slope, res.intercept, res.r_squared);
        }
        Some(s) => {
            let (inputs, name) = match s {
                Sweep::Sphere => (sphere_grid(21, 41), "sphere.csv"),
                _ => (rebit_grid(cfg.noise.rebit_points), "fig3.csv"),
            };
            let rows = retrieve_rows(&setup, &b, &g, &sol, &inputs, &spec)?;
            let path = out.join(name);
            save_sweep_csv(&path, &rows)?;
            m.output(&path)?;
            let e = max_eps(&rows);
            m.set("max_eps", json!(e));
            println!("{} states, max eps {e:.4e}", rows.len());
        }
        None => {
            let alpha = parse_complex("alpha", a.alpha.as_deref().unwrap_or("1"))?;
            let beta = parse_complex("beta", a.beta.as_deref().unwrap_or("0"))?;
            let sup = Superposition::new(alpha, beta);
            let rows = if spec.delta_eta == 0.0 {
                let o = cavmem::retrieval::overlaps_gram(&g, &b, &sol, &sup)?;
                vec![SweepRow { input: sup, result: retrieve(o, &mats)?.with_truth(&sup) }]
            } else {
                retrieve_rows(&setup, &b, &g, &sol, &[sup], &spec)?
            };
            let path = out.join("retrieval.csv");
            save_sweep_csv(&path, &rows)?;
            m.output(&path)?;
            let r = &rows[0].result;
            m.set("result", json!(r));
            println!(
                "alpha_r = {:.6}{:+.6}i, beta_r = {:.6}{:+.6}i, eps = ({:.3e}, {:.3e})",
                r.alpha_r.re,
                r.alpha_r.im,
                r.beta_r.re,
                r.beta_r.im,
                r.eps_alpha.unwrap_or(f64::NAN),
                r.eps_beta.unwrap_or(f64::NAN)
            );
        }
    }
    m.write(out)
}

fn reproduce(cfg: &RunConfig, target: Target, out: &Path) -> Result<()> {
    let setup = Setup::new(cfg)?;
    let (b, g) = build(&setup)?;
    let name = match target {
        Target::CaseA => "reproduce case-a",
        Target::CaseB => "reproduce case-b",
        Target::Fig3 => "reproduce fig3",
    };
    let mut m = Manifest::new(name, cfg);
    let sol = optimize_into(&setup, &b, &g, out, &mut m)?;
    match target {
        Target::CaseA => {
            let rows = sweep(&g, &b, &sol, &sphere_grid(21, 41))?;
            let path = out.join("sphere.csv");
            save_sweep_csv(&path, &rows)?;
            m.output(&path)?;
            m.set("max_eps", json!(max_eps(&rows)));
        }
        Target::CaseB => {
            let (traj, fit) = free_decay(&setup.ensemble, &setup.kernels, &setup.sections, setup.eta0(), 1000.0)?;
            let path = out.join("free_decay.csv");
            save_trajectory_csv(&path, &traj)?;
            m.output(&path)?;
            m.set("free_decay", json!(fit));
            println!("free decay 1/e time of |A|^2: {:.1} ns", fit.lifetime);
        }
        Target::Fig3 => {
            let spec = setup.noise_spec(cfg.noise.relative);
            m.set("noise", json!(spec));
            let harness = NoiseHarness::new(&setup.ensemble, &setup.kernels, &b, &g, &sol)?;
            let inputs = rebit_grid(cfg.noise.rebit_points);
            let res = grid_study(&harness, &inputs, &spec, 0)?;
            let rows: Vec<SweepRow> = inputs.iter().zip(&res).map(|(s, r)| noisy_row(s, r)).collect();
            let path = out.join("fig3.csv");
            save_sweep_csv(&path, &rows)?;
            m.output(&path)?;
            m.set("max_eps", json!(max_eps(&rows)));
            let sw = amplitude_sweep(&harness, &inputs, &cfg.noise.amplitudes, setup.eta0(), &spec)?;
            write_amplitudes(&sw, out, &mut m)?;
            println!("max eps {:.4e} at delta_eta/eta0 = {}, fit R^2 {:.4}", max_eps(&rows), cfg.noise.relative, sw.r_squared);
        }
    }
    m.write(out)
}
