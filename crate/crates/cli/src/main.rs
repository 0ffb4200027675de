use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use isochron_core::config::SolverConfig;
use isochron_core::model::{load_model, Model};
use isochron_core::solution::{residuals, solve_all_from, Residuals, Solution};
use isochron_core::validate::{aposteriori_report, defect_norm, parameterized_orbit, sdde_integrate, Orbit};
use isochron_core::Error;

#[derive(Parser, Debug)]
#[command(name = "isochron", version, about = "Limit cycles and isochrons of planar ODEs with small state-dependent delays")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for frequency, exponent and parameterization; write the solution JSON.
    Solve {
        model: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Recompute residual norms of a stored solution.
    Residual { model: PathBuf, solution: PathBuf },
    /// Integrate the delay equation from parameterized history and compare with the parameterized orbit.
    Simulate {
        model: PathBuf,
        solution: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Defect of the parameterized orbit in the delay equation.
    Defect {
        model: PathBuf,
        solution: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// Re-solve along a parameter range, warm-starting each point from the previous one.
    Sweep {
        model: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
        /// eps, a1, a2 or h.
        #[arg(long)]
        param: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        /// Number of intervals; the sweep has steps + 1 points.
        #[arg(long)]
        steps: usize,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct SolverFlags {
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long)]
    cheb: Option<usize>,
    #[arg(long)]
    a1: Option<f64>,
    #[arg(long)]
    a2: Option<f64>,
    /// Keep the cut-off factors even when the cycle stays inside the plateau.
    #[arg(long)]
    full_cutoff: bool,
}

impl SolverFlags {
    fn config(&self) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig {
            modes: self.modes.unwrap_or(d.modes),
            order: self.order.unwrap_or(d.order),
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            n_cheb: self.cheb.unwrap_or(d.n_cheb),
            a1: self.a1,
            a2: self.a2,
            assume_interior: !self.full_cutoff,
            ..d
        }
    }
}

#[derive(Args, Debug, Clone)]
struct RunFlags {
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    s: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    t: f64,
}

/// Failure with its exit code.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } | Error::DomainExit { .. } | Error::Quadrature { .. } => 2,
            _ => 1,
        };
        Fail(code, e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(1, e.to_string())
    }
}

type CmdResult = std::result::Result<u8, Fail>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.cmd {
        Command::Solve { model, solver, out } => cmd_solve(&model, &solver.config(), &out),
        Command::Residual { model, solution } => cmd_residual(&model, &solution),
        Command::Simulate { model, solution, run, dt, out } => cmd_simulate(&model, &solution, &run, dt, &out),
        Command::Defect { model, solution, run, points } => cmd_defect(&model, &solution, &run, points),
        Command::Sweep { model, solver, param, from, to, steps, out } => {
            cmd_sweep(&model, &solver.config(), &param, from, to, steps, &out)
        }
    }
}

fn load(path: &Path) -> Result<Model, Fail> {
    Ok(load_model(path)?.into_model()?)
}

fn load_solution(model: &Model, path: &Path) -> Result<Solution, Fail> {
    let sol = Solution::from_json(&std::fs::read_to_string(path)?)?;
    sol.check_model(model)?;
    Ok(sol)
}

fn write(path: &Path, text: &str) -> Result<(), Fail> {
    std::fs::write(path, text).map_err(|e| Fail(1, format!("{}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"))
}

fn print_residuals(res: &Residuals) {
    for (j, (e, c)) in res.orders.iter().zip(&res.components).enumerate() {
        println!("E{j}: {e:.3e} (components {:.3e}, {:.3e})", c[0], c[1]);
    }
    println!(
        "E>: {:.3e} on |s| <= {:.3} and {:.3e} on the whole tail domain",
        res.tail.interior, res.tail.interior_radius, res.tail.weighted
    );
}

fn cmd_solve(model_path: &Path, cfg: &SolverConfig, out: &Path) -> CmdResult {
    let model = load(model_path)?;
    let sol = solve_all_from(&model, cfg, None)?;
    write(out, &(sol.to_json()? + "\n"))?;
    println!("omega = {:.16e}", sol.omega);
    println!("lambda = {:.16e}", sol.lambda);
    for r in &sol.reports {
        println!(
            "{:>6}: {:>4} iterations, mu = {:.3}, residual {}, {}",
            r.stage,
            r.iterations,
            r.mu_hat(),
            opt(r.residual),
            if r.converged { "converged" } else { "NOT converged" }
        );
    }
    if sol.converged {
        Ok(0)
    } else {
        eprintln!("error: some stages did not converge; partial solution written");
        Ok(2)
    }
}

fn cmd_residual(model_path: &Path, sol_path: &Path) -> CmdResult {
    let model = load(model_path)?;
    let sol = load_solution(&model, sol_path)?;
    let res = residuals(&model, &sol)?;
    print_residuals(&res);
    let rep = aposteriori_report(model.omega0, model.lambda0, &sol, &res)?;
    for s in &rep.stages {
        println!(
            "{:>6}: mu = {:.3}, last distance {}, bound {}{}",
            s.stage,
            s.mu_hat,
            opt(s.last_distance),
            opt(s.bound),
            if s.certifying { "" } else { " (non-certifying)" }
        );
    }
    println!("surrogate zero-order bound: {:.3e} (B0 = {:.3})", rep.surrogate, rep.b0);
    let limit = 100.0 * sol.config.tol;
    let worst = res.max_jet().max(res.tail.interior);
    if worst > limit {
        eprintln!("error: residual {worst:.3e} exceeds {limit:.3e}");
        return Ok(3);
    }
    Ok(0)
}

fn orbit_setup(model_path: &Path, sol_path: &Path) -> Result<(Model, Solution), Fail> {
    let model = load(model_path)?;
    let sol = load_solution(&model, sol_path)?;
    if model.cartesian().is_none() {
        return Err(Fail(1, "this command needs a cartesian model with a conjugacy K".into()));
    }
    Ok((model, sol))
}

fn cmd_simulate(model_path: &Path, sol_path: &Path, run: &RunFlags, dt: f64, out: &Path) -> CmdResult {
    let (model, sol) = orbit_setup(model_path, sol_path)?;
    let cm = model.cartesian().expect("checked");
    let orbit = Orbit::new(cm, &sol)?;
    let hist = orbit.history(run.theta, run.s);
    // the whole history window must be inside the tail domain
    hist(-cm.h)?;
    let traj = sdde_integrate(cm, &hist, cm.h, run.t, dt)?;
    let par = parameterized_orbit(&orbit, run.theta, run.s, traj.grid)?;
    let mut csv = String::from("t,x1,x2,p1,p2,deviation\n");
    let mut worst = 0.0_f64;
    for i in 0..traj.len() {
        let (x, p) = (traj.x[i], par.x[i]);
        let dev = (x[0] - p[0]).abs().max((x[1] - p[1]).abs());
        worst = worst.max(dev);
        let _ = writeln!(csv, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", traj.t(i), x[0], x[1], p[0], p[1], dev);
    }
    write(out, &csv)?;
    println!("max deviation {worst:.3e} over {} steps", traj.grid.steps);
    Ok(0)
}

fn cmd_defect(model_path: &Path, sol_path: &Path, run: &RunFlags, points: usize) -> CmdResult {
    let (model, sol) = orbit_setup(model_path, sol_path)?;
    let orbit = Orbit::new(model.cartesian().expect("checked"), &sol)?;
    let d = defect_norm(&orbit, run.theta, run.s, run.t, points)?;
    println!("defect {d:.3e}");
    Ok(0)
}

fn with_param(model: &Model, cfg: &SolverConfig, param: &str, v: f64) -> Result<(Model, SolverConfig), Fail> {
    let mut cfg = cfg.clone();
    let model = match param {
        "eps" => model.with_eps(v)?,
        "a1" => {
            cfg.a1 = Some(v);
            model.clone()
        }
        "a2" => {
            cfg.a2 = Some(v);
            model.clone()
        }
        "h" => {
            let mut m = model.clone();
            m.h = v;
            if let Some(cm) = m.cartesian() {
                let mut cm = cm.clone();
                cm.h = v;
                m = isochron_core::model::cartesian_to_coords(&cm)?;
            }
            m
        }
        other => return Err(Fail(1, format!("unknown sweep parameter `{other}` (eps, a1, a2 or h)"))),
    };
    Ok((model, cfg))
}

fn cmd_sweep(model_path: &Path, cfg: &SolverConfig, param: &str, from: f64, to: f64, steps: usize, out: &Path) -> CmdResult {
    if steps == 0 {
        return Err(Fail(1, "--steps must be at least 1".into()));
    }
    if !(from.is_finite() && to.is_finite()) {
        return Err(Fail(1, "--from and --to must be finite".into()));
    }
    let base = load(model_path)?;
    let mut header = format!("{param},omega,lambda");
    for j in 0..cfg.order {
        let _ = write!(header, ",E{j}");
    }
    header.push_str(",E_tail_interior,E_tail,converged\n");
    let mut csv = header;
    let mut prev: Option<Solution> = None;
    let mut rows = Vec::with_capacity(steps + 1);
    let mut code = 0;
    for i in 0..=steps {
        let v = from + (to - from) * i as f64 / steps as f64;
        let (model, cfg) = with_param(&base, cfg, param, v)?;
        let sol = solve_all_from(&model, &cfg, prev.as_ref())?;
        let res = residuals(&model, &sol)?;
        let _ = write!(csv, "{v:.16e},{:.16e},{:.16e}", sol.omega, sol.lambda);
        for e in &res.orders {
            let _ = write!(csv, ",{e:.16e}");
        }
        let _ = writeln!(csv, ",{:.16e},{:.16e},{}", res.tail.interior, res.tail.weighted, sol.converged);
        println!("{param} = {v:.6e}: omega {:.12}, lambda {:.12}", sol.omega, sol.lambda);
        if !sol.converged {
            code = 2;
        }
        rows.push((sol.omega, sol.lambda));
        prev = Some(sol);
    }
    write(out, &csv)?;
    if rows.len() >= 3 {
        let second = |f: fn(&(f64, f64)) -> f64| {
            rows.windows(3).map(|w| (f(&w[0]) - 2.0 * f(&w[1]) + f(&w[2])).abs()).fold(0.0, f64::max)
        };
        println!("max second difference: omega {:.3e}, lambda {:.3e}", second(|r| r.0), second(|r| r.1));
    }
    Ok(code)
}
