//! `netgame`: solve, optimize and run experiments from the command line.
//!
//! Exit codes: 0 when every check passes or does not apply, 2 when a
//! structural check finds a violation, 1 on usage or input errors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use netgame::experiments::{summarize_example1, CampaignConfig, Example1Config};
use netgame::{
    check_theorem1_structure, check_theorem2, check_theorem3, optimize_with, planner_payment, run_example1,
    run_theorem_campaign, solve_equilibrium_with, solve_general_with, welfare, write_example1_csv, BenchmarkModel,
    EndogenousModel, GameParameters, GeneralGame, GeneralModel, Intervention, Mode, OptimizationResult,
    PlannerOptions, PowerFamilySpec, SolverOptions, StructureVerdicts, WelfareSpec,
};

#[derive(Parser)]
#[command(name = "netgame", version, about = "Equilibria and optimal subsidies in network games with endogenous links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the equilibrium selected by best responses from zero.
    Solve {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Find the welfare-maximizing intervention under a budget.
    Optimize {
        #[arg(long)]
        instance: PathBuf,
        /// Overrides the budget in the instance file.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        /// Use the game in which links ignore actions.
        #[arg(long)]
        benchmark: bool,
        #[arg(long, default_value_t = PlannerOptions::default().starts)]
        starts: usize,
        #[arg(long, default_value_t = PlannerOptions::default().seed)]
        seed: u64,
    },
    /// Welfare of the optimal over the best links-only intervention, per instance.
    Example1 {
        #[arg(long, default_value_t = 2)]
        n_min: usize,
        #[arg(long, default_value_t = 10)]
        n_max: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = PlannerOptions::default().starts)]
        starts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample instances and check the optimal-subsidy structure results.
    Campaign {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        theorem: u8,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        starts: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Actions,
    Links,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::Actions => Mode::ActionsOnly,
            ModeArg::Links => Mode::LinksOnly,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct InterventionFile {
    beta: Vec<f64>,
    #[serde(with = "netgame::model::matrix_rows")]
    sigma: DMatrix<f64>,
}

/// Instance file: the economy plus optional welfare, budget, intervention and
/// power-family exponents.
#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    #[serde(flatten)]
    params: GameParameters,
    #[serde(default)]
    budget: Option<f64>,
    #[serde(default)]
    welfare: Option<WelfareSpec>,
    #[serde(default)]
    intervention: Option<InterventionFile>,
    #[serde(default)]
    general: Option<PowerFamilySpec>,
}

impl InstanceFile {
    fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        let inst: InstanceFile =
            serde_json::from_reader(file).with_context(|| format!("cannot parse {}", path.display()))?;
        inst.params.validate()?;
        if inst.params.b.len() != inst.params.n {
            bail!("n does not match the length of b");
        }
        if let Some(w) = &inst.welfare {
            w.validate(inst.params.n)?;
        }
        if let Some(g) = &inst.general {
            g.validate(inst.params.n)?;
        }
        Ok(inst)
    }

    fn welfare(&self) -> WelfareSpec {
        self.welfare.clone().unwrap_or_else(|| WelfareSpec::unit_actions(self.params.n))
    }

    fn intervention(&self, budget: f64) -> Result<Intervention> {
        Ok(match &self.intervention {
            Some(iv) => Intervention::new(iv.beta.clone(), iv.sigma.clone(), budget)?,
            None => Intervention::zero(self.params.n, budget),
        })
    }

    fn general_game(&self) -> Result<Option<GeneralGame>> {
        Ok(match &self.general {
            Some(f) => Some(GeneralGame::new(self.params.clone(), f.clone())?),
            None => None,
        })
    }
}

enum Status {
    Ok,
    Violation,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violation) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    let solver = SolverOptions::from_env()?;
    match cli.command {
        Command::Solve { instance } => solve(&instance, &solver),
        Command::Optimize { instance, budget, mode, benchmark, starts, seed } => {
            let opts = PlannerOptions { starts, seed, ..Default::default() };
            optimize(&instance, budget, mode.into(), benchmark, &opts, &solver)
        }
        Command::Example1 { n_min, n_max, reps, seed, starts, out } => {
            if n_min < 2 || n_max < n_min {
                bail!("need 2 <= n-min <= n-max");
            }
            let cfg = Example1Config { n_min, n_max, reps, seed, starts, solver };
            let rows = run_example1(&cfg)?;
            write_example1_csv(&rows, BufWriter::new(create(&out)?))?;
            for s in summarize_example1(&rows) {
                println!(
                    "n={:<3} mean={:.6} min={:.6} max={:.6} flagged={}",
                    s.n, s.mean, s.min, s.max, s.flagged
                );
            }
            Ok(Status::Ok)
        }
        Command::Campaign { theorem, reps, seed, starts, out } => {
            let cfg = CampaignConfig { theorem, reps, seed, starts, solver };
            let summary = run_theorem_campaign(&cfg)?;
            let mut w = BufWriter::new(create(&out)?);
            serde_json::to_writer_pretty(&mut w, &summary)?;
            writeln!(w)?;
            w.flush()?;
            for b in &summary.blocks {
                println!(
                    "{}: runs={} clean={} pass={} violation={} not-applicable={} flagged={} failed={}",
                    b.block, b.runs, b.kkt_clean_runs, b.pass, b.violation, b.not_applicable, b.flagged, b.failed_runs
                );
            }
            Ok(if summary.violations() > 0 { Status::Violation } else { Status::Ok })
        }
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn solve(path: &Path, solver: &SolverOptions) -> Result<Status> {
    let inst = InstanceFile::load(path)?;
    let iv = inst.intervention(inst.budget.unwrap_or(1.0))?;
    let w = inst.welfare();
    let report = match inst.general_game()? {
        Some(game) => solve_general_with(&game, &iv, solver)?,
        None => solve_equilibrium_with(&inst.params, &iv, solver)?,
    };
    let out = json!({
        "exists": report.exists,
        "converged": report.converged,
        "iterations": report.iterations,
        "foc_residual_max": report.foc_residual_max,
        "welfare": report.exists.then(|| welfare(&w, &report.profile)),
        "payment": report.exists.then(|| planner_payment(&iv, &report.profile)),
        "profile": report.profile,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(Status::Ok)
}

fn optimize(
    path: &Path,
    budget: Option<f64>,
    mode: Mode,
    benchmark: bool,
    opts: &PlannerOptions,
    solver: &SolverOptions,
) -> Result<Status> {
    let inst = InstanceFile::load(path)?;
    let Some(budget) = budget.or(inst.budget) else {
        bail!("no budget: pass --budget or set it in the instance file");
    };
    let p = &inst.params;
    let w = inst.welfare();
    let (result, verdicts): (OptimizationResult, StructureVerdicts) = match (inst.general_game()?, benchmark) {
        (Some(_), true) => bail!("--benchmark does not apply to power-family instances"),
        (Some(game), false) => {
            let r = optimize_with(&GeneralModel { solver: *solver, ..GeneralModel::new(&game, &w, budget) }, mode, opts)?;
            let v = check_theorem3(&game, &w, &r);
            (r, v)
        }
        (None, true) => {
            let r = optimize_with(&BenchmarkModel { solver: *solver, ..BenchmarkModel::new(p, &w, budget) }, mode, opts)?;
            let v = check_theorem2(p, &w, &r);
            (r, v)
        }
        (None, false) => {
            let r = optimize_with(&EndogenousModel { solver: *solver, ..EndogenousModel::new(p, &w, budget) }, mode, opts)?;
            let v = check_theorem1_structure(p, &w, &r);
            (r, v)
        }
    };
    let out = json!({
        "mode": result.mode,
        "welfare": result.welfare_value,
        "payment": result.payment,
        "lambda": result.lambda_hat,
        "intervention": result.best,
        "profile": result.profile,
        "kkt": result.kkt,
        "structure": verdicts,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(if verdicts.has_violation() { Status::Violation } else { Status::Ok })
}
