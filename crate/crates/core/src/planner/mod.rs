//! Budget-constrained subsidy design.
//!
//! The optimizer searches over subsidy *directions* `d` on the unit simplex of
//! the allowed coordinates. Each direction is scaled by the `t > 0` at which
//! the equilibrium payment equals the budget, so every iterate spends the
//! budget exactly. The reduced objective `Phi(d) = W(t(d) d)` has gradient
//! `t (grad W - lambda grad P)` with `lambda = grad W . d / grad P . d`, whose
//! stationary points on the simplex are the KKT points of the original
//! problem. Ascent is spectral projected gradient with a nonmonotone line
//! search, restarted from several seeds.

mod grid;
mod kkt;
mod spg;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{solve_equilibrium_with, SolverOptions};
use crate::error::{Error, Result};
use crate::model::{planner_payment, welfare, GameParameters, Intervention, StrategyProfile, SubsidyLayout, WelfareSpec};
use crate::sensitivity::planner_gradients;

pub use grid::{grid_oracle, GridOracleResult};
pub use kkt::{
    check_theorem1_structure, kkt_check, kkt_check_generic, kkt_report, struct_tol, KKTReport, PairCheck, PairVerdict,
    StructureVerdicts, TheoremPart, KKT_TOL, PAYMENT_TOL, SUPPORT_RTOL,
};

/// Equilibrium outcome at one intervention.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub welfare: f64,
    pub payment: f64,
    pub profile: StrategyProfile,
}

/// Welfare and payment gradients in [`SubsidyLayout`] coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub welfare: Vec<f64>,
    pub payment: Vec<f64>,
}

/// A game whose equilibrium welfare and payment the planner can evaluate and differentiate.
pub trait PlannerModel: Sync {
    fn n(&self) -> usize;

    fn budget(&self) -> f64;

    /// Equilibrium outcome at subsidy coordinates `x`; `None` when no
    /// equilibrium is found (welfare is then minus infinity).
    fn evaluate(&self, x: &[f64]) -> Result<Option<Evaluation>>;

    fn gradient(&self, x: &[f64], at: &Evaluation) -> Result<Gradients>;

    fn layout(&self) -> SubsidyLayout {
        SubsidyLayout::new(self.n())
    }
}

/// The endogenous-link game with analytic sensitivities.
#[derive(Debug, Clone)]
pub struct EndogenousModel<'a> {
    pub params: &'a GameParameters,
    pub welfare: &'a WelfareSpec,
    pub budget: f64,
    pub solver: SolverOptions,
}

impl<'a> EndogenousModel<'a> {
    pub fn new(params: &'a GameParameters, welfare: &'a WelfareSpec, budget: f64) -> Self {
        EndogenousModel { params, welfare, budget, solver: SolverOptions::default() }
    }

    pub fn intervention(&self, x: &[f64]) -> Intervention {
        Intervention::from_coords_unchecked(&self.layout(), x, self.budget)
    }
}

impl PlannerModel for EndogenousModel<'_> {
    fn n(&self) -> usize {
        self.params.n
    }

    fn budget(&self) -> f64 {
        self.budget
    }

    fn evaluate(&self, x: &[f64]) -> Result<Option<Evaluation>> {
        let iv = self.intervention(x);
        match solve_equilibrium_with(self.params, &iv, &self.solver) {
            Ok(r) if r.exists => Ok(Some(Evaluation {
                welfare: welfare(self.welfare, &r.profile),
                payment: planner_payment(&iv, &r.profile),
                profile: r.profile,
            })),
            Ok(_) | Err(Error::NonConvergent { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn gradient(&self, x: &[f64], at: &Evaluation) -> Result<Gradients> {
        let iv = self.intervention(x);
        let report = crate::equilibrium::report_for(self.params, &iv, at.profile.clone());
        let g = planner_gradients(self.welfare, self.params, &iv, &report)?;
        Ok(Gradients { welfare: g.welfare, payment: g.payment })
    }
}

/// Which subsidy blocks the planner may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Full,
    ActionsOnly,
    LinksOnly,
}

impl Mode {
    pub fn allows(&self, layout: &SubsidyLayout, k: usize) -> bool {
        match self {
            Mode::Full => true,
            Mode::ActionsOnly => layout.is_beta(k),
            Mode::LinksOnly => !layout.is_beta(k),
        }
    }

    pub fn mask(&self, layout: &SubsidyLayout) -> Vec<bool> {
        (0..layout.dim()).map(|k| self.allows(layout, k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerOptions {
    /// Random starting directions, on top of the two block-corner seeds.
    pub starts: usize,
    pub seed: u64,
    /// Projected-gradient iterations per start.
    pub max_iter: usize,
    /// Target relative stationarity residual.
    pub stationarity_tol: f64,
    /// Cross-check against a coarse direction grid when `n <= 3`.
    pub grid_check: bool,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions { starts: 32, seed: 0x5eed, max_iter: 400, stationarity_tol: 1e-9, grid_check: true }
    }
}

/// Summary of one optimizer start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub start: String,
    pub iterations: usize,
    pub evaluations: usize,
    pub welfare: f64,
    pub stationarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: Intervention,
    pub mode: Mode,
    pub welfare_value: f64,
    pub payment: f64,
    pub lambda_hat: f64,
    pub profile: StrategyProfile,
    pub kkt: KKTReport,
    /// Welfare and payment gradients at `best`.
    pub welfare_gradient: Vec<f64>,
    pub payment_gradient: Vec<f64>,
    pub trace: Vec<TraceEntry>,
}

impl OptimizationResult {
    pub fn coords(&self) -> Vec<f64> {
        self.best.coords()
    }
}

/// Optimal unrestricted intervention for the endogenous-link game.
pub fn optimize_intervention(p: &GameParameters, w: &WelfareSpec, budget: f64) -> Result<OptimizationResult> {
    optimize_with(&EndogenousModel::new(p, w, budget), Mode::Full, &PlannerOptions::default())
}

/// Same optimizer with the complementary block of subsidies frozen at zero.
pub fn restricted_optimize(p: &GameParameters, w: &WelfareSpec, budget: f64, mode: Mode) -> Result<OptimizationResult> {
    optimize_with(&EndogenousModel::new(p, w, budget), mode, &PlannerOptions::default())
}

/// Multi-start optimizer over any [`PlannerModel`].
pub fn optimize_with<M: PlannerModel>(model: &M, mode: Mode, opts: &PlannerOptions) -> Result<OptimizationResult> {
    let budget = model.budget();
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::InvalidParameters(format!("budget must be positive, got {budget}")));
    }
    let layout = model.layout();
    let dim = layout.dim();
    if model.evaluate(&vec![0.0; dim])?.is_none() {
        return Err(Error::NoFeasibleIntervention);
    }
    let mask = mode.mask(&layout);
    let seeds = starting_directions(&layout, &mask, opts);
    let runs: Vec<Result<Option<spg::Run>>> =
        seeds.par_iter().map(|(label, d)| spg::ascend(model, &mask, d.clone(), label.clone(), opts)).collect();

    let mut trace = Vec::with_capacity(runs.len());
    let mut best: Option<spg::Run> = None;
    for run in runs {
        let Some(run) = run? else { continue };
        trace.push(run.trace.clone());
        if best.as_ref().is_none_or(|b| run.point.eval.welfare > b.point.eval.welfare) {
            best = Some(run);
        }
    }
    if opts.grid_check && model.n() <= 3 {
        let steps = if dim <= 3 { 40 } else { 8 };
        if let Some((d, w)) = grid::best_direction(model, &mask, steps)? {
            let incumbent = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.point.eval.welfare);
            if w > incumbent + 1e-12 * w.abs().max(1e-300) {
                if let Some(run) = spg::ascend(model, &mask, d, "grid".into(), opts)? {
                    trace.push(run.trace.clone());
                    if run.point.eval.welfare > incumbent {
                        best = Some(run);
                    }
                }
            }
        }
    }
    let best = best.ok_or(Error::NoFeasibleIntervention)?;
    finish(model, mode, best.point, trace)
}

fn finish<M: PlannerModel>(model: &M, mode: Mode, pt: spg::Point, trace: Vec<TraceEntry>) -> Result<OptimizationResult> {
    let layout = model.layout();
    let x = pt.x();
    let kkt = kkt_report(&layout, mode, &x, &pt.grad.welfare, &pt.grad.payment, pt.eval.payment, model.budget());
    Ok(OptimizationResult {
        best: Intervention::from_coords_unchecked(&layout, &x, model.budget()),
        mode,
        welfare_value: pt.eval.welfare,
        payment: pt.eval.payment,
        lambda_hat: kkt.lambda,
        profile: pt.eval.profile,
        kkt,
        welfare_gradient: pt.grad.welfare,
        payment_gradient: pt.grad.payment,
        trace,
    })
}

/// Two block corners (all-action, all-link) when allowed, then random points
/// of the simplex. The RNG is seeded once, so the list depends on the seed only.
fn starting_directions(layout: &SubsidyLayout, mask: &[bool], opts: &PlannerOptions) -> Vec<(String, Vec<f64>)> {
    let dim = layout.dim();
    let mut out = Vec::with_capacity(opts.starts + 2);
    for (label, pick) in [("actions", true), ("links", false)] {
        let d: Vec<f64> = (0..dim).map(|k| if mask[k] && layout.is_beta(k) == pick { 1.0 } else { 0.0 }).collect();
        let total: f64 = d.iter().sum();
        if total > 0.0 {
            out.push((label.to_string(), d.iter().map(|v| v / total).collect()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for r in 0..opts.starts {
        let mut d: Vec<f64> =
            (0..dim).map(|k| if mask[k] { -(1.0 - rng.random::<f64>()).ln() } else { 0.0 }).collect();
        let total: f64 = d.iter().sum();
        d.iter_mut().for_each(|v| *v /= total);
        out.push((format!("random-{r}"), d));
    }
    out
}
