//! Benchmark game in which links are formed before, and without regard to,
//! the action game: `g_ij = max(0, (s_ij + sigma_ij) / f_ij)` and actions
//! then solve the linear-quadratic game on the fixed network.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::equilibrium::{strength, sup, SolverOptions, BIND_TOL};
use crate::error::{Error, Result};
use crate::model::{planner_payment, welfare, GameParameters, Intervention, StrategyProfile, WelfareSpec};
use crate::planner::{
    kkt_check_generic, optimize_with, struct_tol, Evaluation, Gradients, Mode, OptimizationResult, PairCheck,
    PairVerdict, PlannerModel, PlannerOptions, StructureVerdicts, TheoremPart,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEquilibrium {
    #[serde(with = "crate::model::matrix_rows")]
    pub g_star: DMatrix<f64>,
    pub a_star: Vec<f64>,
    /// `1 - mu(rho C^{-1/2} G C^{-1/2})` over the agents with positive action
    /// (all agents when the game has no equilibrium).
    pub spectral_gap: f64,
    pub binding_actions: Vec<usize>,
    pub iterations: usize,
    pub exists: bool,
}

impl BenchmarkEquilibrium {
    pub fn profile(&self) -> StrategyProfile {
        StrategyProfile { a: self.a_star.clone(), g: self.g_star.clone() }
    }

    pub fn require_exists(self) -> Result<Self> {
        if self.exists {
            Ok(self)
        } else {
            Err(Error::NonExistent { iterations: self.iterations })
        }
    }
}

pub fn benchmark_links(p: &GameParameters, iv: &Intervention) -> DMatrix<f64> {
    DMatrix::from_fn(p.n, p.n, |i, j| {
        if i == j {
            0.0
        } else {
            ((p.s[(i, j)] + iv.sigma[(i, j)]) / p.f[(i, j)]).max(0.0)
        }
    })
}

fn spectral_gap(p: &GameParameters, big_g: &DMatrix<f64>, agents: &[usize]) -> f64 {
    let m = agents.len();
    if m == 0 {
        return 1.0;
    }
    let scaled = DMatrix::from_fn(m, m, |r, q| {
        let (i, j) = (agents[r], agents[q]);
        p.rho * big_g[(i, j)] / (p.c[i] * p.c[j]).sqrt()
    });
    1.0 - SymmetricEigen::new(scaled).eigenvalues.max()
}

pub fn solve_benchmark(p: &GameParameters, iv: &Intervention) -> Result<BenchmarkEquilibrium> {
    solve_benchmark_with(p, iv, &SolverOptions::default())
}

/// Links in closed form; actions by best-response iteration from zero with
/// links frozen, finished by an exact solve on the binding set.
pub fn solve_benchmark_with(p: &GameParameters, iv: &Intervention, opts: &SolverOptions) -> Result<BenchmarkEquilibrium> {
    if iv.n() != p.n {
        return Err(Error::InvalidParameters("intervention dimension does not match the economy".into()));
    }
    let n = p.n;
    let g_star = benchmark_links(p, iv);
    let big_g = strength(&g_star);
    let drive = |a: &[f64], i: usize| -> f64 {
        p.b[i] + iv.beta[i] + p.rho * (0..n).filter(|&j| j != i).map(|j| big_g[(i, j)] * a[j]).sum::<f64>()
    };
    let br = |a: &[f64]| -> Vec<f64> { (0..n).map(|i| (drive(a, i) / p.c[i]).max(0.0)).collect() };
    let all: Vec<usize> = (0..n).collect();
    let mut a = vec![0.0; n];
    let mut next_polish = 1e-6;
    for it in 1..=opts.max_iter {
        let a_new = br(&a);
        let change = a.iter().zip(&a_new).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        a = a_new;
        let size = sup(&a);
        if !size.is_finite() || size > opts.a_max {
            return Ok(BenchmarkEquilibrium {
                spectral_gap: spectral_gap(p, &big_g, &all),
                g_star,
                a_star: a,
                binding_actions: Vec::new(),
                iterations: it,
                exists: false,
            });
        }
        let scale = size.max(1.0);
        let mut done = change <= opts.tol * scale;
        if !done && opts.polish && change <= next_polish * scale {
            let active: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0).collect();
            let k = DMatrix::from_fn(active.len(), active.len(), |r, q| {
                let (i, j) = (active[r], active[q]);
                if i == j { p.c[i] } else { -p.rho * big_g[(i, j)] }
            });
            let rhs = DVector::from_iterator(active.len(), active.iter().map(|&i| p.b[i] + iv.beta[i]));
            if let Some(x) = k.lu().solve(&rhs) {
                let mut cand = vec![0.0; n];
                for (r, &i) in active.iter().enumerate() {
                    cand[i] = x[r];
                }
                let next = br(&cand);
                let moved = cand.iter().zip(&next).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                if cand.iter().all(|v| *v >= 0.0) && moved <= opts.tol * sup(&cand).max(1.0) {
                    a = next;
                    done = true;
                }
            }
            next_polish = change / scale * 1e-2;
        }
        if done {
            let binding_actions: Vec<usize> = (0..n).filter(|&i| a[i] > BIND_TOL).collect();
            return Ok(BenchmarkEquilibrium {
                spectral_gap: spectral_gap(p, &big_g, &binding_actions),
                g_star,
                a_star: a,
                binding_actions,
                iterations: it,
                exists: true,
            });
        }
    }
    Err(Error::NonConvergent { iterations: opts.max_iter, last_change: f64::NAN })
}

/// Planner view of the benchmark game with analytic gradients from
/// `(C - rho G)_S^{-1}`.
#[derive(Debug, Clone)]
pub struct BenchmarkModel<'a> {
    pub params: &'a GameParameters,
    pub welfare: &'a WelfareSpec,
    pub budget: f64,
    pub solver: SolverOptions,
}

impl<'a> BenchmarkModel<'a> {
    pub fn new(params: &'a GameParameters, welfare: &'a WelfareSpec, budget: f64) -> Self {
        BenchmarkModel { params, welfare, budget, solver: SolverOptions::default() }
    }

    fn intervention(&self, x: &[f64]) -> Intervention {
        Intervention::from_coords_unchecked(&self.layout(), x, self.budget)
    }
}

impl PlannerModel for BenchmarkModel<'_> {
    fn n(&self) -> usize {
        self.params.n
    }

    fn budget(&self) -> f64 {
        self.budget
    }

    fn evaluate(&self, x: &[f64]) -> Result<Option<Evaluation>> {
        let iv = self.intervention(x);
        match solve_benchmark_with(self.params, &iv, &self.solver) {
            Ok(eq) if eq.exists => {
                let profile = eq.profile();
                Ok(Some(Evaluation {
                    welfare: welfare(self.welfare, &profile),
                    payment: planner_payment(&iv, &profile),
                    profile,
                }))
            }
            Ok(_) | Err(Error::NonConvergent { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn gradient(&self, x: &[f64], at: &Evaluation) -> Result<Gradients> {
        let p = self.params;
        let n = p.n;
        let iv = self.intervention(x);
        let a = &at.profile.a;
        let big_g = at.profile.link_strength();
        let active: Vec<usize> = (0..n).filter(|&i| a[i] > BIND_TOL).collect();
        let k = DMatrix::from_fn(active.len(), active.len(), |r, q| {
            let (i, j) = (active[r], active[q]);
            if i == j { p.c[i] } else { -p.rho * big_g[(i, j)] }
        });
        let lu = k.lu();
        let column = |i: usize| -> Result<Vec<f64>> {
            let mut out = vec![0.0; n];
            if let Some(r) = active.iter().position(|&k| k == i) {
                let mut e = DVector::zeros(active.len());
                e[r] = 1.0;
                let x = lu.solve(&e).ok_or(Error::SingularSystem { residual: f64::INFINITY })?;
                for (q, &l) in active.iter().enumerate() {
                    out[l] = x[q];
                }
            }
            Ok(out)
        };
        let cols: Vec<Vec<f64>> = (0..n).map(column).collect::<Result<_>>()?;
        let wa: Vec<f64> = match self.welfare {
            WelfareSpec::WeightedActionSum { weights } => weights.clone(),
            WelfareSpec::LinkWeightSum => vec![0.0; n],
        };
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
        let mut gw = Vec::new();
        let mut gp = Vec::new();
        for i in 0..n {
            gw.push(dot(&wa, &cols[i]));
            gp.push(dot(&iv.beta, &cols[i]) + a[i]);
        }
        for (i, j) in self.layout().pairs() {
            let live = big_g[(i, j)] > BIND_TOL;
            if !live {
                gw.push(0.0);
                gp.push(0.0);
                continue;
            }
            let ft = p.ftilde(i, j);
            let da: Vec<f64> = (0..n).map(|l| p.rho * ft * (a[j] * cols[i][l] + a[i] * cols[j][l])).collect();
            let direct_w = if self.welfare.depends_on_links() { 2.0 * ft } else { 0.0 };
            gw.push(dot(&wa, &da) + direct_w);
            gp.push(dot(&iv.beta, &da) + 2.0 * big_g[(i, j)] + 2.0 * iv.sigma[(i, j)] * ft);
        }
        Ok(Gradients { welfare: gw, payment: gp })
    }
}

pub fn optimize_benchmark(p: &GameParameters, w: &WelfareSpec, budget: f64) -> Result<OptimizationResult> {
    optimize_with(&BenchmarkModel::new(p, w, budget), Mode::Full, &PlannerOptions::default())
}

/// Threshold inequalities on `a_i a_j` against `(s_ij + 2 sigma_ij) / rho` for
/// every pair with positive actions and a formed link: at most the threshold
/// when both actions are subsidized, at least it when the link is.
pub fn check_theorem2(p: &GameParameters, w: &WelfareSpec, result: &OptimizationResult) -> StructureVerdicts {
    let clean = kkt_check_generic(&BenchmarkModel::new(p, w, result.best.budget), result).is_ok_and(|k| k.clean);
    let x = result.coords();
    let tol = crate::planner::SUPPORT_RTOL * x.iter().fold(0.0f64, |m, v| m.max(*v));
    let a = &result.profile.a;
    let big_g = result.profile.link_strength();
    let pairs = p
        .layout()
        .pairs()
        .map(|(i, j)| {
            let sigma = result.best.sigma[(i, j)];
            let mut check = PairCheck { i, j, part: None, verdict: PairVerdict::NotApplicable, sigma, deviation: 0.0 };
            let formed = a[i] > BIND_TOL && a[j] > BIND_TOL && big_g[(i, j)] > BIND_TOL;
            let both_beta = result.best.beta[i] > tol && result.best.beta[j] > tol;
            let link = sigma > tol;
            if p.rho <= 0.0 || !formed || result.mode != Mode::Full || !(both_beta || link) {
                return check;
            }
            let threshold = (p.s[(i, j)] + 2.0 * sigma) / p.rho;
            let gap = a[i] * a[j] - threshold;
            let allowed = struct_tol(threshold);
            let ok = (!both_beta || gap <= allowed) && (!link || gap >= -allowed);
            check.part = Some(TheoremPart::Threshold);
            check.deviation = gap;
            check.verdict = if !clean {
                PairVerdict::Flagged
            } else if ok {
                PairVerdict::Pass
            } else {
                PairVerdict::Violation
            };
            check
        })
        .collect();
    StructureVerdicts { pairs }
}
