//! Comparative statics of the selected equilibrium with respect to the
//! subsidies, by implicit differentiation of the first-order conditions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::equilibrium::{solve_equilibrium_with, EquilibriumReport, SolverOptions, BIND_TOL};
use crate::error::{Error, Result};
use crate::model::{GameParameters, Intervention, StrategyProfile, SubsidyLayout, WelfareSpec};

/// Relative residual above which the implicit-function system counts as singular.
pub const SINGULAR_TOL: f64 = 1e-8;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Linearized feedback operator of actions through endogenous links.
#[derive(Debug, Clone, PartialEq)]
pub struct SpilloverMatrix {
    /// Full `n × n` matrix; the restriction to binding actions happens in the solves.
    pub m: DMatrix<f64>,
    pub ftilde: DMatrix<f64>,
    /// Unordered pairs whose link first-order condition binds.
    pub live: DMatrix<bool>,
}

/// Builds `M_ij = G_ij + rho f~_ij a_i a_j` and `M_ii = rho sum_k f~_ik a_k^2`.
/// The action-product terms only enter through links that bind.
pub fn build_spillover_matrix(p: &GameParameters, report: &EquilibriumReport) -> SpilloverMatrix {
    let n = p.n;
    let a = &report.profile.a;
    let big_g = report.profile.link_strength();
    let ftilde = p.ftilde_matrix();
    let live = DMatrix::from_fn(n, n, |i, j| i != j && big_g[(i, j)] > BIND_TOL);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            m[(i, j)] = big_g[(i, j)];
            if live[(i, j)] {
                m[(i, j)] += p.rho * ftilde[(i, j)] * a[i] * a[j];
                diag += ftilde[(i, j)] * a[j] * a[j];
            }
        }
        m[(i, i)] = p.rho * diag;
    }
    SpilloverMatrix { m, ftilde, live }
}

/// `(C - rho M)` restricted to the binding actions, factorized once.
#[derive(Debug, Clone)]
pub struct SensitivitySystem {
    pub spillover: SpilloverMatrix,
    /// Binding agents, in increasing order.
    pub active: Vec<usize>,
    k: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    a: Vec<f64>,
    rho: f64,
    n: usize,
}

impl SensitivitySystem {
    pub fn new(p: &GameParameters, report: &EquilibriumReport) -> Result<Self> {
        if !report.converged {
            return Err(Error::InvalidParameters("sensitivities need a converged equilibrium".into()));
        }
        let spillover = build_spillover_matrix(p, report);
        let active: Vec<usize> = report.binding_actions.clone();
        let m = active.len();
        let k = DMatrix::from_fn(m, m, |r, q| {
            let (i, j) = (active[r], active[q]);
            let c = if i == j { p.c[i] } else { 0.0 };
            c - p.rho * spillover.m[(i, j)]
        });
        let lu = k.clone().lu();
        if m > 0 && !lu.is_invertible() {
            return Err(Error::SingularSystem { residual: f64::INFINITY });
        }
        Ok(SensitivitySystem { spillover, active, k, lu, a: report.profile.a.clone(), rho: p.rho, n: p.n })
    }

    /// Solves `(C - rho M)_S x = rhs_S` with one step of iterative refinement;
    /// entries outside the binding set are zero.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        if self.active.is_empty() {
            return Ok(out);
        }
        let r = DVector::from_iterator(self.active.len(), self.active.iter().map(|&i| rhs[i]));
        let mut x = self.lu.solve(&r).ok_or(Error::SingularSystem { residual: f64::INFINITY })?;
        let resid = &r - &self.k * &x;
        if let Some(dx) = self.lu.solve(&resid) {
            x += dx;
        }
        let resid = (&r - &self.k * &x).amax();
        let scale = r.amax().max(self.k.amax() * x.amax());
        let rel = if scale > 0.0 { resid / scale } else { 0.0 };
        if !x.iter().all(|v| v.is_finite()) || rel > SINGULAR_TOL {
            return Err(Error::SingularSystem { residual: rel });
        }
        for (r, &i) in self.active.iter().enumerate() {
            out[i] = x[r];
        }
        Ok(out)
    }

    /// Column `i` of `(C - rho M)_S^{-1}`, zero when `i` is a corner agent.
    pub fn column(&self, i: usize) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.n];
        e[i] = 1.0;
        self.solve(&e)
    }

    /// `d a* / d sigma_ij` given the two columns; zero when the link is slack.
    fn sigma_response(&self, i: usize, j: usize, xi: &[f64], xj: &[f64]) -> Vec<f64> {
        if !self.spillover.live[(i, j)] {
            return vec![0.0; self.n];
        }
        let k = self.rho * self.spillover.ftilde[(i, j)];
        (0..self.n).map(|l| k * (self.a[j] * xi[l] + self.a[i] * xj[l])).collect()
    }

    /// Largest eigenvalue of `rho C^{-1/2} M_S C^{-1/2}`; the system is an
    /// M-matrix and the best-response map a local contraction when this is below one.
    pub fn spectral_ratio(&self, p: &GameParameters) -> f64 {
        let m = self.active.len();
        if m == 0 {
            return 0.0;
        }
        let scaled = DMatrix::from_fn(m, m, |r, q| {
            let (i, j) = (self.active[r], self.active[q]);
            p.rho * self.spillover.m[(i, j)] / (p.c[i] * p.c[j]).sqrt()
        });
        SymmetricEigen::new(scaled).eigenvalues.max()
    }
}

pub fn d_actions_d_beta(p: &GameParameters, report: &EquilibriumReport, i: usize) -> Result<Vec<f64>> {
    p.check_index(i)?;
    SensitivitySystem::new(p, report)?.column(i)
}

/// `rho f~_ij (a_j X_i + a_i X_j)` with `X_k` the columns of the inverse system.
pub fn d_actions_d_sigma(p: &GameParameters, report: &EquilibriumReport, i: usize, j: usize) -> Result<Vec<f64>> {
    p.check_index(i)?;
    p.check_index(j)?;
    if i == j {
        return Err(Error::InvalidParameters("a link needs two distinct agents".into()));
    }
    let sys = SensitivitySystem::new(p, report)?;
    Ok(sys.sigma_response(i, j, &sys.column(i)?, &sys.column(j)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Column `i` is `d a* / d beta_i`.
    #[serde(with = "crate::model::matrix_rows")]
    pub da_dbeta: DMatrix<f64>,
    /// `d a* / d sigma_ij` for each unordered pair, in layout order.
    pub da_dsigma: Vec<((usize, usize), Vec<f64>)>,
    pub dw_dbeta: Vec<f64>,
    pub dw_dsigma: Vec<f64>,
    /// Per pair: `dW/dsigma_ij - rho f~_ij (dW/dbeta_i a_j + dW/dbeta_j a_i)`,
    /// less the direct link term when welfare counts links.
    pub identity_residual: Vec<f64>,
    #[serde(with = "crate::model::matrix_rows")]
    pub spillover: DMatrix<f64>,
    pub spectral_ratio: f64,
    pub well_posed: bool,
}

/// Gradient of welfare with respect to each action, at the equilibrium.
fn welfare_action_gradient(w: &WelfareSpec, p: &GameParameters, sys: &SensitivitySystem, a: &[f64]) -> Vec<f64> {
    match w {
        WelfareSpec::WeightedActionSum { weights } => weights.clone(),
        // W = 2 sum_{i<j} G_ij with G_ij = f~_ij (s_ij + sigma_ij + rho a_i a_j) on live links
        WelfareSpec::LinkWeightSum => (0..p.n)
            .map(|k| {
                2.0 * p.rho
                    * (0..p.n)
                        .filter(|&l| sys.spillover.live[(k, l)])
                        .map(|l| sys.spillover.ftilde[(k, l)] * a[l])
                        .sum::<f64>()
            })
            .collect(),
    }
}

/// Direct (fixed-action) effect of `sigma_ij` on welfare.
fn welfare_direct_sigma(w: &WelfareSpec, sys: &SensitivitySystem, i: usize, j: usize) -> f64 {
    match w {
        WelfareSpec::LinkWeightSum if sys.spillover.live[(i, j)] => 2.0 * sys.spillover.ftilde[(i, j)],
        _ => 0.0,
    }
}

pub fn d_welfare(w: &WelfareSpec, p: &GameParameters, report: &EquilibriumReport) -> Result<SensitivityReport> {
    w.validate(p.n)?;
    let sys = SensitivitySystem::new(p, report)?;
    let n = p.n;
    let a = &report.profile.a;
    let layout = SubsidyLayout::new(n);
    let cols: Vec<Vec<f64>> = (0..n).map(|i| sys.column(i)).collect::<Result<_>>()?;
    let da_dbeta = DMatrix::from_fn(n, n, |r, i| cols[i][r]);
    let grad_a = welfare_action_gradient(w, p, &sys, a);
    let dot = |x: &[f64]| grad_a.iter().zip(x).map(|(g, v)| g * v).sum::<f64>();
    let dw_dbeta: Vec<f64> = cols.iter().map(|c| dot(c)).collect();
    let mut da_dsigma = Vec::with_capacity(layout.n_pairs());
    let mut dw_dsigma = Vec::with_capacity(layout.n_pairs());
    let mut identity_residual = Vec::with_capacity(layout.n_pairs());
    for (i, j) in layout.pairs() {
        let da = sys.sigma_response(i, j, &cols[i], &cols[j]);
        let direct = welfare_direct_sigma(w, &sys, i, j);
        let dw = dot(&da) + direct;
        let predicted = if sys.spillover.live[(i, j)] {
            p.rho * sys.spillover.ftilde[(i, j)] * (dw_dbeta[i] * a[j] + dw_dbeta[j] * a[i])
        } else {
            0.0
        };
        identity_residual.push(dw - direct - predicted);
        dw_dsigma.push(dw);
        da_dsigma.push(((i, j), da));
    }
    Ok(SensitivityReport {
        da_dbeta,
        da_dsigma,
        dw_dbeta,
        dw_dsigma,
        identity_residual,
        spillover: sys.spillover.m.clone(),
        spectral_ratio: sys.spectral_ratio(p),
        well_posed: true,
    })
}

/// Gradients of welfare and payment in layout coordinates at an equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerGradients {
    pub welfare: Vec<f64>,
    pub payment: Vec<f64>,
    /// Columns of the inverse system, reused by the KKT report.
    pub columns: Vec<Vec<f64>>,
    /// `dW/da`.
    pub welfare_action: Vec<f64>,
    /// `dP/da` at fixed subsidies.
    pub payment_action: Vec<f64>,
}

/// Welfare and payment gradients with respect to every subsidy coordinate.
pub fn planner_gradients(
    w: &WelfareSpec,
    p: &GameParameters,
    iv: &Intervention,
    report: &EquilibriumReport,
) -> Result<PlannerGradients> {
    let sys = SensitivitySystem::new(p, report)?;
    let n = p.n;
    let a = &report.profile.a;
    let big_g = report.profile.link_strength();
    let ft = &sys.spillover.ftilde;
    let live = &sys.spillover.live;
    let columns: Vec<Vec<f64>> = (0..n).map(|i| sys.column(i)).collect::<Result<_>>()?;
    let welfare_action = welfare_action_gradient(w, p, &sys, a);
    // P = beta.a + 2 sum_{k<l} sigma_kl G_kl with G_kl depending on a_k a_l on live links
    let payment_action: Vec<f64> = (0..n)
        .map(|k| {
            iv.beta[k]
                + 2.0 * p.rho * (0..n).filter(|&l| live[(k, l)]).map(|l| iv.sigma[(k, l)] * ft[(k, l)] * a[l]).sum::<f64>()
        })
        .collect();
    let dot = |g: &[f64], x: &[f64]| g.iter().zip(x).map(|(u, v)| u * v).sum::<f64>();
    let layout = SubsidyLayout::new(n);
    let mut gw = Vec::with_capacity(layout.dim());
    let mut gp = Vec::with_capacity(layout.dim());
    for i in 0..n {
        gw.push(dot(&welfare_action, &columns[i]));
        gp.push(dot(&payment_action, &columns[i]) + a[i]);
    }
    for (i, j) in layout.pairs() {
        let da = sys.sigma_response(i, j, &columns[i], &columns[j]);
        gw.push(dot(&welfare_action, &da) + welfare_direct_sigma(w, &sys, i, j));
        let direct = if live[(i, j)] { 2.0 * big_g[(i, j)] + 2.0 * iv.sigma[(i, j)] * ft[(i, j)] } else { 0.0 };
        gp.push(dot(&payment_action, &da) + direct);
    }
    Ok(PlannerGradients { welfare: gw, payment: gp, columns, welfare_action, payment_action })
}

/// Which subsidy coordinate to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Beta(usize),
    Sigma(usize, usize),
}

impl Param {
    pub fn coordinate(&self, layout: &SubsidyLayout) -> usize {
        match *self {
            Param::Beta(i) => i,
            Param::Sigma(i, j) => layout.pair_index(i, j),
        }
    }
}

/// Central difference of `map(equilibrium)` in one subsidy coordinate.
pub fn finite_difference_map<F>(
    p: &GameParameters,
    iv: &Intervention,
    param: Param,
    h: f64,
    opts: &SolverOptions,
    map: F,
) -> Result<Vec<f64>>
where
    F: Fn(&StrategyProfile) -> Vec<f64>,
{
    let layout = p.layout();
    if let Param::Sigma(i, j) = param {
        if i == j || i >= p.n || j >= p.n {
            return Err(Error::InvalidParameters("invalid link selector".into()));
        }
    }
    let k = param.coordinate(&layout);
    if k >= layout.dim() {
        return Err(Error::IndexOutOfRange { index: k, n: p.n });
    }
    let x = iv.coords();
    let eval = |dir: f64| -> Result<Vec<f64>> {
        let mut y = x.clone();
        y[k] += dir * h;
        let shifted = Intervention::from_coords_unchecked(&layout, &y, iv.budget);
        let r = solve_equilibrium_with(p, &shifted, opts)
            .map_err(|e| Error::OracleUnavailable(e.to_string()))?;
        if !r.exists {
            return Err(Error::OracleUnavailable("no equilibrium at a perturbed subsidy".into()));
        }
        Ok(map(&r.profile))
    };
    let up = eval(1.0)?;
    let down = eval(-1.0)?;
    Ok(up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect())
}

/// Central difference of the equilibrium actions in one subsidy coordinate.
pub fn finite_difference_oracle(p: &GameParameters, iv: &Intervention, param: Param, h: f64) -> Result<Vec<f64>> {
    finite_difference_map(p, iv, param, h, &SolverOptions::default(), |sp| sp.a.clone())
}
