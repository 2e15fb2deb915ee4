use serde::{Deserialize, Serialize};

use super::{Mode, OptimizationResult, PlannerModel};
use crate::equilibrium::{solve_equilibrium_with, SolverOptions, BIND_TOL};
use crate::error::{Error, Result};
use crate::model::{GameParameters, SubsidyLayout, WelfareSpec};
use crate::sensitivity::planner_gradients;

/// Scale-relative tolerance on stationarity residuals.
pub const KKT_TOL: f64 = 1e-4;
/// Absolute tolerance for the budget to count as binding.
pub const PAYMENT_TOL: f64 = 1e-9;
/// A subsidy counts as positive above this fraction of the largest subsidy.
pub const SUPPORT_RTOL: f64 = 1e-9;

/// Tolerance on link-subsidy structure for a pair with baseline incentive `s`.
pub fn struct_tol(s: f64) -> f64 {
    1e-3 * s.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KKTReport {
    /// Budget multiplier; zero when it cannot be identified.
    pub lambda: f64,
    /// `dW/dbeta_i - lambda dP/dbeta_i + lambda a_i`: the marginal value of
    /// agent `i`'s action net of the payment it triggers elsewhere.
    pub r_prime: Vec<f64>,
    /// `dL/dbeta_i`; at most zero, and zero where `beta_i > 0`.
    pub stationarity_beta: Vec<f64>,
    /// `dL/dsigma_ij` per unordered pair, in layout order.
    pub stationarity_sigma: Vec<f64>,
    /// The same link residuals from the closed form in the link-FOC variables.
    /// Empty unless produced by [`kkt_check`].
    pub stationarity_sigma_closed_form: Vec<f64>,
    pub budget_binding: bool,
    pub payment_gap: f64,
    /// Largest scale-relative residual over the allowed coordinates.
    pub max_relative_residual: f64,
    pub degenerate_multiplier: bool,
    /// Multiplier identified and nonnegative, budget binding, residuals within [`KKT_TOL`].
    pub clean: bool,
}

fn support_tol(x: &[f64]) -> f64 {
    SUPPORT_RTOL * x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Least-squares multiplier from `dW/dx_k = lambda dP/dx_k` over subsidized
/// action coordinates, falling back to subsidized link coordinates.
pub(crate) fn estimate_lambda(layout: &SubsidyLayout, mode: Mode, x: &[f64], gw: &[f64], gp: &[f64]) -> Result<f64> {
    let tol = support_tol(x);
    for betas in [true, false] {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..layout.dim() {
            if mode.allows(layout, k) && layout.is_beta(k) == betas && x[k] > tol {
                num += gw[k] * gp[k];
                den += gp[k] * gp[k];
            }
        }
        if den > 0.0 {
            return Ok(num / den);
        }
    }
    Err(Error::DegenerateMultiplier)
}

/// Generic KKT screening from the welfare and payment gradients.
pub fn kkt_report(
    layout: &SubsidyLayout,
    mode: Mode,
    x: &[f64],
    gw: &[f64],
    gp: &[f64],
    payment: f64,
    budget: f64,
) -> KKTReport {
    let n = layout.n;
    let est = estimate_lambda(layout, mode, x, gw, gp);
    let degenerate = est.is_err();
    let lambda = est.unwrap_or(0.0);
    let tol = support_tol(x);
    let resid: Vec<f64> = (0..layout.dim()).map(|k| gw[k] - lambda * gp[k]).collect();
    let mut scale = 0.0f64;
    for k in (0..layout.dim()).filter(|&k| mode.allows(layout, k)) {
        scale = scale.max(gw[k].abs()).max(lambda.abs() * gp[k].abs());
    }
    let mut worst = 0.0f64;
    for k in (0..layout.dim()).filter(|&k| mode.allows(layout, k)) {
        let r = if x[k] > tol { resid[k].abs() } else { resid[k].max(0.0) };
        worst = worst.max(r);
    }
    let max_relative_residual = if scale > 0.0 { worst / scale } else { 0.0 };
    let payment_gap = payment - budget;
    let budget_binding = payment_gap.abs() <= PAYMENT_TOL && lambda > 0.0;
    KKTReport {
        lambda,
        r_prime: Vec::new(),
        stationarity_beta: resid[..n].to_vec(),
        stationarity_sigma: resid[n..].to_vec(),
        stationarity_sigma_closed_form: Vec::new(),
        budget_binding,
        payment_gap,
        max_relative_residual,
        degenerate_multiplier: degenerate,
        clean: !degenerate && lambda >= 0.0 && budget_binding && max_relative_residual <= KKT_TOL,
    }
}

/// Re-evaluates any planner model at the returned optimum and screens the KKT conditions.
pub fn kkt_check_generic<M: PlannerModel>(model: &M, result: &OptimizationResult) -> Result<KKTReport> {
    let x = result.coords();
    let ev = model.evaluate(&x)?.ok_or(Error::NonExistent { iterations: 0 })?;
    let g = model.gradient(&x, &ev)?;
    let layout = model.layout();
    estimate_lambda(&layout, result.mode, &x, &g.welfare, &g.payment)?;
    Ok(kkt_report(&layout, result.mode, &x, &g.welfare, &g.payment, ev.payment, model.budget()))
}

/// Recomputes the equilibrium at the returned optimum and reports every
/// stationarity residual of the Lagrangian `W - lambda (P - B)`, including the
/// link residuals in closed form:
/// `rho f~ (R'_i a_j + R'_j a_i - 2 lambda a_i a_j) - 2 lambda f~ s - 4 lambda f~ sigma`
/// (plus `2 f~` when welfare counts links) on binding links.
pub fn kkt_check(p: &GameParameters, w: &WelfareSpec, result: &OptimizationResult) -> Result<KKTReport> {
    let iv = &result.best;
    let report = solve_equilibrium_with(p, iv, &SolverOptions::default())?.require_exists()?;
    let g = planner_gradients(w, p, iv, &report)?;
    let layout = p.layout();
    let x = iv.coords();
    let lambda = estimate_lambda(&layout, result.mode, &x, &g.welfare, &g.payment)?;
    let payment = crate::model::planner_payment(iv, &report.profile);
    let mut out = kkt_report(&layout, result.mode, &x, &g.welfare, &g.payment, payment, iv.budget);
    let a = &report.profile.a;
    let n = p.n;
    // effective action weights: welfare gradient net of the payment gradient
    let omega: Vec<f64> = (0..n).map(|k| g.welfare_action[k] - lambda * g.payment_action[k]).collect();
    out.r_prime = (0..n).map(|i| omega.iter().zip(&g.columns[i]).map(|(o, x)| o * x).sum()).collect();
    let big_g = report.profile.link_strength();
    out.stationarity_sigma_closed_form = layout
        .pairs()
        .map(|(i, j)| {
            if big_g[(i, j)] <= BIND_TOL {
                return 0.0;
            }
            let ft = p.ftilde(i, j);
            let direct = if w.depends_on_links() { 2.0 * ft } else { 0.0 };
            p.rho * ft * (out.r_prime[i] * a[j] + out.r_prime[j] * a[i] - 2.0 * lambda * a[i] * a[j])
                - 2.0 * lambda * ft * p.s[(i, j)]
                - 4.0 * lambda * ft * iv.sigma[(i, j)]
                + direct
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoremPart {
    /// Nonnegative baseline incentive: no link subsidy.
    NoSubsidy,
    /// Negative baseline incentive with both endpoints subsidized: subsidy of half its size.
    HalfGap,
    /// Positive link subsidy.
    Positive,
    /// Threshold inequalities on the action product.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairVerdict {
    Pass,
    /// KKT-clean optimum whose structure contradicts the theorem.
    Violation,
    NotApplicable,
    /// Hypotheses hold but the optimum is not KKT-clean, so no verdict.
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub i: usize,
    pub j: usize,
    pub part: Option<TheoremPart>,
    pub verdict: PairVerdict,
    pub sigma: f64,
    /// Quantity compared against the theorem's prediction.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StructureVerdicts {
    pub pairs: Vec<PairCheck>,
}

impl StructureVerdicts {
    pub fn count(&self, v: PairVerdict) -> usize {
        self.pairs.iter().filter(|c| c.verdict == v).count()
    }

    pub fn has_violation(&self) -> bool {
        self.count(PairVerdict::Violation) > 0
    }
}

/// Link-subsidy structure at an optimum: none where `s_ij >= 0`, and exactly
/// `|s_ij| / 2` where `s_ij < 0` with both endpoints' actions subsidized and
/// the link formed. Applies to action-based welfare and unrestricted optima.
pub fn check_theorem1_structure(p: &GameParameters, w: &WelfareSpec, result: &OptimizationResult) -> StructureVerdicts {
    let clean = kkt_check(p, w, result).is_ok_and(|k| k.clean);
    let x = result.coords();
    let tol = support_tol(&x);
    let big_g = result.profile.link_strength();
    let beta = &result.best.beta;
    let pairs = p
        .layout()
        .pairs()
        .map(|(i, j)| {
            let sigma = result.best.sigma[(i, j)];
            let s = p.s[(i, j)];
            let mut check = PairCheck { i, j, part: None, verdict: PairVerdict::NotApplicable, sigma, deviation: 0.0 };
            if w.depends_on_links() || result.mode != Mode::Full {
                return check;
            }
            if s >= 0.0 {
                check.part = Some(TheoremPart::NoSubsidy);
                check.deviation = sigma;
            } else if beta[i] > tol && beta[j] > tol && big_g[(i, j)] > BIND_TOL {
                check.part = Some(TheoremPart::HalfGap);
                check.deviation = sigma - s.abs() / 2.0;
            } else {
                return check;
            }
            check.verdict = if !clean {
                PairVerdict::Flagged
            } else if check.deviation.abs() <= struct_tol(s) {
                PairVerdict::Pass
            } else {
                PairVerdict::Violation
            };
            check
        })
        .collect();
    StructureVerdicts { pairs }
}
