//! Power-family generalization: action costs `c a^eta / eta`, link costs
//! `f g^gamma` and spillovers `rho G_ij u_ij(a_i) u_ji(a_j)` with
//! `u_ij(a) = omega_ij a^kappa_ij`.
//!
//! `GameParameters` supplies `b`, `c`, `s`, `f` and `rho`; note that `f` here
//! multiplies `g^gamma` with no factor one half, so the quadratic game with
//! link cost `f g^2 / 2` corresponds to `f / 2` and `gamma = 2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{strength, sup, EquilibriumReport, SolverOptions, BIND_TOL};
use crate::error::{Error, Result};
use crate::model::{planner_payment, welfare, GameParameters, Intervention, StrategyProfile, WelfareSpec};
use crate::planner::{
    kkt_check_generic, optimize_with, struct_tol, Evaluation, Gradients, Mode, OptimizationResult, PairCheck,
    PairVerdict, PlannerModel, PlannerOptions, StructureVerdicts, TheoremPart, SUPPORT_RTOL,
};
use crate::sensitivity::FD_STEP;

/// Iteration stops once the change is below this (relative) and has stopped shrinking.
const STALL_TOL: f64 = 1e-10;
/// Ratio between consecutive points of the action-residual scan.
const SCAN_RATIO: f64 = 2.0;

/// Exponents and spillover scales of the power family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFamilySpec {
    /// Action-cost exponents, one per agent, each at least 2.
    pub eta: Vec<f64>,
    /// Link-cost exponents per ordered pair, each above 1.
    #[serde(with = "crate::model::matrix_rows")]
    pub gamma: DMatrix<f64>,
    /// Spillover exponents per ordered pair, each positive.
    #[serde(with = "crate::model::matrix_rows")]
    pub kappa: DMatrix<f64>,
    /// Spillover scales per ordered pair, each positive.
    #[serde(with = "crate::model::matrix_rows")]
    pub omega: DMatrix<f64>,
}

impl PowerFamilySpec {
    pub fn uniform(n: usize, eta: f64, gamma: f64, kappa: f64, omega: f64) -> Self {
        let off = |v: f64| DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { v });
        PowerFamilySpec { eta: vec![eta; n], gamma: off(gamma), kappa: off(kappa), omega: off(omega) }
    }

    /// The exponents of the linear-quadratic game.
    pub fn quadratic(n: usize) -> Self {
        Self::uniform(n, 2.0, 2.0, 1.0, 1.0)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.eta.len() != n {
            return Err(Error::InvalidParameters("eta must have length n".into()));
        }
        if let Some((i, e)) = self.eta.iter().enumerate().find(|(_, e)| !(e.is_finite() && **e >= 2.0)) {
            return Err(Error::InvalidParameters(format!("eta[{i}] = {e} must be >= 2")));
        }
        for (name, m, lower) in [("gamma", &self.gamma, 1.0), ("kappa", &self.kappa, 0.0), ("omega", &self.omega, 0.0)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidParameters(format!("{name} must be {n}x{n}")));
            }
            for i in 0..n {
                for j in 0..n {
                    let v = m[(i, j)];
                    if i != j && !(v.is_finite() && v > lower) {
                        return Err(Error::InvalidParameters(format!("{name}[{i}][{j}] = {v} must be > {lower}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn is_quadratic_pair(&self, i: usize, j: usize) -> bool {
        self.eta[i] == 2.0
            && self.eta[j] == 2.0
            && [(i, j), (j, i)].iter().all(|&k| self.gamma[k] == 2.0 && self.kappa[k] == 1.0 && self.omega[k] == 1.0)
    }
}

/// A game in the power family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralGame {
    pub params: GameParameters,
    pub family: PowerFamilySpec,
}

impl GeneralGame {
    pub fn new(params: GameParameters, family: PowerFamilySpec) -> Result<Self> {
        params.validate()?;
        family.validate(params.n)?;
        Ok(GeneralGame { params, family })
    }

    /// The linear-quadratic game written in this family (link costs halved).
    pub fn from_quadratic(p: &GameParameters) -> Self {
        let mut params = p.clone();
        params.f = p.f.map(|v| v / 2.0);
        GeneralGame { family: PowerFamilySpec::quadratic(p.n), params }
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    /// `u_ij(a)`.
    #[inline]
    pub fn spillover(&self, i: usize, j: usize, a: f64) -> f64 {
        self.family.omega[(i, j)] * a.powf(self.family.kappa[(i, j)])
    }

    /// Agent `i`'s utility (subsidies included).
    pub fn utility(&self, iv: &Intervention, sp: &StrategyProfile, i: usize) -> Result<f64> {
        self.params.check_index(i)?;
        let p = &self.params;
        let big_g = sp.link_strength();
        let a = &sp.a;
        let mut u = (p.b[i] + iv.beta[i]) * a[i] - p.c[i] * a[i].powf(self.family.eta[i]) / self.family.eta[i];
        for j in (0..p.n).filter(|&j| j != i) {
            u += p.rho * big_g[(i, j)] * self.spillover(i, j, a[i]) * self.spillover(j, i, a[j]);
            u += (p.s[(i, j)] + iv.sigma[(i, j)]) * big_g[(i, j)];
            u -= p.f[(i, j)] * sp.g[(i, j)].powf(self.family.gamma[(i, j)]);
        }
        Ok(u)
    }

    /// `s_ij + sigma_ij + rho u_ij(a_i) u_ji(a_j)`.
    fn link_drive(&self, iv: &Intervention, a: &[f64], i: usize, j: usize) -> f64 {
        self.params.s[(i, j)] + iv.sigma[(i, j)] + self.params.rho * self.spillover(i, j, a[i]) * self.spillover(j, i, a[j])
    }

    fn link_cost_slope(&self, i: usize, j: usize, g: f64) -> f64 {
        let gamma = self.family.gamma[(i, j)];
        self.params.f[(i, j)] * gamma * g.powf(gamma - 1.0)
    }

    fn action_terms(&self, iv: &Intervention, big_g: &DMatrix<f64>, a: &[f64], i: usize) -> ActionTerms {
        let p = &self.params;
        let mut linear = p.b[i] + iv.beta[i];
        let mut powers = Vec::new();
        for j in (0..p.n).filter(|&j| j != i) {
            let weight = p.rho * big_g[(i, j)] * self.family.omega[(i, j)] * self.spillover(j, i, a[j]);
            if weight == 0.0 {
                continue;
            }
            let kappa = self.family.kappa[(i, j)];
            if kappa == 1.0 {
                linear += weight;
            } else {
                powers.push((weight, kappa));
            }
        }
        ActionTerms { linear, powers, c: p.c[i], eta: self.family.eta[i] }
    }
}

/// Agent `i`'s action payoff `D a + sum_k w_k a^kappa_k - c a^eta / eta`.
struct ActionTerms {
    linear: f64,
    powers: Vec<(f64, f64)>,
    c: f64,
    eta: f64,
}

impl ActionTerms {
    fn marginal(&self, x: f64) -> f64 {
        let spill: f64 = self.powers.iter().map(|(w, k)| w * k * x.powf(k - 1.0)).sum();
        self.linear + spill - self.c * x.powf(self.eta - 1.0)
    }

    fn value(&self, x: f64) -> f64 {
        let spill: f64 = self.powers.iter().map(|(w, k)| w * x.powf(*k)).sum();
        self.linear * x + spill - self.c * x.powf(self.eta) / self.eta
    }

    /// Largest maximizer over `[0, cap]`.
    fn maximize(&self, agent: usize, cap: f64) -> Result<f64> {
        if self.powers.is_empty() {
            if self.linear <= 0.0 {
                return Ok(0.0);
            }
            let x = if self.eta == 2.0 { self.linear / self.c } else { (self.linear / self.c).powf(1.0 / (self.eta - 1.0)) };
            return if x <= cap { Ok(x) } else { Err(Error::IllPosedBR { agent, cap }) };
        }
        if self.marginal(cap) > 0.0 {
            return Err(Error::IllPosedBR { agent, cap });
        }
        // scan downwards on a geometric grid for + to - crossings of the marginal
        let mut candidates = vec![0.0];
        let mut hi = cap;
        let mut m_hi = self.marginal(hi);
        let floor = cap * f64::EPSILON * 1e-4;
        while hi > floor {
            let lo = hi / SCAN_RATIO;
            let m_lo = self.marginal(lo);
            if m_lo > 0.0 && m_hi <= 0.0 {
                candidates.push(self.bisect(lo, hi));
            }
            hi = lo;
            m_hi = m_lo;
        }
        if self.marginal(f64::MIN_POSITIVE) > 0.0 && m_hi <= 0.0 {
            candidates.push(self.bisect(0.0, hi));
        }
        let best = candidates
            .into_iter()
            .map(|x| (self.value(x), x))
            .fold((f64::NEG_INFINITY, 0.0), |b, c| if c.0 > b.0 || (c.0 == b.0 && c.1 > b.1) { c } else { b });
        Ok(best.1)
    }

    /// Root of the marginal with `marginal(lo) > 0 >= marginal(hi)`.
    fn bisect(&self, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.marginal(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Cost-curvature class of `f g^gamma`, or spillover class of `omega a^kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Curvature {
    Super,
    Sub,
    Both,
}

impl Curvature {
    pub fn is_super(self) -> bool {
        matches!(self, Curvature::Super | Curvature::Both)
    }

    pub fn is_sub(self) -> bool {
        matches!(self, Curvature::Sub | Curvature::Both)
    }

    fn by_threshold(x: f64, at: f64) -> Self {
        if x == at {
            Curvature::Both
        } else if x > at {
            Curvature::Super
        } else {
            Curvature::Sub
        }
    }
}

/// Super-quadratic when `g F'' >= F'`, which for `f g^gamma` is `gamma >= 2`.
pub fn classify_cost(gamma: f64) -> Result<Curvature> {
    if !(gamma.is_finite() && gamma > 1.0) {
        return Err(Error::InvalidParameters(format!("gamma = {gamma} must be > 1")));
    }
    Ok(Curvature::by_threshold(gamma, 2.0))
}

/// Super-linear when `a u' >= u`, which for `omega a^kappa` is `kappa >= 1`.
pub fn classify_spillover(kappa: f64) -> Result<Curvature> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidParameters(format!("kappa = {kappa} must be > 0")));
    }
    Ok(Curvature::by_threshold(kappa, 1.0))
}

/// `g F''(g) - F'(g)` for `F = f g^gamma`.
pub fn cost_curvature_gap(f: f64, gamma: f64, g: f64) -> f64 {
    f * gamma * (gamma - 1.0) * g.powf(gamma - 1.0) - f * gamma * g.powf(gamma - 1.0)
}

/// `a u'(a) - u(a)` for `u = omega a^kappa`.
pub fn spillover_curvature_gap(omega: f64, kappa: f64, a: f64) -> f64 {
    omega * kappa * a.powf(kappa) - omega * a.powf(kappa)
}

fn links_given_actions(game: &GeneralGame, iv: &Intervention, a: &[f64]) -> DMatrix<f64> {
    let n = game.n();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let drive = game.link_drive(iv, a, i, j);
        if drive <= 0.0 {
            return 0.0;
        }
        let gamma = game.family.gamma[(i, j)];
        let base = drive / (game.params.f[(i, j)] * gamma);
        if gamma == 2.0 {
            base
        } else {
            base.powf(1.0 / (gamma - 1.0))
        }
    })
}

fn actions_given_links(
    game: &GeneralGame,
    iv: &Intervention,
    big_g: &DMatrix<f64>,
    a: &[f64],
    cap: f64,
) -> Result<Vec<f64>> {
    (0..game.n()).map(|i| game.action_terms(iv, big_g, a, i).maximize(i, cap)).collect()
}

/// Simultaneous best responses to `sp`: actions against `(a, G)`, links against `a`.
pub fn general_best_response(game: &GeneralGame, iv: &Intervention, sp: &StrategyProfile) -> Result<StrategyProfile> {
    let a = actions_given_links(game, iv, &sp.link_strength(), &sp.a, SolverOptions::default().a_max)?;
    Ok(StrategyProfile { a, g: links_given_actions(game, iv, &sp.a) })
}

/// Largest first-order violation: interior residuals and positive marginals at zero.
pub fn general_foc_residual(game: &GeneralGame, iv: &Intervention, sp: &StrategyProfile) -> f64 {
    let n = game.n();
    let big_g = sp.link_strength();
    let mut worst = 0.0f64;
    for i in 0..n {
        let terms = game.action_terms(iv, &big_g, &sp.a, i);
        let r = if sp.a[i] > BIND_TOL { terms.marginal(sp.a[i]).abs() } else { terms.marginal(sp.a[i].max(0.0)).max(0.0) };
        worst = worst.max(r);
        for j in (0..n).filter(|&j| j != i) {
            let drive = game.link_drive(iv, &sp.a, i, j);
            let g = sp.g[(i, j)];
            let r = if g > BIND_TOL { (game.link_cost_slope(i, j, g) - drive).abs() } else { drive.max(0.0) };
            worst = worst.max(r);
        }
    }
    worst
}

pub fn solve_general(game: &GeneralGame, iv: &Intervention) -> Result<EquilibriumReport> {
    solve_general_with(game, iv, &SolverOptions::default())
}

/// Best-response dynamics from zero, as for the quadratic game but without the
/// Newton finish. Stops at the relative tolerance, or once the change is
/// within [`STALL_TOL`] and no longer decreasing (root-finding noise).
pub fn solve_general_with(game: &GeneralGame, iv: &Intervention, opts: &SolverOptions) -> Result<EquilibriumReport> {
    let n = game.n();
    if iv.n() != n {
        return Err(Error::InvalidParameters("intervention dimension does not match the economy".into()));
    }
    let mut a = vec![0.0; n];
    let mut g = DMatrix::zeros(n, n);
    let mut prev_change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let a_new = match actions_given_links(game, iv, &strength(&g), &a, opts.a_max) {
            Ok(a) => a,
            // the action payoff is still increasing at the cap: actions escape
            Err(Error::IllPosedBR { .. }) if it > 1 => return Ok(diverged(StrategyProfile { a, g }, it)),
            Err(e) => return Err(e),
        };
        let g_new = links_given_actions(game, iv, &a_new);
        let change = a.iter().zip(&a_new).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())).max((&g - &g_new).amax());
        a = a_new;
        g = g_new;
        let size = sup(&a).max(g.amax());
        if !size.is_finite() || size > opts.a_max {
            return Ok(diverged(StrategyProfile { a, g }, it));
        }
        let scale = size.max(1.0);
        if change <= opts.tol * scale || (change <= STALL_TOL * scale && change >= prev_change) {
            let profile = StrategyProfile { a, g };
            let foc_residual_max = general_foc_residual(game, iv, &profile);
            return Ok(EquilibriumReport {
                binding_actions: (0..n).filter(|&i| profile.a[i] > BIND_TOL).collect(),
                binding_links: (0..n)
                    .flat_map(|i| (0..n).map(move |j| (i, j)))
                    .filter(|&(i, j)| i != j && profile.g[(i, j)] > BIND_TOL)
                    .collect(),
                profile,
                converged: true,
                iterations: it,
                foc_residual_max,
                exists: true,
            });
        }
        prev_change = change;
    }
    Err(Error::NonConvergent { iterations: opts.max_iter, last_change: prev_change })
}

fn diverged(profile: StrategyProfile, iterations: usize) -> EquilibriumReport {
    EquilibriumReport {
        profile,
        converged: false,
        iterations,
        foc_residual_max: f64::INFINITY,
        binding_actions: Vec::new(),
        binding_links: Vec::new(),
        exists: false,
    }
}

/// Planner view of a power-family game; gradients by finite differences.
#[derive(Debug, Clone)]
pub struct GeneralModel<'a> {
    pub game: &'a GeneralGame,
    pub welfare: &'a WelfareSpec,
    pub budget: f64,
    pub solver: SolverOptions,
}

impl<'a> GeneralModel<'a> {
    pub fn new(game: &'a GeneralGame, welfare: &'a WelfareSpec, budget: f64) -> Self {
        GeneralModel { game, welfare, budget, solver: SolverOptions::default() }
    }

    fn intervention(&self, x: &[f64]) -> Intervention {
        Intervention::from_coords_unchecked(&self.layout(), x, self.budget)
    }
}

impl PlannerModel for GeneralModel<'_> {
    fn n(&self) -> usize {
        self.game.n()
    }

    fn budget(&self) -> f64 {
        self.budget
    }

    fn evaluate(&self, x: &[f64]) -> Result<Option<Evaluation>> {
        let iv = self.intervention(x);
        match solve_general_with(self.game, &iv, &self.solver) {
            Ok(r) if r.exists => Ok(Some(Evaluation {
                welfare: welfare(self.welfare, &r.profile),
                payment: planner_payment(&iv, &r.profile),
                profile: r.profile,
            })),
            Ok(_) | Err(Error::NonConvergent { .. }) | Err(Error::IllPosedBR { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Central differences, one-sided where a coordinate is within a step of
    /// zero or a neighbouring point has no equilibrium.
    fn gradient(&self, x: &[f64], at: &Evaluation) -> Result<Gradients> {
        let dim = x.len();
        let mut gw = vec![0.0; dim];
        let mut gp = vec![0.0; dim];
        for k in 0..dim {
            let h = FD_STEP * x[k].abs().max(1.0);
            let shifted = |dir: f64| -> Result<Option<Evaluation>> {
                let mut y = x.to_vec();
                y[k] += dir * h;
                self.evaluate(&y)
            };
            let up = shifted(1.0)?;
            let down = if x[k] >= h { shifted(-1.0)? } else { None };
            let (w, p) = match (up, down) {
                (Some(u), Some(d)) => ((u.welfare - d.welfare) / (2.0 * h), (u.payment - d.payment) / (2.0 * h)),
                (Some(u), None) => ((u.welfare - at.welfare) / h, (u.payment - at.payment) / h),
                (None, Some(d)) => ((at.welfare - d.welfare) / h, (at.payment - d.payment) / h),
                (None, None) => {
                    return Err(Error::OracleUnavailable(format!("no equilibrium next to coordinate {k}")));
                }
            };
            gw[k] = w;
            gp[k] = p;
        }
        Ok(Gradients { welfare: gw, payment: gp })
    }
}

/// Optimal intervention in a power-family game.
pub fn optimize_general(
    game: &GeneralGame,
    w: &WelfareSpec,
    budget: f64,
    mode: Mode,
    opts: &PlannerOptions,
) -> Result<OptimizationResult> {
    optimize_with(&GeneralModel::new(game, w, budget), mode, opts)
}

/// Link-subsidy regimes at an optimum of an action-based objective.
///
/// * `s_ij >= 0`, both link costs super-quadratic and both spillover factors
///   sub-linear: no subsidy on the link.
/// * `s_ij < 0`, both link costs sub-quadratic, both spillover factors
///   super-linear, both endpoints' actions subsidized and the link formed: a
///   positive subsidy. When the pair is exactly quadratic the subsidy must
///   also equal `|s_ij| / 2`.
pub fn check_theorem3(game: &GeneralGame, w: &WelfareSpec, result: &OptimizationResult) -> StructureVerdicts {
    let model = GeneralModel::new(game, w, result.best.budget);
    let clean = kkt_check_generic(&model, result).is_ok_and(|k| k.clean);
    let x = result.coords();
    let tol = SUPPORT_RTOL * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let big_g = result.profile.link_strength();
    let beta = &result.best.beta;
    let fam = &game.family;
    let classes = |i: usize, j: usize| -> (Curvature, Curvature, Curvature, Curvature) {
        (
            Curvature::by_threshold(fam.gamma[(i, j)], 2.0),
            Curvature::by_threshold(fam.gamma[(j, i)], 2.0),
            Curvature::by_threshold(fam.kappa[(i, j)], 1.0),
            Curvature::by_threshold(fam.kappa[(j, i)], 1.0),
        )
    };
    let pairs = game
        .params
        .layout()
        .pairs()
        .map(|(i, j)| {
            let sigma = result.best.sigma[(i, j)];
            let s = game.params.s[(i, j)];
            let mut check = PairCheck { i, j, part: None, verdict: PairVerdict::NotApplicable, sigma, deviation: sigma };
            if w.depends_on_links() || result.mode != Mode::Full {
                return check;
            }
            let (fij, fji, uij, uji) = classes(i, j);
            let holds = if s >= 0.0 {
                if !(fij.is_super() && fji.is_super() && uij.is_sub() && uji.is_sub()) {
                    return check;
                }
                check.part = Some(TheoremPart::NoSubsidy);
                sigma <= struct_tol(s)
            } else {
                let subsidized = beta[i] > tol && beta[j] > tol && big_g[(i, j)] > BIND_TOL;
                if !(subsidized && fij.is_sub() && fji.is_sub() && uij.is_super() && uji.is_super()) {
                    return check;
                }
                if fam.is_quadratic_pair(i, j) {
                    check.part = Some(TheoremPart::HalfGap);
                    check.deviation = sigma - s.abs() / 2.0;
                    check.deviation.abs() <= struct_tol(s)
                } else {
                    check.part = Some(TheoremPart::Positive);
                    sigma > struct_tol(s)
                }
            };
            check.verdict = if !clean {
                PairVerdict::Flagged
            } else if holds {
                PairVerdict::Pass
            } else {
                PairVerdict::Violation
            };
            check
        })
        .collect();
    StructureVerdicts { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_equilibrium;
    use crate::model::off_diagonal;

    fn pair(b: [f64; 2], c: f64, s: f64, f: f64, rho: f64) -> GameParameters {
        GameParameters::uniform(b.to_vec(), c, s, f, rho).unwrap()
    }

    #[test]
    fn classification_matches_exponent_thresholds() {
        assert_eq!(classify_cost(2.0).unwrap(), Curvature::Both);
        assert_eq!(classify_cost(3.0).unwrap(), Curvature::Super);
        assert_eq!(classify_cost(1.5).unwrap(), Curvature::Sub);
        assert_eq!(classify_spillover(1.0).unwrap(), Curvature::Both);
        assert_eq!(classify_spillover(2.0).unwrap(), Curvature::Super);
        assert_eq!(classify_spillover(0.5).unwrap(), Curvature::Sub);
        assert!(classify_cost(1.0).is_err());
        assert!(classify_spillover(0.0).is_err());
    }

    #[test]
    fn classification_agrees_with_the_defining_inequalities_on_a_grid() {
        let grid: Vec<f64> = (0..=90).map(|k| 10f64.powf(-6.0 + k as f64 / 10.0)).collect();
        for gamma in [1.2, 1.5, 2.0, 2.5, 3.0, 4.0] {
            let class = classify_cost(gamma).unwrap();
            for &g in &grid {
                let gap = cost_curvature_gap(1.7, gamma, g);
                let slack = 1e-12 * 1.7 * gamma * gamma * g.powf(gamma - 1.0);
                assert_eq!(gap >= -slack, class.is_super(), "gamma {gamma} g {g}");
                assert_eq!(gap <= slack, class.is_sub(), "gamma {gamma} g {g}");
            }
        }
        for kappa in [0.3, 0.5, 1.0, 1.5, 2.0] {
            let class = classify_spillover(kappa).unwrap();
            for &a in &grid {
                let gap = spillover_curvature_gap(0.8, kappa, a);
                let slack = 1e-12 * 0.8 * (kappa + 1.0) * a.powf(kappa);
                assert_eq!(gap >= -slack, class.is_super(), "kappa {kappa} a {a}");
                assert_eq!(gap <= slack, class.is_sub(), "kappa {kappa} a {a}");
            }
        }
    }

    #[test]
    fn quadratic_family_reproduces_the_base_best_responses() {
        let p = GameParameters::new(
            vec![0.3, 0.1, 0.2],
            vec![1.0, 1.5, 2.0],
            off_diagonal(3, 0.05),
            off_diagonal(3, 1.2),
            0.4,
        )
        .unwrap();
        let game = GeneralGame::from_quadratic(&p);
        let iv = Intervention::zero(3, 1.0);
        let sp = StrategyProfile { a: vec![0.4, 0.2, 0.3], g: off_diagonal(3, 0.1) };
        let br = general_best_response(&game, &iv, &sp).unwrap();
        let a = crate::equilibrium::best_response_actions(&p, &iv, &sp);
        let g = crate::equilibrium::best_response_links(&p, &iv, &sp);
        for i in 0..3 {
            assert!((br.a[i] - a[i]).abs() < 1e-14);
            for j in 0..3 {
                assert!((br.g[(i, j)] - g[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_complementarity_has_closed_form_actions() {
        let p = GameParameters::uniform(vec![0.5, 2.0], 1.5, 0.1, 1.0, 0.0).unwrap();
        let game = GeneralGame::new(p, PowerFamilySpec::uniform(2, 3.0, 1.5, 0.5, 1.0)).unwrap();
        let mut iv = Intervention::zero(2, 1.0);
        iv.beta = vec![0.25, 0.0];
        let r = solve_general(&game, &iv).unwrap();
        for (i, d) in [0.75, 2.0].into_iter().enumerate() {
            assert!((r.profile.a[i] - (d / 1.5f64).powf(0.5)).abs() < 1e-12);
        }
        // links: (0.1 / (1 * 1.5))^(1 / 0.5)
        assert!((r.profile.g[(0, 1)] - (0.1f64 / 1.5).powi(2)).abs() < 1e-14);
    }

    #[test]
    fn sublinear_best_response_matches_a_grid_argmax() {
        let p = pair([0.05, 0.1], 1.0, 0.2, 1.0, 0.8);
        let game = GeneralGame::new(p, PowerFamilySpec::uniform(2, 2.0, 2.0, 0.5, 1.0)).unwrap();
        let iv = Intervention::zero(2, 1.0);
        let sp = StrategyProfile { a: vec![0.3, 0.6], g: off_diagonal(2, 0.4) };
        let br = general_best_response(&game, &iv, &sp).unwrap();
        for i in 0..2 {
            let step = 1e-6;
            let (mut best_x, mut best_u) = (0.0, f64::NEG_INFINITY);
            for k in 0..=2_000_000 {
                let mut trial = sp.clone();
                trial.a[i] = k as f64 * step;
                let u = game.utility(&iv, &trial, i).unwrap();
                if u > best_u {
                    best_u = u;
                    best_x = trial.a[i];
                }
            }
            assert!((br.a[i] - best_x).abs() <= step, "agent {i}: {} vs {best_x}", br.a[i]);
        }
    }

    #[test]
    fn superlinear_best_response_takes_the_global_maximum() {
        // payoff 0.01 a + 0.5 a^2 - a^3 / 3 on a single agent's terms
        let terms = ActionTerms { linear: 0.01, powers: vec![(0.5, 2.0)], c: 1.0, eta: 3.0 };
        let x = terms.maximize(0, 1e6).unwrap();
        // marginal 0.01 + a - a^2 = 0
        let root = (1.0 + (1.0f64 + 0.04).sqrt()) / 2.0;
        assert!((x - root).abs() < 1e-12);
        // negative intercept: the interior peak must beat staying at zero
        let terms = ActionTerms { linear: -0.1, powers: vec![(0.5, 2.0)], c: 1.0, eta: 3.0 };
        let x = terms.maximize(0, 1e6).unwrap();
        let root = (1.0 + (1.0f64 - 0.4).sqrt()) / 2.0;
        assert!(terms.value(root) > 0.0);
        assert!((x - root).abs() < 1e-12);
        let terms = ActionTerms { linear: -0.3, powers: vec![(0.5, 2.0)], c: 1.0, eta: 3.0 };
        assert_eq!(terms.maximize(0, 1e6).unwrap(), 0.0);
    }

    #[test]
    fn unbounded_action_payoff_is_ill_posed() {
        let terms = ActionTerms { linear: 0.1, powers: vec![(2.0, 3.0)], c: 1.0, eta: 2.0 };
        assert_eq!(terms.maximize(4, 1e6), Err(Error::IllPosedBR { agent: 4, cap: 1e6 }));
    }

    #[test]
    fn nested_family_matches_the_quadratic_solver() {
        let p = GameParameters::new(
            vec![0.3, 0.1, 0.2, 0.05],
            vec![1.0, 1.5, 2.0, 1.2],
            off_diagonal(4, 0.05),
            off_diagonal(4, 1.2),
            0.3,
        )
        .unwrap();
        let mut iv = Intervention::zero(4, 1.0);
        iv.beta = vec![0.1, 0.0, 0.05, 0.0];
        iv.sigma[(0, 1)] = 0.02;
        iv.sigma[(1, 0)] = 0.02;
        let quad = solve_equilibrium(&p, &iv).unwrap();
        let gen = solve_general(&GeneralGame::from_quadratic(&p), &iv).unwrap();
        assert!(gen.exists && gen.foc_residual_max < 1e-10);
        for i in 0..4 {
            assert!((quad.profile.a[i] - gen.profile.a[i]).abs() < 1e-10);
            for j in 0..4 {
                assert!((quad.profile.g[(i, j)] - gen.profile.g[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn supercritical_game_has_no_equilibrium() {
        let p = pair([0.1, 0.1], 1.0, 1.0, 1.0, 0.6);
        let r = solve_general(&GeneralGame::from_quadratic(&p), &Intervention::zero(2, 1.0)).unwrap();
        assert!(!r.exists);
    }

    #[test]
    fn general_best_response_is_monotone_in_subsidies() {
        let p = pair([0.1, 0.2], 1.0, 0.05, 1.0, 0.5);
        let game = GeneralGame::new(p, PowerFamilySpec::uniform(2, 3.0, 1.5, 0.5, 1.0)).unwrap();
        let sp = StrategyProfile { a: vec![0.3, 0.4], g: off_diagonal(2, 0.2) };
        let base = general_best_response(&game, &Intervention::zero(2, 1.0), &sp).unwrap();
        let mut iv = Intervention::zero(2, 1.0);
        iv.beta[0] = 0.1;
        iv.sigma[(0, 1)] = 0.05;
        iv.sigma[(1, 0)] = 0.05;
        let up = general_best_response(&game, &iv, &sp).unwrap();
        assert!(up.a[0] > base.a[0] && up.a[1] >= base.a[1]);
        assert!(up.g[(0, 1)] > base.g[(0, 1)] && up.g[(1, 0)] > base.g[(1, 0)]);
    }

    #[test]
    fn finite_difference_gradients_match_analytic_ones_on_the_nested_game() {
        let p = pair([0.2, 0.3], 1.0, -0.004, 1.0, 0.3);
        let w = WelfareSpec::unit_actions(2);
        let game = GeneralGame::from_quadratic(&p);
        let x = vec![0.02, 0.03, 0.01];
        let gm = GeneralModel::new(&game, &w, 0.05);
        let ev = gm.evaluate(&x).unwrap().unwrap();
        let fd = gm.gradient(&x, &ev).unwrap();
        let em = crate::planner::EndogenousModel::new(&p, &w, 0.05);
        let ev2 = em.evaluate(&x).unwrap().unwrap();
        let an = em.gradient(&x, &ev2).unwrap();
        for k in 0..3 {
            assert!((fd.welfare[k] - an.welfare[k]).abs() < 1e-6 * an.welfare[k].abs().max(1.0));
            assert!((fd.payment[k] - an.payment[k]).abs() < 1e-6 * an.payment[k].abs().max(1.0));
        }
    }

    #[test]
    fn regime_one_leaves_links_unsubsidized() {
        let p = GameParameters::uniform(vec![0.3, 0.5], 1.0, 0.1, 1.0, 0.3).unwrap();
        let game = GeneralGame::new(p, PowerFamilySpec::uniform(2, 2.0, 3.0, 0.5, 1.0)).unwrap();
        let w = WelfareSpec::unit_actions(2);
        let opts = PlannerOptions { starts: 8, ..Default::default() };
        let r = optimize_general(&game, &w, 0.1, Mode::Full, &opts).unwrap();
        let v = check_theorem3(&game, &w, &r);
        assert_eq!(v.pairs[0].part, Some(TheoremPart::NoSubsidy));
        assert_eq!(v.pairs[0].verdict, PairVerdict::Pass, "{:?} {:?}", v, r.kkt);
    }

    #[test]
    fn nested_pair_reproduces_the_half_gap_subsidy() {
        let p = pair([0.2, 0.3], 1.0, -0.004, 1.0, 0.3);
        let game = GeneralGame::from_quadratic(&p);
        let w = WelfareSpec::unit_actions(2);
        let opts = PlannerOptions { starts: 8, ..Default::default() };
        let r = optimize_general(&game, &w, 0.05, Mode::Full, &opts).unwrap();
        let v = check_theorem3(&game, &w, &r);
        assert_eq!(v.pairs[0].part, Some(TheoremPart::HalfGap));
        assert_eq!(v.pairs[0].verdict, PairVerdict::Pass, "{:?} {:?}", v, r.kkt);
        assert!((r.best.sigma[(0, 1)] - 0.002).abs() < 1e-4);
    }

    #[test]
    fn link_welfare_is_outside_the_regimes() {
        let p = pair([0.2, 0.3], 1.0, 0.1, 1.0, 0.3);
        let game = GeneralGame::from_quadratic(&p);
        let w = WelfareSpec::LinkWeightSum;
        let opts = PlannerOptions { starts: 2, grid_check: false, ..Default::default() };
        let r = optimize_general(&game, &w, 0.05, Mode::Full, &opts).unwrap();
        assert!(check_theorem3(&game, &w, &r).pairs.iter().all(|c| c.verdict == PairVerdict::NotApplicable));
    }

    #[test]
    fn family_validation() {
        let mut f = PowerFamilySpec::quadratic(2);
        assert!(f.validate(2).is_ok());
        assert!(f.validate(3).is_err());
        f.eta[0] = 1.5;
        assert!(f.validate(2).is_err());
        let mut f = PowerFamilySpec::quadratic(2);
        f.gamma[(0, 1)] = 1.0;
        assert!(f.validate(2).is_err());
        let json = serde_json::to_string(&PowerFamilySpec::uniform(2, 3.0, 1.5, 2.0, 0.5)).unwrap();
        let back: PowerFamilySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, PowerFamilySpec::uniform(2, 3.0, 1.5, 2.0, 0.5));
    }
}
