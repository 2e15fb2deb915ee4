//! Best-response dynamics from the zero profile and the first-order
//! characterization of the selected equilibrium.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GameParameters, Intervention, StrategyProfile};

/// Strict-positivity threshold separating binding from corner coordinates.
pub const BIND_TOL: f64 = 1e-12;

/// Tolerance on the first-order residuals of a converged equilibrium.
pub const FOC_TOL: f64 = 1e-8;

/// Environment variable that overrides [`SolverOptions::max_iter`].
pub const MAX_ITER_ENV: &str = "NETGAME_MAX_ITER";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Sup-norm fixed-point tolerance, relative to `max(1, |state|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Divergence cap on actions and link intensities.
    pub a_max: f64,
    /// Finish with Newton steps on the binding pattern once iterates settle.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-12, max_iter: 100_000, a_max: 1e6, polish: true }
    }
}

impl SolverOptions {
    /// Defaults, with `max_iter` taken from `NETGAME_MAX_ITER` when set.
    pub fn from_env() -> Result<Self> {
        let mut opts = Self::default();
        if let Ok(v) = std::env::var(MAX_ITER_ENV) {
            opts.max_iter = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameters(format!("{MAX_ITER_ENV}={v} is not a positive integer")))?;
            if opts.max_iter == 0 {
                return Err(Error::InvalidParameters(format!("{MAX_ITER_ENV} must be positive")));
            }
        }
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub profile: StrategyProfile,
    pub converged: bool,
    pub iterations: usize,
    pub foc_residual_max: f64,
    /// Agents with strictly positive action.
    pub binding_actions: Vec<usize>,
    /// Ordered pairs with strictly positive link intensity.
    pub binding_links: Vec<(usize, usize)>,
    pub exists: bool,
}

impl EquilibriumReport {
    pub fn require_exists(self) -> Result<Self> {
        if self.exists {
            Ok(self)
        } else {
            Err(Error::NonExistent { iterations: self.iterations })
        }
    }

    pub fn link_strength(&self) -> DMatrix<f64> {
        self.profile.link_strength()
    }
}

/// `b_i + beta_i + rho * sum_j G_ij a_j`: marginal utility of agent `i`'s action at zero.
pub(crate) fn action_drive(p: &GameParameters, iv: &Intervention, big_g: &DMatrix<f64>, a: &[f64], i: usize) -> f64 {
    let spill: f64 = (0..p.n).filter(|&j| j != i).map(|j| big_g[(i, j)] * a[j]).sum();
    p.b[i] + iv.beta[i] + p.rho * spill
}

/// `s_ij + sigma_ij + rho a_i a_j`: marginal utility of link intensity at zero.
#[inline]
pub(crate) fn link_drive(p: &GameParameters, iv: &Intervention, a: &[f64], i: usize, j: usize) -> f64 {
    p.s[(i, j)] + iv.sigma[(i, j)] + p.rho * a[i] * a[j]
}

/// Action best responses with links held fixed.
pub fn best_response_actions(p: &GameParameters, iv: &Intervention, sp: &StrategyProfile) -> Vec<f64> {
    let big_g = sp.link_strength();
    actions_given_links(p, iv, &big_g, &sp.a)
}

fn actions_given_links(p: &GameParameters, iv: &Intervention, big_g: &DMatrix<f64>, a: &[f64]) -> Vec<f64> {
    (0..p.n).map(|i| (action_drive(p, iv, big_g, a, i) / p.c[i]).max(0.0)).collect()
}

/// Link best responses with actions held fixed.
pub fn best_response_links(p: &GameParameters, iv: &Intervention, sp: &StrategyProfile) -> DMatrix<f64> {
    links_given_actions(p, iv, &sp.a)
}

fn links_given_actions(p: &GameParameters, iv: &Intervention, a: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(p.n, p.n, |i, j| {
        if i == j {
            0.0
        } else {
            (link_drive(p, iv, a, i, j) / p.f[(i, j)]).max(0.0)
        }
    })
}

/// Jacobi best-response rounds from the zero profile: all actions, then all links.
pub struct BestResponseDynamics<'a> {
    p: &'a GameParameters,
    iv: &'a Intervention,
    state: StrategyProfile,
}

impl<'a> BestResponseDynamics<'a> {
    pub fn new(p: &'a GameParameters, iv: &'a Intervention) -> Self {
        BestResponseDynamics { p, iv, state: StrategyProfile::zeros(p.n) }
    }
}

impl Iterator for BestResponseDynamics<'_> {
    type Item = StrategyProfile;

    fn next(&mut self) -> Option<StrategyProfile> {
        let a = best_response_actions(self.p, self.iv, &self.state);
        let g = links_given_actions(self.p, self.iv, &a);
        self.state = StrategyProfile { a, g };
        Some(self.state.clone())
    }
}

pub fn solve_equilibrium(p: &GameParameters, iv: &Intervention) -> Result<EquilibriumReport> {
    solve_equilibrium_with(p, iv, &SolverOptions::default())
}

/// Runs best-response dynamics from zero. Divergence past `a_max` yields a
/// report with `exists == false`; hitting `max_iter` without divergence is
/// [`Error::NonConvergent`].
pub fn solve_equilibrium_with(p: &GameParameters, iv: &Intervention, opts: &SolverOptions) -> Result<EquilibriumReport> {
    if iv.n() != p.n {
        return Err(Error::InvalidParameters("intervention dimension does not match the economy".into()));
    }
    let n = p.n;
    let mut a = vec![0.0; n];
    let mut g = DMatrix::zeros(n, n);
    let mut next_polish = 1e-6;
    let mut last_change = f64::INFINITY;

    for it in 1..=opts.max_iter {
        let big_g = strength(&g);
        let a_new = actions_given_links(p, iv, &big_g, &a);
        let g_new = links_given_actions(p, iv, &a_new);
        let change = sup_diff(&a, &a_new).max((&g - &g_new).amax());
        a = a_new;
        g = g_new;
        let size = sup(&a).max(g.amax());
        if !size.is_finite() || size > opts.a_max {
            return Ok(diverged(StrategyProfile { a, g }, it));
        }
        let scale = size.max(1.0);
        last_change = change;
        if change <= opts.tol * scale {
            return Ok(finish(p, iv, StrategyProfile { a, g }, it));
        }
        if opts.polish && change <= next_polish * scale {
            if let Some(sp) = newton_polish(p, iv, &a, opts) {
                return Ok(finish(p, iv, sp, it));
            }
            next_polish = change / scale * 1e-2;
        }
    }
    Err(Error::NonConvergent { iterations: opts.max_iter, last_change })
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

/// Report for a profile already known to be an equilibrium.
pub(crate) fn report_for(p: &GameParameters, iv: &Intervention, profile: StrategyProfile) -> EquilibriumReport {
    finish(p, iv, profile, 0)
}

fn finish(p: &GameParameters, iv: &Intervention, profile: StrategyProfile, iterations: usize) -> EquilibriumReport {
    let n = p.n;
    let binding_actions = (0..n).filter(|&i| profile.a[i] > BIND_TOL).collect();
    let binding_links = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && profile.g[(i, j)] > BIND_TOL)
        .collect();
    let mut report = EquilibriumReport {
        profile,
        converged: true,
        iterations,
        foc_residual_max: 0.0,
        binding_actions,
        binding_links,
        exists: true,
    };
    report.foc_residual_max = verify_proposition1(p, iv, &report).max();
    report
}

/// Newton's method on the action first-order conditions with the binding
/// pattern of `a0` frozen. Returns the polished profile only if one more
/// best-response round leaves it fixed.
fn newton_polish(p: &GameParameters, iv: &Intervention, a0: &[f64], opts: &SolverOptions) -> Option<StrategyProfile> {
    let n = p.n;
    let active: Vec<usize> = (0..n).filter(|&i| a0[i] > 0.0).collect();
    let live: Vec<bool> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            i != j && link_drive(p, iv, a0, i, j) > 0.0
        })
        .collect();
    let ft = p.ftilde_matrix();
    let mut a = a0.to_vec();
    let m = active.len();
    if m == 0 {
        return None;
    }
    let mut prev_step = f64::INFINITY;
    for _ in 0..30 {
        let big_g = DMatrix::from_fn(n, n, |i, j| {
            if live[i * n + j] {
                ft[(i, j)] * link_drive(p, iv, &a, i, j)
            } else {
                0.0
            }
        });
        let resid = DVector::from_iterator(
            m,
            active.iter().map(|&i| p.c[i] * a[i] - action_drive(p, iv, &big_g, &a, i)),
        );
        let jac = DMatrix::from_fn(m, m, |r, q| {
            let (i, k) = (active[r], active[q]);
            if i == k {
                let diag: f64 = (0..n).filter(|&l| live[i * n + l]).map(|l| ft[(i, l)] * a[l] * a[l]).sum();
                p.c[i] - p.rho * p.rho * diag
            } else if live[i * n + k] {
                -p.rho * (big_g[(i, k)] + p.rho * ft[(i, k)] * a[i] * a[k])
            } else {
                0.0
            }
        });
        let step = jac.lu().solve(&(-resid))?;
        for (r, &i) in active.iter().enumerate() {
            a[i] += step[r];
        }
        let size = step.amax();
        let scale = sup(&a).max(1.0);
        if !size.is_finite() {
            return None;
        }
        if size <= 4.0 * f64::EPSILON * scale || size >= prev_step {
            break;
        }
        prev_step = size;
    }
    if a.iter().any(|&x| x < 0.0) {
        return None;
    }
    let g = links_given_actions(p, iv, &a);
    let a_next = actions_given_links(p, iv, &strength(&g), &a);
    let g_next = links_given_actions(p, iv, &a_next);
    let scale = sup(&a).max(g.amax()).max(1.0);
    let change = sup_diff(&a, &a_next).max((&g - &g_next).amax());
    (change <= opts.tol * scale).then_some(StrategyProfile { a: a_next, g: g_next })
}

/// First-order residuals of a candidate equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop1Residuals {
    /// Max `|(C a - rho G a - (b + beta))_i|` over binding agents.
    pub action: f64,
    /// Max `|f_ij g_ij - (rho a_i a_j + s_ij + sigma_ij)|` over binding links.
    pub link: f64,
    /// Largest positive marginal utility at a corner coordinate; zero when the
    /// one-sided conditions hold.
    pub corner: f64,
}

impl Prop1Residuals {
    pub fn max(&self) -> f64 {
        self.action.max(self.link).max(self.corner)
    }
}

/// Residuals of the linear action system on the binding set, the link
/// first-order conditions on binding links, and the corner sign conditions
/// everywhere else.
pub fn verify_proposition1(p: &GameParameters, iv: &Intervention, report: &EquilibriumReport) -> Prop1Residuals {
    let n = p.n;
    let sp = &report.profile;
    let big_g = sp.link_strength();
    let mut out = Prop1Residuals { action: 0.0, link: 0.0, corner: 0.0 };
    let mut binding = vec![false; n];
    for &i in &report.binding_actions {
        binding[i] = true;
    }
    for i in 0..n {
        let drive = action_drive(p, iv, &big_g, &sp.a, i);
        if binding[i] {
            out.action = out.action.max((p.c[i] * sp.a[i] - drive).abs());
        } else {
            out.corner = out.corner.max(drive);
        }
    }
    let mut live = vec![false; n * n];
    for &(i, j) in &report.binding_links {
        live[i * n + j] = true;
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let drive = link_drive(p, iv, &sp.a, i, j);
            if live[i * n + j] {
                out.link = out.link.max((p.f[(i, j)] * sp.g[(i, j)] - drive).abs());
            } else {
                out.corner = out.corner.max(drive);
            }
        }
    }
    out
}

pub(crate) fn strength(g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut big_g = g + g.transpose();
    big_g.fill_diagonal(0.0);
    big_g
}

pub(crate) fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn sup_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::off_diagonal;
    use approx::assert_abs_diff_eq;

    fn zero_iv(n: usize) -> Intervention {
        Intervention::zero(n, 1.0)
    }

    #[test]
    fn action_br_corner_at_negative_incentive() {
        let p = GameParameters::new(vec![1.0, -1.0], vec![2.0, 1.0], off_diagonal(2, 0.0), off_diagonal(2, 1.0), 0.0)
            .unwrap();
        let a = best_response_actions(&p, &zero_iv(2), &StrategyProfile::zeros(2));
        assert_eq!(a, vec![0.5, 0.0]);
    }

    #[test]
    fn action_br_linear_formula() {
        let p = GameParameters::uniform(vec![0.0, 0.0], 1.0, 0.0, 1.0, 1.0).unwrap();
        let iv = Intervention::new(vec![1.0, 0.0], DMatrix::zeros(2, 2), 1.0).unwrap();
        let sp = StrategyProfile { a: vec![0.0, 2.0], g: off_diagonal(2, 0.25) };
        assert_eq!(best_response_actions(&p, &iv, &sp), vec![2.0, 0.0]);
    }

    #[test]
    fn link_br_examples() {
        let p = GameParameters::uniform(vec![0.0, 0.0], 1.0, -1.0, 1.0, 1.0).unwrap();
        let g = best_response_links(&p, &zero_iv(2), &StrategyProfile::zeros(2));
        assert_eq!(g[(0, 1)], 0.0);

        let p = GameParameters::uniform(vec![0.0, 0.0], 1.0, 0.1, 2.0, 1.0).unwrap();
        let iv = Intervention::new(vec![0.0, 0.0], off_diagonal(2, 0.05), 1.0).unwrap();
        let sp = StrategyProfile { a: vec![2.0, 3.0], g: DMatrix::zeros(2, 2) };
        let g = best_response_links(&p, &iv, &sp);
        assert_abs_diff_eq!(g[(0, 1)], 3.075, epsilon = 1e-15);
    }

    #[test]
    fn decoupled_game() {
        let p = GameParameters::uniform(vec![1.0, 1.0], 1.0, -1.0, 1.0, 0.0).unwrap();
        let r = solve_equilibrium(&p, &zero_iv(2)).unwrap();
        assert!(r.converged && r.exists);
        assert_eq!(r.profile.a, vec![1.0, 1.0]);
        assert_eq!(r.profile.g, DMatrix::zeros(2, 2));
        assert!(r.binding_links.is_empty());
    }

    #[test]
    fn symmetric_pair_matches_scalar_root() {
        let p = GameParameters::uniform(vec![1.0, 1.0], 2.0, 0.1, 2.0, 0.5).unwrap();
        let r = solve_equilibrium(&p, &zero_iv(2)).unwrap();
        // symmetric fixed point: 2a = 1 + 0.5 * G(a) * a with G = 2 (0.1 + 0.5 a^2) / 2
        let h = |a: f64| 2.0 * a - 1.0 - 0.5 * a * (0.1 + 0.5 * a * a);
        let (mut lo, mut hi) = (0.0, 1.0);
        assert!(h(lo) < 0.0 && h(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert_abs_diff_eq!(r.profile.a[0], lo, epsilon = 1e-8);
        assert_abs_diff_eq!(r.profile.a[1], lo, epsilon = 1e-8);
    }

    #[test]
    fn divergence_is_reported_as_nonexistence() {
        // cheap links and strong complementarity: a grows like a^3
        let p = GameParameters::uniform(vec![1.0, 1.0], 1.0, 0.5, 0.1, 1.0).unwrap();
        let r = solve_equilibrium(&p, &zero_iv(2)).unwrap();
        assert!(!r.exists && !r.converged);
        assert!(matches!(r.require_exists(), Err(Error::NonExistent { .. })));
    }

    #[test]
    fn iteration_cap_is_nonconvergence() {
        let p = GameParameters::uniform(vec![1.0, 1.0], 2.0, 0.1, 2.0, 0.5).unwrap();
        let opts = SolverOptions { max_iter: 2, polish: false, ..Default::default() };
        assert!(matches!(solve_equilibrium_with(&p, &zero_iv(2), &opts), Err(Error::NonConvergent { iterations: 2, .. })));
    }

    #[test]
    fn polished_and_plain_iteration_agree() {
        let p = GameParameters::new(
            vec![0.4, 0.2, 0.7],
            vec![1.5, 1.0, 2.0],
            off_diagonal(3, 0.05),
            DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.5, 0.0, 1.0, 1.2, 0.8, 0.0]),
            0.4,
        )
        .unwrap();
        let fast = solve_equilibrium(&p, &zero_iv(3)).unwrap();
        let slow = solve_equilibrium_with(&p, &zero_iv(3), &SolverOptions { polish: false, ..Default::default() }).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(fast.profile.a[i], slow.profile.a[i], epsilon = 1e-11);
        }
        assert!(fast.iterations < slow.iterations);
        assert!(fast.foc_residual_max <= 1e-13);
    }

    #[test]
    fn detector_flags_violated_action_condition() {
        let p = GameParameters::uniform(vec![1.0, 1.0], 1.0, -1.0, 1.0, 0.0).unwrap();
        let mut r = solve_equilibrium(&p, &zero_iv(2)).unwrap();
        r.profile.a[0] += 0.1;
        let res = verify_proposition1(&p, &zero_iv(2), &r);
        assert!(res.action >= 0.1 - 1e-15);
    }

    #[test]
    fn corner_condition_flags_unplayed_profitable_action() {
        let p = GameParameters::uniform(vec![1.0, 1.0], 1.0, -1.0, 1.0, 0.0).unwrap();
        let mut r = solve_equilibrium(&p, &zero_iv(2)).unwrap();
        r.profile.a[1] = 0.0;
        r.binding_actions = vec![0];
        assert_abs_diff_eq!(verify_proposition1(&p, &zero_iv(2), &r).corner, 1.0);
    }

    #[test]
    fn max_iter_env_override() {
        std::env::set_var(MAX_ITER_ENV, "77");
        let opts = SolverOptions::from_env().unwrap();
        std::env::set_var(MAX_ITER_ENV, "zero");
        let bad = SolverOptions::from_env();
        std::env::remove_var(MAX_ITER_ENV);
        assert_eq!(opts.max_iter, 77);
        assert!(bad.is_err());
    }
}
