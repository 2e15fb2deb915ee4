//! Economy, intervention and strategy types, plus the payoff, payment and
//! welfare arithmetic shared by every solver.
//!
//! Matrices are dense `n × n` with a zero diagonal. Link incentives `s` and
//! link subsidies `sigma` are symmetric; symmetry is checked on construction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for the symmetry / zero-diagonal checks on input matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// The economy: agents, incentives, cost curvatures and the complementarity strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameParameters {
    pub n: usize,
    /// Standalone action incentives.
    pub b: Vec<f64>,
    /// Action-cost curvatures, all positive.
    pub c: Vec<f64>,
    /// Standalone link incentives, symmetric with zero diagonal.
    #[serde(with = "matrix_rows")]
    pub s: DMatrix<f64>,
    /// Link-cost curvatures, positive off the diagonal.
    #[serde(with = "matrix_rows")]
    pub f: DMatrix<f64>,
    pub rho: f64,
}

impl GameParameters {
    pub fn new(b: Vec<f64>, c: Vec<f64>, s: DMatrix<f64>, f: DMatrix<f64>, rho: f64) -> Result<Self> {
        let p = GameParameters { n: b.len(), b, c, s, f, rho };
        p.validate()?;
        Ok(p)
    }

    /// Homogeneous economy: every pair shares `s` and `f`, every agent shares `c`.
    pub fn uniform(b: Vec<f64>, c: f64, s: f64, f: f64, rho: f64) -> Result<Self> {
        let n = b.len();
        Self::new(b, vec![c; n], off_diagonal(n, s), off_diagonal(n, f), rho)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n < 2 {
            return Err(Error::InvalidParameters(format!("need at least 2 agents, got {n}")));
        }
        if self.b.len() != n || self.c.len() != n {
            return Err(Error::InvalidParameters("b and c must have length n".into()));
        }
        check_square(&self.s, n, "s")?;
        check_square(&self.f, n, "f")?;
        if !self.rho.is_finite() || self.rho < 0.0 {
            return Err(Error::InvalidParameters(format!("rho must be finite and >= 0, got {}", self.rho)));
        }
        if let Some((i, c)) = self.c.iter().enumerate().find(|(_, c)| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::InvalidParameters(format!("c[{i}] = {c} must be > 0")));
        }
        if self.b.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameters("b must be finite".into()));
        }
        check_symmetric(&self.s, "s")?;
        for i in 0..n {
            for j in 0..n {
                if i != j && !(self.f[(i, j)].is_finite() && self.f[(i, j)] > 0.0) {
                    return Err(Error::InvalidParameters(format!("f[{i}][{j}] = {} must be > 0", self.f[(i, j)])));
                }
            }
        }
        Ok(())
    }

    /// `1/f_ij + 1/f_ji`: the response of `G_ij` to a unit shift in the pair's link incentive.
    #[inline]
    pub fn ftilde(&self, i: usize, j: usize) -> f64 {
        1.0 / self.f[(i, j)] + 1.0 / self.f[(j, i)]
    }

    pub fn ftilde_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if i == j { 0.0 } else { self.ftilde(i, j) })
    }

    pub fn layout(&self) -> SubsidyLayout {
        SubsidyLayout::new(self.n)
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i < self.n {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: i, n: self.n })
        }
    }
}

/// Subsidies on actions (`beta`) and on undirected links (`sigma`), plus the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub beta: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub sigma: DMatrix<f64>,
    pub budget: f64,
}

impl Intervention {
    pub fn new(beta: Vec<f64>, sigma: DMatrix<f64>, budget: f64) -> Result<Self> {
        let iv = Intervention { beta, sigma, budget };
        iv.validate()?;
        Ok(iv)
    }

    pub fn zero(n: usize, budget: f64) -> Self {
        Intervention { beta: vec![0.0; n], sigma: DMatrix::zeros(n, n), budget }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.beta.len();
        check_square(&self.sigma, n, "sigma")?;
        check_symmetric(&self.sigma, "sigma")?;
        if self.beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvalidParameters("beta entries must be finite and >= 0".into()));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidParameters("sigma entries must be finite and >= 0".into()));
        }
        if !(self.budget > 0.0) {
            return Err(Error::InvalidParameters(format!("budget must be > 0, got {}", self.budget)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.beta.len()
    }

    /// Flat coordinates in [`SubsidyLayout`] order.
    pub fn coords(&self) -> Vec<f64> {
        SubsidyLayout::new(self.n()).to_coords(&self.beta, &self.sigma)
    }

    /// Builds an intervention from flat coordinates without sign checks.
    /// Finite-difference probes step slightly below zero.
    pub(crate) fn from_coords_unchecked(layout: &SubsidyLayout, x: &[f64], budget: f64) -> Self {
        let (beta, sigma) = layout.from_coords(x);
        Intervention { beta, sigma, budget }
    }

    pub fn from_coords(layout: &SubsidyLayout, x: &[f64], budget: f64) -> Result<Self> {
        let iv = Self::from_coords_unchecked(layout, x, budget);
        iv.validate()?;
        Ok(iv)
    }

    pub fn scaled(&self, t: f64) -> Self {
        Intervention {
            beta: self.beta.iter().map(|b| b * t).collect(),
            sigma: &self.sigma * t,
            budget: self.budget,
        }
    }
}

/// Actions and directed link intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub a: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub g: DMatrix<f64>,
}

impl StrategyProfile {
    pub fn zeros(n: usize) -> Self {
        StrategyProfile { a: vec![0.0; n], g: DMatrix::zeros(n, n) }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Undirected link strengths `G_ij = g_ij + g_ji`.
    pub fn link_strength(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { self.g[(i, j)] + self.g[(j, i)] })
    }

    pub fn validate(&self) -> Result<()> {
        check_square(&self.g, self.n(), "g")?;
        if self.a.iter().any(|a| !(*a >= 0.0)) || self.g.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidParameters("actions and link intensities must be >= 0".into()));
        }
        Ok(())
    }
}

/// Planner objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WelfareSpec {
    /// `sum_i w_i a_i` with every `w_i > 0`.
    WeightedActionSum { weights: Vec<f64> },
    /// `sum_i sum_{j != i} G_ij`.
    LinkWeightSum,
}

impl WelfareSpec {
    pub fn unit_actions(n: usize) -> Self {
        WelfareSpec::WeightedActionSum { weights: vec![1.0; n] }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            WelfareSpec::WeightedActionSum { weights } => {
                if weights.len() != n {
                    return Err(Error::InvalidParameters("welfare weights must have length n".into()));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::InvalidParameters("welfare weights must be > 0".into()));
                }
                Ok(())
            }
            WelfareSpec::LinkWeightSum => Ok(()),
        }
    }

    pub fn depends_on_links(&self) -> bool {
        matches!(self, WelfareSpec::LinkWeightSum)
    }
}

/// Utility of agent `i` under the intervention, subsidy receipts included.
pub fn agent_utility(p: &GameParameters, iv: &Intervention, sp: &StrategyProfile, i: usize) -> Result<f64> {
    p.check_index(i)?;
    if iv.n() != p.n || sp.n() != p.n {
        return Err(Error::InvalidParameters("dimension mismatch".into()));
    }
    let a = &sp.a;
    let mut u = (p.b[i] + iv.beta[i]) * a[i] - 0.5 * p.c[i] * a[i] * a[i];
    for j in 0..p.n {
        if j == i {
            continue;
        }
        let big_g = sp.g[(i, j)] + sp.g[(j, i)];
        u += p.rho * big_g * a[i] * a[j];
        u += (p.s[(i, j)] + iv.sigma[(i, j)]) * big_g;
        u -= 0.5 * p.f[(i, j)] * sp.g[(i, j)] * sp.g[(i, j)];
    }
    Ok(u)
}

/// Total planner payment. The link term runs over ordered pairs, so every
/// undirected link is paid `sigma_ij * G_ij` twice.
pub fn planner_payment(iv: &Intervention, sp: &StrategyProfile) -> f64 {
    let n = sp.n();
    let mut total: f64 = iv.beta.iter().zip(&sp.a).map(|(b, a)| b * a).sum();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += iv.sigma[(i, j)] * (sp.g[(i, j)] + sp.g[(j, i)]);
            }
        }
    }
    total
}

pub fn welfare(w: &WelfareSpec, sp: &StrategyProfile) -> f64 {
    match w {
        WelfareSpec::WeightedActionSum { weights } => weights.iter().zip(&sp.a).map(|(w, a)| w * a).sum(),
        WelfareSpec::LinkWeightSum => {
            let n = sp.n();
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        total += sp.g[(i, j)] + sp.g[(j, i)];
                    }
                }
            }
            total
        }
    }
}

/// Flat coordinate system for interventions: `beta_0..beta_{n-1}` followed by
/// `sigma_ij` for `i < j` in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsidyLayout {
    pub n: usize,
}

impl SubsidyLayout {
    pub fn new(n: usize) -> Self {
        SubsidyLayout { n }
    }

    pub fn n_pairs(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    pub fn dim(&self) -> usize {
        self.n + self.n_pairs()
    }

    /// Coordinate index of the link subsidy on `{i, j}`.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j);
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // pairs before row i: sum_{r<i} (n-1-r)
        self.n + i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    /// Unordered pairs `(i, j)`, `i < j`, in coordinate order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    pub fn is_beta(&self, k: usize) -> bool {
        k < self.n
    }

    pub fn to_coords(&self, beta: &[f64], sigma: &DMatrix<f64>) -> Vec<f64> {
        let mut x = beta.to_vec();
        x.extend(self.pairs().map(|(i, j)| sigma[(i, j)]));
        x
    }

    pub fn from_coords(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        assert_eq!(x.len(), self.dim(), "coordinate vector has wrong length");
        let beta = x[..self.n].to_vec();
        let mut sigma = DMatrix::zeros(self.n, self.n);
        for (k, (i, j)) in self.pairs().enumerate() {
            sigma[(i, j)] = x[self.n + k];
            sigma[(j, i)] = x[self.n + k];
        }
        (beta, sigma)
    }
}

pub fn off_diagonal(n: usize, value: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { value })
}

fn check_square(m: &DMatrix<f64>, n: usize, name: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::InvalidParameters(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        if m[(i, i)].abs() > SYMMETRY_TOL {
            return Err(Error::InvalidParameters(format!("{name} must have a zero diagonal")));
        }
        for j in i + 1..n {
            if !m[(i, j)].is_finite() || (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidParameters(format!("{name} must be symmetric ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Serializes a dense matrix as a list of rows.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix".into());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_agent(b: [f64; 2], c: [f64; 2], s12: f64, f: f64, rho: f64) -> GameParameters {
        GameParameters::new(b.to_vec(), c.to_vec(), off_diagonal(2, s12), off_diagonal(2, f), rho).unwrap()
    }

    fn profile(a: Vec<f64>, g: &[(usize, usize, f64)]) -> StrategyProfile {
        let n = a.len();
        let mut m = DMatrix::zeros(n, n);
        for &(i, j, v) in g {
            m[(i, j)] = v;
        }
        StrategyProfile { a, g: m }
    }

    #[test]
    fn utility_of_zero_economy_is_zero() {
        let p = GameParameters {
            n: 2,
            b: vec![0.0; 2],
            c: vec![1.0; 2],
            s: DMatrix::zeros(2, 2),
            f: off_diagonal(2, 1.0),
            rho: 0.0,
        };
        let u = agent_utility(&p, &Intervention::zero(2, 1.0), &StrategyProfile::zeros(2), 0).unwrap();
        assert_eq!(u, 0.0);
    }

    #[test]
    fn utility_at_quadratic_vertex() {
        let p = two_agent([1.0, 0.0], [1.0, 1.0], 0.3, 2.0, 0.0);
        let sp = profile(vec![2.0, 0.0], &[]);
        let u = agent_utility(&p, &Intervention::zero(2, 1.0), &sp, 0).unwrap();
        assert_abs_diff_eq!(u, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn utility_term_by_term() {
        let p = two_agent([0.0, 0.0], [1.0, 1.0], 0.5, 1.0, 1.0);
        let iv = Intervention::new(vec![0.0, 0.0], off_diagonal(2, 0.1), 1.0).unwrap();
        let sp = profile(vec![1.0, 1.0], &[(0, 1, 0.25), (1, 0, 0.25)]);
        // rho*G*a0*a1 = 0.5, -c a^2/2 = -0.5, s*G = 0.25, -f g^2/2 = -0.03125, sigma*G = 0.05
        let oracle = 1.0 * 0.5 * 1.0 * 1.0 - 0.5 + 0.5 * 0.5 - 1.0 * 0.25 * 0.25 / 2.0 + 0.1 * 0.5;
        let u = agent_utility(&p, &iv, &sp, 0).unwrap();
        assert_abs_diff_eq!(u, oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(u, 0.26875, epsilon = 1e-15);
    }

    #[test]
    fn utility_rejects_bad_index() {
        let p = two_agent([0.0, 0.0], [1.0, 1.0], 0.0, 1.0, 0.0);
        let err = agent_utility(&p, &Intervention::zero(2, 1.0), &StrategyProfile::zeros(2), 5).unwrap_err();
        assert_eq!(err, Error::IndexOutOfRange { index: 5, n: 2 });
    }

    #[test]
    fn payment_examples() {
        let sp = profile(vec![0.3, 0.7], &[(0, 1, 0.5), (1, 0, 0.3)]);
        assert_eq!(planner_payment(&Intervention::zero(2, 1.0), &sp), 0.0);
        let iv = Intervention::new(vec![1.0, 1.0], DMatrix::zeros(2, 2), 1.0).unwrap();
        assert_abs_diff_eq!(planner_payment(&iv, &sp), 1.0, epsilon = 1e-15);
        let iv = Intervention::new(vec![0.0, 0.0], off_diagonal(2, 0.2), 1.0).unwrap();
        assert_abs_diff_eq!(planner_payment(&iv, &sp), 0.32, epsilon = 1e-15);
    }

    #[test]
    fn welfare_examples() {
        let sp = profile(vec![1.0, 2.0, 3.0], &[(0, 1, 0.5), (1, 0, 0.5)]);
        assert_eq!(welfare(&WelfareSpec::unit_actions(3), &sp), 6.0);
        assert_eq!(welfare(&WelfareSpec::LinkWeightSum, &sp), 2.0);
        let sp = profile(vec![0.5, 1.0], &[]);
        let w = WelfareSpec::WeightedActionSum { weights: vec![2.0, 1.0] };
        assert_eq!(welfare(&w, &sp), 2.0);
    }

    #[test]
    fn construction_rejects_asymmetric_inputs() {
        let mut s = off_diagonal(2, 0.1);
        s[(0, 1)] = 0.2;
        assert!(GameParameters::new(vec![0.0; 2], vec![1.0; 2], s, off_diagonal(2, 1.0), 0.5).is_err());
        assert!(GameParameters::uniform(vec![0.0; 2], 1.0, 0.0, 1.0, -0.1).is_err());
        assert!(GameParameters::uniform(vec![0.0; 2], 0.0, 0.0, 1.0, 0.1).is_err());
        let mut sigma = off_diagonal(2, 0.1);
        sigma[(1, 0)] = 0.0;
        assert!(Intervention::new(vec![0.0; 2], sigma, 1.0).is_err());
        assert!(Intervention::new(vec![-1.0, 0.0], DMatrix::zeros(2, 2), 1.0).is_err());
    }

    #[test]
    fn layout_roundtrip_and_indexing() {
        let layout = SubsidyLayout::new(4);
        assert_eq!(layout.dim(), 10);
        for (k, (i, j)) in layout.pairs().enumerate() {
            assert_eq!(layout.pair_index(i, j), 4 + k);
            assert_eq!(layout.pair_index(j, i), 4 + k);
        }
        let x: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let (beta, sigma) = layout.from_coords(&x);
        assert_eq!(layout.to_coords(&beta, &sigma), x);
    }

    #[test]
    fn instance_matrices_serialize_as_rows() {
        let p = GameParameters::uniform(vec![0.1, 0.2], 1.0, 0.05, 2.0, 0.5).unwrap();
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["s"], serde_json::json!([[0.0, 0.05], [0.05, 0.0]]));
        let back: GameParameters = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
