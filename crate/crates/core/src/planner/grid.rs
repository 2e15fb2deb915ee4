//! Exhaustive search over a regular grid of subsidy directions, each scaled
//! until the payment equals the budget.

use serde::{Deserialize, Serialize};

use super::spg::scale_to_budget;
use super::{Mode, PlannerModel};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOracleResult {
    pub welfare: f64,
    /// Best intervention, in layout coordinates.
    pub x: Vec<f64>,
    pub points: usize,
    /// Grid directions for which no budget-exhausting scale exists.
    pub infeasible: usize,
}

/// Visits every composition of `total` into `parts` nonnegative integers.
fn for_each_composition(parts: usize, total: usize, mut visit: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    if parts == 0 {
        return Ok(());
    }
    let mut k = vec![0usize; parts];
    k[0] = total;
    loop {
        visit(&k)?;
        let Some(j) = (0..parts - 1).rev().find(|&j| k[j] > 0) else {
            return Ok(());
        };
        let tail = k[parts - 1];
        k[parts - 1] = 0;
        k[j] -= 1;
        k[j + 1] = tail + 1;
    }
}

fn search<M: PlannerModel>(model: &M, mask: &[bool], steps: usize) -> Result<(Option<(Vec<f64>, f64, f64)>, usize, usize)> {
    let free: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut guess = None;
    let mut points = 0;
    let mut infeasible = 0;
    let mut evals = 0;
    for_each_composition(free.len(), steps, |k| {
        points += 1;
        let mut d = vec![0.0; mask.len()];
        for (c, &idx) in k.iter().zip(&free) {
            d[idx] = *c as f64 / steps as f64;
        }
        match scale_to_budget(model, &d, guess, &mut evals)? {
            Some((t, ev)) => {
                guess = Some(t);
                if best.as_ref().is_none_or(|b| ev.welfare > b.1) {
                    best = Some((d, ev.welfare, t));
                }
            }
            None => infeasible += 1,
        }
        Ok(())
    })?;
    Ok((best, points, infeasible))
}

/// Best grid direction on the masked simplex with `steps` subdivisions per edge.
pub(crate) fn best_direction<M: PlannerModel>(model: &M, mask: &[bool], steps: usize) -> Result<Option<(Vec<f64>, f64)>> {
    Ok(search(model, mask, steps)?.0.map(|(d, w, _)| (d, w)))
}

/// Grid oracle with spacing `step` in direction space (`1 / step` subdivisions).
pub fn grid_oracle<M: PlannerModel>(model: &M, mode: Mode, step: f64) -> Result<GridOracleResult> {
    let steps = (1.0 / step).round().max(1.0) as usize;
    let mask = mode.mask(&model.layout());
    let (best, points, infeasible) = search(model, &mask, steps)?;
    Ok(match best {
        Some((d, w, t)) => GridOracleResult { welfare: w, x: d.iter().map(|v| v * t).collect(), points, infeasible },
        None => GridOracleResult { welfare: f64::NEG_INFINITY, x: vec![0.0; mask.len()], points, infeasible },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compositions_are_complete_and_distinct() {
        let mut seen = std::collections::BTreeSet::new();
        for_each_composition(3, 4, |k| {
            assert_eq!(k.iter().sum::<usize>(), 4);
            assert!(seen.insert(k.to_vec()));
            Ok(())
        })
        .unwrap();
        // C(4 + 2, 2)
        assert_eq!(seen.len(), 15);
    }
}
