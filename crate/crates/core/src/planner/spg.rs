//! Spectral projected gradient on the direction simplex, with the budget
//! enforced by rescaling along each direction.

use super::{Evaluation, Gradients, PlannerModel, PlannerOptions, TraceEntry};
use crate::error::Result;

/// Relative accuracy of the payment-equals-budget root.
const BUDGET_RTOL: f64 = 1e-12;
/// Nonmonotone line-search memory.
const MEMORY: usize = 8;
const ARMIJO: f64 = 1e-4;

/// A direction, its budget-exhausting scale and the derivatives there.
#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub d: Vec<f64>,
    pub t: f64,
    pub eval: Evaluation,
    pub grad: Gradients,
    /// Gradient of the reduced objective in `d`.
    pub ascent: Vec<f64>,
    pub stationarity: f64,
}

impl Point {
    pub fn x(&self) -> Vec<f64> {
        self.d.iter().map(|v| v * self.t).collect()
    }
}

pub(crate) struct Run {
    pub point: Point,
    pub trace: TraceEntry,
}

/// Finds `t > 0` with `P(t d) = B`. Missing equilibria count as infinite
/// payment, which is the limit as actions diverge.
pub(crate) fn scale_to_budget<M: PlannerModel>(
    model: &M,
    d: &[f64],
    guess: Option<f64>,
    evals: &mut usize,
) -> Result<Option<(f64, Evaluation)>> {
    let budget = model.budget();
    let tol = BUDGET_RTOL * budget;
    let mut lo = (0.0, 0.0);
    let mut hi: Option<(f64, f64)> = None;
    let mut best: Option<(f64, Evaluation)> = None;
    let mut t = guess.filter(|g| g.is_finite() && *g > 0.0).unwrap_or(budget);
    // Illinois bookkeeping: which end moved last
    let mut side = 0i8;
    let mut lo_w = 1.0;
    let mut hi_w = 1.0;
    for _ in 0..200 {
        let x: Vec<f64> = d.iter().map(|v| v * t).collect();
        *evals += 1;
        let ev = model.evaluate(&x)?;
        let pay = ev.as_ref().map_or(f64::INFINITY, |e| e.payment);
        if let Some(e) = ev {
            if (pay - budget).abs() <= tol {
                return Ok(Some((t, e)));
            }
            if pay < budget {
                best = Some((t, e));
            }
        }
        if pay < budget {
            lo = (t, pay);
            if side == -1 {
                hi_w *= 0.5;
            }
            side = -1;
            lo_w = 1.0;
        } else {
            hi = Some((t, pay));
            if side == 1 {
                lo_w *= 0.5;
            }
            side = 1;
            hi_w = 1.0;
        }
        t = match hi {
            None => {
                if t > 1e15 {
                    return Ok(None);
                }
                if pay > 0.0 {
                    (t * budget / pay).clamp(1.5 * t, 1e3 * t)
                } else {
                    1e3 * t
                }
            }
            Some((th, ph)) => {
                let (tl, pl) = lo;
                if th - tl <= 1e-15 * th {
                    break;
                }
                let mid = 0.5 * (tl + th);
                if ph.is_finite() {
                    let fl = (pl - budget) * lo_w;
                    let fh = (ph - budget) * hi_w;
                    let cand = tl - fl * (th - tl) / (fh - fl);
                    let margin = 1e-3 * (th - tl);
                    if cand.is_finite() && cand > tl + margin && cand < th - margin {
                        cand
                    } else {
                        mid
                    }
                } else {
                    mid
                }
            }
        };
    }
    // payment jumps across the bracket; accept the feasible side when close enough
    Ok(best.filter(|(_, e)| (e.payment - budget).abs() <= 1e-9))
}

/// Evaluates the reduced objective and its gradient at direction `d`.
pub(crate) fn point_at<M: PlannerModel>(
    model: &M,
    mask: &[bool],
    d: Vec<f64>,
    guess: Option<f64>,
    evals: &mut usize,
) -> Result<Option<Point>> {
    let Some((t, eval)) = scale_to_budget(model, &d, guess, evals)? else {
        return Ok(None);
    };
    complete(model, mask, d, t, eval).map(Some)
}

fn complete<M: PlannerModel>(model: &M, mask: &[bool], d: Vec<f64>, t: f64, eval: Evaluation) -> Result<Point> {
    let x: Vec<f64> = d.iter().map(|v| v * t).collect();
    let grad = model.gradient(&x, &eval)?;
    let dw: f64 = grad.welfare.iter().zip(&d).map(|(g, v)| g * v).sum();
    let dp: f64 = grad.payment.iter().zip(&d).map(|(g, v)| g * v).sum();
    let lambda = if dp > 0.0 { dw / dp } else { 0.0 };
    let ascent: Vec<f64> = (0..d.len())
        .map(|k| if mask[k] { t * (grad.welfare[k] - lambda * grad.payment[k]) } else { 0.0 })
        .collect();
    let stationarity = reduced_stationarity(&d, &ascent, &grad, lambda, t, mask);
    Ok(Point { d, t, eval, grad, ascent, stationarity })
}

/// Relative KKT residual of the reduced problem: `|r_k|` on the support and
/// `max(0, r_k)` off it, scaled by the size of the welfare and payment terms.
fn reduced_stationarity(d: &[f64], ascent: &[f64], grad: &Gradients, lambda: f64, t: f64, mask: &[bool]) -> f64 {
    let mut scale = 0.0f64;
    let mut worst = 0.0f64;
    for k in 0..d.len() {
        if !mask[k] {
            continue;
        }
        scale = scale.max(grad.welfare[k].abs()).max(lambda * grad.payment[k].abs());
        let r = ascent[k] / t;
        worst = worst.max(if d[k] > 0.0 { r.abs() } else { r.max(0.0) });
    }
    if scale > 0.0 {
        worst / scale
    } else {
        0.0
    }
}

/// Euclidean projection onto the simplex over the masked coordinates.
pub(crate) fn project_simplex(y: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut vals: Vec<f64> = y.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, v) in vals.iter().enumerate() {
        cum += v;
        let cand = (cum - 1.0) / (k + 1) as f64;
        if v - cand > 0.0 {
            theta = cand;
        }
    }
    y.iter().zip(mask).map(|(v, m)| if *m { (v - theta).max(0.0) } else { 0.0 }).collect()
}

pub(crate) fn ascend<M: PlannerModel>(
    model: &M,
    mask: &[bool],
    start: Vec<f64>,
    label: String,
    opts: &PlannerOptions,
) -> Result<Option<Run>> {
    let mut evals = 0usize;
    let Some(mut cur) = point_at(model, mask, start, None, &mut evals)? else {
        return Ok(None);
    };
    let gmax = cur.ascent.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (alpha_min, alpha_max) = if gmax > 0.0 { (1e-10 / gmax, 1e10 / gmax) } else { (1e-10, 1e10) };
    let mut alpha = if gmax > 0.0 { 0.1 / gmax } else { 1.0 };
    let mut history = vec![cur.eval.welfare];
    let mut iterations = 0;
    let mut stalls = 0;
    let mut best: Option<Point> = None;

    while iterations < opts.max_iter && cur.stationarity > opts.stationarity_tol {
        iterations += 1;
        let trial: Vec<f64> = cur.d.iter().zip(&cur.ascent).map(|(d, g)| d + alpha * g).collect();
        let target = project_simplex(&trial, mask);
        let dir: Vec<f64> = target.iter().zip(&cur.d).map(|(a, b)| a - b).collect();
        let dir_norm = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dir_norm <= 1e-15 {
            break;
        }
        let slope: f64 = dir.iter().zip(&cur.ascent).map(|(a, b)| a * b).sum();
        let reference = history.iter().rev().take(MEMORY).fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let d: Vec<f64> = cur.d.iter().zip(&dir).map(|(a, b)| (a + step * b).max(0.0)).collect();
            if let Some((t, ev)) = scale_to_budget(model, &d, Some(cur.t), &mut evals)? {
                if ev.welfare >= reference + ARMIJO * step * slope {
                    accepted = Some((d, t, ev));
                    break;
                }
            }
            step *= 0.5;
            if step * dir_norm <= 1e-16 {
                break;
            }
        }
        let Some((d, t, ev)) = accepted else { break };
        let next = complete(model, mask, d, t, ev)?;
        let s: Vec<f64> = next.d.iter().zip(&cur.d).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.ascent.iter().zip(&cur.ascent).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        alpha = if sy < 0.0 { (ss / -sy).clamp(alpha_min, alpha_max) } else { alpha_max };
        let gain = next.eval.welfare - cur.eval.welfare;
        stalls = if gain.abs() <= 1e-15 * cur.eval.welfare.abs() { stalls + 1 } else { 0 };
        history.push(next.eval.welfare);
        if next.eval.welfare < cur.eval.welfare && best.as_ref().is_none_or(|b| cur.eval.welfare > b.eval.welfare) {
            best = Some(cur.clone());
        }
        cur = next;
        if stalls >= 20 {
            break;
        }
    }
    // the nonmonotone search may end below a point it visited
    if let Some(b) = best.filter(|b| b.eval.welfare > cur.eval.welfare) {
        cur = b;
    }
    let trace = TraceEntry {
        start: label,
        iterations,
        evaluations: evals,
        welfare: cur.eval.welfare,
        stationarity: cur.stationarity,
    };
    Ok(Some(Run { point: cur, trace }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_simplex() {
        let mask = [true, true, false, true];
        let p = project_simplex(&[0.5, 2.0, 7.0, -1.0], &mask);
        assert_eq!(p, vec![0.0, 1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.2, 0.3, 0.0, 0.1], &mask);
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        let shift = 0.4 / 3.0;
        assert!((p[0] - 0.2 - shift).abs() < 1e-15 && (p[1] - 0.3 - shift).abs() < 1e-15 && (p[3] - 0.1 - shift).abs() < 1e-15);
    }
}
