//! Box-constrained limited-memory BFGS with a monotone backtracking line
//! search. Accepted iterates never increase the objective.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    /// Convergence threshold on the infinity norm of the projected gradient.
    pub tol: f64,
    pub memory: usize,
    pub lower: f64,
    pub upper: f64,
    /// Largest infinity-norm step tried by the line search.
    pub max_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-5,
            memory: 8,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            max_step: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The line search could not find a decrease.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective at the start point followed by every accepted iterate.
    pub trace: Vec<f64>,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

pub fn minimize<F>(mut objective: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(cfg.lower, cfg.upper)).collect();
    let (mut f, mut g) = objective(&x)?;
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();

    for iter in 0..cfg.max_iter {
        let pg = projected_gradient(&x, &g, cfg);
        if inf_norm(&pg) < cfg.tol {
            return Ok(done(x, f, iter, Termination::Converged, trace));
        }

        // Curvature pairs are restricted to the coordinates that are free to
        // move, so a pinned parameter does not distort the search direction.
        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, gi)| *p != 0.0 || *gi == 0.0).collect();
        let mut dir = two_loop(&pg, &history, &free);
        for i in 0..x.len() {
            let blocked = (x[i] <= cfg.lower && dir[i] < 0.0) || (x[i] >= cfg.upper && dir[i] > 0.0);
            if blocked || !free[i] {
                dir[i] = 0.0;
            }
        }
        if dot(&dir, &g) >= 0.0 {
            history.clear();
            dir = pg.iter().map(|v| -v).collect();
        }
        let norm = inf_norm(&dir);
        if norm > cfg.max_step {
            dir.iter_mut().for_each(|v| *v *= cfg.max_step / norm);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(xi, di)| (xi + step * di).clamp(cfg.lower, cfg.upper))
                .collect();
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            if let Ok((ft, gt)) = objective(&trial) {
                let target = f + ARMIJO * dot(&g, &moved);
                if ft.is_finite() && ft < f && ft <= target.max(f - f64::EPSILON * f.abs()) {
                    accepted = Some((trial, ft, gt, moved));
                    break;
                }
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new, s)) = accepted else {
            return Ok(done(x, f, iter, Termination::Stalled, trace));
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
    }
    let pg = projected_gradient(&x, &g, cfg);
    let termination = if inf_norm(&pg) < cfg.tol {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    Ok(done(x, f, cfg.max_iter, termination, trace))
}

fn done(
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    termination: Termination,
    trace: Vec<f64>,
) -> LbfgsResult {
    LbfgsResult {
        x,
        f,
        iterations,
        termination,
        trace,
    }
}

/// Gradient with components zeroed where a bound blocks descent.
fn projected_gradient(x: &[f64], g: &[f64], cfg: &LbfgsConfig) -> Vec<f64> {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| {
            if (xi <= cfg.lower && gi > 0.0) || (xi >= cfg.upper && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Two-loop recursion: returns `-H g` for the current inverse-Hessian estimate.
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>)>, free: &[bool]) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
    let pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = history
        .iter()
        .filter_map(|(s, y)| {
            let (s, y) = (mask(s), mask(y));
            let sy = dot(&s, &y);
            (sy > 0.0).then(|| (s, y, 1.0 / sy))
        })
        .collect();
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
