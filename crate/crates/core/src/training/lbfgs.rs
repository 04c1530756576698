//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Halvings allowed when the objective returns a non-finite value.
const MAX_HALVINGS: usize = 30;
const MAX_LINE_EVALS: usize = 40;
const EXTRAPOLATION: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_iters: usize,
    /// Stop once ‖∇f‖∞ falls below this.
    pub grad_tolerance: f64,
    /// Stop once the relative loss change over `loss_window` iterations falls below this.
    pub loss_tolerance: f64,
    pub loss_window: usize,
    /// Largest parameter change of the very first trial step.
    pub initial_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 8,
            c1: 1e-4,
            c2: 0.9,
            max_iters: 2000,
            grad_tolerance: 1e-8,
            loss_tolerance: 1e-10,
            loss_window: 20,
            initial_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop_reason: StopReason,
    /// One record per accepted iterate, starting with the initial point.
    pub history: Vec<IterRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

/// Minimizer of the cubic through (a, fa, da) and (b, fb, db), kept inside
/// the middle 80% of the bracket.
fn cubic_step(a: &Point, b: &Point) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let d1 = a.dphi + b.dphi - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dphi * b.dphi;
    let margin = 0.1 * (hi - lo);
    if disc >= 0.0 {
        let d2 = disc.sqrt() * (b.alpha - a.alpha).signum();
        let step = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / (b.dphi - a.dphi + 2.0 * d2);
        if step.is_finite() {
            return step.clamp(lo + margin, hi - margin);
        }
    }
    0.5 * (lo + hi)
}

struct Search<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    evals: usize,
    best: Option<Point>,
}

enum Eval {
    Finite(Point),
    NonFinite,
}

impl<F> Search<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, alpha: f64) -> Result<Eval> {
        self.evals += 1;
        let (f, g) = (self.f)(&axpy(self.x, alpha, self.d))?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Ok(Eval::NonFinite);
        }
        let dphi = dot(&g, self.d);
        let p = Point { alpha, f, g, dphi };
        if self.armijo(&p) && self.best.as_ref().is_none_or(|b| p.f < b.f) {
            self.best = Some(Point { g: p.g.clone(), ..p });
        }
        Ok(Eval::Finite(p))
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f <= self.f0 + self.c1 * p.alpha * self.dphi0 && p.f < self.f0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.dphi.abs() <= -self.c2 * self.dphi0
    }

    /// Strong-Wolfe point, or the best sufficient-decrease point seen.
    fn run(mut self, alpha0: f64) -> Result<(Option<Point>, usize)> {
        let mut prev = Point {
            alpha: 0.0,
            f: self.f0,
            g: Vec::new(),
            dphi: self.dphi0,
        };
        let mut alpha = alpha0;
        let mut halvings = 0;
        let mut first = true;
        while self.evals < MAX_LINE_EVALS {
            let p = match self.eval(alpha)? {
                Eval::NonFinite => {
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(Error::LineSearchFailed(self.evals));
                    }
                    alpha = 0.5 * (prev.alpha + alpha);
                    continue;
                }
                Eval::Finite(p) => p,
            };
            if !self.armijo(&p) || (!first && p.f >= prev.f) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                let evals = self.evals;
                return Ok((Some(p), evals));
            }
            if p.dphi >= 0.0 {
                return self.zoom(p, prev);
            }
            first = false;
            alpha = p.alpha * EXTRAPOLATION;
            prev = p;
        }
        let evals = self.evals;
        Ok((self.best, evals))
    }

    fn zoom(mut self, mut lo: Point, mut hi: Point) -> Result<(Option<Point>, usize)> {
        let mut halvings = 0;
        while self.evals < MAX_LINE_EVALS {
            if (hi.alpha - lo.alpha).abs() <= 1e-14 * hi.alpha.abs().max(lo.alpha.abs()) {
                break;
            }
            let alpha = if !hi.f.is_finite() {
                0.5 * (lo.alpha + hi.alpha)
            } else {
                cubic_step(&lo, &hi)
            };
            let p = match self.eval(alpha)? {
                Eval::NonFinite => {
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(Error::LineSearchFailed(self.evals));
                    }
                    hi = Point {
                        alpha,
                        f: f64::INFINITY,
                        g: Vec::new(),
                        dphi: 0.0,
                    };
                    continue;
                }
                Eval::Finite(p) => p,
            };
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    let evals = self.evals;
                    return Ok((Some(p), evals));
                }
                if p.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        let evals = self.evals;
        Ok((self.best, evals))
    }
}

/// Minimize `f`, which returns the objective and its gradient.
///
/// Every accepted step strictly decreases the objective. A line search that
/// finds no decrease ends the run with [`StopReason::LineSearchFailed`] and
/// the best iterate so far.
pub fn minimize<F>(x0: Vec<f64>, cfg: &LbfgsConfig, mut f: F) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let start = Instant::now();
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss(format!("objective at the initial point is {fx}")));
    }
    let mut evaluations = 1;
    let mut history = vec![IterRecord {
        iter: 0,
        loss: fx,
        grad_norm: inf_norm(&g),
        wall_time_s: start.elapsed().as_secs_f64(),
    }];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iter = 0;
    let stop_reason = loop {
        if inf_norm(&g) < cfg.grad_tolerance || fx == 0.0 {
            break StopReason::Converged;
        }
        if history.len() > cfg.loss_window {
            let old = history[history.len() - 1 - cfg.loss_window].loss;
            if (old - fx).abs() <= cfg.loss_tolerance * fx.abs() {
                break StopReason::Converged;
            }
        }
        if iter >= cfg.max_iters {
            break StopReason::MaxIters;
        }

        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
        }
        let alpha0 = if pairs.is_empty() {
            cfg.initial_step / inf_norm(&d)
        } else {
            1.0
        };

        let search = Search {
            f: &mut f,
            x: &x,
            d: &d,
            f0: fx,
            dphi0,
            c1: cfg.c1,
            c2: cfg.c2,
            evals: 0,
            best: None,
        };
        let (point, evals) = match search.run(alpha0) {
            Ok(v) => v,
            Err(Error::LineSearchFailed(n)) => {
                evaluations += n;
                break StopReason::LineSearchFailed;
            }
            Err(e) => return Err(e),
        };
        evaluations += evals;
        let Some(p) = point else {
            if !pairs.is_empty() {
                // Retry once along steepest descent with fresh memory.
                pairs.clear();
                continue;
            }
            break StopReason::LineSearchFailed;
        };
        debug_assert!(p.f < fx);

        let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = axpy(&x, p.alpha, &d);
        fx = p.f;
        g = p.g;
        iter += 1;
        history.push(IterRecord {
            iter,
            loss: fx,
            grad_norm: inf_norm(&g),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        log::debug!("lbfgs iter {iter}: loss {fx:.6e}, |g| {:.3e}", inf_norm(&g));
    };
    Ok(LbfgsResult {
        x,
        loss: fx,
        iterations: iter,
        evaluations,
        stop_reason,
        history,
    })
}
