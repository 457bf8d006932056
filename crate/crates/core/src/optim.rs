//! First-order minimization with Adam directions, a retraction supplied by
//! the problem (so manifold blocks stay on SO(3)) and a monotone trust
//! check: a step that raises the cost is rejected and retried shorter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Step length at the first iteration.
    pub initial_step: f64,
    /// Step length reached at `max_iterations` (geometric schedule).
    pub final_step: f64,
    /// Stop when the gradient norm falls below this.
    pub tolerance: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Consecutive rejected trials after which the run counts as stalled.
    pub stall_limit: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 1400,
            initial_step: 0.01,
            final_step: 1e-3,
            tolerance: 1e-10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-12,
            stall_limit: 50,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_step > 0.0
            && self.final_step > 0.0
            && self.tolerance >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.stall_limit > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("optimizer settings out of range: {self:?}")))
        }
    }

    fn base_step(&self, iteration: usize) -> f64 {
        if self.max_iterations <= 1 {
            return self.initial_step;
        }
        let s = iteration as f64 / (self.max_iterations - 1) as f64;
        self.initial_step * (self.final_step / self.initial_step).powf(s)
    }
}

/// A differentiable cost over points that are updated by retraction.
pub trait Objective {
    type Point: Clone;

    /// Cost and gradient in the retraction's local coordinates.
    fn evaluate(&self, x: &Self::Point) -> Result<(f64, Vec<f64>)>;

    /// Moves `x` by `step` (local coordinates).
    fn retract(&self, x: &Self::Point, step: &[f64]) -> Self::Point;

    /// Per-coordinate multipliers on the step length.
    fn step_scales(&self, x: &Self::Point) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub gradient_norm: f64,
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub iterations: usize,
    pub rejected: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub gradient_norm: f64,
    pub termination: Termination,
    pub history: Vec<IterationRecord>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn minimize<O: Objective>(objective: &O, x0: O::Point, cfg: &OptimizerConfig) -> Result<(O::Point, OptimizationReport)> {
    cfg.validate()?;
    let mut x = x0;
    let (mut cost, mut grad) = objective.evaluate(&x)?;
    if !cost.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!("non-finite cost {cost} at the initial point")));
    }
    let scales = objective.step_scales(&x);
    let n = grad.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut report = OptimizationReport {
        iterations: 0,
        rejected: 0,
        initial_cost: cost,
        final_cost: cost,
        gradient_norm: norm(&grad),
        termination: Termination::MaxIterations,
        history: Vec::new(),
    };
    let mut shrink = 1.0;
    let mut step = vec![0.0; n];

    'outer: for it in 0..cfg.max_iterations {
        let gnorm = norm(&grad);
        if gnorm < cfg.tolerance {
            report.termination = Termination::Converged;
            break;
        }
        let t = (it + 1) as i32;
        let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        }
        let base = cfg.base_step(it);
        let mut consecutive = 0;
        loop {
            let lr = base * shrink;
            for i in 0..n {
                step[i] = -lr * scales[i] * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            }
            let candidate = objective.retract(&x, &step);
            let (c, g) = objective.evaluate(&candidate)?;
            if c.is_finite() && c <= cost && g.iter().all(|x| x.is_finite()) {
                x = candidate;
                cost = c;
                grad = g;
                shrink = (shrink * 1.5).min(1.0);
                report.iterations = it + 1;
                report.history.push(IterationRecord {
                    iteration: it + 1,
                    cost,
                    gradient_norm: norm(&grad),
                    step: lr,
                });
                break;
            }
            report.rejected += 1;
            consecutive += 1;
            shrink *= 0.5;
            // Momentum can point uphill; retry along the preconditioned
            // gradient, which always descends for a small enough step.
            for i in 0..n {
                m[i] = c1 * grad[i];
            }
            if consecutive >= cfg.stall_limit {
                report.termination = Termination::Stalled;
                break 'outer;
            }
        }
    }
    report.final_cost = cost;
    report.gradient_norm = norm(&grad);
    Ok((x, report))
}
