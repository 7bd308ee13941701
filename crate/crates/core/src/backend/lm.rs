//! Levenberg–Marquardt with gain-ratio damping control (Nielsen's rule).

use crate::submap::SubmapPose;

use super::{assemble_at, evaluate_cost, norm, solve_normal_equations_cg, BackendError, PgoProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop when `‖Jᵀr‖∞` falls below this.
    pub gradient_tolerance: f64,
    /// Stop when the step norm falls below this.
    pub step_tolerance: f64,
    /// Initial damping relative to the largest diagonal entry of `JᵀJ`.
    pub initial_lambda_scale: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            initial_lambda_scale: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    StepSize,
    MaxIterations,
    /// The damping grew without finding a cheaper point.
    DampingOverflow,
}

/// One trial step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmIteration {
    pub iteration: usize,
    /// Cost after the iteration (the trial cost if accepted).
    pub cost: f64,
    pub trial_cost: f64,
    pub lambda: f64,
    /// Trust radius, `1/λ`.
    pub radius: f64,
    pub gain_ratio: f64,
    pub accepted: bool,
    pub cg_iterations: usize,
    pub cg_stagnated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: Vec<LmIteration>,
    pub termination: Termination,
}

impl LmReport {
    /// Cost after every accepted step, starting with the initial cost.
    pub fn accepted_costs(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost)
            .chain(self.iterations.iter().filter(|i| i.accepted).map(|i| i.cost))
            .collect()
    }
}

/// Minimizes the problem's cost, returning the optimized poses. The gauge
/// pose is never moved.
pub fn optimize(problem: &PgoProblem<'_>, config: &LmConfig) -> Result<(Vec<SubmapPose>, LmReport), BackendError> {
    problem.validate()?;
    let mut poses = problem.poses.clone();
    let mut lin = assemble_at(problem, &poses, true)?;
    let mut cost = lin.cost();
    if !cost.is_finite() {
        return Err(BackendError::NonFiniteCost(0));
    }
    let mut report = LmReport {
        initial_cost: cost,
        final_cost: cost,
        iterations: Vec::new(),
        termination: Termination::MaxIterations,
    };
    if problem.dim() == 0 {
        report.termination = Termination::Gradient;
        return Ok((poses, report));
    }
    let max_diag = lin.jacobian.col_sq_norms().into_iter().fold(0.0, f64::max);
    let mut lambda = config.initial_lambda_scale * max_diag.max(1e-12);
    let mut nu = 2.0;

    for it in 1..=config.max_iterations {
        let g = lin.jacobian.tr_mul_vec(&lin.residuals);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < config.gradient_tolerance {
            report.termination = Termination::Gradient;
            break;
        }
        let step = solve_normal_equations_cg(&lin.jacobian, &lin.residuals, lambda);
        let delta = &step.x;
        if norm(delta) < config.step_tolerance {
            report.termination = Termination::StepSize;
            break;
        }
        let trial = problem.retract(&poses, delta);
        let trial_cost = evaluate_cost(problem, &trial).unwrap_or(f64::INFINITY);
        if trial_cost.is_nan() {
            return Err(BackendError::NonFiniteCost(it));
        }
        // Model decrease ½ δᵀ(λδ − g) for the damped quadratic model.
        let predicted = 0.5 * delta.iter().zip(&g).map(|(d, gi)| d * (lambda * d - gi)).sum::<f64>();
        let rho = if predicted > 0.0 { (cost - trial_cost) / predicted } else { -1.0 };
        let accepted = rho > 0.0 && trial_cost < cost;
        let mut record = LmIteration {
            iteration: it,
            cost,
            trial_cost,
            lambda,
            radius: 1.0 / lambda,
            gain_ratio: rho,
            accepted,
            cg_iterations: step.iterations,
            cg_stagnated: step.stagnated,
        };
        if accepted {
            poses = trial;
            lin = assemble_at(problem, &poses, true)?;
            cost = lin.cost();
            record.cost = cost;
            lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
        } else {
            lambda *= nu;
            nu *= 2.0;
        }
        log::debug!(
            "lm iteration={} cost={:.6e} trial={:.6e} radius={:.3e} rho={:.3} accepted={} cg={}",
            it,
            record.cost,
            trial_cost,
            record.radius,
            rho,
            accepted,
            step.iterations
        );
        report.iterations.push(record);
        if !lambda.is_finite() || lambda > 1e30 {
            report.termination = Termination::DampingOverflow;
            break;
        }
    }
    report.final_cost = cost;
    Ok((poses, report))
}
