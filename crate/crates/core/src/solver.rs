//! Finite-horizon optimal control solver.
//!
//! The problem is transcribed by single shooting: the decision vector is the
//! stacked input sequence, states come from forward simulation, so the
//! dynamics constraint is exact by construction. Obstacle, domain, terminal
//! and (for the baseline) terminal-equality constraints are handled by an
//! augmented Lagrangian outer loop; the input box is handled by projection
//! inside an L-BFGS inner loop with Armijo backtracking.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Certificate, Policy};
use crate::task::{Input, State, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Projected-gradient infinity norm below which the inner loop stops.
    pub kkt_tol: f64,
    /// Inequality violation tolerance for a solution to count as feasible.
    pub constraint_tol: f64,
    /// Terminal-equality residual tolerance (baseline subproblems).
    pub equality_tol: f64,
    pub max_outer: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub max_inner: usize,
    pub lbfgs_memory: usize,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_linesearch: usize,
    /// Weight stage costs by gamma^k instead of gamma^(t+k). The argmin is
    /// unchanged; this avoids underflow at large absolute times.
    pub normalize_discount: bool,
    /// Also impose the obstacle/domain constraint on the terminal state.
    pub terminal_obstacle: bool,
    /// Soft per-step wall-time budget, recorded in diagnostics only.
    pub step_budget_ms: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kkt_tol: 1e-6,
            constraint_tol: 1e-6,
            equality_tol: 1e-4,
            max_outer: 6,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            max_inner: 200,
            lbfgs_memory: 10,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_linesearch: 40,
            normalize_discount: true,
            terminal_obstacle: false,
            step_budget_ms: 100.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.kkt_tol > 0.0) || !(self.constraint_tol > 0.0) || !(self.equality_tol > 0.0) {
            return Err(Error::Config(format!("{field}: tolerances must be positive")));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.lbfgs_memory == 0 {
            return Err(Error::Config(format!("{field}: iteration caps must be >= 1")));
        }
        if !(self.penalty_init > 0.0) || !(self.penalty_growth > 1.0) {
            return Err(Error::Config(format!(
                "{field}: penalty_init must be > 0 and penalty_growth > 1"
            )));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config(format!("{field}.backtrack must lie in (0, 1)")));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 0.5) {
            return Err(Error::Config(format!("{field}.armijo_c1 must lie in (0, 0.5)")));
        }
        Ok(())
    }
}

/// What pins the terminal state: the certificate level set (proposed method)
/// or an exact stored state (baseline candidates).
#[derive(Debug, Clone)]
pub enum TerminalCondition {
    /// `V(x_N) <= c` as constraint, `gamma^N V(x_N)` as terminal cost.
    CertificateLevel,
    /// `x_N = target` as penalized equality; terminal cost is the constant
    /// `cost_to_go`, added to the reported objective.
    PinState { target: Vec<f64>, cost_to_go: f64 },
}

/// One finite-horizon problem instance at absolute time `t`.
pub struct OcpProblem<'a> {
    pub task: &'a TaskSpec,
    pub certificate: &'a Certificate,
    pub x0: State,
    pub t_abs: usize,
    pub terminal: TerminalCondition,
}

impl<'a> OcpProblem<'a> {
    pub fn new(task: &'a TaskSpec, certificate: &'a Certificate, x0: State, t_abs: usize) -> Self {
        OcpProblem {
            task,
            certificate,
            x0,
            t_abs,
            terminal: TerminalCondition::CertificateLevel,
        }
    }

    fn horizon(&self) -> usize {
        self.task.horizon
    }

    /// Discount weight of prediction step `k`.
    fn weight(&self, k: usize, cfg: &SolverConfig) -> f64 {
        if cfg.normalize_discount {
            self.task.gamma.powi(k as i32)
        } else {
            self.task.gamma.powi((self.t_abs + k) as i32)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InfeasibleFallback,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasibleFallback => "infeasible_fallback",
        };
        write!(f, "{s}")
    }
}

/// Solver output: optimal inputs, predicted states, and diagnostics.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    /// `u*` for prediction steps `0..N`.
    pub inputs: Vec<Input>,
    /// Predicted states `x*_1..x*_N` (the terminal state is last).
    pub states: Vec<State>,
    pub objective: f64,
    pub status: SolveStatus,
    pub inner_iterations: usize,
    pub outer_rounds: usize,
    pub wall_time_ms: f64,
    pub kkt_residual: f64,
    pub min_obstacle_margin: f64,
    pub terminal_residual: f64,
    pub equality_residual: f64,
}

impl OcpSolution {
    pub fn terminal_state(&self) -> &State {
        self.states.last().expect("horizon >= 1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStartOrigin {
    PreviousSolution,
    Cold,
}

/// Initial guess for the NLP, shifted from the previous solution or rolled
/// out from the policy on a cold start.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub inputs: Vec<Input>,
    pub origin: WarmStartOrigin,
}

/// Shift the previous solution one step and append the policy action at the
/// previous terminal state.
pub fn make_warm_start(prev: &OcpSolution, policy: &Policy, task: &TaskSpec) -> Result<WarmStart> {
    let mut inputs: Vec<Input> = prev.inputs[1..].to_vec();
    let mut tail = policy.action(prev.terminal_state().as_slice())?;
    task.input_box.clamp(&mut tail);
    inputs.push(Input(tail));
    Ok(WarmStart {
        inputs,
        origin: WarmStartOrigin::PreviousSolution,
    })
}

/// Roll the policy forward `N` steps from `x0`.
pub fn cold_start(policy: &Policy, task: &TaskSpec, x0: &State) -> Result<WarmStart> {
    let mut inputs = Vec::with_capacity(task.horizon);
    let mut x = x0.clone();
    for _ in 0..task.horizon {
        let mut u = policy.action(x.as_slice())?;
        task.input_box.clamp(&mut u);
        let u = Input(u);
        x = task.step(&x, &u)?;
        inputs.push(u);
    }
    Ok(WarmStart {
        inputs,
        origin: WarmStartOrigin::Cold,
    })
}

/// Forward simulation plus exact objective gradient via reverse accumulation.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// `x_0..x_N` (N + 1 states).
    pub states: Vec<Vec<f64>>,
    pub objective: f64,
    /// `d(objective)/d(inputs)`, flattened as `N * m`.
    pub gradient: Vec<f64>,
}

/// Number of inequality constraints per intermediate predicted state.
fn per_state_constraints(task: &TaskSpec) -> usize {
    task.obstacles.len() + 2 * task.state_dim
}

struct AlWorkspace {
    /// Inequality multipliers, fixed ordering (see `inequality_values`).
    lambda: Vec<f64>,
    /// Equality multipliers (terminal pin only).
    mu: Vec<f64>,
    rho: f64,
}

/// Evaluated constraint values at one input sequence.
struct ConstraintVals {
    inequalities: Vec<f64>,
    equalities: Vec<f64>,
    min_obstacle_margin: f64,
    terminal_residual: f64,
}

fn flatten(inputs: &[Input]) -> Vec<f64> {
    inputs.iter().flat_map(|u| u.0.iter().copied()).collect()
}

fn unflatten(u: &[f64], m: usize) -> Vec<Input> {
    u.chunks(m).map(|c| Input(c.to_vec())).collect()
}

/// Core evaluation: states, objective, constraints, and (optionally) the
/// gradient of `objective + AL penalty terms` in one reverse sweep.
struct Evaluator<'a> {
    problem: &'a OcpProblem<'a>,
    cfg: &'a SolverConfig,
}

struct EvalOutput {
    states: Vec<Vec<f64>>,
    objective: f64,
    al_value: f64,
    gradient: Option<Vec<f64>>,
    constraints: ConstraintVals,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a OcpProblem<'a>, cfg: &'a SolverConfig) -> Self {
        Evaluator { problem, cfg }
    }

    fn n(&self) -> usize {
        self.problem.task.state_dim
    }

    fn m(&self) -> usize {
        self.problem.task.input_dim
    }

    fn horizon(&self) -> usize {
        self.problem.horizon()
    }

    /// Index of the first constraint attached to predicted state `k` (k >= 1).
    fn num_inequalities(&self) -> usize {
        let per = per_state_constraints(self.problem.task);
        let states_with_constraints = self.horizon() - 1 + usize::from(self.cfg.terminal_obstacle);
        let terminal_level =
            usize::from(matches!(self.problem.terminal, TerminalCondition::CertificateLevel));
        states_with_constraints * per + terminal_level
    }

    fn num_equalities(&self) -> usize {
        match self.problem.terminal {
            TerminalCondition::CertificateLevel => 0,
            TerminalCondition::PinState { .. } => self.n(),
        }
    }

    /// Full evaluation at flattened inputs `u`. When `ws` is provided the
    /// gradient of the augmented Lagrangian is produced; otherwise only the
    /// objective and constraint values are computed.
    fn eval(&self, u: &[f64], ws: Option<&AlWorkspace>) -> Result<EvalOutput> {
        let task = self.problem.task;
        let (n, m, horizon) = (self.n(), self.m(), self.horizon());
        let dynamics = task.dynamics();
        let cost = task.cost_fn();

        // Forward simulation.
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
        states.push(self.problem.x0.0.clone());
        for k in 0..horizon {
            let uk = &u[k * m..(k + 1) * m];
            let mut next = vec![0.0; n];
            dynamics.step(&states[k], uk, &mut next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "predicted state at step {} is non-finite",
                    k + 1
                )));
            }
            states.push(next);
        }

        // Stage objective.
        let mut objective = 0.0;
        for k in 0..horizon {
            let uk = &u[k * m..(k + 1) * m];
            objective += self.problem.weight(k, self.cfg) * cost.cost(&states[k], uk);
        }

        // Terminal value and constraint bookkeeping.
        let terminal_weight = self.problem.weight(horizon, self.cfg);
        let mut terminal_grad_coeff = 0.0;
        let mut terminal_cache = None;
        let terminal_value;
        match &self.problem.terminal {
            TerminalCondition::CertificateLevel => {
                let cache = self.problem.certificate.forward_cached(&states[horizon])?;
                terminal_value = Certificate::value_from_cache(&cache);
                objective += terminal_weight * terminal_value;
                terminal_grad_coeff += terminal_weight;
                terminal_cache = Some(cache);
            }
            TerminalCondition::PinState { cost_to_go, .. } => {
                terminal_value = 0.0;
                objective += terminal_weight * cost_to_go;
            }
        }

        // Constraint values, fixed order: for every constrained state
        // (k = 1..N-1, plus k = N when terminal_obstacle), obstacles then the
        // domain box; then the terminal level constraint.
        let per = per_state_constraints(task);
        let mut inequalities = Vec::with_capacity(self.num_inequalities());
        let mut min_obstacle_margin = f64::INFINITY;
        let last_ineq_state = if self.cfg.terminal_obstacle {
            horizon
        } else {
            horizon - 1
        };
        for k in 1..=last_ineq_state {
            let s = &states[k];
            for o in &task.obstacles {
                let margin = o.clearance_sq(s[0], s[1]);
                min_obstacle_margin = min_obstacle_margin.min(margin);
                inequalities.push(-margin); // g = r^2 - dist^2 <= 0
            }
            for d in 0..n {
                inequalities.push(task.domain_box.lo[d] - s[d]);
                inequalities.push(s[d] - task.domain_box.hi[d]);
            }
        }
        // Track obstacle margin at the terminal state even when unconstrained.
        if !self.cfg.terminal_obstacle {
            let s = &states[horizon];
            for o in &task.obstacles {
                min_obstacle_margin = min_obstacle_margin.min(o.clearance_sq(s[0], s[1]));
            }
        }
        let mut terminal_residual = 0.0;
        if matches!(self.problem.terminal, TerminalCondition::CertificateLevel) {
            terminal_residual = terminal_value - task.level;
            inequalities.push(terminal_residual);
        }

        let mut equalities = Vec::new();
        if let TerminalCondition::PinState { target, .. } = &self.problem.terminal {
            for d in 0..n {
                equalities.push(states[horizon][d] - target[d]);
            }
        }

        // Augmented Lagrangian value.
        let mut al_value = objective;
        if let Some(ws) = ws {
            for (i, &g) in inequalities.iter().enumerate() {
                let t = (ws.lambda[i] + ws.rho * g).max(0.0);
                al_value += (t * t - ws.lambda[i] * ws.lambda[i]) / (2.0 * ws.rho);
            }
            for (i, &h) in equalities.iter().enumerate() {
                al_value += ws.mu[i] * h + 0.5 * ws.rho * h * h;
            }
        }

        // Reverse sweep for the gradient.
        let gradient = if let Some(ws) = ws {
            let mut grad = vec![0.0; horizon * m];
            // Adjoint at the terminal state.
            let mut adjoint = vec![0.0; n];
            let mut ineq_idx_terminal = inequalities.len();
            if matches!(self.problem.terminal, TerminalCondition::CertificateLevel) {
                ineq_idx_terminal -= 1;
                let psi = (ws.lambda[ineq_idx_terminal] + ws.rho * terminal_residual).max(0.0);
                let coeff = terminal_grad_coeff + psi;
                let cache = terminal_cache.as_ref().expect("cached above");
                let w_out = cache.output();
                let upstream: Vec<f64> = w_out.iter().map(|v| 2.0 * coeff * v).collect();
                let dv = self
                    .problem
                    .certificate
                    .w_net
                    .backward_input(cache, &upstream)?;
                for (a, d) in adjoint.iter_mut().zip(dv) {
                    *a += d;
                }
            }
            if let TerminalCondition::PinState { .. } = &self.problem.terminal {
                for d in 0..n {
                    adjoint[d] += ws.mu[d] + ws.rho * equalities[d];
                }
            }
            // Per-state inequality contributions are added as the sweep
            // reaches each state; precompute psi' coefficients.
            let psi_prime: Vec<f64> = inequalities
                .iter()
                .enumerate()
                .map(|(i, &g)| (ws.lambda[i] + ws.rho * g).max(0.0))
                .collect();

            let add_state_constraints = |k: usize, adjoint: &mut [f64], states: &[Vec<f64>]| {
                if k == 0 || k > last_ineq_state {
                    return;
                }
                let base = (k - 1) * per;
                let s = &states[k];
                let mut idx = base;
                for o in &task.obstacles {
                    let p = psi_prime[idx];
                    if p != 0.0 {
                        adjoint[0] += p * (-2.0 * (s[0] - o.center_z));
                        adjoint[1] += p * (-2.0 * (s[1] - o.center_y));
                    }
                    idx += 1;
                }
                for d in 0..n {
                    adjoint[d] += psi_prime[idx + 1] - psi_prime[idx];
                    idx += 2;
                }
            };

            add_state_constraints(horizon, &mut adjoint, &states);

            let mut jac_x = vec![0.0; n * n];
            let mut jac_u = vec![0.0; n * m];
            let mut grad_x = vec![0.0; n];
            let mut grad_u = vec![0.0; m];
            for k in (0..horizon).rev() {
                let uk = &u[k * m..(k + 1) * m];
                dynamics.jac_u(&states[k], uk, &mut jac_u);
                // grad_u[k] = jac_u^T adjoint + w_k * dl/du
                let w = self.problem.weight(k, self.cfg);
                cost.grad_u(&states[k], uk, &mut grad_u);
                for j in 0..m {
                    let mut acc = w * grad_u[j];
                    for i in 0..n {
                        acc += jac_u[i * m + j] * adjoint[i];
                    }
                    grad[k * m + j] = acc;
                }
                // adjoint = jac_x^T adjoint + w_k * dl/dx + constraint terms at x_k
                dynamics.jac_x(&states[k], uk, &mut jac_x);
                cost.grad_x(&states[k], uk, &mut grad_x);
                let mut new_adjoint = vec![0.0; n];
                for j in 0..n {
                    let mut acc = w * grad_x[j];
                    for i in 0..n {
                        acc += jac_x[i * n + j] * adjoint[i];
                    }
                    new_adjoint[j] = acc;
                }
                add_state_constraints(k, &mut new_adjoint, &states);
                adjoint = new_adjoint;
            }
            Some(grad)
        } else {
            None
        };

        Ok(EvalOutput {
            states,
            objective,
            al_value,
            gradient,
            constraints: ConstraintVals {
                inequalities,
                equalities,
                min_obstacle_margin,
                terminal_residual,
            },
        })
    }
}

/// Forward rollout with the exact objective gradient (no constraint terms).
pub fn rollout(problem: &OcpProblem, inputs: &[Input], cfg: &SolverConfig) -> Result<Rollout> {
    if inputs.len() != problem.horizon() {
        return Err(Error::Contract(format!(
            "rollout needs {} inputs, got {}",
            problem.horizon(),
            inputs.len()
        )));
    }
    let u = flatten(inputs);
    let evaluator = Evaluator::new(problem, cfg);
    // Zero multipliers and a vanishing penalty: the constraint terms drop out
    // and the AL gradient reduces to the pure objective gradient.
    let ws = AlWorkspace {
        lambda: vec![0.0; evaluator.num_inequalities()],
        mu: vec![0.0; evaluator.num_equalities()],
        rho: 1e-300,
    };
    let out = evaluator.eval(&u, Some(&ws))?;
    Ok(Rollout {
        states: out.states,
        objective: out.objective,
        gradient: out.gradient.expect("requested"),
    })
}

/// Projected-gradient infinity norm at `u` for gradient `g` under the box.
fn projected_gradient_norm(task: &TaskSpec, u: &[f64], g: &[f64]) -> f64 {
    let m = task.input_dim;
    let mut worst = 0.0f64;
    for (i, (&ui, &gi)) in u.iter().zip(g).enumerate() {
        let d = i % m;
        let stepped = (ui - gi).clamp(task.input_box.lo[d], task.input_box.hi[d]);
        worst = worst.max((stepped - ui).abs());
    }
    worst
}

fn project(task: &TaskSpec, u: &mut [f64]) {
    let m = task.input_dim;
    for (i, v) in u.iter_mut().enumerate() {
        let d = i % m;
        *v = v.clamp(task.input_box.lo[d], task.input_box.hi[d]);
    }
}

/// Inner minimization of the augmented Lagrangian by L-BFGS with projection
/// onto the input box. Returns (u, al_value, gradient, iterations).
fn minimize_inner(
    evaluator: &Evaluator,
    ws: &AlWorkspace,
    u0: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, f64, Vec<f64>, usize)> {
    let task = evaluator.problem.task;
    let mut u = u0;
    project(task, &mut u);
    let mut out = evaluator.eval(&u, Some(ws))?;
    let mut f = out.al_value;
    let mut g = out.gradient.take().expect("requested");

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut iters = 0;
    for _ in 0..cfg.max_inner {
        if projected_gradient_norm(task, &u, &g) <= cfg.kkt_tol {
            break;
        }
        iters += 1;

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let pairs = s_hist.len();
        let mut alphas = vec![0.0; pairs];
        for i in (0..pairs).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &d);
            alphas[i] = a;
            axpy(&mut d, -a, &y_hist[i]);
        }
        if pairs > 0 {
            let last = pairs - 1;
            let scale = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            if scale.is_finite() && scale > 0.0 {
                for v in d.iter_mut() {
                    *v *= scale;
                }
            }
        }
        for i in 0..pairs {
            let b = rho_hist[i] * dot(&y_hist[i], &d);
            axpy(&mut d, alphas[i] - b, &s_hist[i]);
        }
        // Safeguard against ascent directions.
        if dot(&d, &g) >= 0.0 {
            d = g.iter().map(|v| -v).collect();
        }

        // Projected-arc Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_linesearch {
            let mut trial: Vec<f64> = u.iter().zip(&d).map(|(&ui, &di)| ui + step * di).collect();
            project(task, &mut trial);
            let delta: Vec<f64> = trial.iter().zip(&u).map(|(&a, &b)| a - b).collect();
            let dir_deriv = dot(&g, &delta);
            let mut trial_out = evaluator.eval(&trial, Some(ws))?;
            let trial_f = trial_out.al_value;
            if trial_f <= f + cfg.armijo_c1 * dir_deriv.min(0.0)
                && delta.iter().any(|&v| v != 0.0)
                && trial_f < f
            {
                let trial_g = trial_out.gradient.take().expect("requested");
                accepted = Some((trial, trial_f, trial_g, delta));
                break;
            }
            step *= cfg.backtrack;
        }
        let Some((new_u, new_f, new_g, delta)) = accepted else {
            break; // line search failed; gradient too flat to make progress
        };

        let y: Vec<f64> = new_g.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&delta, &y);
        if sy > 1e-12 * norm2(&delta) * norm2(&y) {
            if s_hist.len() == cfg.lbfgs_memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(delta);
            y_hist.push(y);
        }
        u = new_u;
        f = new_f;
        g = new_g;
    }
    Ok((u, f, g, iters))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (v, &xi) in acc.iter_mut().zip(x) {
        *v += a * xi;
    }
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn violations(c: &ConstraintVals) -> (f64, f64) {
    let ineq = c
        .inequalities
        .iter()
        .fold(0.0f64, |acc, &g| acc.max(g.max(0.0)));
    let eq = c.equalities.iter().fold(0.0f64, |acc, &h| acc.max(h.abs()));
    (ineq, eq)
}

/// Feasibility check of an input sequence. The terminal equality of pinned
/// problems is excluded from the warm-start gate (driving it to zero is the
/// solver's job), but counts toward solution feasibility.
fn check_feasible(
    problem: &OcpProblem,
    inputs: &[Input],
    cfg: &SolverConfig,
) -> Result<(bool, ConstraintVals, f64)> {
    let u = flatten(inputs);
    let evaluator = Evaluator::new(problem, cfg);
    let out = evaluator.eval(&u, None)?;
    let (ineq, _eq) = violations(&out.constraints);
    Ok((ineq <= cfg.constraint_tol, out.constraints, out.objective))
}

/// Solve the finite-horizon problem from a warm start.
///
/// On solver failure the warm-start sequence itself is returned with status
/// `InfeasibleFallback`; a warm start that is itself infeasible is a hard
/// error because it breaks the recursive-feasibility argument.
pub fn solve(problem: &OcpProblem, warm: &WarmStart, cfg: &SolverConfig) -> Result<OcpSolution> {
    let start = Instant::now();
    let task = problem.task;
    let m = task.input_dim;
    if warm.inputs.len() != problem.horizon() {
        return Err(Error::Contract(format!(
            "warm start has {} inputs, horizon is {}",
            warm.inputs.len(),
            problem.horizon()
        )));
    }
    for u in &warm.inputs {
        if u.dim() != m {
            return Err(Error::Contract("warm start input dimension mismatch".into()));
        }
    }

    let (warm_feasible, warm_constraints, _) = check_feasible(problem, &warm.inputs, cfg)?;
    if !warm_feasible {
        let (ineq, _) = violations(&warm_constraints);
        return Err(Error::InfeasibleWarmStart(format!(
            "max violation {:.3e} (terminal residual {:.3e}, min obstacle margin {:.3e})",
            ineq,
            warm_constraints.terminal_residual,
            warm_constraints.min_obstacle_margin
        )));
    }

    let evaluator = Evaluator::new(problem, cfg);
    let mut ws = AlWorkspace {
        lambda: vec![0.0; evaluator.num_inequalities()],
        mu: vec![0.0; evaluator.num_equalities()],
        rho: cfg.penalty_init,
    };

    let mut u = flatten(&warm.inputs);
    project(task, &mut u);

    let mut total_inner = 0;
    let mut best: Option<(Vec<f64>, f64, f64)> = None; // (u, objective, kkt)
    let mut outer_rounds = 0;

    let mut converged = false;
    for round in 0..cfg.max_outer {
        outer_rounds = round + 1;
        let (new_u, _, grad, iters) = minimize_inner(&evaluator, &ws, u.clone(), cfg)?;
        total_inner += iters;
        u = new_u;

        let out = evaluator.eval(&u, None)?;
        let (ineq, eq) = violations(&out.constraints);
        let kkt = projected_gradient_norm(task, &u, &grad);
        if ineq <= cfg.constraint_tol && eq <= cfg.equality_tol {
            let better = match &best {
                Some((_, obj, _)) => out.objective < *obj,
                None => true,
            };
            if better {
                best = Some((u.clone(), out.objective, kkt));
            }
            if kkt <= cfg.kkt_tol {
                converged = true;
                break;
            }
        }
        // Multiplier updates, then a stiffer penalty for the next round.
        for (i, &g) in out.constraints.inequalities.iter().enumerate() {
            ws.lambda[i] = (ws.lambda[i] + ws.rho * g).max(0.0);
        }
        for (i, &h) in out.constraints.equalities.iter().enumerate() {
            ws.mu[i] += ws.rho * h;
        }
        ws.rho *= cfg.penalty_growth;
    }

    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    match best {
        Some((u_best, _, kkt)) => {
            let out = evaluator.eval(&u_best, None)?;
            let status = if converged {
                SolveStatus::Converged
            } else {
                SolveStatus::MaxIter
            };
            let eq_residual = out
                .constraints
                .equalities
                .iter()
                .fold(0.0f64, |acc, &h| acc.max(h.abs()));
            Ok(OcpSolution {
                inputs: unflatten(&u_best, m),
                states: out.states[1..].iter().map(|s| State(s.clone())).collect(),
                objective: out.objective,
                status,
                inner_iterations: total_inner,
                outer_rounds,
                wall_time_ms,
                kkt_residual: kkt,
                min_obstacle_margin: out.constraints.min_obstacle_margin,
                terminal_residual: out.constraints.terminal_residual,
                equality_residual: eq_residual,
            })
        }
        None => {
            // No feasible iterate found: fall back to the feasible warm start.
            let u0 = flatten(&warm.inputs);
            let out = evaluator.eval(&u0, None)?;
            let eq_residual = out
                .constraints
                .equalities
                .iter()
                .fold(0.0f64, |acc, &h| acc.max(h.abs()));
            Ok(OcpSolution {
                inputs: warm.inputs.clone(),
                states: out.states[1..].iter().map(|s| State(s.clone())).collect(),
                objective: out.objective,
                status: SolveStatus::InfeasibleFallback,
                inner_iterations: total_inner,
                outer_rounds,
                wall_time_ms,
                kkt_residual: f64::NAN,
                min_obstacle_margin: out.constraints.min_obstacle_margin,
                terminal_residual: out.constraints.terminal_residual,
                equality_residual: eq_residual,
            })
        }
    }
}

/// One receding-horizon step: solve, take the first input, shift the rest.
pub fn mpc_step(
    problem: &OcpProblem,
    warm: &WarmStart,
    policy: &Policy,
    cfg: &SolverConfig,
) -> Result<(Input, WarmStart, OcpSolution)> {
    let solution = solve(problem, warm, cfg)?;
    let applied = solution.inputs[0].clone();
    let next_warm = make_warm_start(&solution, policy, problem.task)?;
    Ok((applied, next_warm, solution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use crate::task::DubinsParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn benchmark() -> TaskSpec {
        TaskSpec::dubins_benchmark(&DubinsParams::default()).unwrap()
    }

    fn small_random_cert(seed: u64) -> Certificate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::init(&[3, 8, 8, 1], &mut rng).unwrap();
        // Shrink the output layer so V stays well below the level c = 7.
        for w in net.weights.last_mut().unwrap() {
            *w *= 0.2;
        }
        for b in net.biases.last_mut().unwrap() {
            *b *= 0.2;
        }
        Certificate::new(net, 7.0).unwrap()
    }

    fn zero_cert() -> Certificate {
        Certificate::new(Mlp::zeros(&[3, 8, 1]).unwrap(), 7.0).unwrap()
    }

    fn random_policy(seed: u64, task: &TaskSpec) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Policy::new(
            Mlp::init(&[3, 8, 8, 2], &mut rng).unwrap(),
            task.input_box.clone(),
        )
        .unwrap()
    }

    fn zero_warm(task: &TaskSpec) -> WarmStart {
        WarmStart {
            inputs: vec![Input(vec![0.0, 0.0]); task.horizon],
            origin: WarmStartOrigin::Cold,
        }
    }

    #[test]
    fn rollout_at_goal_is_terminal_value_only() {
        let task = benchmark();
        let cert = small_random_cert(1);
        let problem = OcpProblem::new(&task, &cert, State(vec![6.0, 0.0, 0.0]), 0);
        let cfg = SolverConfig::default();
        let inputs = vec![Input(vec![0.0, 0.0]); task.horizon];
        let r = rollout(&problem, &inputs, &cfg).unwrap();
        let expect = task.gamma.powi(task.horizon as i32) * cert.value(&[6.0, 0.0, 0.0]).unwrap();
        assert!((r.objective - expect).abs() < 1e-12);
    }

    #[test]
    fn rollout_single_step_composition() {
        let mut params = DubinsParams::default();
        params.horizon = 1;
        let task = TaskSpec::dubins_benchmark(&params).unwrap();
        let cert = small_random_cert(2);
        let x0 = State(vec![0.0, 2.0, 0.0]);
        let problem = OcpProblem::new(&task, &cert, x0.clone(), 0);
        let cfg = SolverConfig::default();
        let u = Input(vec![2.0, 0.0]);
        let r = rollout(&problem, &[u.clone()], &cfg).unwrap();
        assert!((r.states[1][0] - 0.2).abs() < 1e-12);
        let expect = task.stage_cost(&x0, &u).unwrap()
            + task.gamma * cert.value(&r.states[1]).unwrap();
        assert!((r.objective - expect).abs() < 1e-12);
    }

    #[test]
    fn rollout_gradient_matches_finite_differences() {
        let task = benchmark();
        let cert = small_random_cert(3);
        let cfg = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let x0 = State(vec![
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-1.5..1.5),
            ]);
            let problem = OcpProblem::new(&task, &cert, x0, rng.gen_range(0..20));
            let inputs: Vec<Input> = (0..task.horizon)
                .map(|_| Input(vec![rng.gen_range(0.0..2.0), rng.gen_range(-1.5..1.5)]))
                .collect();
            let r = rollout(&problem, &inputs, &cfg).unwrap();
            let flat = flatten(&inputs);
            let h = 1e-6;
            for i in 0..flat.len() {
                let mut up = flat.clone();
                let mut um = flat.clone();
                up[i] += h;
                um[i] -= h;
                let fp = rollout(&problem, &unflatten(&up, 2), &cfg).unwrap().objective;
                let fm = rollout(&problem, &unflatten(&um, 2), &cfg).unwrap().objective;
                let fd = (fp - fm) / (2.0 * h);
                let rel = (r.gradient[i] - fd).abs() / r.gradient[i].abs().max(fd.abs()).max(1e-3);
                assert!(rel <= 1e-5, "grad[{i}] = {} vs fd {}", r.gradient[i], fd);
            }
        }
    }

    #[test]
    fn solve_at_goal_returns_zero_inputs() {
        let task = benchmark();
        let cert = zero_cert(); // V(x_F) = 0 exactly
        let problem = OcpProblem::new(&task, &cert, State(vec![6.0, 0.0, 0.0]), 0);
        let cfg = SolverConfig::default();
        let sol = solve(&problem, &zero_warm(&task), &cfg).unwrap();
        assert!(sol.objective <= 1e-6, "objective {}", sol.objective);
        for u in &sol.inputs {
            assert!(u.0[0].abs() < 1e-2 && u.0[1].abs() < 1e-2);
        }
    }

    #[test]
    fn solve_beats_coarse_grid_on_short_horizons() {
        let mut params = DubinsParams::default();
        params.horizon = 2;
        let task = TaskSpec::dubins_benchmark(&params).unwrap();
        let cert = small_random_cert(5);
        let cfg = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);

        let grid_axis = |lo: f64, hi: f64| -> Vec<f64> {
            (0..9).map(|i| lo + (hi - lo) * i as f64 / 8.0).collect()
        };
        let vs = grid_axis(0.0, 2.0);
        let ws_ = grid_axis(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);

        let mut tested = 0;
        while tested < 5 {
            let x0 = State(vec![
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-1.5..1.5),
            ]);
            if task.in_unsafe(&x0) {
                continue;
            }
            let problem = OcpProblem::new(&task, &cert, x0, 0);
            let warm = zero_warm(&task);
            let Ok(sol) = solve(&problem, &warm, &cfg) else {
                continue;
            };
            // Brute force over the 9x9x9x9 grid, keeping feasible sequences.
            let mut best = f64::INFINITY;
            for &v0 in &vs {
                for &w0 in &ws_ {
                    for &v1 in &vs {
                        for &w1 in &ws_ {
                            let inputs =
                                vec![Input(vec![v0, w0]), Input(vec![v1, w1])];
                            let (feasible, _, obj) =
                                check_feasible(&problem, &inputs, &cfg).unwrap();
                            if feasible {
                                best = best.min(obj);
                            }
                        }
                    }
                }
            }
            assert!(
                sol.objective <= best + 1e-4,
                "solver {} vs grid best {}",
                sol.objective,
                best
            );
            tested += 1;
        }
    }

    #[test]
    fn infeasible_warm_start_is_hard_error() {
        let task = benchmark();
        let cert = zero_cert();
        // Start right next to the obstacle pointing into it.
        let problem = OcpProblem::new(&task, &cert, State(vec![-1.3, 0.0, 0.0]), 0);
        let cfg = SolverConfig::default();
        let warm = WarmStart {
            inputs: vec![Input(vec![2.0, 0.0]); task.horizon],
            origin: WarmStartOrigin::Cold,
        };
        let err = solve(&problem, &warm, &cfg).unwrap_err();
        assert!(matches!(err, Error::InfeasibleWarmStart(_)));
    }

    #[test]
    fn warm_start_shift_structure() {
        let task = benchmark();
        let policy = random_policy(13, &task);
        let sol = OcpSolution {
            inputs: vec![
                Input(vec![0.1, 0.2]),
                Input(vec![0.3, 0.4]),
                Input(vec![0.5, 0.6]),
            ],
            states: vec![
                State(vec![1.0, 0.0, 0.0]),
                State(vec![2.0, 0.0, 0.0]),
                State(vec![3.0, 0.0, 0.0]),
            ],
            objective: 0.0,
            status: SolveStatus::Converged,
            inner_iterations: 0,
            outer_rounds: 0,
            wall_time_ms: 0.0,
            kkt_residual: 0.0,
            min_obstacle_margin: 1.0,
            terminal_residual: -7.0,
            equality_residual: 0.0,
        };
        let warm = make_warm_start(&sol, &policy, &task).unwrap();
        assert_eq!(warm.inputs.len(), 3);
        assert_eq!(warm.inputs[0], Input(vec![0.3, 0.4]));
        assert_eq!(warm.inputs[1], Input(vec![0.5, 0.6]));
        let expect = policy.action(&[3.0, 0.0, 0.0]).unwrap();
        assert_eq!(warm.inputs[2].0, expect);
        assert!(task.input_box.contains(&warm.inputs[2].0));
        assert_eq!(warm.origin, WarmStartOrigin::PreviousSolution);
    }

    #[test]
    fn discount_normalization_preserves_argmin() {
        let task = benchmark();
        let cert = small_random_cert(17);
        let x0 = State(vec![-3.0, 2.0, 0.1]);
        let t_abs = 7;
        let base = SolverConfig::default();
        let normalized = SolverConfig {
            normalize_discount: true,
            ..base
        };
        let absolute = SolverConfig {
            normalize_discount: false,
            ..base
        };
        let problem = OcpProblem::new(&task, &cert, x0, t_abs);
        let warm = zero_warm(&task);
        let sol_n = solve(&problem, &warm, &normalized).unwrap();
        let sol_a = solve(&problem, &warm, &absolute).unwrap();
        // Objectives differ by the factor gamma^t, and either minimizer is
        // optimal for the other weighting (late-horizon inputs live in nearly
        // flat directions, so comparing input vectors directly is too strict).
        let scale = task.gamma.powi(t_abs as i32);
        assert!((sol_n.objective * scale - sol_a.objective).abs() < 1e-6);
        let cross = rollout(&problem, &sol_a.inputs, &normalized).unwrap().objective;
        assert!(
            (cross - sol_n.objective).abs() <= 1e-6,
            "absolute-weighting solution is suboptimal under normalization: {cross} vs {}",
            sol_n.objective
        );
    }

    #[test]
    fn solution_respects_constraint_tolerances() {
        let task = benchmark();
        let cert = small_random_cert(19);
        let cfg = SolverConfig::default();
        // A state whose straight path to the goal clips the obstacle.
        let problem = OcpProblem::new(&task, &cert, State(vec![-2.4, 0.3, 0.0]), 0);
        let warm = zero_warm(&task);
        let sol = solve(&problem, &warm, &cfg).unwrap();
        assert!(matches!(
            sol.status,
            SolveStatus::Converged | SolveStatus::MaxIter
        ));
        assert!(sol.min_obstacle_margin >= -1e-6);
        assert!(sol.terminal_residual <= 1e-6);
        for u in &sol.inputs {
            assert!(task.input_box.contains(&u.0));
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let task = benchmark();
        let cert = small_random_cert(23);
        let cfg = SolverConfig::default();
        let problem = OcpProblem::new(&task, &cert, State(vec![-4.0, 1.0, 0.2]), 0);
        let warm = zero_warm(&task);
        let a = solve(&problem, &warm, &cfg).unwrap();
        let b = solve(&problem, &warm, &cfg).unwrap();
        assert_eq!(flatten(&a.inputs), flatten(&b.inputs));
        assert_eq!(a.objective, b.objective);
    }
}
