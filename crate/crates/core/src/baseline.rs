//! Desk-scale sampled-safe-set iterative LMPC baseline.
//!
//! The terminal state must coincide with a stored state from an earlier
//! iteration. Instead of a mixed-integer formulation, each stored candidate
//! yields one smooth equality-pinned NLP; the step's solution is the best
//! candidate. A cheap reachability prefilter discards candidates that are
//! provably outside the horizon's reach.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::io::{self, StepLogRow, SummaryRow, TimingRow};
use crate::nn::{Certificate, Mlp};
use crate::orchestrator::{initial_maneuver, IterationReport, InitialTrajectory};
use crate::solver::{
    solve, OcpProblem, OcpSolution, SolveStatus, SolverConfig, TerminalCondition, WarmStart,
    WarmStartOrigin,
};
use crate::task::{Input, State, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Number of nearest stored candidates to try per step; `None` tries all.
    pub k_candidates: Option<usize>,
    /// States closer than this collapse to one stored sample (keeping the
    /// cheaper cost-to-go).
    pub dedupe_tol: f64,
    /// Extra slack on the reachability prefilter.
    pub reach_margin: f64,
    pub solver: SolverConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            k_candidates: Some(10),
            dedupe_tol: 0.05,
            reach_margin: 0.5,
            solver: SolverConfig {
                max_inner: 120,
                max_outer: 5,
                ..SolverConfig::default()
            },
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if let Some(k) = self.k_candidates {
            if k == 0 {
                return Err(Error::Config(format!("{field}.k_candidates must be >= 1")));
            }
        }
        if !(self.dedupe_tol >= 0.0) {
            return Err(Error::Config(format!("{field}.dedupe_tol must be >= 0")));
        }
        if !(self.reach_margin >= 0.0) {
            return Err(Error::Config(format!("{field}.reach_margin must be >= 0")));
        }
        self.solver.validate(&format!("{field}.solver"))
    }
}

/// States visited in earlier iterations with their discounted cost-to-go.
#[derive(Debug, Clone, Default)]
pub struct SampledSafeSet {
    states: Vec<Vec<f64>>,
    cost_to_go: Vec<f64>,
    dedupe_tol: f64,
}

impl SampledSafeSet {
    pub fn new(dedupe_tol: f64) -> Self {
        SampledSafeSet {
            states: Vec::new(),
            cost_to_go: Vec::new(),
            dedupe_tol,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn cost_to_go(&self) -> &[f64] {
        &self.cost_to_go
    }

    /// Inserts a state; near-duplicates keep the cheaper cost-to-go.
    pub fn insert(&mut self, x: &[f64], ctg: f64) {
        let tol2 = self.dedupe_tol * self.dedupe_tol;
        for (i, s) in self.states.iter().enumerate() {
            let d2: f64 = s.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if d2 <= tol2 {
                if ctg < self.cost_to_go[i] {
                    self.cost_to_go[i] = ctg;
                }
                return;
            }
        }
        self.states.push(x.to_vec());
        self.cost_to_go.push(ctg);
    }

    pub fn extend_from_dataset(&mut self, data: &TrajectoryDataset) {
        for traj in data.trajectories() {
            for step in &traj.steps {
                self.insert(step.x.as_slice(), step.cost_to_go);
            }
        }
    }
}

/// One receding-horizon baseline step: enumerate terminal candidates near the
/// anchor state, solve the pinned NLP for each, keep the best.
pub fn baseline_solve(
    task: &TaskSpec,
    x_t: &State,
    t_abs: usize,
    safe_set: &SampledSafeSet,
    cfg: &BaselineConfig,
    warm: &WarmStart,
    anchor: &State,
) -> Result<OcpSolution> {
    if safe_set.is_empty() {
        return Err(Error::Contract("the sampled safe set is empty".into()));
    }
    let start = Instant::now();
    let n = task.state_dim;

    // Reachability bounds per horizon: positions move at most N*v_max*dt,
    // headings at most N*omega_max*dt.
    let horizon = task.horizon as f64;
    let reach_pos = horizon * task.input_box.hi[0].abs().max(task.input_box.lo[0].abs()) * task.dt
        + cfg.reach_margin;
    let reach_theta = horizon
        * task.input_box.hi[1].abs().max(task.input_box.lo[1].abs())
        * task.dt
        + cfg.reach_margin;

    let mut order: Vec<usize> = (0..safe_set.len())
        .filter(|&i| {
            let s = &safe_set.states()[i];
            let dp = ((s[0] - x_t.0[0]).powi(2) + (s[1] - x_t.0[1]).powi(2)).sqrt();
            let dth = if n > 2 { (s[2] - x_t.0[2]).abs() } else { 0.0 };
            dp <= reach_pos && dth <= reach_theta
        })
        .collect();
    order.sort_by(|&a, &b| {
        let da: f64 = safe_set.states()[a]
            .iter()
            .zip(anchor.as_slice())
            .map(|(&s, &x)| (s - x) * (s - x))
            .sum();
        let db: f64 = safe_set.states()[b]
            .iter()
            .zip(anchor.as_slice())
            .map(|(&s, &x)| (s - x) * (s - x))
            .sum();
        da.partial_cmp(&db).expect("finite").then(a.cmp(&b))
    });
    if let Some(k) = cfg.k_candidates {
        order.truncate(k);
    }

    // The certificate slot is unused for pinned problems; a placeholder
    // keeps the problem type uniform.
    let placeholder = Certificate::new(Mlp::zeros(&[n, 1])?, task.level)?;

    let mut best: Option<OcpSolution> = None;
    let mut total_inner = 0usize;
    for &i in &order {
        let target = safe_set.states()[i].clone();
        let ctg = safe_set.cost_to_go()[i];
        let problem = OcpProblem {
            task,
            certificate: &placeholder,
            x0: x_t.clone(),
            t_abs,
            terminal: TerminalCondition::PinState {
                target,
                cost_to_go: ctg,
            },
        };
        let sol = match solve(&problem, warm, &cfg.solver) {
            Ok(sol) => sol,
            Err(Error::InfeasibleWarmStart(_)) => continue,
            Err(e) => return Err(e),
        };
        total_inner += sol.inner_iterations;
        if sol.status == SolveStatus::InfeasibleFallback
            || sol.equality_residual > cfg.solver.equality_tol
        {
            continue;
        }
        let better = match &best {
            Some(b) => sol.objective < b.objective,
            None => true,
        };
        if better {
            best = Some(sol);
        }
    }

    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    match best {
        Some(mut sol) => {
            sol.wall_time_ms = wall_time_ms;
            sol.inner_iterations = total_inner;
            Ok(sol)
        }
        None => {
            // Every candidate failed: fall back to the shifted previous
            // solution, which is dynamically feasible and obstacle-safe.
            let problem = OcpProblem {
                task,
                certificate: &placeholder,
                x0: x_t.clone(),
                t_abs,
                terminal: TerminalCondition::PinState {
                    target: task.goal.0.clone(),
                    cost_to_go: 0.0,
                },
            };
            let evaluated = crate::solver::rollout(&problem, &warm.inputs, &cfg.solver)?;
            Ok(OcpSolution {
                inputs: warm.inputs.clone(),
                states: evaluated.states[1..]
                    .iter()
                    .map(|s| State(s.clone()))
                    .collect(),
                objective: evaluated.objective,
                status: SolveStatus::InfeasibleFallback,
                inner_iterations: total_inner,
                outer_rounds: 0,
                wall_time_ms,
                kkt_residual: f64::NAN,
                min_obstacle_margin: 0.0,
                terminal_residual: 0.0,
                equality_residual: f64::NAN,
            })
        }
    }
}

/// Run configuration for the baseline loop.
#[derive(Debug, Clone)]
pub struct BaselineRunContext {
    pub task: TaskSpec,
    pub baseline: BaselineConfig,
    pub n_ite: usize,
    pub out_dir: PathBuf,
    pub initial: InitialTrajectory,
}

/// Full baseline iterative loop, mirroring the main orchestrator's artifact
/// layout with a `method=baseline` marker file.
pub fn baseline_run(ctx: &BaselineRunContext) -> Result<Vec<IterationReport>> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    std::fs::write(ctx.out_dir.join("method"), "baseline\n")?;
    let task = &ctx.task;

    let mut data = TrajectoryDataset::new();
    let (states0, inputs0) = match &ctx.initial {
        InitialTrajectory::Generate => initial_maneuver(task)?,
        InitialTrajectory::File(path) => {
            let loaded = TrajectoryDataset::load_jsonl(path, task)?;
            let traj = loaded
                .trajectories()
                .iter()
                .find(|t| t.iteration == 0)
                .ok_or_else(|| {
                    Error::Contract(format!("{} holds no iteration-0 trajectory", path.display()))
                })?;
            let states: Vec<State> = traj.steps.iter().map(|s| s.x.clone()).collect();
            let inputs: Vec<Input> = traj.steps[..traj.steps.len() - 1]
                .iter()
                .map(|s| s.u.clone())
                .collect();
            (states, inputs)
        }
    };
    data.push_trajectory(task, 0, &states0, &inputs0)?;
    data.save_jsonl(&ctx.out_dir.join("dataset.jsonl"))?;

    let mut safe_set = SampledSafeSet::new(ctx.baseline.dedupe_tol);
    safe_set.extend_from_dataset(&data);

    let cost0 = data.trajectories()[0].steps[0].cost_to_go;
    let goal_dist0: f64 = states0
        .last()
        .expect("nonempty")
        .as_slice()
        .iter()
        .zip(task.goal.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();

    let blank = |iteration: usize| IterationReport {
        iteration,
        cost: 0.0,
        cost_tail_bound: 0.0,
        steps: 0,
        final_goal_distance: 0.0,
        mean_solve_ms: 0.0,
        max_solve_ms: 0.0,
        total_solve_ms: 0.0,
        train_ms: 0.0,
        delta1_max: 0.0,
        delta2: 0.0,
        theorem3_slack: 0.0,
        cost_trend_ok: true,
        containment_fraction: 0.0,
        violation_rate: 0.0,
        goal_value: 0.0,
        alpha: 0.0,
        certified_area_cells: 0,
    };

    let mut reports = vec![IterationReport {
        cost: cost0,
        steps: inputs0.len(),
        final_goal_distance: goal_dist0,
        ..blank(0)
    }];
    let mut prev_cost = cost0;

    for j in 1..=ctx.n_ite {
        let mut x = task.start.clone();
        let mut warm = WarmStart {
            inputs: vec![Input(vec![0.0; task.input_dim]); task.horizon],
            origin: WarmStartOrigin::Cold,
        };
        let mut anchor = x.clone();
        let mut states = vec![x.clone()];
        let mut inputs: Vec<Input> = Vec::new();
        let mut log: Vec<StepLogRow> = Vec::new();

        for t in 0..task.max_steps {
            if task.near_goal(&x) {
                break;
            }
            let sol = baseline_solve(task, &x, t, &safe_set, &ctx.baseline, &warm, &anchor)?;
            let u = sol.inputs[0].clone();
            let next = task.step(&x, &u)?;
            if task.in_unsafe(&next) {
                return Err(Error::Safety(format!(
                    "baseline state entered the unsafe set at step {t}: {:?}",
                    next.0
                )));
            }
            log.push(StepLogRow {
                t,
                state: x.0.clone(),
                input: u.0.clone(),
                status: sol.status,
                objective: sol.objective,
                kkt_residual: sol.kkt_residual,
                min_obstacle_margin: sol.min_obstacle_margin,
                terminal_residual: sol.equality_residual,
                lyapunov_residual: f64::NAN,
                delta1_terminal: 0.0,
                wall_time_ms: sol.wall_time_ms,
            });
            // Next warm start: shift, repeat the last input.
            let mut shifted: Vec<Input> = sol.inputs[1..].to_vec();
            shifted.push(sol.inputs.last().expect("horizon >= 1").clone());
            warm = WarmStart {
                inputs: shifted,
                origin: WarmStartOrigin::PreviousSolution,
            };
            anchor = sol.terminal_state().clone();
            inputs.push(u);
            states.push(next.clone());
            x = next;
        }

        io::write_step_log(&log, &ctx.out_dir.join(format!("iteration_{j}.csv")))?;
        data.push_trajectory(task, j, &states, &inputs)?;
        data.save_jsonl(&ctx.out_dir.join("dataset.jsonl"))?;
        safe_set.extend_from_dataset(&data);

        let cost_j = data
            .trajectories()
            .iter()
            .find(|t| t.iteration == j)
            .expect("just pushed")
            .steps[0]
            .cost_to_go;
        let times: Vec<f64> = log.iter().map(|r| r.wall_time_ms).collect();
        let total_ms: f64 = times.iter().sum();
        let goal_dist: f64 = states
            .last()
            .expect("nonempty")
            .as_slice()
            .iter()
            .zip(task.goal.as_slice())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();

        reports.push(IterationReport {
            cost: cost_j,
            steps: inputs.len(),
            final_goal_distance: goal_dist,
            mean_solve_ms: if times.is_empty() { 0.0 } else { total_ms / times.len() as f64 },
            max_solve_ms: times.iter().cloned().fold(0.0, f64::max),
            total_solve_ms: total_ms,
            cost_trend_ok: cost_j <= prev_cost + 1e-9,
            ..blank(j)
        });
        prev_cost = cost_j;

        let rows: Vec<SummaryRow> = reports
            .iter()
            .map(|r| SummaryRow {
                iteration: r.iteration,
                cost: r.cost,
                cost_tail_bound: r.cost_tail_bound,
                steps: r.steps,
                final_goal_distance: r.final_goal_distance,
                delta1_max: r.delta1_max,
                delta2: r.delta2,
                theorem3_slack: r.theorem3_slack,
                cost_trend_ok: r.cost_trend_ok,
                containment_fraction: r.containment_fraction,
                violation_rate: r.violation_rate,
                goal_value: r.goal_value,
                alpha: r.alpha,
                certified_area_cells: r.certified_area_cells,
            })
            .collect();
        io::write_summary(&rows, &ctx.out_dir.join("summary.csv"))?;
        let timing_rows: Vec<TimingRow> = reports
            .iter()
            .map(|r| TimingRow {
                iteration: r.iteration,
                mean_solve_ms: r.mean_solve_ms,
                max_solve_ms: r.max_solve_ms,
                total_solve_ms: r.total_solve_ms,
                train_ms: 0.0,
            })
            .collect();
        io::write_timing(&timing_rows, &ctx.out_dir.join("timing.csv"))?;
    }

    Ok(reports)
}
