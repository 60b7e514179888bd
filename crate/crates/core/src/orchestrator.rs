//! Outer iteration loop: execute the controller, collect data, retrain the
//! certificate, and report per-iteration performance and certificate quality.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::io::{
    self, HeatmapRow, PerformanceTable, StepLogRow, SummaryRow, TimingRow,
};
use crate::nn::{Certificate, Policy};
use crate::solver::{cold_start, mpc_step, solve, OcpProblem, SolverConfig};
use crate::task::{Input, State, TaskSpec};
use crate::trainer::{
    check_containment, sample_domain, train_certificate, LossWeights, TrainOutcome,
    TrainerConfig, ViolationBounds,
};

/// Where the initial dataset comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialTrajectory {
    /// Generate the built-in maneuver.
    Generate,
    /// Load iteration-0 records from a JSONL dataset file.
    File(PathBuf),
}

/// Runtime configuration of one full run.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub task: TaskSpec,
    pub trainer: TrainerConfig,
    pub weights: LossWeights,
    pub solver: SolverConfig,
    pub n_ite: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub initial: InitialTrajectory,
    /// Radial offsets (away from the obstacles) of the synthetic region
    /// points added around the initial trajectory.
    pub behind_offsets: Vec<f64>,
    pub heatmap_theta: f64,
    pub heatmap_resolution: usize,
    pub containment_samples: usize,
    /// Optional pre-trained initial certificate/policy parameter files.
    pub bootstrap_params: Option<(PathBuf, PathBuf)>,
    /// Step-count override for the initial training round (fresh networks
    /// need more steps than warm-started retrains).
    pub bootstrap_n_iter: Option<usize>,
}

/// Per-iteration results; iteration 0 is the initial trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Discounted performance cost from the start state.
    pub cost: f64,
    pub cost_tail_bound: f64,
    pub steps: usize,
    pub final_goal_distance: f64,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub total_solve_ms: f64,
    pub train_ms: f64,
    /// Max decrease-condition violation at the predicted terminal states
    /// during this iteration (zero for iteration 0).
    pub delta1_max: f64,
    /// Data-consistency violation bound of the certificate used here.
    pub delta2: f64,
    /// `gamma^N (delta1_max + delta2) / (1 - gamma)`.
    pub theorem3_slack: f64,
    /// `cost <= previous cost + slack`.
    pub cost_trend_ok: bool,
    pub containment_fraction: f64,
    pub violation_rate: f64,
    pub goal_value: f64,
    pub alpha: f64,
    pub certified_area_cells: usize,
}

/// RNG stream tags; each subsystem draws from its own ChaCha stream.
mod streams {
    pub const BOOTSTRAP: u64 = 1;
    pub const RETRAIN_BASE: u64 = 10;
    pub const CONTAINMENT_BASE: u64 = 1000;
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU);
    if x < 0.0 {
        x += std::f64::consts::TAU;
    }
    x - std::f64::consts::PI
}

fn goal_distance(task: &TaskSpec, x: &State) -> f64 {
    x.as_slice()
        .iter()
        .zip(task.goal.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Hand-designed open-loop maneuver for the planar benchmark: a generous arc
/// over the first obstacle, waypoint-tracked at moderate speed, finishing
/// with a straight approach that settles onto the goal pose.
///
/// The trajectory is produced by stepping the task dynamics exactly, so it
/// satisfies the dataset consistency invariant by construction.
pub fn initial_maneuver(task: &TaskSpec) -> Result<(Vec<State>, Vec<Input>)> {
    if task.state_dim != 3 || task.input_dim != 2 {
        return Err(Error::Contract(
            "the built-in maneuver is defined for the planar benchmark".into(),
        ));
    }
    let (sz, sy) = (task.start.0[0], task.start.0[1]);
    let (gz, gy) = (task.goal.0[0], task.goal.0[1]);
    let (oz, oy, orad) = match task.obstacles.first() {
        Some(o) => (o.center_z, o.center_y, o.radius),
        None => ((sz + gz) / 2.0, (sy + gy) / 2.0, 0.0),
    };
    // Arc apex well above the obstacle, entry/exit shoulders between the
    // endpoints and the apex, then an early descent onto the approach line so
    // heading and lateral error settle before the final deceleration.
    let apex = oy + orad + 2.0;
    let shoulder = oy + orad + 1.4;
    let descent_start = 4; // slower from this waypoint on
    let waypoints: Vec<[f64; 2]> = vec![
        [sz + 0.25 * (oz - sz), 0.55 * shoulder],
        [sz + 0.62 * (oz - sz), shoulder],
        [oz, apex],
        [gz - 0.62 * (gz - oz), shoulder],
        [gz - 0.40 * (gz - oz), 0.45 * shoulder],
        [gz - 0.30 * (gz - oz), gy],
        [gz, gy],
    ];

    let cruise = 1.2f64.min(task.input_box.hi[0]);
    let approach = 0.7f64.min(task.input_box.hi[0]);
    let omega_max = task.input_box.hi[1];
    let capture = 0.6;

    let mut states = vec![task.start.clone()];
    let mut inputs: Vec<Input> = Vec::new();
    let mut wp = 0usize;
    let budget = 4 * task.max_steps;
    for _ in 0..budget {
        let x = states.last().expect("nonempty");
        if task.near_goal(x) {
            break;
        }
        let (z, y, th) = (x.0[0], x.0[1], x.0[2]);
        // Advance the waypoint when close (the final one is the goal).
        while wp + 1 < waypoints.len() {
            let d = ((waypoints[wp][0] - z).powi(2) + (waypoints[wp][1] - y).powi(2)).sqrt();
            if d < capture {
                wp += 1;
            } else {
                break;
            }
        }
        let target = waypoints[wp];
        let to_target = ((target[0] - z).powi(2) + (target[1] - y).powi(2)).sqrt();
        let goal_dist = ((gz - z).powi(2) + (gy - y).powi(2)).sqrt();
        let (v, omega) = if wp + 1 == waypoints.len() && goal_dist <= 0.9 {
            // Settle phase: follow the approach line instead of the goal
            // point. The floored denominator keeps the desired heading from
            // flipping, so heading, lateral error and distance all decay
            // together and the pose capture is clean.
            let desired = (2.0 * (gy - y)).atan2((gz - z).max(0.2));
            let omega = (3.0 * wrap_angle(desired - th)).clamp(-omega_max, omega_max);
            let v = (0.9 * goal_dist).clamp(0.02, approach);
            (v, omega)
        } else {
            let heading = (target[1] - y).atan2(target[0] - z);
            let err = wrap_angle(heading - th);
            let omega = (2.5 * err).clamp(-omega_max, omega_max);
            // Decelerate on the final leg so the waypoint bearing stays ahead.
            let v = if wp + 1 == waypoints.len() {
                (0.9 * to_target).clamp(0.02, approach)
            } else if wp >= descent_start {
                approach
            } else {
                cruise
            };
            (v, omega)
        };
        let v = v.clamp(task.input_box.lo[0], task.input_box.hi[0]);
        let u = Input(vec![v, omega]);
        let next = task.step(x, &u)?;
        if task.in_unsafe(&next) {
            return Err(Error::Safety(format!(
                "the built-in maneuver violated the constraints at {:?}; adjust the task geometry",
                next.0
            )));
        }
        states.push(next);
        inputs.push(u);
    }
    let last = states.last().expect("nonempty");
    if !task.near_goal(last) {
        return Err(Error::Contract(format!(
            "the built-in maneuver did not settle at the goal (final distance {:.3})",
            goal_distance(task, last)
        )));
    }
    Ok((states, inputs))
}

/// Synthetic region points offset along the trajectory normal, on the side
/// facing away from the nearest obstacle. They widen the sampling region
/// into a band around the earliest data without extending it axially.
pub fn behind_points(task: &TaskSpec, states: &[State], offsets: &[f64]) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    let (lo, hi) = (&task.domain_box.lo, &task.domain_box.hi);
    for (i, x) in states.iter().enumerate() {
        let (z, y) = (x.0[0], x.0[1]);
        // Local motion direction (fall back to the heading at the ends).
        let (dz, dy) = if i + 1 < states.len() {
            (states[i + 1].0[0] - z, states[i + 1].0[1] - y)
        } else if i > 0 {
            (z - states[i - 1].0[0], y - states[i - 1].0[1])
        } else {
            (x.0[2].cos(), x.0[2].sin())
        };
        let norm = (dz * dz + dy * dy).sqrt();
        if norm < 1e-9 {
            continue;
        }
        let mut normal = [-dy / norm, dz / norm];
        // Point away from the nearest obstacle.
        if let Some(o) = task
            .obstacles
            .iter()
            .min_by(|a, b| {
                let da = (z - a.center_z).powi(2) + (y - a.center_y).powi(2);
                let db = (z - b.center_z).powi(2) + (y - b.center_y).powi(2);
                da.partial_cmp(&db).expect("finite")
            })
        {
            let away = [z - o.center_z, y - o.center_y];
            if normal[0] * away[0] + normal[1] * away[1] < 0.0 {
                normal = [-normal[0], -normal[1]];
            }
        }
        for &off in offsets {
            let p = [
                (z + off * normal[0]).clamp(lo[0], hi[0]),
                (y + off * normal[1]).clamp(lo[1], hi[1]),
            ];
            let clear = task.obstacles.iter().all(|o| !o.contains(p[0], p[1]));
            if clear {
                pts.push(p);
            }
        }
    }
    pts
}

/// Outcome of the initial training round.
pub struct Bootstrap {
    pub certificate: Certificate,
    pub policy: Policy,
    pub bounds: ViolationBounds,
    pub violation_rate: f64,
    pub goal_value: f64,
    pub alpha: f64,
    pub train_ms: f64,
}

/// Trains (or loads) the initial certificate, then enforces the two entry
/// requirements: the certified region covers the initial dataset, and the
/// finite-horizon problem is feasible at the start state.
pub fn bootstrap(
    data: &TrajectoryDataset,
    task: &TaskSpec,
    trainer: &TrainerConfig,
    weights: &LossWeights,
    solver_cfg: &SolverConfig,
    seed: u64,
    preloaded: Option<(Certificate, Policy)>,
) -> Result<Bootstrap> {
    if data.is_empty() {
        return Err(Error::Contract("bootstrap needs a nonempty initial dataset".into()));
    }
    let start = Instant::now();
    let mut rng = stream_rng(seed, streams::BOOTSTRAP);
    let (certificate, policy, bounds, violation_rate, goal_value, alpha) = match preloaded {
        Some((cert, pol)) => {
            let bounds = crate::trainer::estimate_violation_bounds(
                &cert,
                &pol,
                data,
                task,
                trainer.n_test,
                &mut rng,
            )?;
            let goal_value = cert.value(task.goal.as_slice())?;
            (cert, pol, bounds, f64::NAN, goal_value, f64::NAN)
        }
        None => {
            let TrainOutcome {
                certificate,
                policy,
                bounds,
                summary,
            } = train_certificate(data, task, trainer, weights, None, &mut rng)?;
            (
                certificate,
                policy,
                bounds,
                summary.final_report.violation_rate,
                summary.final_report.goal_value,
                summary.alpha,
            )
        }
    };
    let train_ms = start.elapsed().as_secs_f64() * 1e3;

    // Certified-region coverage of the initial dataset.
    let mut outside = 0usize;
    let mut total = 0usize;
    for x in data.all_states() {
        total += 1;
        if certificate.value(x.as_slice())? > task.level {
            outside += 1;
        }
    }
    let fraction = outside as f64 / total.max(1) as f64;
    if fraction > 0.01 {
        return Err(Error::Training(format!(
            "initial certificate leaves {:.1}% of the dataset uncertified",
            100.0 * fraction
        )));
    }

    // Feasibility of the problem at the start state under the fresh pair.
    let cold = cold_start(&policy, task, &task.start)?;
    let problem = OcpProblem::new(task, &certificate, task.start.clone(), 0);
    solve(&problem, &cold, solver_cfg).map_err(|e| match e {
        Error::InfeasibleWarmStart(msg) => Error::Solver(format!(
            "the initial problem is infeasible from the start state: {msg}"
        )),
        other => other,
    })?;

    Ok(Bootstrap {
        certificate,
        policy,
        bounds,
        violation_rate,
        goal_value,
        alpha,
        train_ms,
    })
}

/// Closed-loop execution of one iteration.
pub struct IterationRun {
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
    pub log: Vec<StepLogRow>,
    pub delta1_max: f64,
}

/// Runs the controller from the start state until the goal tolerance or the
/// step limit, recording solver diagnostics and the per-step decrease audit.
pub fn run_iteration(
    task: &TaskSpec,
    certificate: &Certificate,
    policy: &Policy,
    solver_cfg: &SolverConfig,
) -> Result<IterationRun> {
    let mut x = task.start.clone();
    let mut warm = cold_start(policy, task, &x)?;
    let mut states = vec![x.clone()];
    let mut inputs: Vec<Input> = Vec::new();
    let mut log: Vec<StepLogRow> = Vec::new();
    let mut objectives: Vec<f64> = Vec::new();
    let mut stage_costs: Vec<f64> = Vec::new();
    let mut delta1_max = 0.0f64;

    let dynamics = task.dynamics();
    let cost = task.cost_fn();

    for t in 0..task.max_steps {
        if task.near_goal(&x) {
            break;
        }
        let problem = OcpProblem::new(task, certificate, x.clone(), t);
        let (u, next_warm, sol) = mpc_step(&problem, &warm, policy, solver_cfg)?;

        // Decrease-condition residual at the predicted terminal state.
        let xn = sol.terminal_state().as_slice();
        let v_term = certificate.value(xn)?;
        let u_pol = policy.action(xn)?;
        let mut fterm = vec![0.0; task.state_dim];
        dynamics.step(xn, &u_pol, &mut fterm);
        let delta1 = (task.gamma * certificate.value(&fterm)? - v_term + cost.cost(xn, &u_pol))
            .max(0.0);
        delta1_max = delta1_max.max(delta1);

        let next = task.step(&x, &u)?;
        if task.in_unsafe(&next) {
            return Err(Error::Safety(format!(
                "closed-loop state entered the unsafe set at step {t}: {:?}",
                next.0
            )));
        }
        stage_costs.push(task.stage_cost(&x, &u)?);
        objectives.push(sol.objective);
        log.push(StepLogRow {
            t,
            state: x.0.clone(),
            input: u.0.clone(),
            status: sol.status,
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            min_obstacle_margin: sol.min_obstacle_margin,
            terminal_residual: sol.terminal_residual,
            lyapunov_residual: f64::NAN, // filled in below
            delta1_terminal: delta1,
            wall_time_ms: sol.wall_time_ms,
        });
        inputs.push(u);
        states.push(next.clone());
        x = next;
        warm = next_warm;
    }

    // One-step decrease audit (normalized weighting):
    // gamma J(x_{t+1}) - J(x_t) + l(x_t, u_t) <= gamma^N delta1(x*_N).
    for t in 0..log.len() {
        if t + 1 < objectives.len() {
            log[t].lyapunov_residual =
                task.gamma * objectives[t + 1] - objectives[t] + stage_costs[t];
        }
    }

    Ok(IterationRun {
        states,
        inputs,
        log,
        delta1_max,
    })
}

fn timing_from_log(iteration: usize, log: &[StepLogRow], train_ms: f64) -> TimingRow {
    let times: Vec<f64> = log.iter().map(|r| r.wall_time_ms).collect();
    let total: f64 = times.iter().sum();
    TimingRow {
        iteration,
        mean_solve_ms: if times.is_empty() { 0.0 } else { total / times.len() as f64 },
        max_solve_ms: times.iter().cloned().fold(0.0, f64::max),
        total_solve_ms: total,
        train_ms,
    }
}

fn count_certified(rows: &[HeatmapRow]) -> usize {
    rows.iter().filter(|r| r.below_level).count()
}

fn report_to_summary(r: &IterationReport) -> SummaryRow {
    SummaryRow {
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
    }
}

/// Artifacts of a completed (or partially completed) run.
pub struct RunArtifacts {
    pub reports: Vec<IterationReport>,
    pub out_dir: PathBuf,
}

/// The full iterative learning loop: bootstrap, then for each iteration
/// execute the controller, grow the dataset, retrain the certificate, and
/// write all artifacts into the run directory.
pub fn run_all(ctx: &RunContext) -> Result<RunArtifacts> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    let task = &ctx.task;

    // Initial dataset.
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
    data.set_extra_region_points(behind_points(task, &states0, &ctx.behind_offsets));
    data.save_jsonl(&ctx.out_dir.join("dataset.jsonl"))?;

    // Initial certificate.
    let preloaded = match &ctx.bootstrap_params {
        Some((cert_path, pol_path)) => Some((
            io::load_certificate(cert_path)?,
            io::load_policy(pol_path)?,
        )),
        None => None,
    };
    let boot_trainer = TrainerConfig {
        n_iter: ctx.bootstrap_n_iter.unwrap_or(ctx.trainer.n_iter),
        ..ctx.trainer.clone()
    };
    let boot = bootstrap(
        &data,
        task,
        &boot_trainer,
        &ctx.weights,
        &ctx.solver,
        ctx.seed,
        preloaded,
    )?;
    let mut certificate = boot.certificate;
    let mut policy = boot.policy;
    io::save_certificate(&certificate, &ctx.out_dir.join("cert_0.params"))?;
    io::save_policy(&policy, &ctx.out_dir.join("policy_0.params"))?;

    let heatmap0 = io::export_heatmap(&certificate, task, ctx.heatmap_theta, ctx.heatmap_resolution)?;
    io::write_heatmap(&heatmap0, &ctx.out_dir.join(heatmap_name(0, ctx.heatmap_theta)))?;

    let traj0: Vec<(State, Input)> = states0[..inputs0.len()]
        .iter()
        .cloned()
        .zip(inputs0.iter().cloned())
        .collect();
    let dc0 = task.discounted_cost(&traj0)?;
    let cost0 = data.trajectories()[0].steps[0].cost_to_go;

    let mut reports = vec![IterationReport {
        iteration: 0,
        cost: cost0,
        cost_tail_bound: dc0.tail_bound,
        steps: inputs0.len(),
        final_goal_distance: goal_distance(task, states0.last().expect("nonempty")),
        mean_solve_ms: 0.0,
        max_solve_ms: 0.0,
        total_solve_ms: 0.0,
        train_ms: boot.train_ms,
        delta1_max: 0.0,
        delta2: boot.bounds.delta2,
        theorem3_slack: 0.0,
        cost_trend_ok: true,
        containment_fraction: 0.0,
        violation_rate: boot.violation_rate,
        goal_value: boot.goal_value,
        alpha: boot.alpha,
        certified_area_cells: count_certified(&heatmap0),
    }];
    let mut timings = vec![TimingRow {
        iteration: 0,
        mean_solve_ms: 0.0,
        max_solve_ms: 0.0,
        total_solve_ms: 0.0,
        train_ms: boot.train_ms,
    }];
    let persist = |reports: &[IterationReport], timings: &[TimingRow]| -> Result<()> {
        let rows: Vec<SummaryRow> = reports.iter().map(report_to_summary).collect();
        io::write_summary(&rows, &ctx.out_dir.join("summary.csv"))?;
        io::write_timing(timings, &ctx.out_dir.join("timing.csv"))?;
        Ok(())
    };
    persist(&reports, &timings)?;

    let mut prev_delta2 = boot.bounds.delta2;
    let mut prev_cost = cost0;

    for j in 1..=ctx.n_ite {
        let run = run_iteration(task, &certificate, &policy, &ctx.solver)?;
        io::write_step_log(&run.log, &ctx.out_dir.join(format!("iteration_{j}.csv")))?;

        data.push_trajectory(task, j, &run.states, &run.inputs)?;
        data.save_jsonl(&ctx.out_dir.join("dataset.jsonl"))?;
        let cost_j = data
            .trajectories()
            .iter()
            .find(|t| t.iteration == j)
            .expect("just pushed")
            .steps[0]
            .cost_to_go;
        let pairs: Vec<(State, Input)> = run.states[..run.inputs.len()]
            .iter()
            .cloned()
            .zip(run.inputs.iter().cloned())
            .collect();
        let tail_bound = task.discounted_cost(&pairs)?.tail_bound;

        let slack = task.gamma.powi(task.horizon as i32) * (run.delta1_max + prev_delta2)
            / (1.0 - task.gamma);
        let trend_ok = cost_j <= prev_cost + slack + 1e-12;

        // Retrain on the grown dataset, warm-started from the current pair.
        let train_start = Instant::now();
        let mut rng = stream_rng(ctx.seed, streams::RETRAIN_BASE + j as u64);
        let outcome = train_certificate(
            &data,
            task,
            &ctx.trainer,
            &ctx.weights,
            Some((&certificate, &policy)),
            &mut rng,
        )?;
        let train_ms = train_start.elapsed().as_secs_f64() * 1e3;

        // Sampled containment of consecutive certified regions.
        let mut c_rng = stream_rng(ctx.seed, streams::CONTAINMENT_BASE + j as u64);
        let samples: Vec<Vec<f64>> = (0..ctx.containment_samples)
            .map(|_| sample_domain(task, &mut c_rng))
            .collect();
        let containment =
            check_containment(&certificate, &outcome.certificate, task.level, &samples)?;

        certificate = outcome.certificate;
        policy = outcome.policy;
        io::save_certificate(&certificate, &ctx.out_dir.join(format!("cert_{j}.params")))?;
        io::save_policy(&policy, &ctx.out_dir.join(format!("policy_{j}.params")))?;
        let heatmap =
            io::export_heatmap(&certificate, task, ctx.heatmap_theta, ctx.heatmap_resolution)?;
        io::write_heatmap(&heatmap, &ctx.out_dir.join(heatmap_name(j, ctx.heatmap_theta)))?;

        let timing = timing_from_log(j, &run.log, train_ms);
        reports.push(IterationReport {
            iteration: j,
            cost: cost_j,
            cost_tail_bound: tail_bound,
            steps: run.inputs.len(),
            final_goal_distance: goal_distance(task, run.states.last().expect("nonempty")),
            mean_solve_ms: timing.mean_solve_ms,
            max_solve_ms: timing.max_solve_ms,
            total_solve_ms: timing.total_solve_ms,
            train_ms,
            delta1_max: run.delta1_max,
            delta2: prev_delta2,
            theorem3_slack: slack,
            cost_trend_ok: trend_ok,
            containment_fraction: containment.fraction,
            violation_rate: outcome.summary.final_report.violation_rate,
            goal_value: outcome.summary.final_report.goal_value,
            alpha: outcome.summary.alpha,
            certified_area_cells: count_certified(&heatmap),
        });
        timings.push(timing);
        persist(&reports, &timings)?;

        prev_delta2 = outcome.bounds.delta2;
        prev_cost = cost_j;
    }

    let table = performance_summary(&[("proposed".to_string(), reports.clone())]);
    std::fs::write(ctx.out_dir.join("performance_table.csv"), table.to_csv())?;

    Ok(RunArtifacts {
        reports,
        out_dir: ctx.out_dir.clone(),
    })
}

pub fn heatmap_name(iteration: usize, theta: f64) -> String {
    format!("heatmap_{iteration}_theta{theta:.3}.csv")
}

/// Cost/time comparison across methods in the standard layout; iteration 0
/// has no online solves, so its time cell is empty.
pub fn performance_summary(methods: &[(String, Vec<IterationReport>)]) -> PerformanceTable {
    let mut table = PerformanceTable::default();
    for (name, reports) in methods {
        let costs: Vec<f64> = reports.iter().map(|r| r.cost).collect();
        let times: Vec<Option<f64>> = reports
            .iter()
            .map(|r| {
                if r.steps == 0 || r.total_solve_ms == 0.0 {
                    None
                } else {
                    Some(r.total_solve_ms / 1e3)
                }
            })
            .collect();
        table.methods.push((name.clone(), costs, times));
    }
    table
}

/// Reads a run directory's summary back into reports (used by the CLI).
pub fn load_reports(dir: &Path) -> Result<Vec<IterationReport>> {
    let rows = io::read_summary(&dir.join("summary.csv"))?;
    let timing = io::read_timing(&dir.join("timing.csv")).unwrap_or_default();
    Ok(rows
        .into_iter()
        .map(|r| {
            let t = timing.iter().find(|t| t.iteration == r.iteration);
            IterationReport {
                iteration: r.iteration,
                cost: r.cost,
                cost_tail_bound: r.cost_tail_bound,
                steps: r.steps,
                final_goal_distance: r.final_goal_distance,
                mean_solve_ms: t.map_or(0.0, |t| t.mean_solve_ms),
                max_solve_ms: t.map_or(0.0, |t| t.max_solve_ms),
                total_solve_ms: t.map_or(0.0, |t| t.total_solve_ms),
                train_ms: t.map_or(0.0, |t| t.train_ms),
                delta1_max: r.delta1_max,
                delta2: r.delta2,
                theorem3_slack: r.theorem3_slack,
                cost_trend_ok: r.cost_trend_ok,
                containment_fraction: r.containment_fraction,
                violation_rate: r.violation_rate,
                goal_value: r.goal_value,
                alpha: r.alpha,
                certified_area_cells: r.certified_area_cells,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::DubinsParams;

    fn benchmark() -> TaskSpec {
        TaskSpec::dubins_benchmark(&DubinsParams::default()).unwrap()
    }

    #[test]
    fn maneuver_reaches_goal_safely() {
        let task = benchmark();
        let (states, inputs) = initial_maneuver(&task).unwrap();
        assert_eq!(states.len(), inputs.len() + 1);
        for x in &states {
            assert!(!task.in_unsafe(x));
        }
        let last = states.last().unwrap();
        assert!(goal_distance(&task, last) <= task.goal_tol);
        // The maneuver is deliberately conservative, so it takes clearly
        // longer than the straight-line lower bound of 60 steps.
        assert!(inputs.len() > 65, "maneuver took only {} steps", inputs.len());
    }

    #[test]
    fn maneuver_is_deterministic_and_dataset_compatible() {
        let task = benchmark();
        let (s1, i1) = initial_maneuver(&task).unwrap();
        let (s2, _) = initial_maneuver(&task).unwrap();
        assert_eq!(s1, s2);
        let mut ds = TrajectoryDataset::new();
        ds.push_trajectory(&task, 0, &s1, &i1).unwrap();
    }

    #[test]
    fn behind_points_stay_clear_of_obstacles() {
        let task = benchmark();
        let (states, _) = initial_maneuver(&task).unwrap();
        let pts = behind_points(&task, &states, &[0.25, 0.5, 0.75]);
        assert!(!pts.is_empty());
        for p in &pts {
            for o in &task.obstacles {
                assert!(!o.contains(p[0], p[1]));
            }
            assert!(p[0] >= task.domain_box.lo[0] && p[0] <= task.domain_box.hi[0]);
            assert!(p[1] >= task.domain_box.lo[1] && p[1] <= task.domain_box.hi[1]);
        }
    }
}
