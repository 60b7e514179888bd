//! Trajectory dataset accumulated across control iterations.
//!
//! Each stored step carries the discounted cost-to-go of its tail, computed at
//! insertion time. The recorded tail is completed with a stationary
//! approximation at the final state, `gamma^(T-t) * l(x_T, 0) / (1 - gamma)`,
//! which vanishes when the trajectory ends at the goal.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Input, State, TaskSpec};

/// Tolerance for the consecutive-state dynamics check at insertion.
pub const DYNAMICS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub x: State,
    pub u: Input,
    pub cost_to_go: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub iteration: usize,
    pub steps: Vec<TrajectoryStep>,
}

/// Growing dataset of closed-loop trajectories plus optional synthetic
/// region points that widen the sampling region around the earliest data.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryDataset {
    trajectories: Vec<Trajectory>,
    extra_region_points: Vec<[f64; 2]>,
}

/// One line of the JSONL dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StepRecord {
    iteration: usize,
    t: usize,
    x: Vec<f64>,
    u: Vec<f64>,
    cost_to_go: f64,
}

impl TrajectoryDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn num_states(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn extra_region_points(&self) -> &[[f64; 2]] {
        &self.extra_region_points
    }

    pub fn set_extra_region_points(&mut self, points: Vec<[f64; 2]>) {
        self.extra_region_points = points;
    }

    /// Validates and appends one closed-loop trajectory, recomputing the
    /// discounted cost-to-go tail of every step.
    ///
    /// `states` has one more entry than `inputs`; the final state is stored
    /// with a zero input.
    pub fn push_trajectory(
        &mut self,
        task: &TaskSpec,
        iteration: usize,
        states: &[State],
        inputs: &[Input],
    ) -> Result<()> {
        if states.is_empty() || states.len() != inputs.len() + 1 {
            return Err(Error::Contract(format!(
                "trajectory needs |states| = |inputs| + 1, got {} and {}",
                states.len(),
                inputs.len()
            )));
        }
        if self.trajectories.iter().any(|t| t.iteration == iteration) {
            return Err(Error::Contract(format!(
                "dataset already holds a trajectory for iteration {iteration}"
            )));
        }
        for (t, x) in states.iter().enumerate() {
            if task.in_unsafe(x) {
                return Err(Error::Safety(format!(
                    "trajectory state at t = {t} lies in the unsafe set: {:?}",
                    x.0
                )));
            }
        }
        for (t, u) in inputs.iter().enumerate() {
            let predicted = task.step(&states[t], u)?;
            let err: f64 = predicted
                .as_slice()
                .iter()
                .zip(states[t + 1].as_slice())
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0, f64::max);
            if err > DYNAMICS_TOL {
                return Err(Error::Contract(format!(
                    "states at t = {t} -> {} do not satisfy the dynamics (residual {err:.3e})",
                    t + 1
                )));
            }
        }

        let zero_u = Input(vec![0.0; task.input_dim]);
        let costs: Vec<f64> = inputs
            .iter()
            .enumerate()
            .map(|(t, u)| task.stage_cost(&states[t], u))
            .collect::<Result<_>>()?;
        let terminal_cost = task.stage_cost(states.last().expect("nonempty"), &zero_u)?;

        // Backward accumulation of discounted tails.
        let mut steps = Vec::with_capacity(states.len());
        let mut tail = terminal_cost / (1.0 - task.gamma);
        steps.push(TrajectoryStep {
            x: states[states.len() - 1].clone(),
            u: zero_u,
            cost_to_go: tail,
        });
        for t in (0..inputs.len()).rev() {
            tail = costs[t] + task.gamma * tail;
            steps.push(TrajectoryStep {
                x: states[t].clone(),
                u: inputs[t].clone(),
                cost_to_go: tail,
            });
        }
        steps.reverse();

        self.trajectories.push(Trajectory { iteration, steps });
        self.trajectories.sort_by_key(|t| t.iteration);
        Ok(())
    }

    /// All stored states in iteration order.
    pub fn all_states(&self) -> impl Iterator<Item = &State> {
        self.trajectories.iter().flat_map(|t| t.steps.iter().map(|s| &s.x))
    }

    /// Consecutive `(x_k, u_k, x_{k+1})` tuples within each trajectory.
    pub fn consecutive_pairs(&self) -> impl Iterator<Item = (&State, &Input, &State)> {
        self.trajectories.iter().flat_map(|t| {
            t.steps
                .windows(2)
                .map(|w| (&w[0].x, &w[0].u, &w[1].x))
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.trajectories
            .iter()
            .map(|t| t.steps.len().saturating_sub(1))
            .sum()
    }

    /// `(z, y)` projections of every stored state plus the extra region points.
    pub fn projection_points(&self) -> Vec<[f64; 2]> {
        let mut pts: Vec<[f64; 2]> = self
            .all_states()
            .map(|x| [x.0[0], x.0[1]])
            .collect();
        pts.extend_from_slice(&self.extra_region_points);
        pts
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        for traj in &self.trajectories {
            for (t, step) in traj.steps.iter().enumerate() {
                let record = StepRecord {
                    iteration: traj.iteration,
                    t,
                    x: step.x.0.clone(),
                    u: step.u.0.clone(),
                    cost_to_go: step.cost_to_go,
                };
                serde_json::to_writer(&mut w, &record)
                    .map_err(|e| Error::Parse(format!("dataset serialization: {e}")))?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// Loads a JSONL dataset, regrouping records by iteration and re-checking
    /// the stored-state invariants against the task.
    pub fn load_jsonl(path: &Path, task: &TaskSpec) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut records: Vec<StepRecord> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StepRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Parse(format!("dataset line {}: {e}", lineno + 1))
            })?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::Contract(format!(
                "dataset file {} holds no records",
                path.display()
            )));
        }
        records.sort_by_key(|r| (r.iteration, r.t));

        let mut dataset = TrajectoryDataset::new();
        let mut iter_ids: Vec<usize> = records.iter().map(|r| r.iteration).collect();
        iter_ids.dedup();
        for iteration in iter_ids {
            let group: Vec<&StepRecord> =
                records.iter().filter(|r| r.iteration == iteration).collect();
            for (expect_t, r) in group.iter().enumerate() {
                if r.t != expect_t {
                    return Err(Error::Parse(format!(
                        "iteration {iteration} records are not contiguous at t = {expect_t}"
                    )));
                }
            }
            let states: Vec<State> = group.iter().map(|r| State(r.x.clone())).collect();
            // The final record's stored input is the settled zero input.
            let inputs: Vec<Input> = group[..group.len() - 1]
                .iter()
                .map(|r| Input(r.u.clone()))
                .collect();
            dataset.push_trajectory(task, iteration, &states, &inputs)?;
        }
        Ok(dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::DubinsParams;

    fn benchmark() -> TaskSpec {
        TaskSpec::dubins_benchmark(&DubinsParams::default()).unwrap()
    }

    fn straight_run(task: &TaskSpec, start: [f64; 3], steps: usize) -> (Vec<State>, Vec<Input>) {
        let mut states = vec![State(start.to_vec())];
        let mut inputs = Vec::new();
        for _ in 0..steps {
            let u = Input(vec![1.0, 0.0]);
            let next = task.step(states.last().unwrap(), &u).unwrap();
            states.push(next);
            inputs.push(u);
        }
        (states, inputs)
    }

    #[test]
    fn cost_to_go_matches_direct_sum() {
        let task = benchmark();
        let (states, inputs) = straight_run(&task, [2.0, 2.0, 0.0], 10);
        let mut ds = TrajectoryDataset::new();
        ds.push_trajectory(&task, 0, &states, &inputs).unwrap();

        let traj = &ds.trajectories()[0];
        // Direct evaluation for step 3.
        let mut expect = 0.0;
        let mut w = 1.0;
        for t in 3..inputs.len() {
            expect += w * task.stage_cost(&states[t], &inputs[t]).unwrap();
            w *= task.gamma;
        }
        let zero_u = Input(vec![0.0, 0.0]);
        expect += w * task.stage_cost(states.last().unwrap(), &zero_u).unwrap()
            / (1.0 - task.gamma);
        assert!((traj.steps[3].cost_to_go - expect).abs() < 1e-12);
    }

    #[test]
    fn unsafe_state_rejected() {
        let task = benchmark();
        let mut states = vec![State(vec![0.5, 0.0, 0.0])];
        let u = Input(vec![0.0, 0.0]);
        states.push(task.step(&states[0], &u).unwrap());
        let mut ds = TrajectoryDataset::new();
        let err = ds.push_trajectory(&task, 0, &states, &[u]).unwrap_err();
        assert!(matches!(err, Error::Safety(_)));
    }

    #[test]
    fn dynamics_mismatch_rejected() {
        let task = benchmark();
        let states = vec![State(vec![3.0, 0.0, 0.0]), State(vec![3.5, 0.0, 0.0])];
        let inputs = vec![Input(vec![1.0, 0.0])];
        let mut ds = TrajectoryDataset::new();
        let err = ds.push_trajectory(&task, 0, &states, &inputs).unwrap_err();
        assert!(err.to_string().contains("dynamics"));
    }

    #[test]
    fn jsonl_roundtrip() {
        let task = benchmark();
        let dir = std::env::temp_dir().join("ilmpc-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.jsonl");

        let mut ds = TrajectoryDataset::new();
        let (states, inputs) = straight_run(&task, [2.0, 2.0, 0.0], 8);
        ds.push_trajectory(&task, 0, &states, &inputs).unwrap();
        let (states, inputs) = straight_run(&task, [2.0, -2.0, 0.3], 5);
        ds.push_trajectory(&task, 1, &states, &inputs).unwrap();

        ds.save_jsonl(&path).unwrap();
        let back = TrajectoryDataset::load_jsonl(&path, &task).unwrap();
        assert_eq!(ds.trajectories(), back.trajectories());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn pairs_iterate_within_trajectories_only() {
        let task = benchmark();
        let mut ds = TrajectoryDataset::new();
        let (states, inputs) = straight_run(&task, [2.0, 2.0, 0.0], 4);
        ds.push_trajectory(&task, 0, &states, &inputs).unwrap();
        let (states, inputs) = straight_run(&task, [2.0, -2.0, 0.0], 3);
        ds.push_trajectory(&task, 1, &states, &inputs).unwrap();
        // 5 states -> 4 pairs, 4 states -> 3 pairs.
        assert_eq!(ds.consecutive_pairs().count(), 7);
        assert_eq!(ds.num_pairs(), 7);
    }
}
