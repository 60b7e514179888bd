//! Controlled system description: dynamics, stage cost, constraint sets, and
//! the Dubins-car reach-avoid benchmark.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State vector of the controlled system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State(pub Vec<f64>);

/// Control input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Input(pub Vec<f64>);

impl State {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Input {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Axis-aligned box, one closed interval per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Contract(format!(
                "bounds dimension mismatch: lo has {}, hi has {}",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l < h) {
                return Err(Error::Contract(format!(
                    "bounds dimension {i} is empty: [{l}, {h}]"
                )));
            }
        }
        Ok(Bounds { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (&l, &h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(l, h);
        }
    }
}

/// Circular obstacle in the (z, y) plane. The closed disc is unsafe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center_z: f64,
    pub center_y: f64,
    pub radius: f64,
}

impl Obstacle {
    /// Signed squared clearance: positive outside the disc, negative inside.
    pub fn clearance_sq(&self, z: f64, y: f64) -> f64 {
        let dz = z - self.center_z;
        let dy = y - self.center_y;
        dz * dz + dy * dy - self.radius * self.radius
    }

    pub fn contains(&self, z: f64, y: f64) -> bool {
        self.clearance_sq(z, y) <= 0.0
    }
}

/// Discrete-time dynamics with analytic Jacobians.
///
/// `jac_x` and `jac_u` fill row-major `n x n` and `n x m` matrices of the
/// next-state partial derivatives.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64], next: &mut [f64]);
    fn jac_x(&self, x: &[f64], u: &[f64], jac: &mut [f64]);
    fn jac_u(&self, x: &[f64], u: &[f64], jac: &mut [f64]);
}

/// Nonnegative stage cost with analytic gradients.
pub trait StageCost: Send + Sync {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], u: &[f64], grad: &mut [f64]);
    fn grad_u(&self, x: &[f64], u: &[f64], grad: &mut [f64]);
}

/// Unicycle kinematics integrated with an explicit Euler step.
///
/// State `[z, y, theta]`, input `[v, omega]`. The heading is left unwrapped so
/// the prediction model stays smooth for the NLP solver.
#[derive(Debug, Clone, Copy)]
pub struct DubinsCar {
    pub dt: f64,
}

impl Dynamics for DubinsCar {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        2
    }

    fn step(&self, x: &[f64], u: &[f64], next: &mut [f64]) {
        let (v, w) = (u[0], u[1]);
        next[0] = x[0] + self.dt * v * x[2].cos();
        next[1] = x[1] + self.dt * v * x[2].sin();
        next[2] = x[2] + self.dt * w;
    }

    fn jac_x(&self, x: &[f64], u: &[f64], jac: &mut [f64]) {
        let v = u[0];
        let (s, c) = x[2].sin_cos();
        jac.copy_from_slice(&[
            1.0,
            0.0,
            -self.dt * v * s,
            0.0,
            1.0,
            self.dt * v * c,
            0.0,
            0.0,
            1.0,
        ]);
    }

    fn jac_u(&self, x: &[f64], _u: &[f64], jac: &mut [f64]) {
        let (s, c) = x[2].sin_cos();
        jac.copy_from_slice(&[self.dt * c, 0.0, self.dt * s, 0.0, 0.0, self.dt]);
    }
}

/// `weight * ||x - goal||^2`, independent of the input.
#[derive(Debug, Clone)]
pub struct QuadraticGoalCost {
    pub weight: f64,
    pub goal: Vec<f64>,
}

impl StageCost for QuadraticGoalCost {
    fn cost(&self, x: &[f64], _u: &[f64]) -> f64 {
        self.weight
            * x.iter()
                .zip(&self.goal)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
    }

    fn grad_x(&self, x: &[f64], _u: &[f64], grad: &mut [f64]) {
        for (g, (&a, &b)) in grad.iter_mut().zip(x.iter().zip(&self.goal)) {
            *g = 2.0 * self.weight * (a - b);
        }
    }

    fn grad_u(&self, _x: &[f64], _u: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
    }
}

/// Differential-drive wheel geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelGeometry {
    pub wheel_radius: f64,
    pub wheelbase: f64,
}

impl WheelGeometry {
    pub fn new(wheel_radius: f64, wheelbase: f64) -> Result<Self> {
        if !(wheel_radius > 0.0) || !(wheelbase > 0.0) {
            return Err(Error::Contract(format!(
                "wheel geometry must be positive: R={wheel_radius}, L={wheelbase}"
            )));
        }
        Ok(WheelGeometry {
            wheel_radius,
            wheelbase,
        })
    }
}

/// Converts body velocity `(v, omega)` to `(right, left)` wheel speeds:
/// `v_r = (v - omega L / 2) / R`, `v_l = (v + omega L / 2) / R`.
///
/// This assigns the `-omega` term to the right wheel, which is the opposite of
/// the usual differential-drive convention; `swap_convention` flips the pair.
pub fn wheel_velocities(g: WheelGeometry, v: f64, omega: f64) -> (f64, f64) {
    let half = omega * g.wheelbase / 2.0;
    ((v - half) / g.wheel_radius, (v + half) / g.wheel_radius)
}

pub fn wheel_velocities_with_convention(
    g: WheelGeometry,
    v: f64,
    omega: f64,
    swap_convention: bool,
) -> (f64, f64) {
    let (r, l) = wheel_velocities(g, v, omega);
    if swap_convention {
        (l, r)
    } else {
        (r, l)
    }
}

/// Immutable description of one control task: dynamics, stage cost,
/// constraint sets, goal/start states, and horizon parameters.
#[derive(Clone)]
pub struct TaskSpec {
    pub state_dim: usize,
    pub input_dim: usize,
    dynamics: Arc<dyn Dynamics>,
    cost: Arc<dyn StageCost>,
    pub input_box: Bounds,
    pub domain_box: Bounds,
    pub obstacles: Vec<Obstacle>,
    pub goal: State,
    pub start: State,
    pub gamma: f64,
    pub horizon: usize,
    pub level: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub goal_tol: f64,
}

impl std::fmt::Debug for TaskSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskSpec")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("goal", &self.goal)
            .field("start", &self.start)
            .field("gamma", &self.gamma)
            .field("horizon", &self.horizon)
            .field("level", &self.level)
            .field("dt", &self.dt)
            .field("max_steps", &self.max_steps)
            .finish_non_exhaustive()
    }
}

impl TaskSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        cost: Arc<dyn StageCost>,
        input_box: Bounds,
        domain_box: Bounds,
        obstacles: Vec<Obstacle>,
        goal: State,
        start: State,
        gamma: f64,
        horizon: usize,
        level: f64,
        dt: f64,
        max_steps: usize,
        goal_tol: f64,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        let m = dynamics.input_dim();
        if goal.dim() != n || start.dim() != n {
            return Err(Error::Contract(format!(
                "goal/start dimension must equal state_dim {n}"
            )));
        }
        if input_box.dim() != m || domain_box.dim() != n {
            return Err(Error::Contract(
                "input_box/domain_box dimensions must match input/state dims".into(),
            ));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Contract(format!(
                "discount factor must lie in (0, 1), got {gamma}"
            )));
        }
        if horizon == 0 {
            return Err(Error::Contract("horizon must be at least 1".into()));
        }
        if !(level > 0.0) {
            return Err(Error::Contract(format!(
                "certificate level must be positive, got {level}"
            )));
        }

        let spec = TaskSpec {
            state_dim: n,
            input_dim: m,
            dynamics,
            cost,
            input_box,
            domain_box,
            obstacles,
            goal,
            start,
            gamma,
            horizon,
            level,
            dt,
            max_steps,
            goal_tol,
        };

        // The goal must be an equilibrium of the unforced system.
        let zero_u = vec![0.0; m];
        let mut next = vec![0.0; n];
        spec.dynamics
            .step(spec.goal.as_slice(), &zero_u, &mut next);
        let drift: f64 = next
            .iter()
            .zip(spec.goal.as_slice())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if drift > 1e-9 {
            return Err(Error::Contract(format!(
                "goal state is not an equilibrium: |f(x_F, 0) - x_F| = {drift:.3e}"
            )));
        }
        if spec.in_unsafe(&spec.goal) {
            return Err(Error::Contract("goal state lies in the unsafe set".into()));
        }
        if spec.in_unsafe(&spec.start) {
            return Err(Error::Contract("start state lies in the unsafe set".into()));
        }
        Ok(spec)
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    pub fn cost_fn(&self) -> &dyn StageCost {
        self.cost.as_ref()
    }

    fn check_dims(&self, x: &State, u: Option<&Input>) -> Result<()> {
        if x.dim() != self.state_dim {
            return Err(Error::Contract(format!(
                "state has dimension {}, task expects {}",
                x.dim(),
                self.state_dim
            )));
        }
        if let Some(u) = u {
            if u.dim() != self.input_dim {
                return Err(Error::Contract(format!(
                    "input has dimension {}, task expects {}",
                    u.dim(),
                    self.input_dim
                )));
            }
        }
        Ok(())
    }

    /// One step of the system dynamics.
    pub fn step(&self, x: &State, u: &Input) -> Result<State> {
        self.check_dims(x, Some(u))?;
        let mut next = vec![0.0; self.state_dim];
        self.dynamics.step(x.as_slice(), u.as_slice(), &mut next);
        Ok(State(next))
    }

    /// Stage cost of one (state, input) pair.
    pub fn stage_cost(&self, x: &State, u: &Input) -> Result<f64> {
        self.check_dims(x, Some(u))?;
        Ok(self.cost.cost(x.as_slice(), u.as_slice()))
    }

    /// True iff `x` lies in any obstacle disc (closed) or outside the domain box.
    pub fn in_unsafe(&self, x: &State) -> bool {
        let xs = x.as_slice();
        if !self.domain_box.contains(xs) {
            return true;
        }
        self.obstacles.iter().any(|o| o.contains(xs[0], xs[1]))
    }

    pub fn near_goal(&self, x: &State) -> bool {
        let d: f64 = x
            .as_slice()
            .iter()
            .zip(self.goal.as_slice())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        d <= self.goal_tol
    }

    /// Discounted cumulative cost of a recorded trajectory plus a heuristic
    /// truncation bound `gamma^T * max stage cost / (1 - gamma)` for the
    /// unrecorded tail.
    pub fn discounted_cost(&self, traj: &[(State, Input)]) -> Result<DiscountedCost> {
        if traj.is_empty() {
            return Err(Error::Contract(
                "discounted_cost requires a nonempty trajectory".into(),
            ));
        }
        let mut total = 0.0;
        let mut weight = 1.0;
        let mut max_stage = 0.0f64;
        for (x, u) in traj {
            let l = self.stage_cost(x, u)?;
            total += weight * l;
            weight *= self.gamma;
            max_stage = max_stage.max(l);
        }
        let tail_bound = weight * max_stage / (1.0 - self.gamma);
        Ok(DiscountedCost { total, tail_bound })
    }

    /// Standard nominal benchmark task.
    pub fn dubins_benchmark(params: &DubinsParams) -> Result<Self> {
        params.validate()?;
        let dynamics = Arc::new(DubinsCar { dt: params.dt });
        let cost = Arc::new(QuadraticGoalCost {
            weight: params.cost_weight,
            goal: params.goal.clone(),
        });
        TaskSpec::new(
            dynamics,
            cost,
            Bounds::new(
                vec![params.v_min, params.omega_min],
                vec![params.v_max, params.omega_max],
            )?,
            Bounds::new(params.domain_lo.clone(), params.domain_hi.clone())?,
            params.obstacles.clone(),
            State(params.goal.clone()),
            State(params.start.clone()),
            params.gamma,
            params.horizon,
            params.level,
            params.dt,
            params.max_steps,
            params.goal_tol,
        )
    }
}

/// Discounted trajectory cost and its truncation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountedCost {
    pub total: f64,
    pub tail_bound: f64,
}

/// Parameters of the Dubins benchmark, all exposed through the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DubinsParams {
    pub dt: f64,
    pub cost_weight: f64,
    pub goal: Vec<f64>,
    pub start: Vec<f64>,
    pub v_min: f64,
    pub v_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    pub obstacles: Vec<Obstacle>,
    pub gamma: f64,
    pub horizon: usize,
    pub level: f64,
    pub max_steps: usize,
    pub goal_tol: f64,
}

impl Default for DubinsParams {
    fn default() -> Self {
        DubinsParams {
            dt: 0.1,
            cost_weight: 0.001,
            goal: vec![6.0, 0.0, 0.0],
            start: vec![-6.0, 0.0, 0.0],
            v_min: 0.0,
            v_max: 2.0,
            omega_min: -PI / 2.0,
            omega_max: PI / 2.0,
            domain_lo: vec![-8.0, -8.0, -PI],
            domain_hi: vec![8.0, 8.0, PI],
            obstacles: vec![Obstacle {
                center_z: 0.0,
                center_y: 0.0,
                radius: 1.0,
            }],
            gamma: 0.8,
            horizon: 15,
            level: 7.0,
            max_steps: 120,
            goal_tol: 1e-2,
        }
    }
}

impl DubinsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("task.dt must be > 0, got {}", self.dt)));
        }
        if !(self.cost_weight > 0.0) {
            return Err(Error::Config(format!(
                "task.cost_weight must be > 0, got {}",
                self.cost_weight
            )));
        }
        if self.goal.len() != 3 || self.start.len() != 3 {
            return Err(Error::Config(
                "task.goal and task.start must have 3 entries [z, y, theta]".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "task.gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("task.horizon must be >= 1".into()));
        }
        if !(self.level > 0.0) {
            return Err(Error::Config(format!(
                "task.level must be > 0, got {}",
                self.level
            )));
        }
        if self.max_steps < self.horizon {
            return Err(Error::Config(format!(
                "task.max_steps ({}) must be >= task.horizon ({})",
                self.max_steps, self.horizon
            )));
        }
        if !(self.goal_tol > 0.0) {
            return Err(Error::Config(format!(
                "task.goal_tol must be > 0, got {}",
                self.goal_tol
            )));
        }
        if !(self.v_min < self.v_max) || !(self.omega_min < self.omega_max) {
            return Err(Error::Config(
                "task input bounds must satisfy v_min < v_max and omega_min < omega_max".into(),
            ));
        }
        if self.domain_lo.len() != 3 || self.domain_hi.len() != 3 {
            return Err(Error::Config(
                "task.domain_lo and task.domain_hi must have 3 entries".into(),
            ));
        }
        for o in &self.obstacles {
            if !(o.radius > 0.0) {
                return Err(Error::Config(format!(
                    "task.obstacles radius must be > 0, got {}",
                    o.radius
                )));
            }
        }
        Ok(())
    }
}
