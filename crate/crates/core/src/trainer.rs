//! Certificate training: safe/unsafe region construction from trajectory
//! data via alpha shapes, the joint certificate/policy loss, periodic
//! sampling-based verification with counterexample mining, and the violation
//! bound estimates consumed by the performance-trend check.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alpha::AlphaShape;
use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::nn::{
    Certificate, Mlp, MlpGrads, OptimizerConfig, OptimizerState, Policy, StepStatus,
};
use crate::task::TaskSpec;

/// Positive weights of the training loss plus the level and discount used by
/// its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub level: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            a1: 1.0,
            a2: 1.0,
            a3: 1.0,
            a4: 1.0,
            a5: 1.0,
            level: 7.0,
            gamma: 0.8,
        }
    }
}

impl LossWeights {
    pub fn from_task(task: &TaskSpec) -> Self {
        LossWeights {
            level: task.level,
            gamma: task.gamma,
            ..LossWeights::default()
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        for (name, v) in [
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
            ("a4", self.a4),
            ("a5", self.a5),
            ("level", self.level),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{field}.{name} must be > 0, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "{field}.gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Trainer knobs. `n_iter` optimizer steps with validation every `k_val`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub n_iter: usize,
    pub k_val: usize,
    pub n_test: usize,
    pub n_safe_samples: usize,
    pub n_unsafe_samples: usize,
    pub batch_safe: usize,
    pub batch_unsafe: usize,
    pub batch_pairs: usize,
    pub optimizer: OptimizerConfig,
    pub cert_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    /// Output width of the w network (V = ||w||^2).
    pub d_w: usize,
    /// Added to the fresh w-net output bias so V starts above the level and
    /// training carves the certified region out of an initially unsafe field.
    pub init_output_bias: f64,
    /// Fixed alpha for the region; `None` selects the smallest connected,
    /// covering alpha automatically.
    pub alpha: Option<f64>,
    /// Lower bound applied to the automatic alpha. Razor-thin regions put
    /// level-set walls on both sides of every data point and cannot be
    /// learned to tolerance; the floor keeps the boundary smooth.
    pub alpha_min: f64,
    /// Heading jitter applied to interpolated safe-sample angles (radians).
    pub theta_jitter: f64,
    /// Abort threshold for the running loss.
    pub divergence_cap: f64,
    /// The learning rate decays linearly to this fraction of its initial
    /// value over the run; 1.0 keeps it constant.
    pub final_lr_fraction: f64,
    /// Fraction of the run at the full learning rate before decay begins.
    pub lr_hold_fraction: f64,
    /// Training-time hinge margins. The level hinges train to a band of
    /// `level_margin` on both sides of c; the decrease hinges use a margin of
    /// `min(decrease_margin_scale * l(x), decrease_margin_cap)` which vanishes
    /// at the goal. Margins push the trained equilibrium strictly inside the
    /// conditions so strict verification passes; the reported loss is the
    /// unshifted one.
    pub level_margin: f64,
    pub decrease_margin_scale: f64,
    pub decrease_margin_cap: f64,
    /// Checkpoint selection target for V at the goal. Training keeps the
    /// validation snapshot with the lowest violation rate among those whose
    /// goal value is below this target (SGD's final iterate is noisy; the
    /// best iterate is returned instead).
    pub goal_anchor_target: f64,
    /// Tiny penalty on policy-network preactivations; discourages runaway
    /// saturation without fighting legitimate stopping behavior.
    pub policy_preactivation_reg: f64,
    /// Derivative floor for the policy squash in training gradients.
    /// Saturated channels (a stopped vehicle) keep a usable signal and can
    /// re-open when the certificate shape changes under them.
    pub policy_grad_floor: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            n_iter: 20_000,
            k_val: 100,
            n_test: 10_000,
            n_safe_samples: 2_000,
            n_unsafe_samples: 2_000,
            batch_safe: 384,
            batch_unsafe: 384,
            batch_pairs: 128,
            optimizer: OptimizerConfig::default(),
            cert_hidden: vec![32, 32],
            policy_hidden: vec![16, 16],
            d_w: 1,
            init_output_bias: 3.0,
            alpha: None,
            alpha_min: 0.4,
            theta_jitter: 0.2,
            divergence_cap: 1e8,
            final_lr_fraction: 0.1,
            lr_hold_fraction: 0.5,
            level_margin: 0.5,
            decrease_margin_scale: 0.25,
            decrease_margin_cap: 0.01,
            goal_anchor_target: 5e-4,
            policy_preactivation_reg: 1e-5,
            policy_grad_floor: 0.02,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::Config(format!("{field}.n_iter must be >= 1")));
        }
        if self.k_val == 0 {
            return Err(Error::Config(format!("{field}.k_val must be >= 1")));
        }
        if self.n_test == 0 {
            return Err(Error::Config(format!("{field}.n_test must be >= 1")));
        }
        if self.n_safe_samples == 0 || self.n_unsafe_samples == 0 {
            return Err(Error::Config(format!(
                "{field}.n_safe_samples/n_unsafe_samples must be >= 1"
            )));
        }
        if self.batch_safe == 0 || self.batch_unsafe == 0 || self.batch_pairs == 0 {
            return Err(Error::Config(format!("{field} batch sizes must be >= 1")));
        }
        if self.d_w == 0 {
            return Err(Error::Config(format!("{field}.d_w must be >= 1")));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) {
                return Err(Error::Config(format!("{field}.alpha must be > 0, got {a}")));
            }
        }
        if !(self.alpha_min > 0.0) {
            return Err(Error::Config(format!("{field}.alpha_min must be > 0")));
        }
        if !(self.theta_jitter >= 0.0) {
            return Err(Error::Config(format!("{field}.theta_jitter must be >= 0")));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "{field}.final_lr_fraction must lie in (0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        if !(self.lr_hold_fraction >= 0.0 && self.lr_hold_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "{field}.lr_hold_fraction must lie in [0, 1], got {}",
                self.lr_hold_fraction
            )));
        }
        if !(self.level_margin >= 0.0)
            || !(self.decrease_margin_scale >= 0.0)
            || !(self.decrease_margin_cap >= 0.0)
        {
            return Err(Error::Config(format!("{field} margins must be >= 0")));
        }
        if !(self.goal_anchor_target > 0.0) {
            return Err(Error::Config(format!(
                "{field}.goal_anchor_target must be > 0"
            )));
        }
        if !(self.policy_preactivation_reg >= 0.0) {
            return Err(Error::Config(format!(
                "{field}.policy_preactivation_reg must be >= 0"
            )));
        }
        if !(self.policy_grad_floor >= 0.0 && self.policy_grad_floor < 1.0) {
            return Err(Error::Config(format!(
                "{field}.policy_grad_floor must lie in [0, 1)"
            )));
        }
        self.optimizer.validate(&format!("{field}.optimizer"))
    }

    pub fn cert_layer_sizes(&self, state_dim: usize) -> Vec<usize> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(&self.cert_hidden);
        sizes.push(self.d_w);
        sizes
    }

    pub fn policy_layer_sizes(&self, state_dim: usize, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(&self.policy_hidden);
        sizes.push(input_dim);
        sizes
    }
}

/// Region membership of a state, by the (z, y) projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLabel {
    Safe,
    Unsafe,
}

/// Safe/unsafe sampling regions for one training round.
#[derive(Debug, Clone)]
pub struct SampleRegions {
    pub shape: AlphaShape,
    pub safe_samples: Vec<Vec<f64>>,
    pub unsafe_samples: Vec<Vec<f64>>,
}

impl SampleRegions {
    /// Exact partition: obstacle interiors and the region exterior are
    /// unsafe, the rest of the region interior is safe.
    pub fn classify(&self, task: &TaskSpec, x: &[f64]) -> RegionLabel {
        let p = [x[0], x[1]];
        if task.obstacles.iter().any(|o| o.contains(p[0], p[1])) {
            return RegionLabel::Unsafe;
        }
        if self.shape.contains(p) {
            RegionLabel::Safe
        } else {
            RegionLabel::Unsafe
        }
    }
}

/// Builds the alpha-shape region from the dataset projections and draws the
/// dense safe/unsafe training samples.
pub fn construct_regions(
    data: &TrajectoryDataset,
    task: &TaskSpec,
    cfg: &TrainerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampleRegions> {
    if data.is_empty() {
        return Err(Error::Contract("region construction needs a nonempty dataset".into()));
    }
    let mut pts = data.projection_points();
    // Trajectory segments are often exactly collinear; sub-millimeter jitter
    // keeps the triangulation in general position without moving the region.
    for p in pts.iter_mut() {
        p[0] += rng.gen_range(-1e-4..1e-4);
        p[1] += rng.gen_range(-1e-4..1e-4);
    }
    let shape = match cfg.alpha {
        Some(a) => AlphaShape::new(&pts, a)?,
        None => {
            let auto = AlphaShape::auto(&pts)?;
            if auto.alpha() < cfg.alpha_min {
                AlphaShape::new(&pts, cfg.alpha_min)?
            } else {
                auto
            }
        }
    };

    // Dataset states with headings, for nearest-neighbor theta interpolation.
    let anchors: Vec<[f64; 3]> = data
        .all_states()
        .map(|s| [s.0[0], s.0[1], s.0[2]])
        .collect();
    let nearest_theta = |p: [f64; 2]| -> f64 {
        let mut best = f64::INFINITY;
        let mut theta = 0.0;
        for a in &anchors {
            let d = (a[0] - p[0]) * (a[0] - p[0]) + (a[1] - p[1]) * (a[1] - p[1]);
            if d < best {
                best = d;
                theta = a[2];
            }
        }
        theta
    };

    let mut safe_samples = Vec::with_capacity(cfg.n_safe_samples);
    let mut attempts = 0usize;
    while safe_samples.len() < cfg.n_safe_samples {
        attempts += 1;
        if attempts > 200 * cfg.n_safe_samples {
            return Err(Error::EmptyInterior(
                "could not draw safe samples outside the obstacles".into(),
            ));
        }
        let p = shape.sample_interior(rng);
        if task.obstacles.iter().any(|o| o.contains(p[0], p[1])) {
            continue;
        }
        let theta = nearest_theta(p) + rng.gen_range(-cfg.theta_jitter..=cfg.theta_jitter);
        safe_samples.push(vec![p[0], p[1], theta]);
    }

    // Unsafe samples: half from obstacle interiors, half from the region
    // exterior inside the domain box, headings uniform.
    let (lo, hi) = (&task.domain_box.lo, &task.domain_box.hi);
    let mut unsafe_samples = Vec::with_capacity(cfg.n_unsafe_samples);
    let n_obstacle = if task.obstacles.is_empty() {
        0
    } else {
        cfg.n_unsafe_samples / 2
    };
    for i in 0..n_obstacle {
        let o = &task.obstacles[i % task.obstacles.len()];
        let r = o.radius * rng.gen_range(0.0f64..1.0).sqrt();
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        unsafe_samples.push(vec![
            o.center_z + r * phi.cos(),
            o.center_y + r * phi.sin(),
            rng.gen_range(lo[2]..hi[2]),
        ]);
    }
    let mut attempts = 0usize;
    while unsafe_samples.len() < cfg.n_unsafe_samples {
        attempts += 1;
        if attempts > 200 * cfg.n_unsafe_samples {
            return Err(Error::EmptyInterior(
                "the region exterior is empty inside the domain box".into(),
            ));
        }
        let p = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        if shape.contains(p) {
            continue;
        }
        unsafe_samples.push(vec![p[0], p[1], rng.gen_range(lo[2]..hi[2])]);
    }

    Ok(SampleRegions {
        shape,
        safe_samples,
        unsafe_samples,
    })
}

/// One data tuple `(x_k, u_k, x_{k+1})` flattened out of the dataset.
pub type DataTuple = (Vec<f64>, Vec<f64>, Vec<f64>);

pub fn collect_pairs(data: &TrajectoryDataset) -> Vec<DataTuple> {
    data.consecutive_pairs()
        .map(|(x, u, xn)| (x.0.clone(), u.0.clone(), xn.0.clone()))
        .collect()
}

/// Training-time loss shaping: hinge margins plus a derivative floor for
/// the policy squash (all zero for the exact published loss and gradient).
#[derive(Debug, Clone, Copy, Default)]
pub struct HingeMargins {
    pub level: f64,
    pub decrease_scale: f64,
    pub decrease_cap: f64,
    pub policy_grad_floor: f64,
}

impl HingeMargins {
    pub const ZERO: HingeMargins = HingeMargins {
        level: 0.0,
        decrease_scale: 0.0,
        decrease_cap: 0.0,
        policy_grad_floor: 0.0,
    };

    fn from_config(cfg: &TrainerConfig) -> Self {
        HingeMargins {
            level: cfg.level_margin,
            decrease_scale: cfg.decrease_margin_scale,
            decrease_cap: cfg.decrease_margin_cap,
            policy_grad_floor: cfg.policy_grad_floor,
        }
    }

    fn decrease(&self, stage_cost: f64) -> f64 {
        (self.decrease_scale * stage_cost).min(self.decrease_cap)
    }
}

/// Loss value with per-term breakdown.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub goal_anchor: f64,
    pub safe_level: f64,
    pub unsafe_level: f64,
    pub decrease: f64,
    pub discounted_decrease: f64,
    pub data_consistency: f64,
}

/// Certificate/policy loss over explicit sample slices, with exact gradients
/// accumulated into `g_theta` / `g_phi`.
///
/// Terms: `V(x_F)^2`, hinge `[V - c]+` on safe samples, `[c - V]+` on unsafe
/// samples, `[V(f(x, pi(x))) - V(x)]+` and
/// `[gamma V(f(x, pi(x))) - V(x) + l(x, pi(x))]+` on safe samples, and the
/// mean of `[-gamma V(x_k1) + V(x_k) - l(x_k, u_k)]+` over data tuples.
#[allow(clippy::too_many_arguments)]
pub fn clbf_loss_batch(
    cert: &Certificate,
    policy: &Policy,
    task: &TaskSpec,
    weights: &LossWeights,
    margins: &HingeMargins,
    safe: &[Vec<f64>],
    unsafe_: &[Vec<f64>],
    pairs: &[DataTuple],
    g_theta: &mut MlpGrads,
    g_phi: &mut MlpGrads,
) -> Result<LossBreakdown> {
    let n = task.state_dim;
    let m = task.input_dim;
    let dynamics = task.dynamics();
    let cost = task.cost_fn();
    let (c, gamma) = (weights.level, weights.gamma);
    let mut breakdown = LossBreakdown::default();

    let check = |value: f64, term: &str, idx: usize| -> Result<f64> {
        if !value.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss in term '{term}' at sample {idx}"
            )));
        }
        Ok(value)
    };

    // Goal anchor V(x_F)^2.
    let goal_cache = cert.forward_cached(task.goal.as_slice())?;
    let v_goal = Certificate::value_from_cache(&goal_cache);
    breakdown.goal_anchor = check(v_goal * v_goal, "goal_anchor", 0)?;
    cert.backward_value(&goal_cache, 2.0 * v_goal, g_theta)?;

    let mut jac_u = vec![0.0; n * m];
    let mut grad_u_cost = vec![0.0; m];

    if !safe.is_empty() {
        let inv = 1.0 / safe.len() as f64;
        for (idx, x) in safe.iter().enumerate() {
            let cache_x = cert.forward_cached(x)?;
            let v_x = Certificate::value_from_cache(&cache_x);
            let (u, pol_cache) = policy.action_cached(x)?;
            let mut next = vec![0.0; n];
            dynamics.step(x, &u, &mut next);
            let cache_next = cert.forward_cached(&next)?;
            let v_next = Certificate::value_from_cache(&cache_next);
            let l_pol = cost.cost(x, &u);

            let m_dec = margins.decrease(l_pol);
            let o1 = v_x - (c - margins.level);
            let o3 = v_next - v_x + m_dec;
            let o4 = gamma * v_next - v_x + l_pol + m_dec;
            breakdown.safe_level += check(weights.a1 * inv * o1.max(0.0), "safe_level", idx)?;
            breakdown.decrease += check(weights.a3 * inv * o3.max(0.0), "decrease", idx)?;
            breakdown.discounted_decrease +=
                check(weights.a4 * inv * o4.max(0.0), "discounted_decrease", idx)?;

            let mut coeff_x = 0.0;
            let mut coeff_next = 0.0;
            let mut coeff_l = 0.0;
            if o1 > 0.0 {
                coeff_x += weights.a1 * inv;
            }
            if o3 > 0.0 {
                coeff_next += weights.a3 * inv;
                coeff_x -= weights.a3 * inv;
            }
            if o4 > 0.0 {
                coeff_next += gamma * weights.a4 * inv;
                coeff_x -= weights.a4 * inv;
                coeff_l += weights.a4 * inv;
            }

            if coeff_x != 0.0 {
                cert.backward_value(&cache_x, coeff_x, g_theta)?;
            }
            if coeff_next != 0.0 || coeff_l != 0.0 {
                // Policy gradient flows through V(f(x, u)) and l(x, u).
                let mut du = vec![0.0; m];
                if coeff_next != 0.0 {
                    let (_, dv_next) = cert.backward_value(&cache_next, coeff_next, g_theta)?;
                    dynamics.jac_u(x, &u, &mut jac_u);
                    for j in 0..m {
                        for i in 0..n {
                            du[j] += jac_u[i * m + j] * dv_next[i];
                        }
                    }
                }
                if coeff_l != 0.0 {
                    cost.grad_u(x, &u, &mut grad_u_cost);
                    for j in 0..m {
                        du[j] += coeff_l * grad_u_cost[j];
                    }
                }
                policy.backward_action_floored(&pol_cache, &du, g_phi, margins.policy_grad_floor)?;
            }
        }
    }

    if !unsafe_.is_empty() {
        let inv = 1.0 / unsafe_.len() as f64;
        for (idx, x) in unsafe_.iter().enumerate() {
            let cache_x = cert.forward_cached(x)?;
            let v_x = Certificate::value_from_cache(&cache_x);
            let o2 = c + margins.level - v_x;
            breakdown.unsafe_level += check(weights.a2 * inv * o2.max(0.0), "unsafe_level", idx)?;
            if o2 > 0.0 {
                cert.backward_value(&cache_x, -weights.a2 * inv, g_theta)?;
            }
        }
    }

    if !pairs.is_empty() {
        let inv = 1.0 / pairs.len() as f64;
        for (idx, (x, u, xn)) in pairs.iter().enumerate() {
            let cache_x = cert.forward_cached(x)?;
            let cache_n = cert.forward_cached(xn)?;
            let v_x = Certificate::value_from_cache(&cache_x);
            let v_n = Certificate::value_from_cache(&cache_n);
            let l = cost.cost(x, u);
            let o5 = -gamma * v_n + v_x - l + margins.decrease(l);
            breakdown.data_consistency +=
                check(weights.a5 * inv * o5.max(0.0), "data_consistency", idx)?;
            if o5 > 0.0 {
                cert.backward_value(&cache_x, weights.a5 * inv, g_theta)?;
                cert.backward_value(&cache_n, -gamma * weights.a5 * inv, g_theta)?;
            }
        }
    }

    breakdown.total = breakdown.goal_anchor
        + breakdown.safe_level
        + breakdown.unsafe_level
        + breakdown.decrease
        + breakdown.discounted_decrease
        + breakdown.data_consistency;
    Ok(breakdown)
}

/// Full-batch loss over the constructed regions and the whole dataset.
pub fn clbf_loss(
    cert: &Certificate,
    policy: &Policy,
    regions: &SampleRegions,
    data: &TrajectoryDataset,
    weights: &LossWeights,
    task: &TaskSpec,
) -> Result<(LossBreakdown, MlpGrads, MlpGrads)> {
    if regions.safe_samples.is_empty() && regions.unsafe_samples.is_empty() {
        return Err(Error::Contract("regions hold no samples".into()));
    }
    let pairs = collect_pairs(data);
    let mut g_theta = MlpGrads::zeros_like(&cert.w_net);
    let mut g_phi = MlpGrads::zeros_like(&policy.net);
    let breakdown = clbf_loss_batch(
        cert,
        policy,
        task,
        weights,
        &HingeMargins::ZERO,
        &regions.safe_samples,
        &regions.unsafe_samples,
        &pairs,
        &mut g_theta,
        &mut g_phi,
    )?;
    Ok((breakdown, g_theta, g_phi))
}

/// Per-condition verification statistics.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ConditionStats {
    pub checked: usize,
    pub violations: usize,
    pub worst_residual: f64,
}

impl ConditionStats {
    fn record(&mut self, residual: f64) {
        self.checked += 1;
        if residual > 0.0 {
            self.violations += 1;
            if residual > self.worst_residual {
                self.worst_residual = residual;
            }
        }
    }

    pub fn rate(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violations as f64 / self.checked as f64
        }
    }
}

/// Verification outcome over fresh uniform samples plus the dataset tuples.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub n_pairs: usize,
    /// Fraction of (samples + pairs) violating any applicable condition.
    pub violation_rate: f64,
    pub goal_value: f64,
    pub positivity: ConditionStats,
    pub safe_level: ConditionStats,
    pub unsafe_level: ConditionStats,
    pub decrease: ConditionStats,
    pub discounted_decrease: ConditionStats,
    pub data_consistency: ConditionStats,
}

/// Uniform sample over the domain box.
pub fn sample_domain<R: Rng>(task: &TaskSpec, rng: &mut R) -> Vec<f64> {
    task.domain_box
        .lo
        .iter()
        .zip(&task.domain_box.hi)
        .map(|(&l, &h)| rng.gen_range(l..h))
        .collect()
}

/// Evaluates conditions on the given samples; optionally collects violating
/// samples labeled by region membership for retraining.
#[allow(clippy::too_many_arguments)]
fn evaluate_conditions(
    cert: &Certificate,
    policy: &Policy,
    task: &TaskSpec,
    regions: &SampleRegions,
    samples: &[Vec<f64>],
    pairs: &[DataTuple],
    mut counterexamples: Option<&mut Vec<(Vec<f64>, RegionLabel)>>,
) -> Result<ValidationReport> {
    let n = task.state_dim;
    let dynamics = task.dynamics();
    let cost = task.cost_fn();
    let (c, gamma) = (task.level, task.gamma);
    let mut report = ValidationReport {
        n_samples: samples.len(),
        n_pairs: pairs.len(),
        goal_value: cert.value(task.goal.as_slice())?,
        ..ValidationReport::default()
    };
    let mut violating_units = 0usize;

    for x in samples {
        let label = regions.classify(task, x);
        let v = cert.value(x)?;
        let mut violated = false;

        // Positivity away from the goal (holds by construction; tracked).
        let at_goal = x
            .iter()
            .zip(task.goal.as_slice())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            <= 1e-9;
        if !at_goal {
            let residual = if v <= 0.0 { 1e-12 } else { 0.0 };
            report.positivity.record(residual);
            violated |= residual > 0.0;
        }

        match label {
            RegionLabel::Safe => {
                report.safe_level.record(v - c);
                violated |= v - c > 0.0;

                let (u, _) = policy.action_cached(x)?;
                let mut next = vec![0.0; n];
                dynamics.step(x, &u, &mut next);
                let v_next = cert.value(&next)?;
                let l = cost.cost(x, &u);

                report.decrease.record(v_next - v);
                violated |= v_next - v > 0.0;
                let r = gamma * v_next - v + l;
                report.discounted_decrease.record(r);
                violated |= r > 0.0;
            }
            RegionLabel::Unsafe => {
                // Violation when V fails to exceed the level.
                report.unsafe_level.record(c - v);
                violated |= c - v > 0.0;
            }
        }

        if violated {
            violating_units += 1;
            if let Some(ces) = counterexamples.as_deref_mut() {
                ces.push((x.clone(), label));
            }
        }
    }

    for (x, u, xn) in pairs {
        let v_x = cert.value(x)?;
        let v_n = cert.value(xn)?;
        let l = cost.cost(x, u);
        let residual = -gamma * v_n + v_x - l;
        report.data_consistency.record(residual);
        if residual > 0.0 {
            violating_units += 1;
        }
    }

    let total_units = report.n_samples + report.n_pairs;
    report.violation_rate = if total_units == 0 {
        0.0
    } else {
        violating_units as f64 / total_units as f64
    };
    Ok(report)
}

/// Samples `n_test` fresh states, returns the violating ones labeled for
/// routing into the safe/unsafe sample sets, plus the full report. The data
/// tuples only contribute to the report; they are never mined.
pub fn validate_and_mine(
    cert: &Certificate,
    policy: &Policy,
    task: &TaskSpec,
    regions: &SampleRegions,
    pairs: &[DataTuple],
    n_test: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<(Vec<f64>, RegionLabel)>, ValidationReport)> {
    let samples: Vec<Vec<f64>> = (0..n_test).map(|_| sample_domain(task, rng)).collect();
    let mut ces = Vec::new();
    let report =
        evaluate_conditions(cert, policy, task, regions, &samples, pairs, Some(&mut ces))?;
    Ok((ces, report))
}

/// Full condition report over fresh samples and the dataset tuples.
pub fn verify_certificate(
    cert: &Certificate,
    policy: &Policy,
    task: &TaskSpec,
    regions: &SampleRegions,
    data: &TrajectoryDataset,
    n_test: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ValidationReport> {
    let samples: Vec<Vec<f64>> = (0..n_test).map(|_| sample_domain(task, rng)).collect();
    let pairs = collect_pairs(data);
    evaluate_conditions(cert, policy, task, regions, &samples, &pairs, None)
}

/// Measured violation bounds of the decrease conditions.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ViolationBounds {
    /// Max over validation samples of `gamma V(f(x, pi(x))) - V(x) + l`,
    /// clipped below at zero.
    pub delta1_max: f64,
    /// Max over dataset tuples of the negated data-consistency residual,
    /// clipped below at zero.
    pub delta2: f64,
    pub n_validation: usize,
    pub n_pairs: usize,
}

pub fn estimate_violation_bounds(
    cert: &Certificate,
    policy: &Policy,
    data: &TrajectoryDataset,
    task: &TaskSpec,
    n_test: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ViolationBounds> {
    let n = task.state_dim;
    let dynamics = task.dynamics();
    let cost = task.cost_fn();
    let mut delta1_max = 0.0f64;
    for _ in 0..n_test {
        let x = sample_domain(task, rng);
        let v = cert.value(&x)?;
        let u = policy.action(&x)?;
        let mut next = vec![0.0; n];
        dynamics.step(&x, &u, &mut next);
        let v_next = cert.value(&next)?;
        delta1_max = delta1_max.max(task.gamma * v_next - v + cost.cost(&x, &u));
    }
    let mut delta2 = 0.0f64;
    let mut n_pairs = 0usize;
    for (x, u, xn) in data.consecutive_pairs() {
        let v_x = cert.value(x.as_slice())?;
        let v_n = cert.value(xn.as_slice())?;
        let l = task.stage_cost(x, u)?;
        delta2 = delta2.max(v_x - task.gamma * v_n - l);
        n_pairs += 1;
    }
    Ok(ViolationBounds {
        delta1_max,
        delta2,
        n_validation: n_test,
        n_pairs,
    })
}

/// Sampled containment check between consecutive certificates: fraction of
/// samples certified by the previous certificate but not by the new one.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub checked: usize,
    pub violations: usize,
    pub fraction: f64,
}

pub fn check_containment(
    cert_prev: &Certificate,
    cert_new: &Certificate,
    level: f64,
    samples: &[Vec<f64>],
) -> Result<ContainmentReport> {
    if cert_prev.state_dim() != cert_new.state_dim() {
        return Err(Error::Contract(
            "certificates have different state dimensions".into(),
        ));
    }
    let mut violations = 0usize;
    for x in samples {
        if cert_prev.value(x)? <= level && cert_new.value(x)? > level {
            violations += 1;
        }
    }
    let checked = samples.len();
    Ok(ContainmentReport {
        checked,
        violations,
        fraction: if checked == 0 {
            0.0
        } else {
            violations as f64 / checked as f64
        },
    })
}

/// Summary of one training round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub rejected_steps: usize,
    pub mined_safe: usize,
    pub mined_unsafe: usize,
    pub alpha: f64,
    pub final_loss: f64,
    pub final_report: ValidationReport,
}

/// Trained certificate/policy pair plus diagnostics.
pub struct TrainOutcome {
    pub certificate: Certificate,
    pub policy: Policy,
    pub bounds: ViolationBounds,
    pub summary: TrainSummary,
}

/// Runs the full training round: region construction, `n_iter` minibatch
/// optimizer steps with validation and counterexample mining every `k_val`
/// steps, and final violation-bound estimation. Warm-starts from `previous`
/// when given.
pub fn train_certificate(
    data: &TrajectoryDataset,
    task: &TaskSpec,
    cfg: &TrainerConfig,
    weights: &LossWeights,
    previous: Option<(&Certificate, &Policy)>,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    cfg.validate("trainer")?;
    weights.validate("loss_weights")?;
    if data.is_empty() {
        return Err(Error::Contract("training needs a nonempty dataset".into()));
    }

    let mut regions = construct_regions(data, task, cfg, rng)?;
    let pairs = collect_pairs(data);

    let (mut cert, mut policy) = match previous {
        Some((c, p)) => (c.clone(), p.clone()),
        None => {
            let mut w_net = Mlp::init(&cfg.cert_layer_sizes(task.state_dim), rng)?;
            for b in w_net.biases.last_mut().expect("has layers") {
                *b += cfg.init_output_bias;
            }
            let cert = Certificate::new(w_net, task.level)?;
            let policy = Policy::new(
                Mlp::init(&cfg.policy_layer_sizes(task.state_dim, task.input_dim), rng)?,
                task.input_box.clone(),
            )?;
            (cert, policy)
        }
    };

    let margins = HingeMargins::from_config(cfg);
    let mut opt_theta = OptimizerState::new(cfg.optimizer, &cert.w_net);
    let mut opt_phi = OptimizerState::new(cfg.optimizer, &policy.net);
    let mut g_theta = MlpGrads::zeros_like(&cert.w_net);
    let mut g_phi = MlpGrads::zeros_like(&policy.net);

    let mut rejected_steps = 0usize;
    let mut mined_safe = 0usize;
    let mut mined_unsafe = 0usize;
    let mut last_loss = f64::NAN;
    // Best validation snapshot: feasibility of the goal anchor first, then
    // the lowest violation rate.
    let mut best: Option<(Certificate, Policy, ValidationReport)> = None;
    let consider = |cert: &Certificate,
                        policy: &Policy,
                        report: ValidationReport,
                        best: &mut Option<(Certificate, Policy, ValidationReport)>| {
        let better = match best.as_ref() {
            None => true,
            Some((_, _, cur)) => {
                let new_ok = report.goal_value <= cfg.goal_anchor_target;
                let cur_ok = cur.goal_value <= cfg.goal_anchor_target;
                match (new_ok, cur_ok) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => report.violation_rate < cur.violation_rate,
                    (false, false) => {
                        (report.goal_value, report.violation_rate)
                            < (cur.goal_value, cur.violation_rate)
                    }
                }
            }
        };
        if better {
            *best = Some((cert.clone(), policy.clone(), report));
        }
    };

    // Minibatches mix uniform pool draws with recent counterexamples, which
    // would otherwise be diluted by the growing pools.
    let sample_batch = |pool: &[Vec<f64>],
                        recent: &std::collections::VecDeque<Vec<f64>>,
                        size: usize,
                        rng: &mut ChaCha8Rng|
     -> Vec<Vec<f64>> {
        if pool.is_empty() {
            return Vec::new();
        }
        let from_recent = if recent.is_empty() { 0 } else { size / 3 };
        let mut batch: Vec<Vec<f64>> = (0..size - from_recent)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect();
        for _ in 0..from_recent {
            batch.push(recent[rng.gen_range(0..recent.len())].clone());
        }
        batch
    };
    let mut recent_safe: std::collections::VecDeque<Vec<f64>> = std::collections::VecDeque::new();
    let mut recent_unsafe: std::collections::VecDeque<Vec<f64>> =
        std::collections::VecDeque::new();
    let recent_cap = 8 * cfg.n_test.max(1);

    for k in 1..=cfg.n_iter {
        let batch_safe = sample_batch(&regions.safe_samples, &recent_safe, cfg.batch_safe, rng);
        let batch_unsafe =
            sample_batch(&regions.unsafe_samples, &recent_unsafe, cfg.batch_unsafe, rng);
        let batch_pairs: Vec<DataTuple> = if pairs.is_empty() {
            Vec::new()
        } else {
            (0..cfg.batch_pairs.min(pairs.len()))
                .map(|_| pairs[rng.gen_range(0..pairs.len())].clone())
                .collect()
        };

        g_theta.zero();
        g_phi.zero();
        let breakdown = clbf_loss_batch(
            &cert,
            &policy,
            task,
            weights,
            &margins,
            &batch_safe,
            &batch_unsafe,
            &batch_pairs,
            &mut g_theta,
            &mut g_phi,
        )?;
        last_loss = breakdown.total;
        if !last_loss.is_finite() || last_loss > cfg.divergence_cap {
            return Err(Error::Training(format!(
                "loss diverged at step {k}: {last_loss:.3e}"
            )));
        }

        if cfg.policy_preactivation_reg > 0.0 && !batch_safe.is_empty() {
            // Penalize |preactivation| beyond the live tanh zone (|o| > 2);
            // moderate saturation (stopping at the goal) stays cheap.
            let scale = 2.0 * cfg.policy_preactivation_reg / batch_safe.len() as f64;
            for x in &batch_safe {
                let cache = policy.net.forward_cached(x)?;
                let upstream: Vec<f64> = cache
                    .output()
                    .iter()
                    .map(|&o| scale * o.signum() * (o.abs() - 2.0).max(0.0))
                    .collect();
                policy.net.backward(&cache, &upstream, &mut g_phi)?;
            }
        }

        let progress = (k - 1) as f64 / cfg.n_iter.max(1) as f64;
        let lr_scale = if progress <= cfg.lr_hold_fraction {
            1.0
        } else {
            let tail = (progress - cfg.lr_hold_fraction) / (1.0 - cfg.lr_hold_fraction).max(1e-9);
            1.0 - (1.0 - cfg.final_lr_fraction) * tail
        };
        if opt_theta.apply_scaled(&mut cert.w_net, &g_theta, lr_scale)
            == StepStatus::RejectedNonFinite
        {
            rejected_steps += 1;
        }
        if opt_phi.apply_scaled(&mut policy.net, &g_phi, lr_scale)
            == StepStatus::RejectedNonFinite
        {
            rejected_steps += 1;
        }

        if k % cfg.k_val == 0 {
            let (ces, report) =
                validate_and_mine(&cert, &policy, task, &regions, &pairs, cfg.n_test, rng)?;
            for (x, label) in ces {
                match label {
                    RegionLabel::Safe => {
                        regions.safe_samples.push(x.clone());
                        recent_safe.push_back(x);
                        mined_safe += 1;
                    }
                    RegionLabel::Unsafe => {
                        regions.unsafe_samples.push(x.clone());
                        recent_unsafe.push_back(x);
                        mined_unsafe += 1;
                    }
                }
            }
            while recent_safe.len() > recent_cap {
                recent_safe.pop_front();
            }
            while recent_unsafe.len() > recent_cap {
                recent_unsafe.pop_front();
            }
            consider(&cert, &policy, report, &mut best);
        }
    }

    // The final iterate competes with the stored snapshots.
    let (ces_final, final_candidate_report) =
        validate_and_mine(&cert, &policy, task, &regions, &pairs, cfg.n_test, rng)?;
    drop(ces_final);
    consider(&cert, &policy, final_candidate_report, &mut best);
    let (cert, policy, _) = best.expect("at least one snapshot considered");

    let final_report =
        verify_certificate(&cert, &policy, task, &regions, data, cfg.n_test, rng)?;
    let bounds = estimate_violation_bounds(&cert, &policy, data, task, cfg.n_test, rng)?;

    Ok(TrainOutcome {
        certificate: cert,
        policy,
        bounds,
        summary: TrainSummary {
            steps: cfg.n_iter,
            rejected_steps,
            mined_safe,
            mined_unsafe,
            alpha: regions.shape.alpha(),
            final_loss: last_loss,
            final_report,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{DubinsParams, Input, State};
    use rand::SeedableRng;

    fn benchmark() -> TaskSpec {
        TaskSpec::dubins_benchmark(&DubinsParams::default()).unwrap()
    }

    fn zero_cert(level: f64) -> Certificate {
        Certificate::new(Mlp::zeros(&[3, 4, 1]).unwrap(), level).unwrap()
    }

    fn midpoint_policy(task: &TaskSpec) -> Policy {
        Policy::new(Mlp::zeros(&[3, 4, 2]).unwrap(), task.input_box.clone()).unwrap()
    }

    fn arc_dataset(task: &TaskSpec) -> TrajectoryDataset {
        // S-curve above the obstacle from the start side to the goal side.
        let mut states = vec![State(vec![-6.0, 2.0, 0.0])];
        let mut inputs = Vec::new();
        for t in 0..60 {
            let omega = if t < 15 {
                0.3
            } else if t < 45 {
                -0.3
            } else {
                0.3
            };
            let u = Input(vec![2.0, omega]);
            let next = task.step(states.last().unwrap(), &u).unwrap();
            states.push(next);
            inputs.push(u);
        }
        let mut ds = TrajectoryDataset::new();
        ds.push_trajectory(task, 0, &states, &inputs).unwrap();
        ds
    }

    #[test]
    fn zero_certificate_unsafe_only_loss_is_level() {
        let task = benchmark();
        let cert = zero_cert(task.level);
        let policy = midpoint_policy(&task);
        let weights = LossWeights::from_task(&task);
        let unsafe_samples = vec![vec![0.0, 0.0, 0.0], vec![0.3, 0.2, 1.0], vec![7.5, 7.5, -2.0]];
        let mut gt = MlpGrads::zeros_like(&cert.w_net);
        let mut gp = MlpGrads::zeros_like(&policy.net);
        let breakdown = clbf_loss_batch(
            &cert,
            &policy,
            &task,
            &weights,
            &HingeMargins::ZERO,
            &[],
            &unsafe_samples,
            &[],
            &mut gt,
            &mut gp,
        )
        .unwrap();
        assert!((breakdown.total - task.level).abs() < 1e-12);
    }

    #[test]
    fn satisfied_conditions_leave_only_goal_anchor() {
        let task = benchmark();
        // V = (z - 6)^2 + (y - 0.01)^2 via a linear 3 -> 2 network.
        let mut net = Mlp::zeros(&[3, 2]).unwrap();
        net.weights[0] = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        net.biases[0] = vec![-6.0, -0.01];
        let cert = Certificate::new(net, task.level).unwrap();
        let policy = midpoint_policy(&task); // u = [1, 0]
        let weights = LossWeights::from_task(&task);

        // Safe samples ahead of the goal on the centerline: V decreases with
        // margin under u = [1, 0].
        let safe: Vec<Vec<f64>> = (0..5).map(|i| vec![5.0 + 0.1 * i as f64, 0.0, 0.0]).collect();
        // Unsafe samples far away: V > c with margin.
        let unsafe_samples = vec![vec![-6.0, 0.0, 0.0], vec![0.0, 5.0, 1.0]];
        // A recorded pair moving away from the goal satisfies the data hinge.
        let pair: DataTuple = (vec![5.0, 0.0, std::f64::consts::PI], vec![2.0, 0.0], {
            let next = task
                .step(
                    &State(vec![5.0, 0.0, std::f64::consts::PI]),
                    &Input(vec![2.0, 0.0]),
                )
                .unwrap();
            next.0
        });

        let mut gt = MlpGrads::zeros_like(&cert.w_net);
        let mut gp = MlpGrads::zeros_like(&policy.net);
        let breakdown = clbf_loss_batch(
            &cert,
            &policy,
            &task,
            &weights,
            &HingeMargins::ZERO,
            &safe,
            &unsafe_samples,
            &[pair],
            &mut gt,
            &mut gp,
        )
        .unwrap();
        let v_goal = cert.value(task.goal.as_slice()).unwrap();
        assert!(breakdown.safe_level == 0.0);
        assert!(breakdown.unsafe_level == 0.0);
        assert!(breakdown.decrease == 0.0);
        assert!(breakdown.discounted_decrease == 0.0);
        assert!(breakdown.data_consistency == 0.0);
        assert!((breakdown.total - v_goal * v_goal).abs() < 1e-15);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let task = benchmark();
        let weights = LossWeights::from_task(&task);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut checked = 0;
        'outer: while checked < 3 {
            let mut w_net = Mlp::init(&[3, 8, 8, 1], &mut rng).unwrap();
            for b in w_net.biases.last_mut().unwrap() {
                *b += 1.5;
            }
            let cert = Certificate::new(w_net, task.level).unwrap();
            let policy = Policy::new(
                Mlp::init(&[3, 8, 8, 2], &mut rng).unwrap(),
                task.input_box.clone(),
            )
            .unwrap();
            let safe: Vec<Vec<f64>> = (0..4).map(|_| sample_domain(&task, &mut rng)).collect();
            let unsafe_samples: Vec<Vec<f64>> =
                (0..4).map(|_| sample_domain(&task, &mut rng)).collect();
            let pairs: Vec<DataTuple> = (0..2)
                .map(|_| {
                    let x = sample_domain(&task, &mut rng);
                    let u = vec![rng.gen_range(0.0..2.0), rng.gen_range(-1.5..1.5)];
                    let next = task.step(&State(x.clone()), &Input(u.clone())).unwrap();
                    (x, u, next.0)
                })
                .collect();

            // Keep the check away from hinge kinks.
            let args_clear = |cert: &Certificate, policy: &Policy| -> bool {
                let c = task.level;
                for x in safe.iter() {
                    let v = cert.value(x).unwrap();
                    let u = policy.action(x).unwrap();
                    let next = task.step(&State(x.clone()), &Input(u.clone())).unwrap();
                    let vn = cert.value(next.as_slice()).unwrap();
                    let l = task.stage_cost(&State(x.clone()), &Input(u)).unwrap();
                    if (v - c).abs() < 1e-3
                        || (vn - v).abs() < 1e-3
                        || (task.gamma * vn - v + l).abs() < 1e-3
                    {
                        return false;
                    }
                }
                for x in unsafe_samples.iter() {
                    if (task.level - cert.value(x).unwrap()).abs() < 1e-3 {
                        return false;
                    }
                }
                for (x, u, xn) in pairs.iter() {
                    let v = cert.value(x).unwrap();
                    let vn = cert.value(xn).unwrap();
                    let l = task
                        .stage_cost(&State(x.clone()), &Input(u.clone()))
                        .unwrap();
                    if (-task.gamma * vn + v - l).abs() < 1e-3 {
                        return false;
                    }
                }
                true
            };
            if !args_clear(&cert, &policy) {
                continue 'outer;
            }

            let mut gt = MlpGrads::zeros_like(&cert.w_net);
            let mut gp = MlpGrads::zeros_like(&policy.net);
            let base = clbf_loss_batch(
                &cert, &policy, &task, &weights, &HingeMargins::ZERO, &safe, &unsafe_samples,
                &pairs, &mut gt, &mut gp,
            )
            .unwrap();
            assert!(base.total >= 0.0);

            let eval = |cert: &Certificate, policy: &Policy| -> f64 {
                let mut a = MlpGrads::zeros_like(&cert.w_net);
                let mut b = MlpGrads::zeros_like(&policy.net);
                clbf_loss_batch(
                    cert, policy, &task, &weights, &HingeMargins::ZERO, &safe, &unsafe_samples,
                    &pairs, &mut a, &mut b,
                )
                .unwrap()
                .total
            };

            let h = 1e-5;
            let mut cert_mut = cert.clone();
            for l in 0..cert_mut.w_net.num_layers() {
                for i in (0..cert_mut.w_net.weights[l].len()).step_by(7) {
                    let orig = cert_mut.w_net.weights[l][i];
                    cert_mut.w_net.weights[l][i] = orig + h;
                    let fp = eval(&cert_mut, &policy);
                    cert_mut.w_net.weights[l][i] = orig - h;
                    let fm = eval(&cert_mut, &policy);
                    cert_mut.w_net.weights[l][i] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    let g = gt.weights[l][i];
                    let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
                    assert!(rel <= 1e-5, "theta grad {g} vs fd {fd}");
                }
            }
            let mut pol_mut = policy.clone();
            for l in 0..pol_mut.net.num_layers() {
                for i in (0..pol_mut.net.weights[l].len()).step_by(7) {
                    let orig = pol_mut.net.weights[l][i];
                    pol_mut.net.weights[l][i] = orig + h;
                    let fp = eval(&cert, &pol_mut);
                    pol_mut.net.weights[l][i] = orig - h;
                    let fm = eval(&cert, &pol_mut);
                    pol_mut.net.weights[l][i] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    let g = gp.weights[l][i];
                    let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
                    assert!(rel <= 1e-5, "phi grad {g} vs fd {fd}");
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn regions_respect_obstacles_and_membership() {
        let task = benchmark();
        let data = arc_dataset(&task);
        let cfg = TrainerConfig {
            n_safe_samples: 200,
            n_unsafe_samples: 200,
            ..TrainerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let regions = construct_regions(&data, &task, &cfg, &mut rng).unwrap();
        for s in &regions.safe_samples {
            assert!(!task.in_unsafe(&State(s.clone())), "safe sample in unsafe set");
            assert_eq!(regions.classify(&task, s), RegionLabel::Safe);
        }
        for s in &regions.unsafe_samples {
            assert_eq!(regions.classify(&task, s), RegionLabel::Unsafe);
        }
    }

    #[test]
    fn degenerate_dataset_rejected() {
        let task = benchmark();
        let mut ds = TrajectoryDataset::new();
        // Two states: too few distinct projections for a triangulation.
        let x0 = State(vec![4.0, 2.0, 0.0]);
        let u = Input(vec![0.0, 0.0]);
        let x1 = task.step(&x0, &u).unwrap();
        ds.push_trajectory(&task, 0, &[x0, x1], &[u]).unwrap();
        let cfg = TrainerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = construct_regions(&ds, &task, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::DegenerateRegion(_)));
    }

    #[test]
    fn zero_certificate_flags_unsafe_validation_samples() {
        let task = benchmark();
        let cert = zero_cert(task.level);
        let policy = midpoint_policy(&task);
        let data = arc_dataset(&task);
        let cfg = TrainerConfig {
            n_safe_samples: 100,
            n_unsafe_samples: 100,
            ..TrainerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let regions = construct_regions(&data, &task, &cfg, &mut rng).unwrap();
        let (ces, report) =
            validate_and_mine(&cert, &policy, &task, &regions, &[], 500, &mut rng).unwrap();
        // V = 0 <= c everywhere: every unsafe-region sample violates.
        assert_eq!(report.unsafe_level.violations, report.unsafe_level.checked);
        assert!(report.unsafe_level.checked > 0);
        assert!(!ces.is_empty());
        // Routing: each counterexample carries exactly one label.
        for (x, label) in &ces {
            assert_eq!(regions.classify(&task, x), *label);
        }
    }

    #[test]
    fn violation_bounds_examples() {
        let task = benchmark();
        let policy = midpoint_policy(&task);
        let data = arc_dataset(&task);
        let mut rng = ChaCha8Rng::seed_from_u64(6);

        // Constant V = 1: gamma*1 - 1 + l = l - 0.2; max l over the box is
        // 0.001 * ||x - x_F||^2 which exceeds 0.2 only at the far corners.
        let mut net = Mlp::zeros(&[3, 1]).unwrap();
        net.biases[0][0] = 1.0;
        let cert = Certificate::new(net, task.level).unwrap();
        let bounds =
            estimate_violation_bounds(&cert, &policy, &data, &task, 2000, &mut rng).unwrap();
        // delta1 = max(l) - 0.2 over samples; the far corner of the box gives
        // l ~ 0.001 * ((-8-6)^2 + 8^2 + pi^2) ~ 0.27.
        assert!(bounds.delta1_max > 0.0 && bounds.delta1_max < 0.1);
        // Along the data, V is constant: residual = V - gamma V - l = 0.2 - l.
        assert!(bounds.delta2 > 0.0 && (bounds.delta2 - 0.2).abs() < 0.05);

        // Empty dataset: delta2 = 0 by the max-over-empty-set convention.
        let empty = TrajectoryDataset::new();
        let bounds2 =
            estimate_violation_bounds(&cert, &policy, &empty, &task, 100, &mut rng).unwrap();
        assert_eq!(bounds2.delta2, 0.0);
        assert_eq!(bounds2.n_pairs, 0);
    }

    #[test]
    fn containment_examples() {
        let task = benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut w_net = Mlp::init(&[3, 8, 1], &mut rng).unwrap();
        for b in w_net.biases.last_mut().unwrap() {
            *b += 1.0;
        }
        let cert = Certificate::new(w_net, task.level).unwrap();
        let samples: Vec<Vec<f64>> =
            (0..1000).map(|_| sample_domain(&task, &mut rng)).collect();

        // Identical certificates: zero violations.
        let r = check_containment(&cert, &cert, task.level, &samples).unwrap();
        assert_eq!(r.violations, 0);

        // Doubling V shrinks the certified region: samples in (c/2, c] flip.
        let mut doubled = cert.clone();
        for w in doubled.w_net.weights.last_mut().unwrap().iter_mut() {
            *w *= std::f64::consts::SQRT_2;
        }
        for b in doubled.w_net.biases.last_mut().unwrap().iter_mut() {
            *b *= std::f64::consts::SQRT_2;
        }
        let band: Vec<Vec<f64>> = samples
            .iter()
            .filter(|x| {
                let v = cert.value(x).unwrap();
                v > task.level / 2.0 && v <= task.level
            })
            .cloned()
            .collect();
        if !band.is_empty() {
            let r = check_containment(&cert, &doubled, task.level, &band).unwrap();
            assert_eq!(r.violations, band.len());
            assert!((r.fraction - 1.0).abs() < 1e-12);
        }
    }
}
