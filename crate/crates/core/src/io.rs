//! File formats: network parameter blobs (JSON), per-step iteration logs,
//! run summaries, heatmap grids, and the human-readable performance table.
//!
//! CSV values are written with the shortest round-tripping float
//! representation, so `parse(emit(x)) == x` bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Certificate, CertificateParams, Policy, PolicyParams};
use crate::solver::SolveStatus;
use crate::task::TaskSpec;

pub fn save_certificate(cert: &Certificate, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&cert.to_params())
        .map_err(|e| Error::Parse(format!("certificate serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_certificate(path: &Path) -> Result<Certificate> {
    let text = std::fs::read_to_string(path)?;
    let params: CertificateParams = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Certificate::from_params(params)
}

pub fn save_policy(policy: &Policy, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&policy.to_params())
        .map_err(|e| Error::Parse(format!("policy serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path)?;
    let params: PolicyParams = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Policy::from_params(params)
}

/// One row of the per-step iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLogRow {
    pub t: usize,
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    pub kkt_residual: f64,
    pub min_obstacle_margin: f64,
    pub terminal_residual: f64,
    /// Normalized one-step decrease residual
    /// `gamma J(x_{t+1}) - J(x_t) + l(x_t, u_t)`; NaN on the final step.
    pub lyapunov_residual: f64,
    /// Decrease-condition violation bound at the predicted terminal state.
    pub delta1_terminal: f64,
    pub wall_time_ms: f64,
}

const STEP_LOG_HEADER: &str = "t,z,y,theta,v,omega,status,objective,kkt_residual,min_obstacle_margin,terminal_residual,lyapunov_residual,delta1_terminal,wall_time_ms";

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn parse_f(s: &str, field: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad float '{s}' in field {field}")))
}

pub fn write_step_log(rows: &[StepLogRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(STEP_LOG_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            fmt_f(r.state[0]),
            fmt_f(r.state[1]),
            fmt_f(r.state[2]),
            fmt_f(r.input[0]),
            fmt_f(r.input[1]),
            r.status,
            fmt_f(r.objective),
            fmt_f(r.kkt_residual),
            fmt_f(r.min_obstacle_margin),
            fmt_f(r.terminal_residual),
            fmt_f(r.lyapunov_residual),
            fmt_f(r.delta1_terminal),
            fmt_f(r.wall_time_ms),
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_status(s: &str) -> Result<SolveStatus> {
    match s {
        "converged" => Ok(SolveStatus::Converged),
        "max_iter" => Ok(SolveStatus::MaxIter),
        "infeasible_fallback" => Ok(SolveStatus::InfeasibleFallback),
        other => Err(Error::Parse(format!("unknown solve status '{other}'"))),
    }
}

pub fn read_step_log(path: &Path) -> Result<Vec<StepLogRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty step log".into()))?;
    if header != STEP_LOG_HEADER {
        return Err(Error::Parse(format!("unexpected step log header: {header}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(Error::Parse(format!(
                "step log line {} has {} fields, expected 14",
                i + 2,
                f.len()
            )));
        }
        rows.push(StepLogRow {
            t: f[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad t '{}'", f[0])))?,
            state: vec![
                parse_f(f[1], "z")?,
                parse_f(f[2], "y")?,
                parse_f(f[3], "theta")?,
            ],
            input: vec![parse_f(f[4], "v")?, parse_f(f[5], "omega")?],
            status: parse_status(f[6])?,
            objective: parse_f(f[7], "objective")?,
            kkt_residual: parse_f(f[8], "kkt_residual")?,
            min_obstacle_margin: parse_f(f[9], "min_obstacle_margin")?,
            terminal_residual: parse_f(f[10], "terminal_residual")?,
            lyapunov_residual: parse_f(f[11], "lyapunov_residual")?,
            delta1_terminal: parse_f(f[12], "delta1_terminal")?,
            wall_time_ms: parse_f(f[13], "wall_time_ms")?,
        });
    }
    Ok(rows)
}

/// One row of `summary.csv`. Wall-clock times are kept out of this file so a
/// fixed seed reproduces it bit-exactly; timings go to `timing.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub iteration: usize,
    pub cost: f64,
    pub cost_tail_bound: f64,
    pub steps: usize,
    pub final_goal_distance: f64,
    pub delta1_max: f64,
    pub delta2: f64,
    pub theorem3_slack: f64,
    pub cost_trend_ok: bool,
    pub containment_fraction: f64,
    pub violation_rate: f64,
    pub goal_value: f64,
    pub alpha: f64,
    pub certified_area_cells: usize,
}

const SUMMARY_HEADER: &str = "iteration,cost,cost_tail_bound,steps,final_goal_distance,delta1_max,delta2,theorem3_slack,cost_trend_ok,containment_fraction,violation_rate,goal_value,alpha,certified_area_cells";

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            fmt_f(r.cost),
            fmt_f(r.cost_tail_bound),
            r.steps,
            fmt_f(r.final_goal_distance),
            fmt_f(r.delta1_max),
            fmt_f(r.delta2),
            fmt_f(r.theorem3_slack),
            r.cost_trend_ok,
            fmt_f(r.containment_fraction),
            fmt_f(r.violation_rate),
            fmt_f(r.goal_value),
            fmt_f(r.alpha),
            r.certified_area_cells,
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty summary".into()))?;
    if header != SUMMARY_HEADER {
        return Err(Error::Parse(format!("unexpected summary header: {header}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(Error::Parse(format!(
                "summary line {} has {} fields, expected 14",
                i + 2,
                f.len()
            )));
        }
        rows.push(SummaryRow {
            iteration: f[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad iteration '{}'", f[0])))?,
            cost: parse_f(f[1], "cost")?,
            cost_tail_bound: parse_f(f[2], "cost_tail_bound")?,
            steps: f[3]
                .parse()
                .map_err(|_| Error::Parse(format!("bad steps '{}'", f[3])))?,
            final_goal_distance: parse_f(f[4], "final_goal_distance")?,
            delta1_max: parse_f(f[5], "delta1_max")?,
            delta2: parse_f(f[6], "delta2")?,
            theorem3_slack: parse_f(f[7], "theorem3_slack")?,
            cost_trend_ok: f[8]
                .parse()
                .map_err(|_| Error::Parse(format!("bad bool '{}'", f[8])))?,
            containment_fraction: parse_f(f[9], "containment_fraction")?,
            violation_rate: parse_f(f[10], "violation_rate")?,
            goal_value: parse_f(f[11], "goal_value")?,
            alpha: parse_f(f[12], "alpha")?,
            certified_area_cells: f[13]
                .parse()
                .map_err(|_| Error::Parse(format!("bad cell count '{}'", f[13])))?,
        });
    }
    Ok(rows)
}

/// Per-iteration wall-clock timings (separate from the deterministic summary).
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub iteration: usize,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub total_solve_ms: f64,
    pub train_ms: f64,
}

const TIMING_HEADER: &str = "iteration,mean_solve_ms,max_solve_ms,total_solve_ms,train_ms";

pub fn write_timing(rows: &[TimingRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(TIMING_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.iteration,
            fmt_f(r.mean_solve_ms),
            fmt_f(r.max_solve_ms),
            fmt_f(r.total_solve_ms),
            fmt_f(r.train_ms),
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_timing(path: &Path) -> Result<Vec<TimingRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty timing file".into()))?;
    if header != TIMING_HEADER {
        return Err(Error::Parse(format!("unexpected timing header: {header}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse("timing row needs 5 fields".into()));
        }
        rows.push(TimingRow {
            iteration: f[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad iteration '{}'", f[0])))?,
            mean_solve_ms: parse_f(f[1], "mean_solve_ms")?,
            max_solve_ms: parse_f(f[2], "max_solve_ms")?,
            total_solve_ms: parse_f(f[3], "total_solve_ms")?,
            train_ms: parse_f(f[4], "train_ms")?,
        });
    }
    Ok(rows)
}

/// Heatmap slice of the certificate at a fixed heading.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow {
    pub z: f64,
    pub y: f64,
    pub value: f64,
    pub below_level: bool,
}

const HEATMAP_HEADER: &str = "z,y,value,below_level";

/// Evaluates `V` on a `resolution x resolution` grid over the domain box's
/// `(z, y)` rectangle at the fixed heading.
pub fn export_heatmap(
    cert: &Certificate,
    task: &TaskSpec,
    theta_fixed: f64,
    resolution: usize,
) -> Result<Vec<HeatmapRow>> {
    if resolution < 2 {
        return Err(Error::Contract("heatmap resolution must be >= 2".into()));
    }
    let (z0, z1) = (task.domain_box.lo[0], task.domain_box.hi[0]);
    let (y0, y1) = (task.domain_box.lo[1], task.domain_box.hi[1]);
    let mut rows = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let z = z0 + (z1 - z0) * i as f64 / (resolution - 1) as f64;
        for j in 0..resolution {
            let y = y0 + (y1 - y0) * j as f64 / (resolution - 1) as f64;
            let value = cert.value(&[z, y, theta_fixed])?;
            rows.push(HeatmapRow {
                z,
                y,
                value,
                below_level: value <= task.level,
            });
        }
    }
    Ok(rows)
}

pub fn write_heatmap(rows: &[HeatmapRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(HEATMAP_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_f(r.z),
            fmt_f(r.y),
            fmt_f(r.value),
            r.below_level
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_heatmap(path: &Path) -> Result<Vec<HeatmapRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty heatmap".into()))?;
    if header != HEATMAP_HEADER {
        return Err(Error::Parse(format!("unexpected heatmap header: {header}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Parse("heatmap row needs 4 fields".into()));
        }
        rows.push(HeatmapRow {
            z: parse_f(f[0], "z")?,
            y: parse_f(f[1], "y")?,
            value: parse_f(f[2], "value")?,
            below_level: f[3]
                .parse()
                .map_err(|_| Error::Parse(format!("bad bool '{}'", f[3])))?,
        });
    }
    Ok(rows)
}

/// Boundary loops of an alpha-shape region: `loop_id,vertex_index,z,y` rows.
pub fn write_region_boundary(loops: &[Vec<[f64; 2]>], path: &Path) -> Result<()> {
    let mut out = String::from("loop,vertex,z,y\n");
    for (li, chain) in loops.iter().enumerate() {
        for (vi, p) in chain.iter().enumerate() {
            writeln!(out, "{},{},{},{}", li, vi, fmt_f(p[0]), fmt_f(p[1])).expect("string write");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Cost/time table across methods and iterations, in the two-row-per-method
/// layout used for run comparisons.
#[derive(Debug, Clone, Default)]
pub struct PerformanceTable {
    /// (method name, per-iteration costs, per-iteration mean solve seconds).
    pub methods: Vec<(String, Vec<f64>, Vec<Option<f64>>)>,
}

impl PerformanceTable {
    pub fn to_csv(&self) -> String {
        let n = self
            .methods
            .iter()
            .map(|(_, c, _)| c.len())
            .max()
            .unwrap_or(0);
        let mut out = String::from("method,row");
        for i in 0..n {
            write!(out, ",iter{i}").expect("string write");
        }
        out.push('\n');
        for (name, costs, times) in &self.methods {
            write!(out, "{name},cost").expect("string write");
            for c in costs {
                write!(out, ",{}", fmt_f(*c)).expect("string write");
            }
            out.push('\n');
            write!(out, "{name},time_s").expect("string write");
            for t in times {
                match t {
                    Some(v) => write!(out, ",{}", fmt_f(*v)).expect("string write"),
                    None => out.push_str(",--"),
                }
            }
            out.push('\n');
        }
        out
    }
}

impl std::fmt::Display for PerformanceTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self
            .methods
            .iter()
            .map(|(_, c, _)| c.len())
            .max()
            .unwrap_or(0);
        write!(f, "{:<12}{:<8}", "method", "row")?;
        for i in 0..n {
            write!(f, "{:>10}", format!("iter {i}"))?;
        }
        writeln!(f)?;
        for (name, costs, times) in &self.methods {
            write!(f, "{name:<12}{:<8}", "cost")?;
            for c in costs {
                write!(f, "{c:>10.3}")?;
            }
            writeln!(f)?;
            write!(f, "{name:<12}{:<8}", "time[s]")?;
            for t in times {
                match t {
                    Some(v) => write!(f, "{v:>10.3}")?,
                    None => write!(f, "{:>10}", "--")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use crate::task::DubinsParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("ilmpc-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn params_file_roundtrip() {
        let dir = tmpdir();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cert =
            Certificate::new(Mlp::init(&[3, 32, 32, 1], &mut rng).unwrap(), 7.0).unwrap();
        let path = dir.join("cert.params");
        save_certificate(&cert, &path).unwrap();
        assert_eq!(load_certificate(&path).unwrap(), cert);
    }

    #[test]
    fn step_log_roundtrip() {
        let dir = tmpdir();
        let rows = vec![StepLogRow {
            t: 0,
            state: vec![-6.0, 0.0, 0.123456789],
            input: vec![1.999, -0.5],
            status: SolveStatus::Converged,
            objective: 0.0123456789,
            kkt_residual: 1e-9,
            min_obstacle_margin: 0.5,
            terminal_residual: -6.9,
            lyapunov_residual: -0.001,
            delta1_terminal: 0.0,
            wall_time_ms: 3.25,
        }];
        let path = dir.join("iteration_test.csv");
        write_step_log(&rows, &path).unwrap();
        assert_eq!(read_step_log(&path).unwrap(), rows);
    }

    #[test]
    fn summary_roundtrip() {
        let dir = tmpdir();
        let rows = vec![SummaryRow {
            iteration: 3,
            cost: 0.456789,
            cost_tail_bound: 1.3e-13,
            steps: 118,
            final_goal_distance: 0.0099,
            delta1_max: 0.25,
            delta2: 0.01,
            theorem3_slack: 0.045,
            cost_trend_ok: true,
            containment_fraction: 0.002,
            violation_rate: 0.004,
            goal_value: 1e-4,
            alpha: 0.73,
            certified_area_cells: 1234,
        }];
        let path = dir.join("summary.csv");
        write_summary(&rows, &path).unwrap();
        assert_eq!(read_summary(&path).unwrap(), rows);
    }

    #[test]
    fn heatmap_grid_size_and_flags() {
        let task = crate::task::TaskSpec::dubins_benchmark(&DubinsParams::default()).unwrap();
        let cert = Certificate::new(Mlp::zeros(&[3, 4, 1]).unwrap(), task.level).unwrap();
        let rows = export_heatmap(&cert, &task, -0.785, 3).unwrap();
        assert_eq!(rows.len(), 9);
        // V = 0 everywhere: every cell is inside the level set.
        assert!(rows.iter().all(|r| r.below_level));

        let dir = tmpdir();
        let path = dir.join("heatmap.csv");
        write_heatmap(&rows, &path).unwrap();
        assert_eq!(read_heatmap(&path).unwrap(), rows);
    }

    #[test]
    fn performance_table_layout() {
        let mut table = PerformanceTable::default();
        table.methods.push((
            "proposed".into(),
            vec![5.51, 4.09],
            vec![None, Some(0.012)],
        ));
        let csv = table.to_csv();
        assert!(csv.contains("proposed,cost,5.51,4.09"));
        assert!(csv.contains("proposed,time_s,--,0.012"));
        let text = format!("{table}");
        assert!(text.contains("--"));
    }
}
