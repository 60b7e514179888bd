use std::time::Instant;

use ilmpc::dataset::TrajectoryDataset;
use ilmpc::orchestrator::{behind_points, initial_maneuver};
// trace mode: pass "trace" as the first arg
use ilmpc::task::{DubinsParams, TaskSpec};
use ilmpc::trainer::{train_certificate, LossWeights, TrainerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    if std::env::args().nth(1).as_deref() == Some("bench") {
        use ilmpc::nn::{Certificate, Mlp, MlpGrads};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(&[3, 32, 32, 1], &mut rng).unwrap();
        let cert = Certificate::new(net, 7.0).unwrap();
        let x = [0.3, -0.2, 0.9];
        let n = 1_000_000;
        let t0 = Instant::now();
        let mut acc = 0.0;
        for _ in 0..n {
            acc += cert.value(&x).unwrap();
        }
        println!("fwd only: {:.1} ns/eval (acc {acc})", t0.elapsed().as_secs_f64() * 1e9 / n as f64);
        let t0 = Instant::now();
        let mut g = MlpGrads::zeros_like(&cert.w_net);
        let mut acc = 0.0;
        for _ in 0..n {
            let cache = cert.forward_cached(&x).unwrap();
            let (v, _dx) = cert.backward_value(&cache, 1.0, &mut g).unwrap();
            acc += v;
        }
        println!("fwd+bwd: {:.1} ns/eval (acc {acc})", t0.elapsed().as_secs_f64() * 1e9 / n as f64);
        return;
    }
    let n_iter: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4000);
    let task = TaskSpec::dubins_benchmark(&DubinsParams::default()).unwrap();
    let (states, inputs) = initial_maneuver(&task).unwrap();
    println!("maneuver steps: {}", inputs.len());
    if std::env::args().nth(1).as_deref() == Some("trace") {
        for (t, x) in states.iter().enumerate() {
            let d = ((x.0[0] - 6.0).powi(2) + x.0[1].powi(2) + x.0[2].powi(2)).sqrt();
            if t % 8 == 0 || d < 0.5 {
                println!("t={t:3} z={:7.3} y={:7.3} th={:7.3} dist={d:.4}", x.0[0], x.0[1], x.0[2]);
            }
        }
        return;
    }

    let mut data = TrajectoryDataset::new();
    data.push_trajectory(&task, 0, &states, &inputs).unwrap();
    data.set_extra_region_points(behind_points(&task, &states, &[-0.25, 0.3, 0.6, 0.9]));
    println!("J0 (discounted, with stationary tail) = {}", data.trajectories()[0].steps[0].cost_to_go);

    let final_lr_fraction: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let cfg = TrainerConfig {
        n_iter,
        final_lr_fraction,
        lr_hold_fraction: std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.6),
        d_w: std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(1),
        ..TrainerConfig::default()
    };
    println!("d_w = {}", cfg.d_w);
    println!("final_lr_fraction = {final_lr_fraction}");
    let weights = LossWeights::from_task(&task);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let t0 = Instant::now();
    let out = train_certificate(&data, &task, &cfg, &weights, None, &mut rng).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("train time: {dt:.1} s for {n_iter} steps");
    let s = &out.summary;
    println!("alpha = {:.3}, mined safe/unsafe = {}/{}", s.alpha, s.mined_safe, s.mined_unsafe);
    println!("final loss = {:.5}", s.final_loss);
    let r = &s.final_report;
    println!("violation rate = {:.5}", r.violation_rate);
    println!("V(goal) = {:.6}", r.goal_value);
    println!(
        "  positivity: {}/{} worst {:.4}",
        r.positivity.violations, r.positivity.checked, r.positivity.worst_residual
    );
    println!(
        "  safe_level: {}/{} worst {:.4}",
        r.safe_level.violations, r.safe_level.checked, r.safe_level.worst_residual
    );
    println!(
        "  unsafe_level: {}/{} worst {:.4}",
        r.unsafe_level.violations, r.unsafe_level.checked, r.unsafe_level.worst_residual
    );
    println!(
        "  decrease: {}/{} worst {:.4}",
        r.decrease.violations, r.decrease.checked, r.decrease.worst_residual
    );
    println!(
        "  discounted_decrease: {}/{} worst {:.4}",
        r.discounted_decrease.violations,
        r.discounted_decrease.checked,
        r.discounted_decrease.worst_residual
    );
    println!(
        "  data_consistency: {}/{} worst {:.4}",
        r.data_consistency.violations,
        r.data_consistency.checked,
        r.data_consistency.worst_residual
    );
    println!(
        "delta1_max = {:.4}, delta2 = {:.4}",
        out.bounds.delta1_max, out.bounds.delta2
    );
    // Policy gap vs structural gap: can ANY input on a coarse grid satisfy
    // the decrease conditions where the policy fails?
    {
        use ilmpc::trainer::{construct_regions, RegionLabel};
        let mut rng2 = ChaCha8Rng::seed_from_u64(777);
        let regions = construct_regions(&data, &task, &cfg, &mut rng2).unwrap();
        let mut pol_fail = 0usize;
        let mut inf_fail = 0usize;
        let mut checked = 0usize;
        let grid: Vec<(f64, f64)> = {
            let mut g = Vec::new();
            for i in 0..9 {
                for j in 0..9 {
                    g.push((2.0 * i as f64 / 8.0,
                            -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * j as f64 / 8.0));
                }
            }
            g
        };
        for _ in 0..40000 {
            if checked >= 3000 { break; }
            let x = ilmpc::trainer::sample_domain(&task, &mut rng2);
            if regions.classify(&task, &x) != RegionLabel::Safe { continue; }
            checked += 1;
            let v = out.certificate.value(&x).unwrap();
            let u = out.policy.action(&x).unwrap();
            let next = task.step(&ilmpc::task::State(x.clone()), &ilmpc::task::Input(u.clone())).unwrap();
            let vn = out.certificate.value(next.as_slice()).unwrap();
            let l = task.stage_cost(&ilmpc::task::State(x.clone()), &ilmpc::task::Input(u.clone())).unwrap();
            let pol_bad = (vn - v > 0.0) || (task.gamma * vn - v + l > 0.0);
            if pol_bad {
                pol_fail += 1;
                // best over the input grid
                let mut best8e = f64::INFINITY;
                let mut best8f = f64::INFINITY;
                for &(gv, gw) in &grid {
                    let nu = ilmpc::task::Input(vec![gv, gw]);
                    let nx = task.step(&ilmpc::task::State(x.clone()), &nu).unwrap();
                    let vng = out.certificate.value(nx.as_slice()).unwrap();
                    let lg = task.stage_cost(&ilmpc::task::State(x.clone()), &nu).unwrap();
                    best8e = best8e.min(vng - v);
                    best8f = best8f.min(task.gamma * vng - v + lg);
                }
                if best8e > 0.0 || best8f > 0.0 {
                    inf_fail += 1;
                    if inf_fail <= 10 {
                        println!("structural: x=[{:5.2},{:5.2},{:5.2}] V={v:7.3} best8e={best8e:8.5} best8f={best8f:8.5}",
                                 x[0], x[1], x[2]);
                    }
                }
            }
        }
        println!("checked {checked} safe samples: policy-fail {pol_fail}, structural-fail {inf_fail}");
    }
    // Where do the decrease violations live?
    {
        use ilmpc::trainer::{construct_regions, RegionLabel};
        let mut rng2 = ChaCha8Rng::seed_from_u64(777);
        let regions = construct_regions(&data, &task, &cfg, &mut rng2).unwrap();
        let mut shown = 0;
        for _ in 0..200000 {
            if shown >= 25 { break; }
            let x = ilmpc::trainer::sample_domain(&task, &mut rng2);
            if regions.classify(&task, &x) != RegionLabel::Safe { continue; }
            let v = out.certificate.value(&x).unwrap();
            let u = out.policy.action(&x).unwrap();
            let next = task.step(&ilmpc::task::State(x.clone()), &ilmpc::task::Input(u.clone())).unwrap();
            let vn = out.certificate.value(next.as_slice()).unwrap();
            if vn - v > 0.0 {
                println!("8e viol: x=[{:6.2},{:6.2},{:6.2}] V={v:8.4} Vnext={vn:8.4} resid={:.5} u=[{:.2},{:.2}]",
                    x[0], x[1], x[2], vn - v, u[0], u[1]);
                shown += 1;
            }
        }
    }
    // Dataset coverage.
    let mut outside = 0;
    let mut total = 0;
    for x in data.all_states() {
        total += 1;
        if out.certificate.value(x.as_slice()).unwrap() > task.level {
            outside += 1;
        }
    }
    println!("dataset outside certified region: {outside}/{total}");
}
