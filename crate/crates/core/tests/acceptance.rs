// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Set HEATSINK_ACCEPT=1,4,7 to run a subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use heatsink_pinn::autodiff::{NodeId, Tape};
use heatsink_pinn::cli::parse_case_file;
use heatsink_pinn::domain::{RigGeometry, SampleCounts};
use heatsink_pinn::oracle::{fd_slab_check, fd_solve, manufactured_residuals, toy_exact_temperature, toy_invert_h, ToyPlateProblem};
use heatsink_pinn::physics::{Active, Problem};
use heatsink_pinn::postprocess::Stat;
use heatsink_pinn::training::{multi_trial, step_sequential, OptimizerState, RigRunSpec};
use heatsink_pinn::validation::{run_convergence_probe, run_intro1d, run_toy_h_sweep, Intro1dSpec, ToySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn autodiff_example() -> Outcome {
    let mut t = Tape::new();
    let x1 = t.var("x1");
    let x2 = t.var("x2");
    let x3 = t.var("x3");
    let c = t.pow(x1, 3.0);
    let p = t.mul(x2, x3);
    let s = t.add(c, p);
    t.scale(s, 8.0);
    let at = [("x1", 3.0), ("x2", 5.0), ("x3", 2.0)];
    let v = t.evaluate(&at).map_err(|e| e.to_string())?;
    let g = t.gradient(&at).map_err(|e| e.to_string())?;
    let ok = v == 296.0 && g["x1"] == 216.0 && g["x2"] == 16.0 && g["x3"] == 40.0;
    Ok((ok, format!("f = {v}, grad = ({}, {}, {})", g["x1"], g["x2"], g["x3"])))
}

/// A random straight-line program over three inputs. Arguments of log,
/// fractional powers and division are kept away from zero.
fn random_tape(rng: &mut ChaCha8Rng) -> Tape {
    let mut t = Tape::new();
    let mut nodes: Vec<NodeId> = ["a", "b", "c"].iter().map(|n| t.var(n)).collect();
    let n_ops = rng.gen_range(3..15);
    for _ in 0..n_ops {
        let a = nodes[rng.gen_range(0..nodes.len())];
        let b = nodes[rng.gen_range(0..nodes.len())];
        let node = match rng.gen_range(0..12) {
            0 => t.add(a, b),
            1 => t.sub(a, b),
            2 => t.mul(a, b),
            3 => {
                let sq = t.mul(b, b);
                let d = t.offset(sq, 1.0);
                t.div(a, d)
            }
            4 => t.neg(a),
            5 => {
                let th = t.tanh(a);
                t.exp(th)
            }
            6 => {
                let sq = t.mul(a, a);
                let d = t.offset(sq, 0.5);
                t.log(d)
            }
            7 => t.sin(a),
            8 => t.cos(a),
            9 => t.tanh(a),
            10 => {
                let sq = t.mul(a, a);
                let d = t.offset(sq, 0.5);
                t.pow(d, rng.gen_range(-1.5..2.5))
            }
            _ => t.scale(a, rng.gen_range(-2.0..2.0)),
        };
        nodes.push(node);
    }
    let out = *nodes.last().unwrap();
    t.set_output(out);
    t
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let names = ["a", "b", "c"];
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let t = random_tape(&mut rng);
        let x: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let bind = |x: &[f64; 3]| -> Vec<(&str, f64)> { names.iter().copied().zip(x.iter().copied()).collect() };
        let f = |x: &[f64; 3]| t.evaluate(&bind(x)).unwrap();
        let grad = |x: &[f64; 3]| t.gradient(&bind(x)).unwrap();
        let g = grad(&x);
        let eps = 1e-5;
        for i in 0..3 {
            let (mut p, mut m) = (x, x);
            p[i] += eps;
            m[i] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps);
            worst_g = worst_g.max(rel_err(g[names[i]], fd));
            for j in 0..3 {
                let h2 = t.second_derivative(&bind(&x), names[i], names[j]).map_err(|e| e.to_string())?;
                let (mut p, mut m) = (x, x);
                p[j] += 1e-4;
                m[j] -= 1e-4;
                let nested = (grad(&p)[names[i]] - grad(&m)[names[i]]) / 2e-4;
                worst_h = worst_h.max(rel_err(h2, nested));
            }
        }
    }
    Ok((
        worst_g < 1e-6 && worst_h < 1e-4,
        format!("100 tapes, worst gradient rel err {worst_g:.2e}, worst second derivative rel err {worst_h:.2e}"),
    ))
}

fn intro1d() -> Outcome {
    let r = run_intro1d(&Intro1dSpec::default()).map_err(|e| e.to_string())?;
    Ok((r.mse <= 1e-6, format!("MSE {:.3e} after {} epochs", r.mse, r.epochs)))
}

fn toy_sweep() -> Outcome {
    let r = run_toy_h_sweep(&[10.0, 100.0, 1000.0, 10000.0], &ToySpec::default(), false).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for row in &r.rows {
        let tol = if row.h_true == 10.0 { 7.0 } else { 5.0 };
        let e = row.pct_error.unwrap_or(f64::INFINITY);
        ok &= e <= tol;
        parts.push(format!("h={} {:.2}%", row.h_true, e));
    }
    let r2 = r.r_squared.unwrap_or(0.0);
    ok &= r2 >= 0.999;
    Ok((ok, format!("{}, R² {r2:.6}", parts.join(", "))))
}

fn inverse_identity() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let h = 10f64.powf(5.0 * i as f64 / 999.0);
        let p = ToyPlateProblem::standard(h);
        let back = toy_invert_h(&p, toy_exact_temperature(&p, p.w)).map_err(|e| e.to_string())?;
        worst = worst.max((back - h).abs() / h);
    }
    Ok((worst < 1e-10, format!("worst rel err {worst:.2e} over 1000 h in [1, 1e5]")))
}

fn fd_oracle() -> Outcome {
    let slab = fd_slab_check(5000.0, 400.0, (16, 40)).map_err(|e| e.to_string())?;
    let case = parse_case_file("A13_4").map_err(|e| e.to_string())?;
    let sol = fd_solve(&RigGeometry::default(), &case, 350.0, (512, 256)).map_err(|e| e.to_string())?;
    let imb = sol.energy_imbalance().abs();
    Ok((
        slab.max_rel_error < 1e-3 && imb < 0.01,
        format!("slab max rel err {:.2e}, rig 512×256 energy imbalance {:.3}%", slab.max_rel_error, 100.0 * imb),
    ))
}

fn rig_a13_4() -> Outcome {
    let case = parse_case_file("A13_4").map_err(|e| e.to_string())?;
    let exp = case.probes_c.clone();
    let spec = RigRunSpec::new(case, RigGeometry::default(), true);
    let (report, _) = multi_trial(&spec, 3, true, |_, _| {}).map_err(|e| e.to_string())?;
    let v = report.mean("v_nn").unwrap_or(f64::NAN);
    let in1 = report.mean("probe_In1_c").unwrap_or(f64::NAN);
    let in2 = report.mean("probe_In2_c").unwrap_or(f64::NAN);
    let v_ok = (v - 0.296).abs() <= 0.2 * 0.296;
    let p_ok = (in1 - exp["In1"]).abs() <= 2.5 && (in2 - exp["In2"]).abs() <= 2.5;
    Ok((
        v_ok && p_ok,
        format!(
            "h {:.1} W/m²K, v {v:.4} m/s (exp 0.296), In1 {in1:.2} °C (exp {}), In2 {in2:.2} °C (exp {})",
            report.mean("h_nn").unwrap_or(f64::NAN),
            exp["In1"],
            exp["In2"]
        ),
    ))
}

fn sequential_freeze() -> Outcome {
    let case = parse_case_file("A13_4").map_err(|e| e.to_string())?;
    let mut spec = RigRunSpec::new(case, RigGeometry::default(), true);
    spec.counts = SampleCounts::default().reduced(200);
    spec.widths = vec![2, 8, 8, 1];
    spec.train.h_warmup_epochs = 0;
    let (problem, mut ens) = spec.setup(7).map_err(|e| e.to_string())?;
    let mut state = OptimizerState::new(&ens, &spec.train);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = ens.nets.len();
    let mut violations = 0;
    for _ in 0..1000 {
        let k = rng.gen_range(0..=n);
        let active = if k == n { Active::H } else { Active::Net(k) };
        let before = ens.clone();
        step_sequential(&problem, &mut ens, &spec.train, &mut state, active).map_err(|e| e.to_string())?;
        for j in 0..n {
            if active != Active::Net(j) && ens.nets[j].params() != before.nets[j].params() {
                violations += 1;
            }
        }
        if !problem.h_active(active) && ens.log_h_star.to_bits() != before.log_h_star.to_bits() {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("1000 random steps over {n} networks and h, {violations} frozen-parameter changes")))
}

fn manufactured() -> Outcome {
    let case = parse_case_file("A13_4").map_err(|e| e.to_string())?;
    let model = RigRunSpec::new(case, RigGeometry::default(), false).model().map_err(|e| e.to_string())?;
    let checks = manufactured_residuals(&model).map_err(|e| e.to_string())?;
    let worst = checks.iter().map(|c| c.max_abs).fold(0.0, f64::max);
    Ok((worst < 1e-10, format!("{} residual checks, worst |r| {worst:.2e}", checks.len())))
}

fn aggregation() -> Outcome {
    let s = Stat::of(&[3170.89, 3281.05, 3165.11]).ok_or("empty")?;
    let ok = (s.mean - 3205.68).abs() < 0.005 && (s.std - 65.34).abs() <= 0.01;
    Ok((ok, format!("mean {:.4}, sample std {:.4}", s.mean, s.std)))
}

fn convergence() -> Outcome {
    let spec = ToySpec {
        train: heatsink_pinn::training::TrainConfig {
            max_epochs: 20000,
            ..ToySpec::default().train
        },
        ..ToySpec::default()
    };
    let r = run_convergence_probe(1000.0, &[1e-2, 1e-3, 1e-4, 1e-5], &spec).map_err(|e| e.to_string())?;
    let errs: Vec<String> = r
        .points
        .iter()
        .map(|p| format!("{:.0e}:{}", p.epsilon, if p.achieved { format!("{:.4}K", p.field_rms_k.unwrap_or(f64::NAN)) } else { "not reached".into() }))
        .collect();
    let all = r.points.iter().all(|p| p.achieved);
    Ok((r.monotone && all, format!("field RMS error by stopping loss {}", errs.join(", "))))
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_heatsink");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [
        vec!["validate", "--study", "toy_h_sweep", "--epochs", "300"],
        vec!["train-case", "--case", "A13_4", "--trials", "2", "--epochs", "40", "--reduce", "40"],
    ];
    let mut files = 0;
    let mut diffs = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let a = tmp.path().join(format!("r{i}a"));
        let b = tmp.path().join(format!("r{i}b"));
        let status = Command::new(bin)
            .args(args)
            .args(["--deterministic", "--seed", "3", "--out"])
            .arg(&a)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("{} exited with {status}", args[0]));
        }
        let status = Command::new(bin)
            .args(["run", "--manifest"])
            .arg(a.join("manifest.json"))
            .arg("--out")
            .arg(&b)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("replay of {} exited with {status}", args[0]));
        }
        let (ta, tb) = (read_tree(&a), read_tree(&b));
        files += ta.len();
        if ta.keys().ne(tb.keys()) {
            diffs.push(format!("{}: file sets differ", args[0]));
        }
        for (k, v) in &ta {
            if tb.get(k) != Some(v) {
                diffs.push(format!("{}/{k}", args[0]));
            }
        }
    }
    Ok((
        diffs.is_empty() && files > 0,
        if diffs.is_empty() {
            format!("{files} artifacts bit-identical across reruns of two manifests")
        } else {
            format!("differing artifacts: {}", diffs.join(", "))
        },
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("autodiff worked example", autodiff_example),
        ("gradient property suite", gradient_suite),
        ("intro 1-D transient", intro1d),
        ("toy h-recovery sweep", toy_sweep),
        ("closed-form inverse identity", inverse_identity),
        ("FD oracle verification", fd_oracle),
        ("full rig A13_4 with probes", rig_a13_4),
        ("sequential freeze", sequential_freeze),
        ("manufactured residuals", manufactured),
        ("aggregation arithmetic", aggregation),
        ("convergence trend", convergence),
        ("determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("HEATSINK_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = t0.elapsed().as_secs_f64();
        println!("{} {n:>2}. {name}: {detail} [{secs:.1}s]", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
