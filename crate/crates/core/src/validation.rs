//! Validation studies with known answers: a 1-D transient heat equation,
//! h recovery on a convecting plate, and error against stopping loss.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::latin_hypercube;
use crate::error::{Error, Result};
use crate::network::{Channel, Channels, InputMap, Jet, NetworkEnsemble, NetworkParams, OutputMap};
use crate::oracle::{toy_exact_temperature, ToyPlateProblem};
use crate::physics::{Active, Gradient, LossState, Problem, BC, H, IC, N_TERMS, PDE, Q};
use crate::training::{train, train_with, EpochRecord, StopReason, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyId {
    Intro1d,
    ToyHSweep,
    ConvergenceProbe,
}

impl std::str::FromStr for StudyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intro1d" => Ok(StudyId::Intro1d),
            "toy_h_sweep" | "toy-h-sweep" => Ok(StudyId::ToyHSweep),
            "convergence_probe" | "convergence-probe" => Ok(StudyId::ConvergenceProbe),
            _ => Err(Error::Config(format!(
                "unknown study {s:?}; expected intro1d, toy_h_sweep or convergence_probe"
            ))),
        }
    }
}

fn mean_sq(r: &[f64]) -> f64 {
    if r.is_empty() {
        0.0
    } else {
        r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
    }
}

fn unit_square(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    latin_hypercube(n, 2, rng).into_iter().map(|p| [p[0], p[1]]).collect()
}

/// Evenly spaced points on `[0, 1]`, endpoints excluded.
fn interior_line(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

/// `u_t = u_xx + f` on `(0,1)²` with `u(x,0) = sin πx`, `u(0,t) = u(1,t) = 0`
/// and `f = (π² − 1)e^{−t} sin πx`, so that `u = e^{−t} sin πx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intro1dSpec {
    pub widths: Vec<usize>,
    pub n_interior: usize,
    pub n_initial: usize,
    pub n_boundary: usize,
    pub train: TrainConfig,
    pub grid: usize,
}

impl Default for Intro1dSpec {
    fn default() -> Self {
        Self {
            widths: vec![2, 20, 20, 20, 1],
            n_interior: 2500,
            n_initial: 50,
            n_boundary: 50,
            train: TrainConfig {
                max_epochs: 12000,
                lr_params: 5e-3,
                lr_final: Some(1e-5),
                lr_lambda: 1e-4,
                initial_lambdas: [1.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0],
                epsilon_stop: 1e-9,
                ..TrainConfig::default()
            },
            grid: 101,
        }
    }
}

pub fn intro1d_exact(x: f64, t: f64) -> f64 {
    (-t).exp() * (PI * x).sin()
}

fn intro1d_source(x: f64, t: f64) -> f64 {
    (PI * PI - 1.0) * (-t).exp() * (PI * x).sin()
}

/// Network input `(x, t)`; the second input is time.
pub struct Intro1dProblem {
    interior: Vec<[f64; 2]>,
    source: Vec<f64>,
    initial: Vec<[f64; 2]>,
    walls: Vec<[f64; 2]>,
}

impl Intro1dProblem {
    pub fn new(spec: &Intro1dSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed ^ 0x1d);
        let interior = unit_square(spec.n_interior, &mut rng);
        let source = interior.iter().map(|p| intro1d_source(p[0], p[1])).collect();
        let initial = interior_line(spec.n_initial).into_iter().map(|x| [x, 0.0]).collect();
        let ts = interior_line(spec.n_boundary);
        let walls = ts.iter().map(|&t| [0.0, t]).chain(ts.iter().map(|&t| [1.0, t])).collect();
        Self {
            interior,
            source,
            initial,
            walls,
        }
    }
}

impl Problem for Intro1dProblem {
    fn evaluate(&self, ens: &NetworkEnsemble, lambdas: &[f64; N_TERMS], active: Active) -> Result<(LossState, Gradient)> {
        let net = &ens.nets[0];
        let ch = Channels {
            y: true,
            xx: true,
            ..Channels::VALUE
        };
        let (ji, ci) = net.taylor(&self.interior, ch);
        let r: Vec<f64> = (0..ji.n)
            .map(|p| ji.ch(Channel::Y)[p] - ji.ch(Channel::XX)[p] - self.source[p])
            .collect();
        let mut si = Jet::zeros(ji.n, ji.channels());
        let f = lambdas[PDE] * 2.0 / ji.n as f64;
        for p in 0..ji.n {
            si.ch_mut(Channel::Y)[p] += f * r[p];
            si.ch_mut(Channel::XX)[p] -= f * r[p];
        }
        let (j0, c0) = net.taylor(&self.initial, Channels::VALUE);
        let r0: Vec<f64> = (0..j0.n)
            .map(|p| j0.ch(Channel::V)[p] - (PI * self.initial[p][0]).sin())
            .collect();
        let mut s0 = Jet::zeros(j0.n, j0.channels());
        for p in 0..j0.n {
            s0.ch_mut(Channel::V)[p] = lambdas[IC] * 2.0 * r0[p] / j0.n as f64;
        }
        let (jb, cb) = net.taylor(&self.walls, Channels::VALUE);
        let rb = jb.ch(Channel::V).to_vec();
        let mut sb = Jet::zeros(jb.n, jb.channels());
        for p in 0..jb.n {
            sb.ch_mut(Channel::V)[p] = lambdas[BC] * 2.0 * rb[p] / jb.n as f64;
        }
        let mut terms = [0.0; N_TERMS];
        terms[PDE] = mean_sq(&r);
        terms[IC] = mean_sq(&r0);
        terms[BC] = mean_sq(&rb);
        let mut g = Gradient::zeros(ens);
        if matches!(active, Active::All | Active::Net(0)) {
            net.backward(&ci, &si, &mut g.nets[0]);
            net.backward(&c0, &s0, &mut g.nets[0]);
            net.backward(&cb, &sb, &mut g.nets[0]);
        }
        Ok((LossState::new(terms, *lambdas, ens.h_star()), g))
    }

    fn trains_h(&self) -> bool {
        false
    }

    fn sweep_order(&self) -> Vec<Active> {
        vec![Active::Net(0)]
    }
}

/// MSE of `u` against the exact solution on an `n × n` grid over `[0,1]²`.
pub fn intro1d_mse(u: impl Fn(f64, f64) -> f64, n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (x, t) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
            s += (u(x, t) - intro1d_exact(x, t)).powi(2);
        }
    }
    s / (n * n) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intro1dResult {
    pub mse: f64,
    /// Largest error on the `t = 0` slice of the grid.
    pub initial_max_error: f64,
    pub epochs: usize,
    pub final_loss: Option<LossState>,
    pub stop: StopReason,
    /// `(x, t, u)` on the evaluation grid.
    pub field: Vec<[f64; 3]>,
}

pub fn run_intro1d(spec: &Intro1dSpec) -> Result<Intro1dResult> {
    run_intro1d_with(spec, |_| {})
}

pub fn run_intro1d_with(spec: &Intro1dSpec, on_epoch: impl FnMut(&EpochRecord)) -> Result<Intro1dResult> {
    if spec.grid < 2 {
        return Err(Error::Config("grid needs at least 2 points".into()));
    }
    let problem = Intro1dProblem::new(spec);
    let mut net = NetworkParams::init(&spec.widths, spec.train.seed)?;
    net.input_map = InputMap::unit_box((0.0, 1.0), (0.0, 1.0));
    net.output_map = OutputMap { offset: 0.0, scale: 1.0 };
    let ens = NetworkEnsemble::with_nets(vec![net], 1.0)?;
    let run = train_with(&problem, ens, &spec.train, true, on_epoch)?;
    run.check()?;
    let net = &run.ensemble.nets[0];
    let n = spec.grid;
    let mse = intro1d_mse(|x, t| net.forward(x, t), n);
    let initial_max_error = (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            (net.forward(x, 0.0) - (PI * x).sin()).abs()
        })
        .fold(0.0, f64::max);
    let mut field = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let (x, t) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
            field.push([x, t, net.forward(x, t)]);
        }
    }
    Ok(Intro1dResult {
        mse,
        initial_max_error,
        epochs: run.history.len(),
        final_loss: run.final_loss().cloned(),
        stop: run.stop,
        field,
    })
}

/// Plate problem for PINN h recovery. Scaled variables: `x* = x/W`,
/// `y* = y/H`, `θ = (T − T_inf)/(T_0 − T_inf)`; the trainable parameter
/// is `h` itself (W/m²K), stored as `ln h`.
///
/// Terms: PDE, BC (Dirichlet left, insulated top and bottom), h (Robin on
/// the right) and Q, which ties `T(W, y)` to the wall temperature of the
/// reference solution so that `h = k(T_0 − T_W)/(W(T_W − T_inf))` is the
/// only consistent value. Without Q any `h` fits.
pub struct ToyProblem {
    pub plate: ToyPlateProblem,
    pub use_energy: bool,
    interior: Vec<[f64; 2]>,
    left: Vec<[f64; 2]>,
    ends: Vec<[f64; 2]>,
    right: Vec<[f64; 2]>,
    /// Measured wall temperature in scaled form.
    theta_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub widths: Vec<usize>,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub h_init: f64,
    pub train: TrainConfig,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            widths: vec![2, 16, 16, 1],
            n_interior: 400,
            n_boundary: 40,
            h_init: 1000.0,
            train: TrainConfig {
                max_epochs: 6000,
                lr_params: 5e-3,
                lr_final: Some(1e-4),
                lr_h: 5e-2,
                lr_lambda: 1e-4,
                epsilon_stop: 1e-12,
                ..TrainConfig::default()
            },
        }
    }
}

impl ToyProblem {
    pub fn new(plate: ToyPlateProblem, use_energy: bool, spec: &ToySpec) -> Result<Self> {
        plate.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed ^ 0x70);
        let line = interior_line(spec.n_boundary);
        let t_w = toy_exact_temperature(&plate, plate.w);
        Ok(Self {
            theta_w: (t_w - plate.t_inf) / (plate.t0 - plate.t_inf),
            interior: unit_square(spec.n_interior, &mut rng),
            left: line.iter().map(|&y| [0.0, y]).collect(),
            ends: line.iter().map(|&x| [x, 0.0]).chain(line.iter().map(|&x| [x, 1.0])).collect(),
            right: line.iter().map(|&y| [1.0, y]).collect(),
            use_energy,
            plate,
        })
    }

    fn biot(&self, h: f64) -> f64 {
        h * self.plate.w / self.plate.k
    }

    /// `(T − T_inf)/(T_0 − T_inf)` of the exact solution.
    pub fn exact_theta(&self, x_star: f64) -> f64 {
        let p = &self.plate;
        (toy_exact_temperature(p, x_star * p.w) - p.t_inf) / (p.t0 - p.t_inf)
    }

    /// Fresh single-network ensemble for this problem.
    pub fn init_ensemble(&self, widths: &[usize], seed: u64, h_init: f64) -> Result<NetworkEnsemble> {
        let mut net = NetworkParams::init(widths, seed)?;
        net.input_map = InputMap::unit_box((0.0, 1.0), (0.0, 1.0));
        net.output_map = OutputMap { offset: 0.5, scale: 0.5 };
        NetworkEnsemble::with_nets(vec![net], h_init)
    }

    /// Field RMS error in kelvin on an `n × n` grid.
    pub fn field_error(&self, ens: &NetworkEnsemble, n: usize) -> f64 {
        let net = &ens.nets[0];
        let dt = self.plate.t0 - self.plate.t_inf;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
                s += ((net.forward(x, y) - self.exact_theta(x)) * dt).powi(2);
            }
        }
        (s / (n * n) as f64).sqrt()
    }
}

impl Problem for ToyProblem {
    fn evaluate(&self, ens: &NetworkEnsemble, lambdas: &[f64; N_TERMS], active: Active) -> Result<(LossState, Gradient)> {
        let net = &ens.nets[0];
        let h = ens.h_star();
        let bi = self.biot(h);
        let aspect = (self.plate.w / self.plate.h).powi(2);
        let mut terms = [0.0; N_TERMS];
        let mut g = Gradient::zeros(ens);
        let mut g_logh = 0.0;
        let net_on = matches!(active, Active::All | Active::Net(0));
        let mut grad = vec![0.0; net.len()];

        let (ji, ci) = net.taylor(&self.interior, Channels::FULL);
        let r: Vec<f64> = (0..ji.n)
            .map(|p| ji.ch(Channel::XX)[p] + aspect * ji.ch(Channel::YY)[p])
            .collect();
        terms[PDE] = mean_sq(&r);
        let mut si = Jet::zeros(ji.n, ji.channels());
        let f = lambdas[PDE] * 2.0 / ji.n as f64;
        for p in 0..ji.n {
            si.ch_mut(Channel::XX)[p] = f * r[p];
            si.ch_mut(Channel::YY)[p] = f * aspect * r[p];
        }

        let (jl, cl) = net.taylor(&self.left, Channels::VALUE);
        let rl: Vec<f64> = jl.ch(Channel::V).iter().map(|v| v - 1.0).collect();
        let (je, ce) = net.taylor(&self.ends, Channels::GRADIENT);
        let re: Vec<f64> = je.ch(Channel::Y).to_vec();
        terms[BC] = mean_sq(&rl) + mean_sq(&re);
        let mut sl = Jet::zeros(jl.n, jl.channels());
        for p in 0..jl.n {
            sl.ch_mut(Channel::V)[p] = lambdas[BC] * 2.0 * rl[p] / jl.n as f64;
        }
        let mut se = Jet::zeros(je.n, je.channels());
        for p in 0..je.n {
            se.ch_mut(Channel::Y)[p] = lambdas[BC] * 2.0 * re[p] / je.n as f64;
        }

        let (jr, cr) = net.taylor(&self.right, Channels::GRADIENT);
        let n = jr.n as f64;
        let v = jr.ch(Channel::V).to_vec();
        // divided by 1 + Bi so the condition stays O(1) as it tends to Dirichlet
        let s = 1.0 / (1.0 + bi);
        let rr: Vec<f64> = (0..jr.n).map(|p| s * (jr.ch(Channel::X)[p] + bi * v[p])).collect();
        terms[H] = mean_sq(&rr);
        let mut sr = Jet::zeros(jr.n, jr.channels());
        for p in 0..jr.n {
            let c = lambdas[H] * 2.0 * rr[p] / n;
            sr.ch_mut(Channel::X)[p] += c * s;
            sr.ch_mut(Channel::V)[p] += c * s * bi;
            g_logh += c * s * bi * (v[p] - rr[p]);
        }
        if self.use_energy {
            let rw: Vec<f64> = v.iter().map(|t| t - self.theta_w).collect();
            terms[Q] = mean_sq(&rw);
            for p in 0..jr.n {
                sr.ch_mut(Channel::V)[p] += lambdas[Q] * 2.0 * rw[p] / n;
            }
        }
        if net_on {
            net.backward(&ci, &si, &mut grad);
            net.backward(&cl, &sl, &mut grad);
            net.backward(&ce, &se, &mut grad);
            net.backward(&cr, &sr, &mut grad);
            g.nets[0] = grad;
        }
        if self.h_active(active) {
            g.log_h = g_logh;
        }
        Ok((LossState::new(terms, *lambdas, h), g))
    }

    fn trains_h(&self) -> bool {
        true
    }

    fn sweep_order(&self) -> Vec<Active> {
        vec![Active::Net(0), Active::H]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRow {
    pub h_true: f64,
    pub h_pred: Option<f64>,
    pub pct_error: Option<f64>,
    pub field_rms_k: Option<f64>,
    pub with_energy: bool,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySweepResult {
    pub rows: Vec<ToyRow>,
    pub ablation: Vec<ToyRow>,
    /// R² of `log h_pred` against `log h_true`, about the identity line.
    pub r_squared: Option<f64>,
    /// Set when dropping the energy term makes h recovery clearly worse.
    pub ablation_degraded: bool,
}

pub fn run_toy_once(h_true: f64, use_energy: bool, spec: &ToySpec) -> Result<ToyRow> {
    let plate = ToyPlateProblem::standard(h_true);
    let problem = ToyProblem::new(plate, use_energy, spec)?;
    let ens = problem.init_ensemble(&spec.widths, spec.train.seed, spec.h_init)?;
    let run = train(&problem, ens, &spec.train, true)?;
    let ok = !matches!(run.stop, StopReason::Diverged { .. });
    let h_pred = ok.then(|| run.ensemble.h_star());
    Ok(ToyRow {
        h_true,
        pct_error: h_pred.map(|h| 100.0 * (h - h_true).abs() / h_true),
        field_rms_k: ok.then(|| problem.field_error(&run.ensemble, 41)),
        h_pred,
        with_energy: use_energy,
        stop: run.stop,
    })
}

/// Coefficient of determination of `log10 h_pred` about `log10 h_true`.
pub fn log_r_squared(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.log10()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.log10()).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - x).powi(2)).sum();
    (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
}

pub fn run_toy_h_sweep(h_values: &[f64], spec: &ToySpec, with_ablation: bool) -> Result<ToySweepResult> {
    let rows = h_values
        .iter()
        .map(|&h| run_toy_once(h, true, spec))
        .collect::<Result<Vec<_>>>()?;
    let ablation = if with_ablation {
        h_values
            .iter()
            .map(|&h| run_toy_once(h, false, spec))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let pairs: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.h_pred.map(|p| (r.h_true, p))).collect();
    let worst = |rs: &[ToyRow]| rs.iter().filter_map(|r| r.pct_error).fold(0.0, f64::max);
    let ablation_degraded = !ablation.is_empty() && worst(&ablation) > 2.0 * worst(&rows).max(5.0);
    Ok(ToySweepResult {
        r_squared: log_r_squared(&pairs),
        rows,
        ablation,
        ablation_degraded,
    })
}

pub fn write_toy_csv<W: std::io::Write>(res: &ToySweepResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["h_true", "h_pred", "pct_error", "field_rms_k", "energy_term", "stop"])?;
    for r in res.rows.iter().chain(&res.ablation) {
        let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        out.write_record([
            format!("{}", r.h_true),
            f(r.h_pred),
            f(r.pct_error),
            f(r.field_rms_k),
            r.with_energy.to_string(),
            format!("{:?}", r.stop),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub epsilon: f64,
    pub achieved: bool,
    pub epoch: Option<usize>,
    pub loss: Option<f64>,
    pub field_rms_k: Option<f64>,
    pub h_pred: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub h_true: f64,
    pub points: Vec<ConvergencePoint>,
    /// Field error never increases as the achieved ε shrinks.
    pub monotone: bool,
}

/// Trains the toy problem once and snapshots the field the first time the
/// total loss falls to each ε. Training is deterministic, so each snapshot
/// equals a run stopped at that ε.
pub fn run_convergence_probe(h_true: f64, epsilons: &[f64], spec: &ToySpec) -> Result<ConvergenceResult> {
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let plate = ToyPlateProblem::standard(h_true);
    let problem = ToyProblem::new(plate, true, spec)?;
    let mut ens = problem.init_ensemble(&spec.widths, spec.train.seed, spec.h_init)?;
    let mut cfg = spec.train.clone();
    cfg.epsilon_stop = *eps.last().unwrap_or(&cfg.epsilon_stop);
    let mut points: Vec<ConvergencePoint> = eps
        .iter()
        .map(|&e| ConvergencePoint {
            epsilon: e,
            achieved: false,
            epoch: None,
            loss: None,
            field_rms_k: None,
            h_pred: None,
        })
        .collect();
    // the recorded loss is evaluated before each step, so a snapshot of
    // the parameters that produced it is taken from the previous epoch
    let mut state = crate::training::OptimizerState::new(&ens, &cfg);
    cfg.validate()?;
    let plan = cfg.plan(&problem.sweep_order());
    for (epoch, &active) in plan.iter().enumerate() {
        let before = ens.clone();
        let lr = cfg.lr_at(epoch);
        let loss = match crate::training::step(&problem, &mut ens, &cfg, &mut state, active, lr, epoch) {
            Ok(l) => l,
            Err(Error::Divergence { .. }) => break,
            Err(e) => return Err(e),
        };
        for pt in points.iter_mut().filter(|p| !p.achieved) {
            if loss.total <= pt.epsilon {
                pt.achieved = true;
                pt.epoch = Some(epoch);
                pt.loss = Some(loss.total);
                pt.field_rms_k = Some(problem.field_error(&before, 41));
                pt.h_pred = Some(before.h_star());
            }
        }
        if points.iter().all(|p| p.achieved) {
            break;
        }
    }
    let errs: Vec<f64> = points.iter().filter_map(|p| p.field_rms_k).collect();
    let monotone = errs.windows(2).all(|w| w[1] <= w[0]);
    Ok(ConvergenceResult { h_true, points, monotone })
}

pub fn write_convergence_csv<W: std::io::Write>(res: &ConvergenceResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epsilon", "achieved", "epoch", "loss", "field_rms_k", "h_pred"])?;
    for p in &res.points {
        let f = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        out.write_record([
            format!("{:e}", p.epsilon),
            p.achieved.to_string(),
            p.epoch.map(|e| e.to_string()).unwrap_or_default(),
            f(p.loss),
            f(p.field_rms_k),
            f(p.h_pred),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_solution_has_zero_mse() {
        assert_eq!(intro1d_mse(intro1d_exact, 101), 0.0);
    }

    #[test]
    fn source_makes_exact_solution_satisfy_the_equation() {
        let (x, t, e) = (0.37, 0.61, 1e-4);
        let u = intro1d_exact;
        let ut = (u(x, t + e) - u(x, t - e)) / (2.0 * e);
        let uxx = (u(x + e, t) - 2.0 * u(x, t) + u(x - e, t)) / (e * e);
        assert!((ut - uxx - intro1d_source(x, t)).abs() < 1e-6);
    }

    fn check_gradient(problem: &dyn Problem, ens: &NetworkEnsemble) {
        let lambdas = [1.3, 0.7, 1.1, 1.0, 0.9, 2.0, 1.0];
        let (_, g) = problem.evaluate(ens, &lambdas, Active::All).unwrap();
        let total = |e: &NetworkEnsemble| problem.evaluate(e, &lambdas, Active::All).unwrap().0.total;
        for i in 0..ens.nets[0].len() {
            let h = 1e-6;
            let mut a = ens.clone();
            a.nets[0].params_mut()[i] += h;
            let mut b = ens.clone();
            b.nets[0].params_mut()[i] -= h;
            let fd = (total(&a) - total(&b)) / (2.0 * h);
            assert!((g.nets[0][i] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "param {i}: {} vs {fd}", g.nets[0][i]);
        }
        let mut a = ens.clone();
        a.log_h_star += 1e-6;
        let mut b = ens.clone();
        b.log_h_star -= 1e-6;
        let fd = (total(&a) - total(&b)) / 2e-6;
        assert!((g.log_h - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{} vs {fd}", g.log_h);
    }

    #[test]
    fn intro_gradient_matches_finite_differences() {
        let spec = Intro1dSpec {
            widths: vec![2, 5, 5, 1],
            n_interior: 20,
            n_initial: 5,
            n_boundary: 5,
            ..Intro1dSpec::default()
        };
        let p = Intro1dProblem::new(&spec);
        let mut net = NetworkParams::init(&spec.widths, 3).unwrap();
        net.input_map = InputMap::unit_box((0.0, 1.0), (0.0, 1.0));
        check_gradient(&p, &NetworkEnsemble::with_nets(vec![net], 1.0).unwrap());
    }

    #[test]
    fn toy_gradient_matches_finite_differences() {
        let spec = ToySpec {
            widths: vec![2, 5, 5, 1],
            n_interior: 20,
            n_boundary: 6,
            ..ToySpec::default()
        };
        let p = ToyProblem::new(ToyPlateProblem::standard(1000.0), true, &spec).unwrap();
        let ens = p.init_ensemble(&spec.widths, 4, 300.0).unwrap();
        check_gradient(&p, &ens);
    }

    #[test]
    fn r_squared_of_perfect_recovery_is_one() {
        let pairs = [(10.0, 10.0), (100.0, 100.0), (1000.0, 1000.0)];
        assert_eq!(log_r_squared(&pairs), Some(1.0));
    }

    #[test]
    fn study_ids_parse() {
        assert_eq!("intro1d".parse::<StudyId>().unwrap(), StudyId::Intro1d);
        assert!("nope".parse::<StudyId>().is_err());
    }
}
