//! Adam with self-adaptive loss weights, joint and layer-wise schedules.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{h_to_star, sample, RigGeometry, SampleCounts};
use crate::error::{Error, Result};
use crate::network::NetworkEnsemble;
use crate::physics::{Active, Gradient, LossState, Problem, RigModel, RigProblem, N_TERMS, Q, TERM_NAMES};
use crate::postprocess::{
    compute_velocity, energy_balance, extract_h, pipe_delta_t, probe_temperatures, CaseConfig, CaseReport, TrialResult,
    ZERO_CELSIUS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Joint,
    Sequential,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Schedule::Joint),
            "sequential" => Ok(Schedule::Sequential),
            _ => Err(Error::Config(format!("unknown schedule {s:?}, expected joint or sequential"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub lr_params: f64,
    /// Learning rate at the last epoch; the rate decays geometrically from
    /// `lr_params`. `None` keeps it constant.
    #[serde(default)]
    pub lr_final: Option<f64>,
    /// Learning rate for `ln h*`.
    pub lr_h: f64,
    /// Epochs at the start during which `h*` stays at its initial value.
    #[serde(default)]
    pub h_warmup_epochs: usize,
    /// Epoch from which `h*` is held at its current value again.
    #[serde(default)]
    pub h_freeze_epoch: Option<usize>,
    pub lr_lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub initial_lambdas: [f64; N_TERMS],
    pub epsilon_stop: f64,
    pub schedule: Schedule,
    pub sweeps: usize,
    pub epochs_per_layer: usize,
    /// Joint epochs after the last sweep, as a fraction of the sweep epochs.
    pub finetune_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 5000,
            lr_params: 1e-3,
            lr_final: None,
            lr_h: 1e-2,
            h_warmup_epochs: 0,
            h_freeze_epoch: None,
            lr_lambda: 1e-3,
            lambda_min: 1e-3,
            lambda_max: 1e4,
            initial_lambdas: [1.0; N_TERMS],
            epsilon_stop: 1e-8,
            schedule: Schedule::Joint,
            sweeps: 1,
            epochs_per_layer: 500,
            finetune_fraction: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_params", self.lr_params),
            ("lr_h", self.lr_h),
            ("lr_lambda", self.lr_lambda),
            ("epsilon_stop", self.epsilon_stop),
            ("lambda_min", self.lambda_min),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(lr) = self.lr_final {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("lr_final must be positive, got {lr}")));
            }
        }
        if !(self.lambda_max >= self.lambda_min) {
            return Err(Error::Config("lambda_max must be at least lambda_min".into()));
        }
        if self.initial_lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("initial lambdas must be positive".into()));
        }
        if let Some(e) = self.h_freeze_epoch {
            if e <= self.h_warmup_epochs {
                return Err(Error::Config(format!(
                    "h_freeze_epoch {e} must come after h_warmup_epochs {}",
                    self.h_warmup_epochs
                )));
            }
        }
        if self.sweeps == 0 {
            return Err(Error::Config("sweeps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.finetune_fraction) {
            return Err(Error::Config("finetune_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Learning rate at `epoch` under geometric decay.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_final {
            Some(end) if self.max_epochs > 1 => {
                let t = (epoch.min(self.max_epochs - 1)) as f64 / (self.max_epochs - 1) as f64;
                self.lr_params * (end / self.lr_params).powf(t)
            }
            _ => self.lr_params,
        }
    }

    /// The active group for every epoch, truncated to `max_epochs`.
    pub fn plan(&self, sweep_order: &[Active]) -> Vec<Active> {
        let mut plan = Vec::new();
        match self.schedule {
            Schedule::Joint => plan.resize(self.max_epochs, Active::All),
            Schedule::Sequential => {
                for _ in 0..self.sweeps {
                    for a in sweep_order {
                        plan.extend(std::iter::repeat(*a).take(self.epochs_per_layer));
                    }
                }
                let tune = (plan.len() as f64 * self.finetune_fraction).round() as usize;
                plan.extend(std::iter::repeat(Active::All).take(tune));
                plan.truncate(self.max_epochs);
            }
        }
        plan
    }
}

/// Adam moments per parameter group (one per network plus `ln h*`) and
/// the self-adaptive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub m_h: f64,
    pub v_h: f64,
    /// Updates applied to each network group, then to `ln h*`; drives bias
    /// correction.
    pub group_steps: Vec<u64>,
    pub h_steps: u64,
    pub step: u64,
    pub lambdas: [f64; N_TERMS],
}

impl OptimizerState {
    pub fn new(ens: &NetworkEnsemble, config: &TrainConfig) -> Self {
        Self {
            m: ens.nets.iter().map(|n| vec![0.0; n.len()]).collect(),
            v: ens.nets.iter().map(|n| vec![0.0; n.len()]).collect(),
            m_h: 0.0,
            v_h: 0.0,
            group_steps: vec![0; ens.nets.len()],
            h_steps: 0,
            step: 0,
            lambdas: config.initial_lambdas,
        }
    }

    fn check_shapes(&self, ens: &NetworkEnsemble) -> Result<()> {
        let ok = self.m.len() == ens.nets.len()
            && self.v.len() == ens.nets.len()
            && self.group_steps.len() == ens.nets.len()
            && ens
                .nets
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(n, (m, v))| m.len() == n.len() && v.len() == n.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Config("optimizer state does not match the ensemble".into()))
        }
    }
}

/// Weight gradient of one term; used to name the term behind a non-finite
/// gradient.
fn offending_term(problem: &dyn Problem, ens: &NetworkEnsemble, lambdas: &[f64; N_TERMS], active: Active) -> String {
    for s in 0..N_TERMS {
        let mut one = [0.0; N_TERMS];
        one[s] = lambdas[s];
        if let Ok((_, g)) = problem.evaluate(ens, &one, active) {
            if !g.is_finite() {
                return format!("gradient of {}", TERM_NAMES[s]);
            }
        }
    }
    "gradient".into()
}

fn adam(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, t: u64, lr: f64, c: &TrainConfig) {
    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
    let mh = *m / (1.0 - c.beta1.powi(t as i32));
    let vh = *v / (1.0 - c.beta2.powi(t as i32));
    *p -= lr * mh / (vh.sqrt() + c.adam_eps);
}

/// One optimizer step on the groups `active` allows; returns the loss
/// before the step. Parameters outside `active` are not written.
pub fn step(
    problem: &dyn Problem,
    ens: &mut NetworkEnsemble,
    config: &TrainConfig,
    state: &mut OptimizerState,
    active: Active,
    lr: f64,
    epoch: usize,
) -> Result<LossState> {
    state.check_shapes(ens)?;
    if let Active::Net(k) = active {
        if k >= ens.nets.len() {
            return Err(Error::Config(format!("no network {k} in the ensemble")));
        }
    }
    if active == Active::H && !problem.trains_h() {
        return Err(Error::Config("this problem has no trainable h".into()));
    }
    let (loss, grad): (LossState, Gradient) = problem.evaluate(ens, &state.lambdas, active)?;
    if let Some(term) = loss.non_finite_term() {
        return Err(Error::Divergence {
            epoch,
            term: term.to_string(),
        });
    }
    if !grad.is_finite() {
        return Err(Error::Divergence {
            epoch,
            term: offending_term(problem, ens, &state.lambdas, active),
        });
    }
    state.step += 1;
    for (k, g) in grad.nets.iter().enumerate() {
        let on = active == Active::All || active == Active::Net(k);
        if !on {
            continue;
        }
        state.group_steps[k] += 1;
        let t = state.group_steps[k];
        let params = ens.nets[k].params_mut();
        for i in 0..params.len() {
            adam(&mut params[i], g[i], &mut state.m[k][i], &mut state.v[k][i], t, lr, config);
        }
    }
    let h_on = problem.trains_h()
        && problem.h_active(active)
        && epoch >= config.h_warmup_epochs
        && config.h_freeze_epoch.map_or(true, |e| epoch < e);
    if h_on {
        state.h_steps += 1;
        let lr_h = config.lr_h * lr / config.lr_params;
        adam(&mut ens.log_h_star, grad.log_h, &mut state.m_h, &mut state.v_h, state.h_steps, lr_h, config);
    }
    for (l, v) in state.lambdas.iter_mut().zip(&loss.terms) {
        *l = (*l + config.lr_lambda * v).clamp(config.lambda_min, config.lambda_max);
    }
    Ok(loss)
}

/// Step with every parameter group active.
pub fn step_joint(
    problem: &dyn Problem,
    ens: &mut NetworkEnsemble,
    config: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<LossState> {
    step(problem, ens, config, state, Active::All, config.lr_params, state.step as usize)
}

/// Step with only `active` trainable; everything else is held fixed.
pub fn step_sequential(
    problem: &dyn Problem,
    ens: &mut NetworkEnsemble,
    config: &TrainConfig,
    state: &mut OptimizerState,
    active: Active,
) -> Result<LossState> {
    if active == Active::All {
        return Err(Error::Config("sequential step needs a single subdomain or h".into()));
    }
    step(problem, ens, config, state, active, config.lr_params, state.step as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub active: String,
    pub lr: f64,
    pub loss: LossState,
    /// Seconds since training started; zero in deterministic mode.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    Epsilon,
    MaxEpochs,
    Diverged { epoch: usize, term: String },
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub ensemble: NetworkEnsemble,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
    pub optimizer: OptimizerState,
}

impl TrainRun {
    pub fn final_loss(&self) -> Option<&LossState> {
        self.history.last().map(|r| &r.loss)
    }

    /// Error if training diverged.
    pub fn check(&self) -> Result<()> {
        match &self.stop {
            StopReason::Diverged { epoch, term } => Err(Error::Divergence {
                epoch: *epoch,
                term: term.clone(),
            }),
            _ => Ok(()),
        }
    }
}

/// Runs the configured schedule. Divergence stops the run and is reported
/// in `stop` together with the partial history.
pub fn train(problem: &dyn Problem, ens: NetworkEnsemble, config: &TrainConfig, deterministic: bool) -> Result<TrainRun> {
    train_with(problem, ens, config, deterministic, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    problem: &dyn Problem,
    mut ens: NetworkEnsemble,
    config: &TrainConfig,
    deterministic: bool,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainRun> {
    config.validate()?;
    let mut state = OptimizerState::new(&ens, config);
    let mut history = Vec::new();
    let plan = config.plan(&problem.sweep_order());
    let t0 = Instant::now();
    let mut stop = StopReason::MaxEpochs;
    for (epoch, &active) in plan.iter().enumerate() {
        let lr = config.lr_at(epoch);
        match step(problem, &mut ens, config, &mut state, active, lr, epoch) {
            Ok(loss) => {
                let done = loss.total <= config.epsilon_stop;
                let rec = EpochRecord {
                    epoch,
                    active: active.name(),
                    lr,
                    loss,
                    wall_time: if deterministic { 0.0 } else { t0.elapsed().as_secs_f64() },
                };
                on_epoch(&rec);
                history.push(rec);
                if done {
                    stop = StopReason::Epsilon;
                    break;
                }
            }
            Err(Error::Divergence { epoch, term }) => {
                stop = StopReason::Diverged { epoch, term };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainRun {
        ensemble: ens,
        history,
        stop,
        optimizer: state,
    })
}

/// Everything needed to train the rig for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigRunSpec {
    pub case: CaseConfig,
    pub geometry: RigGeometry,
    pub with_probes: bool,
    pub widths: Vec<usize>,
    pub counts: SampleCounts,
    /// Temperature span, kelvin, that maps to one unit of network output.
    pub temp_scale_k: f64,
    /// Starting heat transfer coefficient, W/m²K.
    pub h_init: f64,
    pub train: TrainConfig,
}

impl RigRunSpec {
    /// Desk-scale defaults: collocation counts reduced fourfold, h held
    /// for the first quarter of training while the field settles and held
    /// again for the second half.
    pub fn new(case: CaseConfig, geometry: RigGeometry, with_probes: bool) -> Self {
        let mut initial_lambdas = [1.0; N_TERMS];
        initial_lambdas[Q] = 10.0;
        Self {
            case,
            geometry,
            with_probes,
            widths: vec![2, 20, 20, 20, 1],
            counts: SampleCounts::default().reduced(4),
            temp_scale_k: 10.0,
            h_init: 300.0,
            train: TrainConfig {
                max_epochs: 6000,
                lr_params: 2e-3,
                lr_final: Some(2e-4),
                lr_h: 1e-2,
                h_warmup_epochs: 1500,
                h_freeze_epoch: Some(3000),
                lr_lambda: 1e-12,
                initial_lambdas,
                ..TrainConfig::default()
            },
        }
    }

    pub fn model(&self) -> Result<RigModel> {
        RigModel::new(self.geometry.clone(), &self.case, self.with_probes, self.temp_scale_k)
    }

    /// Samples points and initializes networks for `seed`.
    pub fn setup(&self, seed: u64) -> Result<(RigProblem, NetworkEnsemble)> {
        if !(self.h_init > 0.0) {
            return Err(Error::Config(format!("h_init {} must be positive", self.h_init)));
        }
        let model = self.model()?;
        let colloc = sample(&self.geometry, &model.scales, &self.counts, seed)?;
        let ens = model.init_ensemble(&self.widths, seed, h_to_star(self.h_init, &model.scales))?;
        Ok((RigProblem::new(model, colloc)?, ens))
    }
}

pub struct RigTrial {
    pub result: TrialResult,
    pub run: TrainRun,
    pub problem: RigProblem,
}

/// Summarizes a finished rig run. A run that diverged keeps only its stop
/// reason.
pub fn trial_result(problem: &RigProblem, run: &TrainRun, case: &CaseConfig, seed: u64) -> TrialResult {
    let mut result = TrialResult {
        seed,
        diverged: matches!(run.stop, StopReason::Diverged { .. }),
        stop: match &run.stop {
            StopReason::Epsilon => "epsilon".to_string(),
            StopReason::MaxEpochs => "max_epochs".to_string(),
            StopReason::Diverged { epoch, term } => format!("diverged at epoch {epoch} ({term})"),
        },
        epochs: run.history.len(),
        h_nn: None,
        v_nn: None,
        probes_c: Default::default(),
        pipe_delta_t_k: Vec::new(),
        energy_residual_w: None,
        final_loss: run.final_loss().cloned(),
        warnings: Vec::new(),
    };
    if result.diverged {
        return result;
    }
    let model = &problem.model;
    let ens = &run.ensemble;
    match probe_temperatures(ens, &model.geom, &model.scales) {
        Ok(p) => result.probes_c = p.into_iter().map(|(k, t)| (k, t - ZERO_CELSIUS)).collect(),
        Err(e) => result.warnings.push(format!("probe temperatures: {e}")),
    }
    let h = match extract_h(ens, &model.scales) {
        Ok(h) => h,
        Err(e) => {
            result.warnings.push(e.to_string());
            return result;
        }
    };
    result.h_nn = Some(h);
    match pipe_delta_t(ens, &problem.colloc, model) {
        Ok(dts) => {
            result.energy_residual_w = Some(energy_balance(case, &model.geom, h, &dts));
            match compute_velocity(h, case, &model.geom, &dts) {
                Ok(v) => result.v_nn = Some(v),
                Err(e) => result.warnings.push(format!("velocity: {e}")),
            }
            if dts.iter().any(|d| *d <= 0.0) {
                result
                    .warnings
                    .push("a pipe surface is not warmer than the coolant".to_string());
            }
            result.pipe_delta_t_k = dts;
        }
        Err(e) => result.warnings.push(format!("pipe temperatures: {e}")),
    }
    result
}

/// Trains one trial with `seed` for both sampling and initialization.
pub fn run_rig_trial(
    spec: &RigRunSpec,
    seed: u64,
    deterministic: bool,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RigTrial> {
    let (problem, ens) = spec.setup(seed)?;
    let config = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let run = train_with(&problem, ens, &config, deterministic, on_epoch)?;
    let result = trial_result(&problem, &run, &spec.case, seed);
    Ok(RigTrial { result, run, problem })
}

/// Runs `n_trials` trials with seeds `seed, seed + 1, …` and aggregates
/// them. Diverged trials are kept in the report, flagged, and left out of
/// the mean and std.
pub fn multi_trial(
    spec: &RigRunSpec,
    n_trials: usize,
    deterministic: bool,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<(CaseReport, Vec<RigTrial>)> {
    if n_trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    let mut trials = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let seed = spec.train.seed.wrapping_add(i as u64);
        trials.push(run_rig_trial(spec, seed, deterministic, |r| on_epoch(i, r))?);
    }
    let report = CaseReport::new(
        &spec.case,
        &spec.geometry,
        spec.with_probes,
        trials.iter().map(|t| t.result.clone()).collect(),
        serde_json::to_value(spec)?,
    );
    Ok((report, trials))
}

/// Writes the per-epoch log: epoch, active group, lr, seven terms, seven
/// weights, total, h*, wall time.
pub fn write_history_csv<W: std::io::Write>(history: &[EpochRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["epoch".to_string(), "active".into(), "lr".into()];
    header.extend(TERM_NAMES.iter().map(|s| s.to_string()));
    header.extend(TERM_NAMES.iter().map(|s| format!("lambda_{}", &s[2..])));
    header.extend(["total".into(), "h_star".into(), "wall_time_s".into()]);
    out.write_record(&header)?;
    for r in history {
        let mut row = vec![r.epoch.to_string(), r.active.clone(), format!("{:e}", r.lr)];
        row.extend(r.loss.terms.iter().map(|v| format!("{v:e}")));
        row.extend(r.loss.lambdas.iter().map(|v| format!("{v:e}")));
        row.extend([
            format!("{:e}", r.loss.total),
            format!("{:e}", r.loss.h_star),
            format!("{:.3}", r.wall_time),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkParams;

    /// `L = (θ − 3)²` on a single bias parameter.
    struct Quadratic;

    impl Problem for Quadratic {
        fn evaluate(&self, ens: &NetworkEnsemble, lambdas: &[f64; N_TERMS], active: Active) -> Result<(LossState, Gradient)> {
            let th = ens.nets[0].params()[0];
            let mut terms = [0.0; N_TERMS];
            terms[0] = (th - 3.0).powi(2);
            let mut g = Gradient::zeros(ens);
            if active != Active::H {
                g.nets[0][0] = lambdas[0] * 2.0 * (th - 3.0);
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

    fn one_param() -> NetworkEnsemble {
        let net = NetworkParams::from_layers(&[2, 1], &[vec![0.0, 0.0]], &[vec![0.0]]).unwrap();
        NetworkEnsemble::with_nets(vec![net], 1.0).unwrap()
    }

    #[test]
    fn adam_matches_hand_arithmetic() {
        // params are [w1, w2, b]; index 0 is w1
        let mut ens = one_param();
        let cfg = TrainConfig {
            lr_params: 0.1,
            lr_lambda: 1e-12,
            ..TrainConfig::default()
        };
        let mut st = OptimizerState::new(&ens, &cfg);
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut th, mut m, mut v) = (0.0f64, 0.0, 0.0);
        for t in 1..=3 {
            let lam = st.lambdas[0];
            let g = lam * 2.0 * (th - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            th -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            step_joint(&Quadratic, &mut ens, &cfg, &mut st).unwrap();
            assert_eq!(ens.nets[0].params()[0], th);
        }
        // the first Adam steps move by ~lr each
        assert!((th - 0.3).abs() < 1e-3, "{th}");
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut ens = one_param();
        let cfg = TrainConfig::default();
        let before = ens.clone();
        let mut st = OptimizerState::new(&ens, &cfg);
        step(&Quadratic, &mut ens, &cfg, &mut st, Active::All, 0.0, 0).unwrap();
        assert_eq!(ens, before);
    }

    #[test]
    fn lambdas_stay_clipped() {
        let mut ens = one_param();
        let cfg = TrainConfig {
            lr_lambda: 1e6,
            lambda_max: 50.0,
            ..TrainConfig::default()
        };
        let mut st = OptimizerState::new(&ens, &cfg);
        for _ in 0..5 {
            step_joint(&Quadratic, &mut ens, &cfg, &mut st).unwrap();
            assert!(st.lambdas.iter().all(|l| *l > 0.0 && *l <= 50.0));
        }
        assert_eq!(st.lambdas[0], 50.0);
    }

    #[test]
    fn sequential_plan_has_sweeps_then_finetune() {
        let cfg = TrainConfig {
            schedule: Schedule::Sequential,
            sweeps: 2,
            epochs_per_layer: 3,
            finetune_fraction: 0.5,
            max_epochs: 100,
            ..TrainConfig::default()
        };
        let plan = cfg.plan(&[Active::Net(0), Active::Net(1)]);
        assert_eq!(plan.len(), 18);
        assert_eq!(&plan[..4], &[Active::Net(0), Active::Net(0), Active::Net(0), Active::Net(1)]);
        assert!(plan[12..].iter().all(|a| *a == Active::All));
        let short = TrainConfig { max_epochs: 5, ..cfg };
        assert_eq!(short.plan(&[Active::Net(0)]).len(), 5);
    }

    #[test]
    fn zero_epochs_gives_empty_history() {
        let ens = one_param();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let run = train(&Quadratic, ens.clone(), &cfg, true).unwrap();
        assert!(run.history.is_empty());
        assert_eq!(run.ensemble, ens);
    }

    #[test]
    fn learning_rate_decays_geometrically() {
        let cfg = TrainConfig {
            max_epochs: 3,
            lr_params: 1e-2,
            lr_final: Some(1e-4),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 1e-2);
        assert!((cfg.lr_at(1) - 1e-3).abs() < 1e-15);
        assert!((cfg.lr_at(2) - 1e-4).abs() < 1e-16);
    }

    struct Blowup;

    impl Problem for Blowup {
        fn evaluate(&self, ens: &NetworkEnsemble, lambdas: &[f64; N_TERMS], _: Active) -> Result<(LossState, Gradient)> {
            let mut terms = [0.0; N_TERMS];
            terms[2] = f64::NAN;
            Ok((LossState::new(terms, *lambdas, 1.0), Gradient::zeros(ens)))
        }

        fn trains_h(&self) -> bool {
            false
        }

        fn sweep_order(&self) -> Vec<Active> {
            vec![Active::Net(0)]
        }
    }

    #[test]
    fn divergence_names_the_term_and_keeps_history() {
        let run = train(&Blowup, one_param(), &TrainConfig::default(), true).unwrap();
        assert!(run.history.is_empty());
        assert_eq!(
            run.stop,
            StopReason::Diverged {
                epoch: 0,
                term: "L_IC".into()
            }
        );
        assert!(matches!(run.check(), Err(Error::Divergence { .. })));
    }
}
