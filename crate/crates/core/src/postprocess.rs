//! From a trained ensemble to reported quantities: `h`, coolant velocity,
//! probe temperatures, energy balance and temperature grids.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::domain::{
    h_from_star, json_field, nondim_point, redim_temp, CollocationSet, NondimScales, Region, RigGeometry, N_LAYERS,
    PROBE_NAMES,
};
use crate::error::{Error, Result};
use crate::network::{NetworkEnsemble, Subdomain};
use crate::physics::{heat_out, pipe_max_temperatures, LossState, RigModel};

pub const CASE_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const ZERO_CELSIUS: f64 = 273.15;

fn default_rho() -> f64 {
    999.1
}

fn default_cp() -> f64 {
    4188.5
}

/// One experimental run. Temperatures are °C in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub schema_version: u32,
    pub case_id: String,
    pub power_w: f64,
    pub t_in_c: f64,
    pub t_out_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_rate_l_min: Option<f64>,
    #[serde(default = "default_rho")]
    pub rho_kg_m3: f64,
    #[serde(default = "default_cp")]
    pub c_p_j_kg_k: f64,
    /// Inner pipe radius; the geometry's value when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_pipe_m: Option<f64>,
    /// Total pipe length in the cold plate; the geometry's value when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipe_length_m: Option<f64>,
    /// Inner pipe surface area; `2πr·l` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1_m2: Option<f64>,
    /// Flow cross-section; `πr²` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2_m2: Option<f64>,
    /// Recorded but not used by the model: every outer boundary is
    /// insulated or periodic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient_c: Option<f64>,
    /// Sensor readings in °C keyed by probe name (Face, Side, In1, In2).
    #[serde(default)]
    pub probes_c: BTreeMap<String, f64>,
    /// Velocity as printed in the source table, for cross-checking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_exp_table_m_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Geometry file, relative to the case file; default rig when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<String>,
}

impl CaseConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: CaseConfig = serde_json::from_str(s).map_err(|e| Error::schema(json_field(&e), e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CASE_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        if self.t_out_c <= self.t_in_c {
            return Err(Error::Validation(format!(
                "case {}: outlet temperature {} °C must exceed inlet {} °C",
                self.case_id, self.t_out_c, self.t_in_c
            )));
        }
        let positive = [
            ("power_w", Some(self.power_w)),
            ("rho_kg_m3", Some(self.rho_kg_m3)),
            ("c_p_j_kg_k", Some(self.c_p_j_kg_k)),
            ("r_pipe_m", self.r_pipe_m),
            ("pipe_length_m", self.pipe_length_m),
            ("a1_m2", self.a1_m2),
            ("a2_m2", self.a2_m2),
            ("flow_rate_l_min", self.flow_rate_l_min),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Validation(format!("case {}: {name} must be positive", self.case_id)));
                }
            }
        }
        Ok(())
    }

    pub fn t_in_k(&self) -> f64 {
        self.t_in_c + ZERO_CELSIUS
    }

    pub fn t_out_k(&self) -> f64 {
        self.t_out_c + ZERO_CELSIUS
    }

    pub fn delta_t2(&self) -> f64 {
        self.t_out_c - self.t_in_c
    }

    pub fn r_pipe(&self, geom: &RigGeometry) -> f64 {
        self.r_pipe_m.unwrap_or(geom.pipes[0].r_inner)
    }

    pub fn pipe_length(&self, geom: &RigGeometry) -> f64 {
        self.pipe_length_m.unwrap_or(geom.pipe_length)
    }

    pub fn a1(&self, geom: &RigGeometry) -> f64 {
        self.a1_m2
            .unwrap_or_else(|| 2.0 * PI * self.r_pipe(geom) * self.pipe_length(geom))
    }

    pub fn a2(&self, geom: &RigGeometry) -> f64 {
        self.a2_m2.unwrap_or_else(|| {
            let r = self.r_pipe(geom);
            PI * r * r
        })
    }

    /// Measured mean velocity from the volumetric flow rate.
    pub fn v_exp(&self, geom: &RigGeometry) -> Option<f64> {
        self.flow_rate_l_min.map(|q| q / (self.a2(geom) * 6.0e4))
    }

    /// Readings in kelvin.
    pub fn probes_k(&self) -> BTreeMap<String, f64> {
        self.probes_c.iter().map(|(k, v)| (k.clone(), v + ZERO_CELSIUS)).collect()
    }
}

/// `h = h*/U_0`.
pub fn extract_h(ens: &NetworkEnsemble, scales: &NondimScales) -> Result<f64> {
    let h = h_from_star(ens.h_star(), scales);
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Unphysical(format!("heat transfer coefficient {h} is not positive")));
    }
    Ok(h)
}

/// `v = h·A_1·mean(ΔT_i) / (ρ·A_2·c_p·ΔT_2)`.
pub fn compute_velocity(h: f64, case: &CaseConfig, geom: &RigGeometry, delta_t_pipes: &[f64]) -> Result<f64> {
    let dt2 = case.delta_t2();
    if !(dt2 > 0.0) {
        return Err(Error::Config(format!("coolant temperature rise {dt2} K must be positive")));
    }
    if delta_t_pipes.is_empty() {
        return Err(Error::Config("no pipe temperature differences".into()));
    }
    let mean = delta_t_pipes.iter().sum::<f64>() / delta_t_pipes.len() as f64;
    Ok(h * case.a1(geom) * mean / (case.rho_kg_m3 * case.a2(geom) * case.c_p_j_kg_k * dt2))
}

/// `Q_in − h·(A_1/6)·Σ ΔT_i` in watts.
pub fn energy_balance(case: &CaseConfig, geom: &RigGeometry, h: f64, delta_t_pipes: &[f64]) -> f64 {
    let pass = case.a1(geom) / delta_t_pipes.len().max(1) as f64;
    case.power_w - heat_out(h, pass, delta_t_pipes, 0.0)
}

/// Hottest inner-surface temperature of each pipe minus `t_w`, kelvin.
pub fn pipe_delta_t(ens: &NetworkEnsemble, colloc: &CollocationSet, model: &RigModel) -> Result<Vec<f64>> {
    let t_w = 0.5 * (model.bc.t_in + model.bc.t_out);
    Ok(pipe_max_temperatures(ens, colloc, &model.scales)?
        .into_iter()
        .map(|t| t - t_w)
        .collect())
}

/// Network temperatures (kelvin) at every probe of the geometry.
pub fn probe_temperatures(ens: &NetworkEnsemble, geom: &RigGeometry, scales: &NondimScales) -> Result<BTreeMap<String, f64>> {
    geom.probes
        .iter()
        .map(|p| {
            if p.layer >= N_LAYERS || !geom.contains(Region::Layer(p.layer), p.position) {
                return Err(Error::Config(format!("probe {} is not inside layer {}", p.name, p.layer)));
            }
            let q = nondim_point(p.position, scales);
            let u = ens.net(Subdomain::Layer(p.layer)).forward(q[0], q[1]);
            Ok((p.name.clone(), redim_temp(u, scales)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    pub x: f64,
    pub y: f64,
    /// `layer0`..`layer4` or `pipes`.
    pub region: String,
    pub t_k: f64,
}

/// Temperatures on a rectangular grid per layer (points inside the pipes
/// are taken from the pipe network or skipped in the coolant) plus a polar
/// grid over each pipe wall.
pub fn temperature_field(ens: &NetworkEnsemble, geom: &RigGeometry, scales: &NondimScales, nx: usize, ny: usize) -> Result<Vec<FieldPoint>> {
    if nx < 2 || ny < 2 {
        return Err(Error::Config("field grid needs at least 2 points per axis".into()));
    }
    let mut out = Vec::new();
    let eval = |sub: Subdomain, p: [f64; 2]| {
        let q = nondim_point(p, scales);
        redim_temp(ens.net(sub).forward(q[0], q[1]), scales)
    };
    for (l, layer) in geom.layers.iter().enumerate() {
        for j in 0..ny {
            let y = layer.y_bottom + layer.thickness() * j as f64 / (ny - 1) as f64;
            for i in 0..nx {
                let x = geom.x_n * i as f64 / (nx - 1) as f64;
                let p = [x, y];
                let sub = if l == 0 {
                    match geom.region_of(p) {
                        Some(Region::Water(_)) => continue,
                        Some(Region::PipeWall(_)) => Subdomain::Pipes,
                        _ => Subdomain::Layer(0),
                    }
                } else {
                    Subdomain::Layer(l)
                };
                out.push(FieldPoint {
                    x,
                    y,
                    region: sub.name(),
                    t_k: eval(sub, p),
                });
            }
        }
    }
    for pipe in &geom.pipes {
        for j in 0..ny {
            let r = pipe.r_inner + (pipe.r_outer - pipe.r_inner) * j as f64 / (ny - 1) as f64;
            for i in 0..nx {
                let th = 2.0 * PI * i as f64 / nx as f64;
                let p = [pipe.center[0] + r * th.cos(), pipe.center[1] + r * th.sin()];
                out.push(FieldPoint {
                    x: p[0],
                    y: p[1],
                    region: Subdomain::Pipes.name(),
                    t_k: eval(Subdomain::Pipes, p),
                });
            }
        }
    }
    Ok(out)
}

pub fn write_field_csv<W: std::io::Write>(field: &[FieldPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x_m", "y_m", "region", "t_k"])?;
    for p in field {
        out.write_record([format!("{:e}", p.x), format!("{:e}", p.y), p.region.clone(), format!("{:.6}", p.t_k)])?;
    }
    out.flush()?;
    Ok(())
}

/// Mean and sample standard deviation (`n − 1`; 0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

/// One training run of a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub diverged: bool,
    pub stop: String,
    pub epochs: usize,
    pub h_nn: Option<f64>,
    pub v_nn: Option<f64>,
    /// Predicted probe temperatures, °C.
    pub probes_c: BTreeMap<String, f64>,
    pub pipe_delta_t_k: Vec<f64>,
    pub energy_residual_w: Option<f64>,
    pub final_loss: Option<LossState>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub schema_version: u32,
    pub case_id: String,
    pub with_probes: bool,
    pub trials: Vec<TrialResult>,
    /// Over non-diverged trials: `h_nn`, `v_nn`, `energy_residual_w`, and
    /// `probe_<name>_c`.
    pub aggregates: BTreeMap<String, Stat>,
    pub v_exp: Option<f64>,
    pub probes_exp_c: BTreeMap<String, f64>,
    /// Architecture, schedule, seeds and geometry used.
    pub config: serde_json::Value,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl CaseReport {
    pub fn new(case: &CaseConfig, geom: &RigGeometry, with_probes: bool, trials: Vec<TrialResult>, config: serde_json::Value) -> Self {
        let mut flags = Vec::new();
        for t in &trials {
            if t.diverged {
                flags.push(format!("trial with seed {} diverged ({}) and is excluded from the aggregates", t.seed, t.stop));
            }
        }
        let aggregates = aggregate(&trials);
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            case_id: case.case_id.clone(),
            with_probes,
            trials,
            aggregates,
            v_exp: case.v_exp(geom),
            probes_exp_c: case.probes_c.clone(),
            config,
            flags,
        }
    }

    pub fn mean(&self, key: &str) -> Option<f64> {
        self.aggregates.get(key).map(|s| s.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Summary CSV columns, in order.
    pub fn summary_header() -> Vec<String> {
        let mut h: Vec<String> = ["case_id", "with_probes", "n_trials", "h_mean", "h_std", "v_mean", "v_std", "v_exp"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for p in PROBE_NAMES {
            h.push(format!("{p}_pred_c"));
            h.push(format!("{p}_exp_c"));
        }
        h
    }

    pub fn summary_row(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let h = self.aggregates.get("h_nn");
        let v = self.aggregates.get("v_nn");
        let mut row = vec![
            self.case_id.clone(),
            self.with_probes.to_string(),
            h.map(|s| s.n).unwrap_or(0).to_string(),
            f(h.map(|s| s.mean)),
            f(h.map(|s| s.std)),
            f(v.map(|s| s.mean)),
            f(v.map(|s| s.std)),
            f(self.v_exp),
        ];
        for p in PROBE_NAMES {
            row.push(f(self.mean(&format!("probe_{p}_c"))));
            row.push(f(self.probes_exp_c.get(p).copied()));
        }
        row
    }
}

/// Mean and sample std of every reported quantity over the trials that
/// did not diverge.
pub fn aggregate(trials: &[TrialResult]) -> BTreeMap<String, Stat> {
    let ok: Vec<&TrialResult> = trials.iter().filter(|t| !t.diverged).collect();
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in &ok {
        let fields = [("h_nn", t.h_nn), ("v_nn", t.v_nn), ("energy_residual_w", t.energy_residual_w)];
        for (k, v) in fields {
            if let Some(v) = v {
                columns.entry(k.to_string()).or_default().push(v);
            }
        }
        for (k, v) in &t.probes_c {
            columns.entry(format!("probe_{k}_c")).or_default().push(*v);
        }
    }
    columns
        .into_iter()
        .filter_map(|(k, v)| Stat::of(&v).map(|s| (k, s)))
        .collect()
}

pub fn write_summary_csv<W: std::io::Write>(reports: &[&CaseReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CaseReport::summary_header())?;
    for r in reports {
        out.write_record(r.summary_row())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a13_4() -> CaseConfig {
        CaseConfig::from_json_str(include_str!("../data/cases/A13_4.json")).unwrap()
    }

    #[test]
    fn bundled_case_reads_back() {
        let c = a13_4();
        assert_eq!(c.power_w, 259.2);
        assert_eq!(c.t_in_c, 10.0226);
        assert_eq!(c.t_out_c, 12.5535);
        let v = c.v_exp(&RigGeometry::default()).unwrap();
        assert!((v - 0.2960).abs() < 5e-4, "{v}");
        let again = CaseConfig::from_json_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn missing_field_is_named() {
        let err = CaseConfig::from_json_str(r#"{"schema_version":1,"case_id":"x","t_in_c":1.0,"t_out_c":2.0}"#).unwrap_err();
        match err {
            Error::Schema { field, .. } => assert_eq!(field, "power_w"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn reversed_temperatures_fail_validation() {
        let r = CaseConfig::from_json_str(r#"{"schema_version":1,"case_id":"x","power_w":1.0,"t_in_c":12.0,"t_out_c":11.0}"#);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn velocity_back_substitution() {
        let c = a13_4();
        let g = RigGeometry::default();
        // mean ΔT that makes the quotient exactly 0.28 at h = 2929.71
        let dt = 0.28 * c.rho_kg_m3 * c.a2(&g) * c.c_p_j_kg_k * c.delta_t2() / (2929.71 * c.a1(&g));
        let v = compute_velocity(2929.71, &c, &g, &[dt; 6]).unwrap();
        assert!((v - 0.28).abs() < 1e-12);
        assert_eq!(compute_velocity(0.0, &c, &g, &[dt; 6]).unwrap(), 0.0);
        let v2 = compute_velocity(3.0 * 2929.71, &c, &g, &[dt; 6]).unwrap();
        assert!((v2 - 3.0 * v).abs() < 1e-12);
    }

    #[test]
    fn energy_balance_sign() {
        let c = a13_4();
        let g = RigGeometry::default();
        assert_eq!(energy_balance(&c, &g, 3000.0, &[0.0; 6]), c.power_w);
        let dt = c.power_w / (3000.0 * c.a1(&g));
        assert!(energy_balance(&c, &g, 3000.0, &[dt; 6]).abs() < 1e-9);
    }

    #[test]
    fn aggregation_reproduces_table_values() {
        let s = Stat::of(&[3170.89, 3281.05, 3165.11]).unwrap();
        assert_eq!(format!("{:.2}", s.mean), "3205.68");
        // the inputs are rounded to 0.01, which moves the std by up to ~0.01
        assert!((s.std - 65.34).abs() <= 0.01, "{}", s.std);
        let one = Stat::of(&[1.5]).unwrap();
        assert_eq!((one.mean, one.std), (1.5, 0.0));
    }
}
