//! Residuals and the seven-term weighted loss for the multilayer rig.
//!
//! Two layers of API:
//!
//! * `residual_*` functions evaluate one condition at one point through the
//!   autodiff tape. They return raw residuals in the scaled variables.
//! * [`RigProblem`] evaluates every condition over a whole
//!   [`CollocationSet`] in batches, normalizes each residual to order one,
//!   and returns the loss together with its parameter gradient.
//!
//! Normalization used by `RigProblem` (all residuals become dimensionless
//! and order one for a reasonable field):
//!
//! | condition             | divided by                         |
//! |-----------------------|------------------------------------|
//! | Laplacian             | `k*·x_L²·S·s_y²` (`s_y` input scale) |
//! | any heat flux         | reference flux `q_ref` (W/m²)       |
//! | value jump, data      | output scale `S`                    |
//! | energy balance        | `P_0`                               |

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::domain::{
    alpha_star, flux_per_depth, k_hat, k_star, nondim_temp, redim_point, redim_temp, CollocationSet, NondimScales, Region,
    RigGeometry, CIRCLE_TOL, N_LAYERS, N_PIPES,
};
use crate::error::{Error, Result};
use crate::network::{Channel, Channels, InputMap, Jet, NetworkEnsemble, NetworkParams, OutputMap, Subdomain, TaylorCache};
use crate::postprocess::CaseConfig;

pub const N_TERMS: usize = 7;
pub const TERM_NAMES: [&str; N_TERMS] = ["L_PDE", "L_BC", "L_IC", "L_CB", "L_h", "L_Q", "L_Data"];

pub const PDE: usize = 0;
pub const BC: usize = 1;
pub const IC: usize = 2;
pub const CB: usize = 3;
pub const H: usize = 4;
pub const Q: usize = 5;
pub const DATA: usize = 6;

/// Probes used as training data when data mode is on.
pub const DATA_PROBES: [&str; 2] = ["Face", "Side"];

/// Loss terms, their weights and the current `h*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossState {
    pub terms: [f64; N_TERMS],
    pub lambdas: [f64; N_TERMS],
    pub total: f64,
    pub h_star: f64,
    /// RMS value jump across each planar interface, kelvin.
    #[serde(default)]
    pub interface_rms: Vec<f64>,
}

impl LossState {
    pub fn new(terms: [f64; N_TERMS], lambdas: [f64; N_TERMS], h_star: f64) -> Self {
        let total = terms.iter().zip(&lambdas).map(|(l, w)| l * w).sum();
        Self {
            terms,
            lambdas,
            total,
            h_star,
            interface_rms: Vec::new(),
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        self.terms
            .iter()
            .position(|t| !t.is_finite())
            .map(|i| TERM_NAMES[i])
            .or(if self.total.is_finite() { None } else { Some("total") })
    }
}

/// Coolant-side conditions in scaled form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub t_in: f64,
    pub t_out: f64,
    pub t_w_star: f64,
    /// Readings in kelvin for the probes used as data; empty in no-data mode.
    pub probes: BTreeMap<String, f64>,
}

impl BoundaryData {
    pub fn new(t_in: f64, t_out: f64, scales: &NondimScales, probes: BTreeMap<String, f64>) -> Self {
        Self {
            t_in,
            t_out,
            t_w_star: nondim_temp(0.5 * (t_in + t_out), scales),
            probes,
        }
    }
}

/// Everything about the physical problem the loss needs besides points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigModel {
    pub geom: RigGeometry,
    pub scales: NondimScales,
    pub bc: BoundaryData,
    pub power: f64,
    /// Heat flux on the footprint, W/m².
    pub q_flux: f64,
    /// Flux used to normalize flux residuals, W/m².
    pub q_ref: f64,
    pub alpha_star: f64,
    /// Output scale `S` of every network, in units of `U_0`.
    pub temp_scale: f64,
    /// Inner surface area of one pipe pass, m².
    pub pass_area: f64,
}

impl RigModel {
    /// `U_0` is the inlet temperature; `temp_scale_k` sets the output scale.
    pub fn new(geom: RigGeometry, case: &CaseConfig, use_data: bool, temp_scale_k: f64) -> Result<Self> {
        case.validate()?;
        geom.validate()?;
        if !(temp_scale_k > 0.0) {
            return Err(Error::Config("temperature scale must be positive".into()));
        }
        let scales = geom.default_scales(case.t_in_k());
        let probes = if use_data {
            let all = case.probes_k();
            DATA_PROBES
                .iter()
                .filter_map(|n| all.get(*n).map(|v| (n.to_string(), *v)))
                .collect()
        } else {
            BTreeMap::new()
        };
        for name in probes.keys() {
            if geom.probe(name).is_none() {
                return Err(Error::Config(format!("probe {name} has no location in the geometry")));
            }
        }
        let bc = BoundaryData::new(case.t_in_k(), case.t_out_k(), &scales, probes);
        let q_flux = geom.heat_flux(case.power_w);
        let k4 = geom.layers[4].k;
        let alpha = flux_per_depth(q_flux, k4)?;
        let pass_area = case.a1(&geom) / N_PIPES as f64;
        Ok(Self {
            q_ref: q_flux,
            alpha_star: alpha_star(alpha, &scales),
            temp_scale: temp_scale_k / scales.u0,
            power: case.power_w,
            q_flux,
            pass_area,
            bc,
            scales,
            geom,
        })
    }

    pub fn conductivity(&self, sub: Subdomain) -> f64 {
        match sub {
            Subdomain::Layer(i) => self.geom.layers[i].k,
            Subdomain::Pipes => self.geom.pipes[0].k_pipe,
        }
    }

    pub fn k_hat(&self, sub: Subdomain) -> f64 {
        k_hat(self.conductivity(sub), &self.scales)
    }

    pub fn k_star(&self, sub: Subdomain) -> f64 {
        k_star(self.conductivity(sub), &self.scales)
    }

    /// `y_L/x_L`, the factor on x-derivatives in flux expressions.
    pub fn aspect(&self) -> f64 {
        self.scales.y_l / self.scales.x_l
    }

    fn energy_scale(&self) -> f64 {
        if self.power > 0.0 {
            self.power
        } else {
            1.0
        }
    }

    /// Input map sending the subdomain's bounding box onto `[-1, 1]²`.
    pub fn input_map(&self, sub: Subdomain) -> InputMap {
        let s = &self.scales;
        let g = &self.geom;
        match sub {
            Subdomain::Layer(i) => {
                let l = &g.layers[i];
                InputMap::unit_box((0.0, g.x_n / s.x_l), (l.y_bottom / s.y_l, l.y_top / s.y_l))
            }
            Subdomain::Pipes => {
                let x0 = g.pipes.iter().map(|p| p.center[0] - p.r_outer).fold(f64::INFINITY, f64::min);
                let x1 = g.pipes.iter().map(|p| p.center[0] + p.r_outer).fold(f64::NEG_INFINITY, f64::max);
                let y0 = g.pipes.iter().map(|p| p.center[1] - p.r_outer).fold(f64::INFINITY, f64::min);
                let y1 = g.pipes.iter().map(|p| p.center[1] + p.r_outer).fold(f64::NEG_INFINITY, f64::max);
                InputMap::unit_box((x0 / s.x_l, x1 / s.x_l), (y0 / s.y_l, y1 / s.y_l))
            }
        }
    }

    pub fn output_map(&self) -> OutputMap {
        OutputMap {
            offset: self.bc.t_w_star,
            scale: self.temp_scale,
        }
    }

    /// Fresh ensemble with the model's input/output maps.
    pub fn init_ensemble(&self, widths: &[usize], seed: u64, h_star: f64) -> Result<NetworkEnsemble> {
        let mut ens = NetworkEnsemble::init(widths, seed, h_star)?;
        for sub in Subdomain::ALL {
            let net = ens.net_mut(sub);
            net.input_map = self.input_map(sub);
            net.output_map = self.output_map();
        }
        Ok(ens)
    }

    fn check_region(&self, sub: Subdomain, p_star: [f64; 2]) -> Result<()> {
        let p = redim_point(p_star, &self.scales);
        let ok = match sub {
            Subdomain::Layer(i) => self.geom.contains(Region::Layer(i), p),
            Subdomain::Pipes => (0..N_PIPES).any(|i| self.geom.contains(Region::PipeWall(i), p)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Region(format!("point {p_star:?} is not in {sub}")))
        }
    }

    /// Physical unit normal (away from the center) at a point on circle
    /// `radius` of pipe `pipe`; geometry error if the point is off it.
    fn circle_normal(&self, pipe: usize, p_star: [f64; 2], radius: f64) -> Result<[f64; 2]> {
        let pipe_spec = self
            .geom
            .pipes
            .get(pipe)
            .ok_or_else(|| Error::Geometry(format!("no pipe with index {pipe}")))?;
        let p = redim_point(p_star, &self.scales);
        let d = [p[0] - pipe_spec.center[0], p[1] - pipe_spec.center[1]];
        let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if (r - radius).abs() > CIRCLE_TOL.max(1e-9) * radius {
            return Err(Error::Geometry(format!(
                "point at distance {r} from pipe p{} center, expected {radius}",
                pipe_spec.id
            )));
        }
        Ok([d[0] / r, d[1] / r])
    }
}

/// Value and input derivatives of one network at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointJet {
    pub u: f64,
    pub ux: f64,
    pub uy: f64,
    pub uxx: f64,
    pub uyy: f64,
}

/// Evaluates a network and its derivatives at `p` through the autodiff tape.
pub fn point_jet(net: &NetworkParams, p: [f64; 2]) -> Result<PointJet> {
    let tape: Tape = net.to_tape();
    let x = tape.input("x").expect("network tape declares x");
    let y = tape.input("y").expect("network tape declares y");
    let (g, _) = tape.gradient_with_stats(&p)?;
    Ok(PointJet {
        u: tape.evaluate_at(&p)?,
        ux: g[0],
        uy: g[1],
        uxx: tape.second_derivative_at(&p, x, x)?,
        uyy: tape.second_derivative_at(&p, y, y)?,
    })
}

/// Per-subdomain scaled temperature `u*` with derivatives, plus `h*`.
/// Networks are the usual source; closed-form fields serve as oracles.
pub trait FieldSource {
    fn jet(&self, sub: Subdomain, p: [f64; 2]) -> Result<PointJet>;

    fn value(&self, sub: Subdomain, p: [f64; 2]) -> Result<f64> {
        Ok(self.jet(sub, p)?.u)
    }

    fn h_star(&self) -> f64;
}

impl FieldSource for NetworkEnsemble {
    fn jet(&self, sub: Subdomain, p: [f64; 2]) -> Result<PointJet> {
        point_jet(self.net(sub), p)
    }

    fn value(&self, sub: Subdomain, p: [f64; 2]) -> Result<f64> {
        Ok(self.net(sub).forward(p[0], p[1]))
    }

    fn h_star(&self) -> f64 {
        NetworkEnsemble::h_star(self)
    }
}

/// `(y_L/x_L)·u*_x·n_x + u*_y·n_y`; times `k̂*` this is the physical flux
/// `k·∂u/∂n` along the unit normal `n`.
pub fn normal_flux_form(ux: f64, uy: f64, n: [f64; 2], s: &NondimScales) -> f64 {
    (s.y_l / s.x_l) * ux * n[0] + uy * n[1]
}

/// `k*·(y_L²·u*_xx + x_L²·u*_yy)`.
pub fn residual_pde<F: FieldSource + ?Sized>(ens: &F, model: &RigModel, p: [f64; 2], sub: Subdomain) -> Result<f64> {
    model.check_region(sub, p)?;
    let j = ens.jet(sub, p)?;
    let s = &model.scales;
    Ok(model.k_star(sub) * (s.y_l * s.y_l * j.uxx + s.x_l * s.x_l * j.uyy))
}

fn layer_sub(layer: usize) -> Result<Subdomain> {
    if layer >= N_LAYERS {
        return Err(Error::Region(format!("no layer {layer}")));
    }
    Ok(Subdomain::Layer(layer))
}

/// `u*_x(0, y*) − u*_x(x_N/x_L, y*)`.
pub fn residual_periodic<F: FieldSource + ?Sized>(ens: &F, model: &RigModel, y_star: f64, layer: usize) -> Result<f64> {
    let sub = layer_sub(layer)?;
    let x_r = model.geom.x_n / model.scales.x_l;
    model.check_region(sub, [0.0, y_star])?;
    Ok(ens.jet(sub, [0.0, y_star])?.ux - ens.jet(sub, [x_r, y_star])?.ux)
}

/// `u*(0, y*) − u*(x_N/x_L, y*)`. Derivative periodicity alone leaves a
/// linear drift in x free; this closes it.
pub fn residual_periodic_value<F: FieldSource + ?Sized>(ens: &F, model: &RigModel, y_star: f64, layer: usize) -> Result<f64> {
    let sub = layer_sub(layer)?;
    let x_r = model.geom.x_n / model.scales.x_l;
    model.check_region(sub, [0.0, y_star])?;
    Ok(ens.value(sub, [0.0, y_star])? - ens.value(sub, [x_r, y_star])?)
}

/// Outer boundaries carrying a Neumann condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeumannBoundary {
    /// Bottom of the cold plate, insulated.
    Bottom,
    /// Top face outside the footprint, insulated.
    TopInsulated,
    /// Top face on `[x_A, x_B]`, prescribed flux.
    TopFlux,
}

/// `u*_y − α*` on the heated footprint.
pub fn residual_flux_top<F: FieldSource + ?Sized>(ens: &F, model: &RigModel, x_star: f64) -> Result<f64> {
    residual_neumann(ens, model, x_star, NeumannBoundary::TopFlux)
}

/// `u*_y − g` with `g = α*` on the footprint and `0` on insulated parts.
pub fn residual_neumann<F: FieldSource + ?Sized>(ens: &F, model: &RigModel, x_star: f64, which: NeumannBoundary) -> Result<f64> {
    let g = &model.geom;
    let x = x_star * model.scales.x_l;
    let eps = 1e-12 * g.x_n;
    let on_footprint = x >= g.x_a - eps && x <= g.x_b + eps;
    let (layer, y, target) = match which {
        NeumannBoundary::Bottom => (0, 0.0, 0.0),
        NeumannBoundary::TopInsulated => {
            let inside = (x > g.x_b - eps && x <= g.x_n + eps) || (x >= -eps && x < g.x_a + eps);
            if !inside {
                return Err(Error::Region(format!("x* = {x_star} is not on an insulated top segment")));
            }
            (4, g.y_n, 0.0)
        }
        NeumannBoundary::TopFlux => {
            if !on_footprint {
                return Err(Error::Region(format!("x* = {x_star} is outside the heated footprint")));
            }
            (4, g.y_n, model.alpha_star)
        }
    };
    if x < -eps || x > g.x_n + eps {
        return Err(Error::Region(format!("x* = {x_star} is outside the plate")));
    }
    let j = ens.jet(layer_sub(layer)?, [x_star, y / model.scales.y_l])?;
    Ok(j.uy - target)
}

/// `(u*ⁱ − u*ʲ, k̂ᵢ·u*ⁱ_y − k̂ⱼ·u*ʲ_y)` on the interface above layer `lower`.
pub fn residual_interface_planar<F: FieldSource + ?Sized>(
    ens: &F,
    model: &RigModel,
    x_star: f64,
    lower: usize,
) -> Result<(f64, f64)> {
    if lower + 1 >= N_LAYERS {
        return Err(Error::Region(format!("no interface above layer {lower}")));
    }
    let y = model.geom.layers[lower].y_top / model.scales.y_l;
    let p = [x_star, y];
    model.check_region(Subdomain::Layer(lower), p)?;
    let (a, b) = (Subdomain::Layer(lower), Subdomain::Layer(lower + 1));
    let ja = ens.jet(a, p)?;
    let jb = ens.jet(b, p)?;
    Ok((ja.u - jb.u, model.k_hat(a) * ja.uy - model.k_hat(b) * jb.uy))
}

/// Value jump and normal-flux jump between the cold plate and a pipe wall
/// on the pipe's outer circle.
pub fn residual_interface_circular<F: FieldSource + ?Sized>(
    ens: &F,
    model: &RigModel,
    p: [f64; 2],
    pipe: usize,
) -> Result<(f64, f64)> {
    let r = model.geom.pipes.get(pipe).map(|s| s.r_outer).unwrap_or(0.0);
    let n = model.circle_normal(pipe, p, r)?;
    let a = Subdomain::Layer(0);
    let b = Subdomain::Pipes;
    let ja = ens.jet(a, p)?;
    let jb = ens.jet(b, p)?;
    let s = &model.scales;
    Ok((
        ja.u - jb.u,
        model.k_hat(a) * normal_flux_form(ja.ux, ja.uy, n, s) - model.k_hat(b) * normal_flux_form(jb.ux, jb.uy, n, s),
    ))
}

/// Robin condition on a pipe's inner surface:
/// `k̂*·∂u*/∂n − h*(u* − t_w*)` with `n` pointing away from the pipe axis,
/// i.e. into the wall. Heat leaving the wall into the water makes both
/// parts positive.
pub fn residual_convective<F: FieldSource + ?Sized>(
    ens: &F,
    model: &RigModel,
    p: [f64; 2],
    pipe: usize,
    t_w_star: f64,
) -> Result<f64> {
    let r = model.geom.pipes.get(pipe).map(|s| s.r_inner).unwrap_or(0.0);
    let n = model.circle_normal(pipe, p, r)?;
    let j = ens.jet(Subdomain::Pipes, p)?;
    let flux = model.k_hat(Subdomain::Pipes) * normal_flux_form(j.ux, j.uy, n, &model.scales);
    Ok(flux - ens.h_star() * (j.u - t_w_star))
}

/// Hottest redimensioned temperature on each pipe's inner surface points.
pub fn pipe_max_temperatures<F: FieldSource + ?Sized>(ens: &F, colloc: &CollocationSet, scales: &NondimScales) -> Result<Vec<f64>> {
    colloc
        .circle_inner
        .iter()
        .enumerate()
        .map(|(i, pts)| {
            if pts.is_empty() {
                return Err(Error::Config(format!("pipe {i} has no inner-surface points")));
            }
            let mut t = f64::NEG_INFINITY;
            for c in pts {
                t = t.max(redim_temp(ens.value(Subdomain::Pipes, c.p)?, scales));
            }
            Ok(t)
        })
        .collect()
}

/// `Q_out = h·A·Σᵢ(tᵢ − t_w)` with `h = h*/U_0` and `A` the area of one pass.
pub fn heat_out(h: f64, pass_area: f64, t_max: &[f64], t_w: f64) -> f64 {
    h * pass_area * t_max.iter().map(|t| t - t_w).sum::<f64>()
}

/// `(Q_in − Q_out)/P_0` using the current `h*` and the pipe maxima.
pub fn residual_energy<F: FieldSource + ?Sized>(ens: &F, model: &RigModel, colloc: &CollocationSet) -> Result<f64> {
    let t_max = pipe_max_temperatures(ens, colloc, &model.scales)?;
    let t_w = 0.5 * (model.bc.t_in + model.bc.t_out);
    let h = ens.h_star() / model.scales.u0;
    Ok((model.power - heat_out(h, model.pass_area, &t_max, t_w)) / model.energy_scale())
}

/// `Σ ((T_pred − T_read)/U_0)²` over the data probes; 0 without data.
pub fn residual_data<F: FieldSource + ?Sized>(ens: &F, model: &RigModel, probes: &BTreeMap<String, f64>) -> Result<f64> {
    let s = &model.scales;
    let mut sum = 0.0;
    for (name, reading) in probes {
        let spec = model
            .geom
            .probe(name)
            .ok_or_else(|| Error::Config(format!("probe {name} has no location")))?;
        let p = [spec.position[0] / s.x_l, spec.position[1] / s.y_l];
        let u = ens.value(Subdomain::Layer(spec.layer), p)?;
        let d = u - nondim_temp(*reading, s);
        sum += d * d;
    }
    Ok(sum)
}

/// Which parameters a step may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Active {
    All,
    Net(usize),
    /// Only `ln h*`.
    H,
}

impl Active {
    pub fn name(self) -> String {
        match self {
            Active::All => "all".into(),
            Active::Net(i) => Subdomain::from_index(i).map(|s| s.name()).unwrap_or_else(|| format!("net{i}")),
            Active::H => "h".into(),
        }
    }
}

/// Gradient of the weighted loss, one buffer per network plus `ln h*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub nets: Vec<Vec<f64>>,
    pub log_h: f64,
}

impl Gradient {
    pub fn zeros(ens: &NetworkEnsemble) -> Self {
        Self {
            nets: ens.nets.iter().map(|n| vec![0.0; n.len()]).collect(),
            log_h: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_h.is_finite() && self.nets.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Loss function interface shared by every training target.
pub trait Problem {
    /// Loss terms at `ens`, and the gradient of `Σ λ_s L_s` restricted to
    /// the parameters `active` may change (others are left at zero).
    fn evaluate(&self, ens: &NetworkEnsemble, lambdas: &[f64; N_TERMS], active: Active) -> Result<(LossState, Gradient)>;

    /// Whether `ln h*` is a trainable parameter.
    fn trains_h(&self) -> bool;

    /// Step order of one sequential sweep.
    fn sweep_order(&self) -> Vec<Active>;

    /// Whether `ln h*` moves in a step restricted to `active`.
    fn h_active(&self, active: Active) -> bool {
        matches!(active, Active::All | Active::H)
    }
}

#[derive(Debug, Clone, Default)]
struct NetBatch {
    interior: Vec<[f64; 2]>,
    boundary: Vec<[f64; 2]>,
    periodic_left: Range<usize>,
    periodic_right: Range<usize>,
    below: Range<usize>,
    above: Range<usize>,
    bottom: Range<usize>,
    top_insulated: Range<usize>,
    top_flux: Range<usize>,
    outer: Range<usize>,
    inner: Range<usize>,
    /// Probe name and index into `boundary`.
    probes: Vec<(String, usize)>,
}

impl NetBatch {
    fn push(&mut self, pts: impl IntoIterator<Item = [f64; 2]>) -> Range<usize> {
        let start = self.boundary.len();
        self.boundary.extend(pts);
        start..self.boundary.len()
    }
}

/// Batched loss over a collocation set for the six-network rig model.
#[derive(Debug, Clone)]
pub struct RigProblem {
    pub model: RigModel,
    pub colloc: CollocationSet,
    batches: Vec<NetBatch>,
    outer_normals: Vec<[f64; 2]>,
    inner_normals: Vec<[f64; 2]>,
    /// Pipe index of every inner-surface point.
    inner_pipe: Vec<usize>,
    /// Data probes: name, layer, index into that layer's boundary batch,
    /// scaled reading.
    data: Vec<(String, usize, usize, f64)>,
    order: Vec<Active>,
}

impl RigProblem {
    pub fn new(model: RigModel, colloc: CollocationSet) -> Result<Self> {
        if colloc.layer_interior.len() != N_LAYERS
            || colloc.pipe_interior.len() != N_PIPES
            || colloc.circle_inner.len() != N_PIPES
            || colloc.circle_outer.len() != N_PIPES
        {
            return Err(Error::Config("collocation set does not match the rig layout".into()));
        }
        if colloc.circle_inner.iter().any(Vec::is_empty) {
            return Err(Error::Config("every pipe needs inner-surface points".into()));
        }
        let mut batches: Vec<NetBatch> = vec![NetBatch::default(); 6];
        for i in 0..N_LAYERS {
            let b = &mut batches[i];
            b.interior = colloc.layer_interior[i].clone();
            b.periodic_left = b.push(colloc.periodic[i].iter().map(|&y| [0.0, y]));
            b.periodic_right = b.push(colloc.periodic[i].iter().map(|&y| [colloc.x_right, y]));
            if i > 0 {
                let (y, xs) = &colloc.interfaces[i - 1];
                b.below = b.push(xs.iter().map(|&x| [x, *y]));
            }
            if i + 1 < N_LAYERS {
                let (y, xs) = &colloc.interfaces[i];
                b.above = b.push(xs.iter().map(|&x| [x, *y]));
            }
        }
        batches[0].bottom = batches[0].push(colloc.bottom.iter().map(|&x| [x, 0.0]));
        let outer: Vec<_> = colloc.circle_outer.iter().flatten().copied().collect();
        batches[0].outer = batches[0].push(outer.iter().map(|c| c.p));
        let top = colloc.y_top;
        batches[4].top_insulated = batches[4].push(colloc.top_insulated.iter().map(|&x| [x, top]));
        batches[4].top_flux = batches[4].push(colloc.top_flux.iter().map(|&x| [x, top]));
        for pr in &colloc.probes {
            let p = [pr.position[0] / colloc.scales.x_l, pr.position[1] / colloc.scales.y_l];
            let idx = batches[pr.layer].push([p]).start;
            batches[pr.layer].probes.push((pr.name.clone(), idx));
        }
        let inner: Vec<_> = colloc.circle_inner.iter().flatten().copied().collect();
        let inner_pipe = colloc
            .circle_inner
            .iter()
            .enumerate()
            .flat_map(|(i, v)| std::iter::repeat(i).take(v.len()))
            .collect();
        {
            let b = &mut batches[5];
            b.interior = colloc.pipe_interior.iter().flatten().copied().collect();
            b.outer = b.push(outer.iter().map(|c| c.p));
            b.inner = b.push(inner.iter().map(|c| c.p));
        }
        let mut data = Vec::new();
        for (name, reading) in &model.bc.probes {
            let (layer, idx) = batches
                .iter()
                .enumerate()
                .find_map(|(l, b)| b.probes.iter().find(|p| &p.0 == name).map(|p| (l, p.1)))
                .ok_or_else(|| Error::Config(format!("probe {name} is not in the collocation set")))?;
            data.push((name.clone(), layer, idx, nondim_temp(*reading, &model.scales)));
        }
        let mut order: Vec<Active> = (0..N_LAYERS).map(Active::Net).collect();
        order.push(Active::Net(5));
        Ok(Self {
            outer_normals: outer.iter().map(|c| c.normal).collect(),
            inner_normals: inner.iter().map(|c| c.normal).collect(),
            inner_pipe,
            data,
            batches,
            order,
            model,
            colloc,
        })
    }

    pub fn with_sweep_order(mut self, order: Vec<Active>) -> Self {
        self.order = order;
        self
    }

    /// Network predictions (kelvin) at every named probe.
    pub fn probe_temperatures(&self, ens: &NetworkEnsemble) -> BTreeMap<String, f64> {
        let s = &self.model.scales;
        self.colloc
            .probes
            .iter()
            .map(|pr| {
                let u = ens
                    .net(Subdomain::Layer(pr.layer))
                    .forward(pr.position[0] / s.x_l, pr.position[1] / s.y_l);
                (pr.name.clone(), redim_temp(u, s))
            })
            .collect()
    }
}

fn mean_sq(r: &[f64]) -> f64 {
    if r.is_empty() {
        0.0
    } else {
        r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
    }
}

/// `seed[range][p] += factor·r[p]·coef[p]`, the adjoint of `mean(r²)`
/// through a linear dependence on one channel.
fn add_seed(seed: &mut [f64], range: &Range<usize>, r: &[f64], factor: f64, coef: impl Fn(usize) -> f64) {
    for (p, i) in range.clone().enumerate() {
        seed[i] += factor * r[p] * coef(p);
    }
}

struct Forward {
    int: Vec<(Jet, TaylorCache)>,
    bd: Vec<(Jet, TaylorCache)>,
}

impl Problem for RigProblem {
    fn trains_h(&self) -> bool {
        true
    }

    fn sweep_order(&self) -> Vec<Active> {
        self.order.clone()
    }

    fn h_active(&self, active: Active) -> bool {
        matches!(active, Active::All | Active::H | Active::Net(5))
    }

    fn evaluate(&self, ens: &NetworkEnsemble, lambdas: &[f64; N_TERMS], active: Active) -> Result<(LossState, Gradient)> {
        if ens.nets.len() != 6 {
            return Err(Error::Config("rig problem needs six networks".into()));
        }
        let m = &self.model;
        let fw = Forward {
            int: (0..6).map(|k| ens.nets[k].taylor(&self.batches[k].interior, Channels::FULL)).collect(),
            bd: (0..6).map(|k| ens.nets[k].taylor(&self.batches[k].boundary, Channels::GRADIENT)).collect(),
        };
        let mut seed_int: Vec<Jet> = self.batches.iter().map(|b| Jet::zeros(b.interior.len(), Channels::FULL)).collect();
        let mut seed_bd: Vec<Jet> = self.batches.iter().map(|b| Jet::zeros(b.boundary.len(), Channels::GRADIENT)).collect();
        let mut terms = [0.0; N_TERMS];
        let mut g_logh = 0.0;
        let rho = m.aspect();
        let s = m.temp_scale;
        let q = m.q_ref;
        let h_star = ens.h_star();
        let tw = m.bc.t_w_star;
        let subs = Subdomain::ALL;
        let kh: Vec<f64> = subs.iter().map(|&sub| m.k_hat(sub)).collect();

        // Laplacian in every network
        for k in 0..6 {
            let jet = &fw.int[k].0;
            let n = jet.n;
            if n == 0 {
                continue;
            }
            let sy = ens.nets[k].input_map.scale[1];
            let c = 1.0 / (s * sy * sy);
            let (xx, yy) = (jet.ch(Channel::XX), jet.ch(Channel::YY));
            let r: Vec<f64> = (0..n).map(|p| c * (rho * rho * xx[p] + yy[p])).collect();
            terms[PDE] += mean_sq(&r);
            let f = lambdas[PDE] * 2.0 / n as f64;
            let all = 0..n;
            add_seed(seed_int[k].ch_mut(Channel::XX), &all, &r, f, |_| c * rho * rho);
            add_seed(seed_int[k].ch_mut(Channel::YY), &all, &r, f, |_| c);
        }

        // Periodic pairs
        for i in 0..N_LAYERS {
            let b = &self.batches[i];
            let jet = &fw.bd[i].0;
            let n = b.periodic_left.len();
            if n == 0 {
                continue;
            }
            let (v, x) = (jet.ch(Channel::V), jet.ch(Channel::X));
            let rv: Vec<f64> = b
                .periodic_left
                .clone()
                .zip(b.periodic_right.clone())
                .map(|(l, r)| (v[l] - v[r]) / s)
                .collect();
            let cd = kh[i] * rho / q;
            let rd: Vec<f64> = b
                .periodic_left
                .clone()
                .zip(b.periodic_right.clone())
                .map(|(l, r)| cd * (x[l] - x[r]))
                .collect();
            terms[BC] += mean_sq(&rv) + mean_sq(&rd);
            let f = lambdas[BC] * 2.0 / n as f64;
            let sv = seed_bd[i].ch_mut(Channel::V);
            add_seed(sv, &b.periodic_left, &rv, f, |_| 1.0 / s);
            add_seed(sv, &b.periodic_right, &rv, f, |_| -1.0 / s);
            let sx = seed_bd[i].ch_mut(Channel::X);
            add_seed(sx, &b.periodic_left, &rd, f, |_| cd);
            add_seed(sx, &b.periodic_right, &rd, f, |_| -cd);
        }

        // Neumann boundaries: bottom, insulated top, heated footprint
        let neumann = [
            (0usize, self.batches[0].bottom.clone(), 0.0),
            (4, self.batches[4].top_insulated.clone(), 0.0),
            (4, self.batches[4].top_flux.clone(), m.alpha_star),
        ];
        for (layer, range, target) in neumann {
            if range.is_empty() {
                continue;
            }
            let y = fw.bd[layer].0.ch(Channel::Y);
            let c = kh[layer] / q;
            let r: Vec<f64> = range.clone().map(|i| c * (y[i] - target)).collect();
            terms[BC] += mean_sq(&r);
            let f = lambdas[BC] * 2.0 / r.len() as f64;
            add_seed(seed_bd[layer].ch_mut(Channel::Y), &range, &r, f, |_| c);
        }

        // Planar interfaces
        let mut interface_rms = Vec::with_capacity(N_LAYERS - 1);
        for i in 0..N_LAYERS - 1 {
            let (ra, rb) = (self.batches[i].above.clone(), self.batches[i + 1].below.clone());
            let n = ra.len();
            if n == 0 {
                interface_rms.push(0.0);
                continue;
            }
            let (ja, jb) = (&fw.bd[i].0, &fw.bd[i + 1].0);
            let (va, vb) = (ja.ch(Channel::V), jb.ch(Channel::V));
            let (ya, yb) = (ja.ch(Channel::Y), jb.ch(Channel::Y));
            let rv: Vec<f64> = ra.clone().zip(rb.clone()).map(|(a, b)| (va[a] - vb[b]) / s).collect();
            let (ca, cb) = (kh[i] / q, kh[i + 1] / q);
            let rf: Vec<f64> = ra.clone().zip(rb.clone()).map(|(a, b)| ca * ya[a] - cb * yb[b]).collect();
            terms[IC] += mean_sq(&rv) + mean_sq(&rf);
            interface_rms.push(mean_sq(&rv).sqrt() * s * m.scales.u0);
            let f = lambdas[IC] * 2.0 / n as f64;
            add_seed(seed_bd[i].ch_mut(Channel::V), &ra, &rv, f, |_| 1.0 / s);
            add_seed(seed_bd[i + 1].ch_mut(Channel::V), &rb, &rv, f, |_| -1.0 / s);
            add_seed(seed_bd[i].ch_mut(Channel::Y), &ra, &rf, f, |_| ca);
            add_seed(seed_bd[i + 1].ch_mut(Channel::Y), &rb, &rf, f, |_| -cb);
        }

        // Cold plate / pipe wall circles
        {
            let (ra, rb) = (self.batches[0].outer.clone(), self.batches[5].outer.clone());
            let n = ra.len();
            let (ja, jb) = (&fw.bd[0].0, &fw.bd[5].0);
            let nrm = &self.outer_normals;
            let (ca, cb) = (kh[0] / q, kh[5] / q);
            let rv: Vec<f64> = ra
                .clone()
                .zip(rb.clone())
                .map(|(a, b)| (ja.ch(Channel::V)[a] - jb.ch(Channel::V)[b]) / s)
                .collect();
            let rf: Vec<f64> = ra
                .clone()
                .zip(rb.clone())
                .enumerate()
                .map(|(p, (a, b))| {
                    let fa = rho * ja.ch(Channel::X)[a] * nrm[p][0] + ja.ch(Channel::Y)[a] * nrm[p][1];
                    let fb = rho * jb.ch(Channel::X)[b] * nrm[p][0] + jb.ch(Channel::Y)[b] * nrm[p][1];
                    ca * fa - cb * fb
                })
                .collect();
            terms[CB] += mean_sq(&rv) + mean_sq(&rf);
            if n > 0 {
                let f = lambdas[CB] * 2.0 / n as f64;
                add_seed(seed_bd[0].ch_mut(Channel::V), &ra, &rv, f, |_| 1.0 / s);
                add_seed(seed_bd[5].ch_mut(Channel::V), &rb, &rv, f, |_| -1.0 / s);
                add_seed(seed_bd[0].ch_mut(Channel::X), &ra, &rf, f, |p| ca * rho * nrm[p][0]);
                add_seed(seed_bd[0].ch_mut(Channel::Y), &ra, &rf, f, |p| ca * nrm[p][1]);
                add_seed(seed_bd[5].ch_mut(Channel::X), &rb, &rf, f, |p| -cb * rho * nrm[p][0]);
                add_seed(seed_bd[5].ch_mut(Channel::Y), &rb, &rf, f, |p| -cb * nrm[p][1]);
            }
        }

        // Robin condition on the inner pipe surface
        let ri = self.batches[5].inner.clone();
        {
            let jp = &fw.bd[5].0;
            let nrm = &self.inner_normals;
            let c = kh[5] / q;
            let hq = h_star / q;
            let (v, x, y) = (jp.ch(Channel::V), jp.ch(Channel::X), jp.ch(Channel::Y));
            let r: Vec<f64> = ri
                .clone()
                .enumerate()
                .map(|(p, i)| c * (rho * x[i] * nrm[p][0] + y[i] * nrm[p][1]) - hq * (v[i] - tw))
                .collect();
            terms[H] += mean_sq(&r);
            let n = r.len();
            if n > 0 {
                let f = lambdas[H] * 2.0 / n as f64;
                add_seed(seed_bd[5].ch_mut(Channel::X), &ri, &r, f, |p| c * rho * nrm[p][0]);
                add_seed(seed_bd[5].ch_mut(Channel::Y), &ri, &r, f, |p| c * nrm[p][1]);
                add_seed(seed_bd[5].ch_mut(Channel::V), &ri, &r, f, |_| -hq);
                g_logh += ri
                    .clone()
                    .enumerate()
                    .map(|(p, i)| f * r[p] * (-hq * (v[i] - tw)))
                    .sum::<f64>();
            }
        }

        // Energy balance through the hottest point of each pipe
        {
            let v = fw.bd[5].0.ch(Channel::V);
            let mut arg = [usize::MAX; N_PIPES];
            for (p, i) in ri.clone().enumerate() {
                let k = self.inner_pipe[p];
                if arg[k] == usize::MAX || v[i] > v[arg[k]] {
                    arg[k] = i;
                }
            }
            // Q_out = h·A·Σ U_0 (u*_i − t_w*) = h*·A·Σ (u*_i − t_w*)
            let sum: f64 = arg.iter().map(|&i| v[i] - tw).sum();
            let q_out = h_star * m.pass_area * sum;
            let pref = m.energy_scale();
            let r = (m.power - q_out) / pref;
            terms[Q] = r * r;
            let d_qout = lambdas[Q] * 2.0 * r * (-1.0 / pref);
            let sv = seed_bd[5].ch_mut(Channel::V);
            for &i in &arg {
                sv[i] += d_qout * h_star * m.pass_area;
            }
            g_logh += d_qout * q_out;
        }

        // Probe data
        if !self.data.is_empty() {
            let n = self.data.len() as f64;
            for (_, layer, idx, target) in &self.data {
                let v = fw.bd[*layer].0.ch(Channel::V)[*idx];
                let r = (v - target) / s;
                terms[DATA] += r * r / n;
                seed_bd[*layer].ch_mut(Channel::V)[*idx] += lambdas[DATA] * 2.0 * r / (s * n);
            }
        }

        let mut grad = Gradient::zeros(ens);
        for k in 0..6 {
            let on = matches!(active, Active::All) || active == Active::Net(k);
            if !on {
                continue;
            }
            ens.nets[k].backward(&fw.int[k].1, &seed_int[k], &mut grad.nets[k]);
            ens.nets[k].backward(&fw.bd[k].1, &seed_bd[k], &mut grad.nets[k]);
        }
        if self.h_active(active) {
            grad.log_h = g_logh;
        }
        let mut state = LossState::new(terms, *lambdas, h_star);
        state.interface_rms = interface_rms;
        Ok((state, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sample, SampleCounts};

    pub(crate) fn a13_4() -> CaseConfig {
        CaseConfig::from_json_str(
            r#"{"schema_version":1,"case_id":"A13_4","power_w":259.2,"t_in_c":10.0226,"t_out_c":12.5535,
                "flow_rate_l_min":1.3951,"probes_c":{"Face":27.4784,"Side":23.5721,"In1":25.8598,"In2":25.9011}}"#,
        )
        .unwrap()
    }

    fn tiny_problem(use_data: bool) -> (RigProblem, NetworkEnsemble) {
        let geom = RigGeometry::default();
        let model = RigModel::new(geom.clone(), &a13_4(), use_data, 10.0).unwrap();
        let counts = SampleCounts {
            layer_interior: [4, 3, 3, 3, 3],
            pipe_interior: 1,
            periodic: 2,
            bottom: 2,
            top_insulated: 1,
            top_flux: 2,
            interface: 2,
            circle: 1,
        };
        let colloc = sample(&geom, &model.scales, &counts, 9).unwrap();
        let mut ens = model.init_ensemble(&[2, 4, 1], 5, 3.0e4).unwrap();
        // non-zero biases so every channel is exercised
        for (k, net) in ens.nets.iter_mut().enumerate() {
            for (j, b) in net.bias_mut(0).iter_mut().enumerate() {
                *b = 0.1 * (k as f64 + 1.0) - 0.07 * j as f64;
            }
        }
        (RigProblem::new(model, colloc).unwrap(), ens)
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (prob, ens) = tiny_problem(true);
        let lambdas = [1.0, 0.7, 1.3, 0.9, 1.1, 0.5, 2.0];
        let (state, grad) = prob.evaluate(&ens, &lambdas, Active::All).unwrap();
        assert!(state.terms.iter().all(|t| *t > 0.0), "{:?}", state.terms);
        let total = |e: &NetworkEnsemble| prob.evaluate(e, &lambdas, Active::All).unwrap().0.total;
        for k in 0..6 {
            for i in 0..ens.nets[k].len() {
                let h = 1e-6 * (1.0 + ens.nets[k].params()[i].abs());
                let mut p = ens.clone();
                p.nets[k].params_mut()[i] += h;
                let mut mnus = ens.clone();
                mnus.nets[k].params_mut()[i] -= h;
                let fd = (total(&p) - total(&mnus)) / (2.0 * h);
                let g = grad.nets[k][i];
                assert!((g - fd).abs() <= 1e-4 * (fd.abs() + 1e-3 * state.total), "net {k} param {i}: {g} vs {fd}");
            }
        }
        let h = 1e-6;
        let mut p = ens.clone();
        p.log_h_star += h;
        let mut mnus = ens.clone();
        mnus.log_h_star -= h;
        let fd = (total(&p) - total(&mnus)) / (2.0 * h);
        assert!((grad.log_h - fd).abs() <= 1e-4 * fd.abs().max(1e-8), "{} vs {fd}", grad.log_h);
    }

    #[test]
    fn inactive_networks_get_no_gradient() {
        let (prob, ens) = tiny_problem(false);
        let (_, g) = prob.evaluate(&ens, &[1.0; 7], Active::Net(2)).unwrap();
        for k in 0..6 {
            assert_eq!(g.nets[k].iter().any(|v| *v != 0.0), k == 2);
        }
        assert_eq!(g.log_h, 0.0);
        let (_, g) = prob.evaluate(&ens, &[1.0; 7], Active::Net(5)).unwrap();
        assert_ne!(g.log_h, 0.0);
    }

    #[test]
    fn batch_residuals_agree_with_pointwise_ones() {
        let (prob, ens) = tiny_problem(true);
        let m = &prob.model;
        // energy term
        let r = residual_energy(&ens, m, &prob.colloc).unwrap();
        let (state, _) = prob.evaluate(&ens, &[1.0; 7], Active::All).unwrap();
        assert!((state.terms[Q] - r * r).abs() <= 1e-12 * (r * r).max(1.0));
        // data term: batch uses S, pointwise uses U_0
        let d = residual_data(&ens, m, &m.bc.probes).unwrap();
        let scale = m.temp_scale;
        assert!((state.terms[DATA] - d / (scale * scale) / 2.0).abs() <= 1e-9 * state.terms[DATA]);
        // Robin at one inner point
        let c = prob.colloc.circle_inner[2][0];
        let pointwise = residual_convective(&ens, m, c.p, 2, m.bc.t_w_star).unwrap();
        let batch_state = {
            let jet = point_jet(ens.net(Subdomain::Pipes), c.p).unwrap();
            m.k_hat(Subdomain::Pipes) * normal_flux_form(jet.ux, jet.uy, c.normal, &m.scales)
                - ens.h_star() * (jet.u - m.bc.t_w_star)
        };
        assert!((pointwise - batch_state).abs() <= 1e-12 * pointwise.abs().max(1.0));
    }

    #[test]
    fn off_region_points_are_rejected() {
        let (prob, ens) = tiny_problem(false);
        let m = &prob.model;
        assert!(matches!(
            residual_pde(&ens, m, [0.5, 0.99], Subdomain::Layer(0)),
            Err(Error::Region(_))
        ));
        assert!(matches!(residual_flux_top(&ens, m, 0.01), Err(Error::Region(_))));
        assert!(matches!(
            residual_convective(&ens, m, [0.5, 0.5], 0, 0.0),
            Err(Error::Geometry(_))
        ));
    }
}
