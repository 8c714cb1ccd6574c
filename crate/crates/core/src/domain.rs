//! Rig geometry, non-dimensional scaling and collocation sampling.
//!
//! Lengths are meters, conductivities W/(m·K), temperatures kelvin unless a
//! field name says otherwise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GEOMETRY_SCHEMA_VERSION: u32 = 1;
pub const N_LAYERS: usize = 5;
pub const N_PIPES: usize = 6;

/// Relative tolerance for "point lies on the circle" checks.
pub const CIRCLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: usize,
    #[serde(default)]
    pub name: String,
    pub k: f64,
    pub y_bottom: f64,
    pub y_top: f64,
}

impl LayerSpec {
    pub fn thickness(&self) -> f64 {
        self.y_top - self.y_bottom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeSpec {
    /// 1-based pass number, p1..p6.
    pub id: usize,
    pub center: [f64; 2],
    pub r_outer: f64,
    pub r_inner: f64,
    #[serde(default = "default_k_pipe")]
    pub k_pipe: f64,
}

fn default_k_pipe() -> f64 {
    16.2
}

/// Unit of the pipe radii in a geometry file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    M,
    Mm,
}

impl LengthUnit {
    pub fn to_meters(self, v: f64) -> f64 {
        match self {
            LengthUnit::M => v,
            LengthUnit::Mm => v * 1e-3,
        }
    }
}

/// Named temperature sensor location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub name: String,
    pub layer: usize,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigGeometry {
    pub schema_version: u32,
    pub layers: Vec<LayerSpec>,
    pub pipes: Vec<PipeSpec>,
    pub x_n: f64,
    pub y_n: f64,
    pub x_a: f64,
    pub x_b: f64,
    /// Extent of the heated stack normal to the cross-section. Turns the
    /// resistor power into a flux per unit area.
    pub heated_depth: f64,
    /// Total pipe length in contact with the cold plate.
    pub pipe_length: f64,
    /// Unit the pipe radii were given in; always `m` once loaded.
    #[serde(default)]
    pub radius_unit: LengthUnit,
    pub probes: Vec<ProbeSpec>,
}

pub const PROBE_NAMES: [&str; 4] = ["Face", "Side", "In1", "In2"];

impl Default for RigGeometry {
    fn default() -> Self {
        let t = [12.7e-3, 0.1e-3, 6.35e-3, 0.1e-3, 6.35e-3];
        let k = [200.0, 0.842, 142.0, 0.842, 142.0];
        let names = ["cold plate", "pgs", "aluminum", "pgs", "aluminum top"];
        let mut y = 0.0;
        let layers: Vec<LayerSpec> = (0..N_LAYERS)
            .map(|i| {
                let l = LayerSpec {
                    id: i,
                    name: names[i].to_string(),
                    k: k[i],
                    y_bottom: y,
                    y_top: y + t[i],
                };
                y += t[i];
                l
            })
            .collect();
        let y_n = layers[4].y_top;
        let x_n = 0.3;
        let pipes = (0..N_PIPES)
            .map(|i| PipeSpec {
                id: i + 1,
                center: [(i as f64 + 0.5) * x_n / N_PIPES as f64, 6.35e-3],
                r_outer: 6e-3,
                r_inner: 5e-3,
                k_pipe: 16.2,
            })
            .collect();
        let (x_a, x_b) = (0.05, 0.25);
        let l2 = &layers[2];
        let l4 = &layers[4];
        let mid2 = 0.5 * (l2.y_bottom + l2.y_top);
        let probes = vec![
            ProbeSpec {
                name: "Face".into(),
                layer: 4,
                position: [0.5 * (x_a + x_b), y_n],
            },
            ProbeSpec {
                name: "Side".into(),
                layer: 4,
                position: [x_b + 0.01, 0.5 * (l4.y_bottom + l4.y_top)],
            },
            ProbeSpec {
                name: "In1".into(),
                layer: 2,
                position: [x_a + (x_b - x_a) / 3.0, mid2],
            },
            ProbeSpec {
                name: "In2".into(),
                layer: 2,
                position: [x_a + 2.0 * (x_b - x_a) / 3.0, mid2],
            },
        ];
        Self {
            schema_version: GEOMETRY_SCHEMA_VERSION,
            layers,
            pipes,
            x_n,
            y_n,
            x_a,
            x_b,
            heated_depth: x_n,
            pipe_length: N_PIPES as f64 * x_n,
            radius_unit: LengthUnit::M,
            probes,
        }
    }
}

/// Which network a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Layer(usize),
    /// Wall of pipe pass `i` (0-based).
    PipeWall(usize),
    /// Coolant inside pipe pass `i`; not part of the conduction domain.
    Water(usize),
}

impl RigGeometry {
    pub fn validate(&self) -> Result<()> {
        let geo = |m: String| Err(Error::Geometry(m));
        if self.schema_version != GEOMETRY_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        if self.layers.len() != N_LAYERS {
            return geo(format!("expected {N_LAYERS} layers, got {}", self.layers.len()));
        }
        if self.pipes.len() != N_PIPES {
            return geo(format!("expected {N_PIPES} pipes, got {}", self.pipes.len()));
        }
        let mut y = 0.0;
        for (i, l) in self.layers.iter().enumerate() {
            if l.id != i {
                return geo(format!("layer ids must be 0..4 in order, found {} at {i}", l.id));
            }
            if !(l.k > 0.0 && l.k.is_finite()) {
                return geo(format!("layer {i}: conductivity must be positive"));
            }
            if (l.y_bottom - y).abs() > 1e-12 * self.y_n.max(1.0) {
                return geo(format!("layer {i} starts at {} but previous ends at {y}", l.y_bottom));
            }
            if l.y_top <= l.y_bottom {
                return geo(format!("layer {i} has non-positive thickness"));
            }
            y = l.y_top;
        }
        if (y - self.y_n).abs() > 1e-12 * self.y_n.max(1.0) {
            return geo(format!("y_N = {} but layers end at {y}", self.y_n));
        }
        if !(self.x_n > 0.0) {
            return geo("x_N must be positive".into());
        }
        if !(0.0 <= self.x_a && self.x_a < self.x_b && self.x_b <= self.x_n) {
            return geo(format!(
                "need 0 ≤ x_A < x_B ≤ x_N, got x_A={} x_B={} x_N={}",
                self.x_a, self.x_b, self.x_n
            ));
        }
        if !(self.heated_depth > 0.0) || !(self.pipe_length > 0.0) {
            return geo("heated_depth and pipe_length must be positive".into());
        }
        let l0 = &self.layers[0];
        for p in &self.pipes {
            if !(0.0 < p.r_inner && p.r_inner < p.r_outer) {
                return geo(format!("pipe p{}: need 0 < r_inner < r_outer", p.id));
            }
            if !(p.k_pipe > 0.0) {
                return geo(format!("pipe p{}: conductivity must be positive", p.id));
            }
            let [xc, yc] = p.center;
            let inside = yc - p.r_outer > l0.y_bottom
                && yc + p.r_outer < l0.y_top
                && xc - p.r_outer > 0.0
                && xc + p.r_outer < self.x_n;
            if !inside {
                return geo(format!("pipe p{} is not strictly inside the cold plate", p.id));
            }
        }
        for (i, a) in self.pipes.iter().enumerate() {
            for b in &self.pipes[i + 1..] {
                let d = ((a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2)).sqrt();
                if d <= a.r_outer + b.r_outer {
                    return geo(format!("pipes p{} and p{} overlap", a.id, b.id));
                }
            }
        }
        for pr in &self.probes {
            if pr.layer >= N_LAYERS {
                return Err(Error::Config(format!("probe {} refers to layer {}", pr.name, pr.layer)));
            }
            if !self.in_layer_box(pr.layer, pr.position) {
                return Err(Error::Config(format!(
                    "probe {} at {:?} lies outside layer {}",
                    pr.name, pr.position, pr.layer
                )));
            }
            if pr.layer == 0 && self.pipe_containing(pr.position).is_some() {
                return Err(Error::Config(format!("probe {} lies inside a pipe", pr.name)));
            }
        }
        Ok(())
    }

    /// Parses a geometry file, converting millimetre radii to meters.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut g: RigGeometry = serde_json::from_str(s)
            .map_err(|e| Error::schema(json_field(&e), e.to_string()))?;
        if g.radius_unit != LengthUnit::M {
            for p in &mut g.pipes {
                p.r_inner = g.radius_unit.to_meters(p.r_inner);
                p.r_outer = g.radius_unit.to_meters(p.r_outer);
            }
            g.radius_unit = LengthUnit::M;
        }
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn default_scales(&self, u0: f64) -> NondimScales {
        NondimScales {
            x_l: self.x_n,
            y_l: self.y_n,
            u0,
        }
    }

    fn in_layer_box(&self, layer: usize, p: [f64; 2]) -> bool {
        let l = &self.layers[layer];
        let eps = 1e-12 * self.x_n.max(self.y_n);
        p[0] >= -eps && p[0] <= self.x_n + eps && p[1] >= l.y_bottom - eps && p[1] <= l.y_top + eps
    }

    /// Index of the pipe whose outer circle contains `p`.
    pub fn pipe_containing(&self, p: [f64; 2]) -> Option<usize> {
        self.pipes.iter().position(|pipe| {
            let d2 = (p[0] - pipe.center[0]).powi(2) + (p[1] - pipe.center[1]).powi(2);
            d2 < pipe.r_outer * pipe.r_outer
        })
    }

    /// Classifies a physical point; `None` outside `[0, x_N] × [0, y_N]`.
    /// Points on a planar interface belong to the lower layer.
    pub fn region_of(&self, p: [f64; 2]) -> Option<Region> {
        if p[0] < 0.0 || p[0] > self.x_n || p[1] < 0.0 || p[1] > self.y_n {
            return None;
        }
        for (i, pipe) in self.pipes.iter().enumerate() {
            let d2 = (p[0] - pipe.center[0]).powi(2) + (p[1] - pipe.center[1]).powi(2);
            if d2 < pipe.r_inner * pipe.r_inner {
                return Some(Region::Water(i));
            }
            if d2 <= pipe.r_outer * pipe.r_outer {
                return Some(Region::PipeWall(i));
            }
        }
        self.layers.iter().position(|l| p[1] <= l.y_top).map(Region::Layer)
    }

    /// Membership test used to audit sampled points (closed regions).
    pub fn contains(&self, region: Region, p: [f64; 2]) -> bool {
        let eps = 1e-12;
        match region {
            Region::Layer(i) => {
                self.in_layer_box(i, p)
                    && (i != 0 || self.pipes.iter().all(|pipe| {
                        let d2 = (p[0] - pipe.center[0]).powi(2) + (p[1] - pipe.center[1]).powi(2);
                        d2 >= pipe.r_outer * pipe.r_outer * (1.0 - eps)
                    }))
            }
            Region::PipeWall(i) => {
                let pipe = &self.pipes[i];
                let d2 = (p[0] - pipe.center[0]).powi(2) + (p[1] - pipe.center[1]).powi(2);
                d2 >= pipe.r_inner * pipe.r_inner * (1.0 - eps) && d2 <= pipe.r_outer * pipe.r_outer * (1.0 + eps)
            }
            Region::Water(i) => {
                let pipe = &self.pipes[i];
                let d2 = (p[0] - pipe.center[0]).powi(2) + (p[1] - pipe.center[1]).powi(2);
                d2 <= pipe.r_inner * pipe.r_inner
            }
        }
    }

    /// Heat flux per unit area on the footprint, W/m².
    pub fn heat_flux(&self, power: f64) -> f64 {
        power / ((self.x_b - self.x_a) * self.heated_depth)
    }

    pub fn probe(&self, name: &str) -> Option<&ProbeSpec> {
        self.probes.iter().find(|p| p.name == name)
    }
}

/// Best-effort name of the field a serde error is about.
pub(crate) fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

/// Reference scales: `x* = x/x_L`, `y* = y/y_L`, `u* = (u − U_0)/U_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimScales {
    pub x_l: f64,
    pub y_l: f64,
    /// Reference temperature in kelvin.
    pub u0: f64,
}

impl NondimScales {
    pub fn new(x_l: f64, y_l: f64, u0: f64) -> Result<Self> {
        for (n, v) in [("x_L", x_l), ("y_L", y_l), ("U_0", u0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{n} must be positive, got {v}")));
            }
        }
        Ok(Self { x_l, y_l, u0 })
    }
}

pub fn nondim_point(p: [f64; 2], s: &NondimScales) -> [f64; 2] {
    [p[0] / s.x_l, p[1] / s.y_l]
}

pub fn redim_point(p: [f64; 2], s: &NondimScales) -> [f64; 2] {
    [p[0] * s.x_l, p[1] * s.y_l]
}

pub fn nondim_temp(u: f64, s: &NondimScales) -> f64 {
    (u - s.u0) / s.u0
}

pub fn redim_temp(u_star: f64, s: &NondimScales) -> f64 {
    s.u0 * (1.0 + u_star)
}

/// `k* = k·U_0/(x_L²·y_L²)`, the coefficient of the scaled Laplacian.
pub fn k_star(k: f64, s: &NondimScales) -> f64 {
    k * s.u0 / (s.x_l * s.x_l * s.y_l * s.y_l)
}

/// `k̂* = k·U_0/y_L`; `k̂*·∂u*/∂y*` is the physical flux `k·∂u/∂y`.
pub fn k_hat(k: f64, s: &NondimScales) -> f64 {
    k * s.u0 / s.y_l
}

/// Temperature gradient imposed by a flux: `α = q''/k_top`.
pub fn flux_per_depth(q_pp: f64, k_top: f64) -> Result<f64> {
    if !(k_top > 0.0) {
        return Err(Error::Config(format!("top conductivity must be positive, got {k_top}")));
    }
    Ok(q_pp / k_top)
}

/// `α* = α·y_L/U_0`.
pub fn alpha_star(alpha: f64, s: &NondimScales) -> f64 {
    alpha * s.y_l / s.u0
}

/// `h* = h·U_0`.
pub fn h_to_star(h: f64, s: &NondimScales) -> f64 {
    h * s.u0
}

pub fn h_from_star(h_star: f64, s: &NondimScales) -> f64 {
    h_star / s.u0
}

/// Number of points requested per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub layer_interior: [usize; N_LAYERS],
    /// Per pipe wall annulus.
    pub pipe_interior: usize,
    /// Per layer and per side; left and right share the same y values.
    pub periodic: usize,
    pub bottom: usize,
    /// Per insulated top segment.
    pub top_insulated: usize,
    pub top_flux: usize,
    /// Per planar interface.
    pub interface: usize,
    /// Per circle, for both the outer and the inner pipe surface.
    pub circle: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self {
            layer_interior: [7624, 6000, 6000, 6000, 7000],
            pipe_interior: 200,
            periodic: 200,
            bottom: 200,
            top_insulated: 100,
            top_flux: 300,
            interface: 200,
            circle: 200,
        }
    }
}

impl SampleCounts {
    /// Every count divided by `factor`, rounded up.
    pub fn reduced(&self, factor: usize) -> Self {
        let d = |n: usize| n.div_ceil(factor.max(1));
        Self {
            layer_interior: self.layer_interior.map(d),
            pipe_interior: d(self.pipe_interior),
            periodic: d(self.periodic),
            bottom: d(self.bottom),
            top_insulated: d(self.top_insulated),
            top_flux: d(self.top_flux),
            interface: d(self.interface),
            circle: d(self.circle),
        }
    }

    fn check(&self) -> Result<()> {
        let all = self.layer_interior.iter().copied().chain([
            self.pipe_interior,
            self.periodic,
            self.bottom,
            self.top_insulated,
            self.top_flux,
            self.interface,
            self.circle,
        ]);
        for n in all {
            if n == 0 {
                return Err(Error::Sampling("every region needs at least one point".into()));
            }
        }
        Ok(())
    }
}

/// A point on a circle with its outward (away from the center) unit normal
/// in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirclePoint {
    pub p: [f64; 2],
    pub normal: [f64; 2],
}

/// Sampled points, all in dimensionless coordinates `(x*, y*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub scales: NondimScales,
    pub layer_interior: Vec<Vec<[f64; 2]>>,
    pub pipe_interior: Vec<Vec<[f64; 2]>>,
    /// `y*` values per layer; each gives a pair at `x* = 0` and `x* = x_N/x_L`.
    pub periodic: Vec<Vec<f64>>,
    pub x_right: f64,
    /// `x*` values on `y* = 0`.
    pub bottom: Vec<f64>,
    pub top_insulated: Vec<f64>,
    pub top_flux: Vec<f64>,
    pub y_top: f64,
    /// `x*` values on each planar interface `j | j+1`, with its `y*`.
    pub interfaces: Vec<(f64, Vec<f64>)>,
    pub circle_outer: Vec<Vec<CirclePoint>>,
    pub circle_inner: Vec<Vec<CirclePoint>>,
    pub probes: Vec<ProbeSpec>,
}

impl CollocationSet {
    pub fn total_points(&self) -> usize {
        self.layer_interior.iter().map(Vec::len).sum::<usize>()
            + self.pipe_interior.iter().map(Vec::len).sum::<usize>()
            + 2 * self.periodic.iter().map(Vec::len).sum::<usize>()
            + self.bottom.len()
            + self.top_insulated.len()
            + self.top_flux.len()
            + self.interfaces.iter().map(|i| i.1.len()).sum::<usize>()
            + self.circle_outer.iter().map(Vec::len).sum::<usize>()
            + self.circle_inner.iter().map(Vec::len).sum::<usize>()
    }
}

/// Latin hypercube sample of `n` points in `[0,1)^d`.
pub fn latin_hypercube(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|_| {
            let mut c: Vec<f64> = (0..n).map(|i| (i as f64 + rng.gen::<f64>()) / n as f64).collect();
            c.shuffle(rng);
            c
        })
        .collect();
    (0..n).map(|i| cols.iter_mut().map(|c| c[i]).collect()).collect()
}

fn lhs_segment(n: usize, a: f64, b: f64, rng: &mut impl Rng) -> Vec<f64> {
    latin_hypercube(n, 1, rng).into_iter().map(|v| a + (b - a) * v[0]).collect()
}

/// Stratified-in-angle points on a circle; returns physical points.
fn lhs_circle(n: usize, center: [f64; 2], r: f64, rng: &mut impl Rng) -> Vec<CirclePoint> {
    lhs_segment(n, 0.0, 2.0 * PI, rng)
        .into_iter()
        .map(|t| {
            let (s, c) = t.sin_cos();
            CirclePoint {
                p: [center[0] + r * c, center[1] + r * s],
                normal: [c, s],
            }
        })
        .collect()
}

const MAX_REJECTION_ROUNDS: usize = 1000;

/// Samples collocation points for every region of the rig.
pub fn sample(geom: &RigGeometry, scales: &NondimScales, counts: &SampleCounts, seed: u64) -> Result<CollocationSet> {
    geom.validate()?;
    counts.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nd = |p: [f64; 2]| nondim_point(p, scales);

    let mut layer_interior = Vec::with_capacity(N_LAYERS);
    for (i, l) in geom.layers.iter().enumerate() {
        let n = counts.layer_interior[i];
        let mut pts = Vec::with_capacity(n);
        let mut rounds = 0;
        while pts.len() < n {
            if rounds == MAX_REJECTION_ROUNDS {
                return Err(Error::Sampling(format!("layer {i} has no feasible area")));
            }
            rounds += 1;
            let want = n - pts.len();
            for v in latin_hypercube(want, 2, &mut rng) {
                let p = [v[0] * geom.x_n, l.y_bottom + v[1] * l.thickness()];
                if i == 0 && geom.pipe_containing(p).is_some() {
                    continue;
                }
                pts.push(nd(p));
            }
        }
        layer_interior.push(pts);
    }

    let pipe_interior = geom
        .pipes
        .iter()
        .map(|pipe| {
            let (a, b) = (pipe.r_inner * pipe.r_inner, pipe.r_outer * pipe.r_outer);
            latin_hypercube(counts.pipe_interior, 2, &mut rng)
                .into_iter()
                .map(|v| {
                    let r = (a + (b - a) * v[0]).sqrt();
                    let (s, c) = (2.0 * PI * v[1]).sin_cos();
                    nd([pipe.center[0] + r * c, pipe.center[1] + r * s])
                })
                .collect()
        })
        .collect();

    let periodic = geom
        .layers
        .iter()
        .map(|l| {
            lhs_segment(counts.periodic, l.y_bottom, l.y_top, &mut rng)
                .into_iter()
                .map(|y| y / scales.y_l)
                .collect()
        })
        .collect();

    let to_x = |v: Vec<f64>| v.into_iter().map(|x| x / scales.x_l).collect::<Vec<_>>();
    let bottom = to_x(lhs_segment(counts.bottom, 0.0, geom.x_n, &mut rng));
    let mut top_insulated = Vec::new();
    if geom.x_a > 0.0 {
        top_insulated.extend(to_x(lhs_segment(counts.top_insulated, 0.0, geom.x_a, &mut rng)));
    }
    if geom.x_b < geom.x_n {
        top_insulated.extend(to_x(lhs_segment(counts.top_insulated, geom.x_b, geom.x_n, &mut rng)));
    }
    let top_flux = to_x(lhs_segment(counts.top_flux, geom.x_a, geom.x_b, &mut rng));

    let interfaces = geom.layers[..N_LAYERS - 1]
        .iter()
        .map(|l| {
            let xs = to_x(lhs_segment(counts.interface, 0.0, geom.x_n, &mut rng));
            (l.y_top / scales.y_l, xs)
        })
        .collect();

    let scale_circle = |v: Vec<CirclePoint>| -> Vec<CirclePoint> {
        v.into_iter()
            .map(|c| CirclePoint {
                p: nd(c.p),
                normal: c.normal,
            })
            .collect()
    };
    let circle_outer = geom
        .pipes
        .iter()
        .map(|p| scale_circle(lhs_circle(counts.circle, p.center, p.r_outer, &mut rng)))
        .collect();
    let circle_inner = geom
        .pipes
        .iter()
        .map(|p| scale_circle(lhs_circle(counts.circle, p.center, p.r_inner, &mut rng)))
        .collect();

    Ok(CollocationSet {
        scales: *scales,
        layer_interior,
        pipe_interior,
        periodic,
        x_right: geom.x_n / scales.x_l,
        bottom,
        top_insulated,
        top_flux,
        y_top: geom.y_n / scales.y_l,
        interfaces,
        circle_outer,
        circle_inner,
        probes: geom.probes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rig_is_valid() {
        let g = RigGeometry::default();
        g.validate().unwrap();
        assert!((g.y_n - 25.6e-3).abs() < 1e-15);
        assert_eq!(g.region_of([0.025, 6.35e-3]), Some(Region::Water(0)));
        assert_eq!(g.region_of([0.025, 6.35e-3 + 5.5e-3]), Some(Region::PipeWall(0)));
        assert_eq!(g.region_of([0.15, 0.02]), Some(Region::Layer(4)));
    }

    #[test]
    fn scaling_examples() {
        let s = NondimScales::new(0.1, 0.2, 300.0).unwrap();
        assert_eq!(nondim_point([0.0, 0.0], &s), [0.0, 0.0]);
        assert_eq!(nondim_point([0.1, 0.2], &s), [1.0, 1.0]);
        assert_eq!(nondim_point([0.05, 0.0], &s)[0], 0.5);
        assert_eq!(nondim_temp(300.0, &s), 0.0);
        assert_eq!(nondim_temp(600.0, &s), 1.0);
        assert_eq!(flux_per_depth(0.0, 142.0).unwrap(), 0.0);
        assert_eq!(flux_per_depth(142.0, 142.0).unwrap(), 1.0);
        assert!(NondimScales::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn millimetre_radii_are_converted() {
        let mut g = RigGeometry::default();
        for p in &mut g.pipes {
            p.r_inner *= 1e3;
            p.r_outer *= 1e3;
        }
        g.radius_unit = LengthUnit::Mm;
        let back = RigGeometry::from_json_str(&g.to_json().unwrap()).unwrap();
        assert!((back.pipes[0].r_inner - 5e-3).abs() < 1e-15);
        assert_eq!(back.radius_unit, LengthUnit::M);
    }

    #[test]
    fn missing_field_names_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(&RigGeometry::default().to_json().unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("x_b");
        match RigGeometry::from_json_str(&v.to_string()) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "x_b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lhs_has_one_point_per_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(50, 2, &mut rng);
        for d in 0..2 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[d] * 50.0) as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..50).collect::<Vec<_>>());
        }
    }

    #[test]
    fn default_counts_are_honoured() {
        let g = RigGeometry::default();
        let s = g.default_scales(283.0);
        let c = SampleCounts::default();
        let set = sample(&g, &s, &c, 1).unwrap();
        let sizes: Vec<usize> = set.layer_interior.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![7624, 6000, 6000, 6000, 7000]);
        assert!(set.periodic.iter().all(|p| p.len() == 200));
        assert_eq!(set.bottom.len(), 200);
        assert_eq!(set.top_flux.len(), 300);
        assert!(set.interfaces.iter().all(|i| i.1.len() == 200));
    }
}
