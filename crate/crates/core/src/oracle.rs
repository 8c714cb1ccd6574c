//! Non-neural references: the closed-form plate problem and a
//! finite-volume solver for the steady multilayer rig.

use serde::{Deserialize, Serialize};

use std::f64::consts::PI;

use crate::domain::{Region, RigGeometry, N_LAYERS, N_PIPES};
use crate::error::{Error, Result};
use crate::network::Subdomain;
use crate::physics::{
    residual_convective, residual_flux_top, residual_interface_circular, residual_interface_planar,
    residual_neumann, residual_pde, residual_periodic, residual_periodic_value, FieldSource, NeumannBoundary,
    PointJet, RigModel,
};
use crate::postprocess::CaseConfig;

/// Plate `[0, W] × [0, H]` with `T = T_0` on the left, insulated top and
/// bottom, convection to `T_inf` on the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyPlateProblem {
    pub w: f64,
    pub h: f64,
    pub k: f64,
    pub t0: f64,
    pub t_inf: f64,
    pub h_true: f64,
}

impl ToyPlateProblem {
    pub fn standard(h_true: f64) -> Self {
        Self {
            w: 0.1,
            h: 0.1,
            k: 20.0,
            t0: 100.0,
            t_inf: 25.0,
            h_true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0 && self.k > 0.0 && self.h_true >= 0.0) {
            return Err(Error::Config("plate dimensions, k must be positive and h non-negative".into()));
        }
        if self.t0 == self.t_inf {
            return Err(Error::Config("T_0 must differ from T_inf".into()));
        }
        Ok(())
    }

    /// Heat flow per unit depth through the plate, W/m.
    pub fn heat_flow(&self) -> f64 {
        self.h * self.k * (self.t0 - toy_exact_temperature(self, self.w)) / self.w
    }
}

/// `T(x) = T_0 − h(T_0 − T_inf)·x/(k + hW)`.
pub fn toy_exact_temperature(p: &ToyPlateProblem, x: f64) -> f64 {
    p.t0 - p.h_true * (p.t0 - p.t_inf) * x / (p.k + p.h_true * p.w)
}

/// `h = (T_0 − T_W)·k / (W·(T_W − T_inf))`.
pub fn toy_invert_h(p: &ToyPlateProblem, t_w: f64) -> Result<f64> {
    let lo = p.t0.min(p.t_inf);
    let hi = p.t0.max(p.t_inf);
    if !(t_w > lo && t_w <= hi) {
        return Err(Error::Unphysical(format!(
            "wall temperature {t_w} must lie in ({lo}, {hi}]"
        )));
    }
    Ok((p.t0 - t_w) * p.k / (p.w * (t_w - p.t_inf)))
}

/// Condition on the bottom face of the FD domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BottomBc {
    Insulated,
    Robin { h: f64, t_inf: f64 },
}

/// Everything the FD solver needs, in SI units and kelvin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSetup {
    pub geom: RigGeometry,
    /// Flux into the top face on `[x_A, x_B]`, W/m².
    pub q_flux: f64,
    pub h: f64,
    pub t_w: f64,
    pub bottom: BottomBc,
    /// Whether pipes are part of the domain.
    pub with_pipes: bool,
}

impl FdSetup {
    pub fn rig(geom: &RigGeometry, case: &CaseConfig, h: f64) -> Result<Self> {
        case.validate()?;
        Ok(Self {
            geom: geom.clone(),
            q_flux: geom.heat_flux(case.power_w),
            h,
            t_w: 0.5 * (case.t_in_k() + case.t_out_k()),
            bottom: BottomBc::Insulated,
            with_pipes: true,
        })
    }

    fn validate(&self) -> Result<()> {
        self.geom.validate()?;
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("h must be non-negative, got {}", self.h)));
        }
        if let BottomBc::Robin { h, .. } = self.bottom {
            if !(h > 0.0) {
                return Err(Error::Config("bottom Robin h must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub method: LinearSolver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearSolver {
    /// Jacobi-preconditioned conjugate gradients.
    Pcg,
    /// Damped Jacobi, for small grids.
    Jacobi,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200_000,
            method: LinearSolver::Pcg,
        }
    }
}

/// Cell-centred temperatures on a grid uniform in x and layer-aligned in y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSolution {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub x_n: f64,
    /// Row boundaries, `ny + 1` values from 0 to `y_N`.
    pub y_edges: Vec<f64>,
    pub y_centers: Vec<f64>,
    /// Row-major (`j·nx + i`), kelvin; NaN inside the coolant.
    pub temps: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    /// Heat in through the top and out through the Robin surfaces, W per
    /// metre of depth.
    pub heat_in: f64,
    pub heat_out: f64,
    /// Robin heat out per pipe, W/m.
    pub pipe_heat: Vec<f64>,
}

impl FdSolution {
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.temps[j * self.nx + i]
    }

    pub fn max_temperature(&self) -> f64 {
        self.temps.iter().copied().filter(|t| !t.is_nan()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Relative mismatch between heat in and heat out.
    pub fn energy_imbalance(&self) -> f64 {
        (self.heat_in - self.heat_out).abs() / self.heat_in.abs().max(f64::MIN_POSITIVE)
    }
}

/// Row edges with every layer boundary on a grid line and at least three
/// rows per layer; rows are shared out by thickness.
fn layer_rows(geom: &RigGeometry, ny: usize) -> Result<Vec<f64>> {
    let n = geom.layers.len();
    if ny < 3 * n {
        return Err(Error::Config(format!("ny = {ny} cannot give every layer three rows")));
    }
    let t: Vec<f64> = geom.layers.iter().map(|l| l.thickness()).collect();
    let mut rows: Vec<usize> = t.iter().map(|ti| ((ny as f64 * ti / geom.y_n).round() as usize).max(3)).collect();
    // fix the total by adjusting the thickest layers
    while rows.iter().sum::<usize>() != ny {
        let over = rows.iter().sum::<usize>() > ny;
        let idx = (0..n)
            .filter(|&i| !over || rows[i] > 3)
            .max_by(|&a, &b| {
                let ra = t[a] / rows[a] as f64;
                let rb = t[b] / rows[b] as f64;
                if over { rb.total_cmp(&ra) } else { ra.total_cmp(&rb) }
            })
            .ok_or_else(|| Error::Config("cannot distribute rows".into()))?;
        if over {
            rows[idx] -= 1;
        } else {
            rows[idx] += 1;
        }
    }
    let mut edges = vec![0.0];
    for (l, r) in geom.layers.iter().zip(&rows) {
        let dy = l.thickness() / *r as f64;
        for k in 1..=*r {
            edges.push(if k == *r { l.y_top } else { l.y_bottom + k as f64 * dy });
        }
    }
    Ok(edges)
}

#[derive(Clone, Copy, PartialEq)]
enum Cell {
    Solid(f64),
    Water(usize),
}

/// Sparse symmetric system in a fixed 5-point pattern: `diag` plus
/// conductances to the east and north neighbours.
struct System {
    nx: usize,
    ny: usize,
    diag: Vec<f64>,
    east: Vec<f64>,
    north: Vec<f64>,
    active: Vec<bool>,
}

impl System {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            for i in 0..nx {
                let c = j * nx + i;
                if !self.active[c] {
                    out[c] = 0.0;
                    continue;
                }
                let e = j * nx + (i + 1) % nx;
                let w = j * nx + (i + nx - 1) % nx;
                let mut s = self.diag[c] * v[c] - self.east[c] * v[e] - self.east[w] * v[w];
                if j + 1 < ny {
                    s -= self.north[c] * v[c + nx];
                }
                if j > 0 {
                    s -= self.north[c - nx] * v[c - nx];
                }
                out[c] = s;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve_pcg(sys: &System, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<(usize, f64, Vec<f64>)> {
    let n = b.len();
    let mut r = vec![0.0; n];
    sys.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let inv: Vec<f64> = sys
        .diag
        .iter()
        .zip(&sys.active)
        .map(|(d, a)| if *a && *d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut history = Vec::new();
    for it in 0..opts.max_iterations {
        let rel = dot(&r, &r).sqrt() / bnorm;
        if it % 100 == 0 {
            history.push(rel);
        }
        if rel < opts.tolerance {
            return Ok((it, rel, history));
        }
        sys.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = dot(&r, &r).sqrt() / bnorm;
    history.push(rel);
    Err(Error::Solver {
        iterations: opts.max_iterations,
        residual: rel,
        history,
    })
}

fn solve_jacobi(sys: &System, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<(usize, f64, Vec<f64>)> {
    let n = b.len();
    let omega = 0.8;
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut ax = vec![0.0; n];
    let mut history = Vec::new();
    for it in 0..opts.max_iterations {
        sys.apply(x, &mut ax);
        let mut rr = 0.0;
        for i in 0..n {
            if sys.active[i] {
                let r = b[i] - ax[i];
                rr += r * r;
                x[i] += omega * r / sys.diag[i];
            }
        }
        let rel = rr.sqrt() / bnorm;
        if it % 100 == 0 {
            history.push(rel);
        }
        if rel < opts.tolerance {
            return Ok((it, rel, history));
        }
    }
    Err(Error::Solver {
        iterations: opts.max_iterations,
        residual: *history.last().unwrap_or(&f64::NAN),
        history,
    })
}

/// Steady conduction on the rig cross-section with the pipes' inner
/// surfaces convecting to `t_w` with coefficient `h`.
pub fn fd_solve(geom: &RigGeometry, case: &CaseConfig, h: f64, grid: (usize, usize)) -> Result<FdSolution> {
    fd_solve_setup(&FdSetup::rig(geom, case, h)?, grid, &SolverOptions::default())
}

/// Finite-volume solve of a general setup. The unknowns are solved as
/// deviations from `t_w`, which keeps the right-hand side small.
pub fn fd_solve_setup(setup: &FdSetup, grid: (usize, usize), opts: &SolverOptions) -> Result<FdSolution> {
    setup.validate()?;
    let g = &setup.geom;
    let (nx, ny) = grid;
    if nx < 3 {
        return Err(Error::Config("nx must be at least 3".into()));
    }
    let y_edges = layer_rows(g, ny)?;
    let y_centers: Vec<f64> = y_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let dys: Vec<f64> = y_edges.windows(2).map(|w| w[1] - w[0]).collect();
    let dx = g.x_n / nx as f64;
    let n = nx * ny;

    let layer_of_row = |j: usize| {
        let y = y_centers[j];
        g.layers.iter().position(|l| y >= l.y_bottom && y <= l.y_top).unwrap_or(g.layers.len() - 1)
    };
    let cells: Vec<Cell> = (0..n)
        .map(|c| {
            let (i, j) = (c % nx, c / nx);
            let p = [(i as f64 + 0.5) * dx, y_centers[j]];
            let layer = layer_of_row(j);
            if !setup.with_pipes || layer != 0 {
                return Cell::Solid(g.layers[layer].k);
            }
            match g.region_of(p) {
                Some(Region::PipeWall(k)) => Cell::Solid(g.pipes[k].k_pipe),
                Some(Region::Water(k)) => Cell::Water(k),
                _ => Cell::Solid(g.layers[layer].k),
            }
        })
        .collect();
    let active: Vec<bool> = cells.iter().map(|c| matches!(c, Cell::Solid(_))).collect();
    let kof = |c: usize| match cells[c] {
        Cell::Solid(k) => k,
        Cell::Water(_) => 0.0,
    };

    // Robin faces: (cell, pipe, conductance-per-area 1/(d/k + 1/h), face length)
    let mut robin: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut east = vec![0.0; n];
    let mut north = vec![0.0; n];
    for j in 0..ny {
        for i in 0..nx {
            let c = j * nx + i;
            let e = j * nx + (i + 1) % nx;
            // east face
            match (cells[c], cells[e]) {
                (Cell::Solid(ka), Cell::Solid(kb)) => {
                    east[c] = dys[j] / (0.5 * dx / ka + 0.5 * dx / kb);
                }
                (Cell::Solid(k), Cell::Water(p)) => robin.push((c, p, 1.0 / (0.5 * dx / k + 1.0 / setup.h.max(1e-300)), dys[j])),
                (Cell::Water(p), Cell::Solid(k)) => robin.push((e, p, 1.0 / (0.5 * dx / k + 1.0 / setup.h.max(1e-300)), dys[j])),
                _ => {}
            }
            if j + 1 < ny {
                let u = c + nx;
                match (cells[c], cells[u]) {
                    (Cell::Solid(ka), Cell::Solid(kb)) => {
                        north[c] = dx / (0.5 * dys[j] / ka + 0.5 * dys[j + 1] / kb);
                    }
                    (Cell::Solid(k), Cell::Water(p)) => {
                        robin.push((c, p, 1.0 / (0.5 * dys[j] / k + 1.0 / setup.h.max(1e-300)), dx))
                    }
                    (Cell::Water(p), Cell::Solid(k)) => {
                        robin.push((u, p, 1.0 / (0.5 * dys[j + 1] / k + 1.0 / setup.h.max(1e-300)), dx))
                    }
                    _ => {}
                }
            }
        }
    }
    // staircase perimeter → true circle perimeter
    let mut stair = vec![0.0; N_PIPES.max(g.pipes.len())];
    for r in &robin {
        stair[r.1] += r.3;
    }
    let scale: Vec<f64> = g
        .pipes
        .iter()
        .enumerate()
        .map(|(k, p)| if stair[k] > 0.0 { 2.0 * std::f64::consts::PI * p.r_inner / stair[k] } else { 0.0 })
        .collect();
    if setup.h == 0.0 {
        robin.clear();
    }

    let mut diag = vec![0.0; n];
    let mut b = vec![0.0; n];
    for j in 0..ny {
        for i in 0..nx {
            let c = j * nx + i;
            if !active[c] {
                continue;
            }
            let w = j * nx + (i + nx - 1) % nx;
            diag[c] += east[c] + east[w];
            if j + 1 < ny {
                diag[c] += north[c];
            }
            if j > 0 {
                diag[c] += north[c - nx];
            }
        }
    }
    for &(c, p, gc, len) in &robin {
        diag[c] += gc * len * scale[p];
    }
    // top flux; cell faces partly covered get the covered fraction
    let jt = ny - 1;
    let mut heat_in = 0.0;
    for i in 0..nx {
        let (x0, x1) = (i as f64 * dx, (i + 1) as f64 * dx);
        let cover = (x1.min(g.x_b) - x0.max(g.x_a)).max(0.0);
        let q = setup.q_flux * cover;
        b[jt * nx + i] += q;
        heat_in += q;
    }
    if let BottomBc::Robin { h, t_inf } = setup.bottom {
        for i in 0..nx {
            let gc = 1.0 / (0.5 * dys[0] / kof(i) + 1.0 / h) * dx;
            diag[i] += gc;
            b[i] += gc * (t_inf - setup.t_w);
        }
    }
    // pure Neumann problem: pin the mean through a tiny diagonal shift
    if robin.is_empty() && matches!(setup.bottom, BottomBc::Insulated) {
        if setup.q_flux != 0.0 {
            return Err(Error::Config("net heat input with no heat sink has no steady state".into()));
        }
        for (d, a) in diag.iter_mut().zip(&active) {
            if *a {
                *d += 1e-12;
            }
        }
    }

    let sys = System {
        nx,
        ny,
        diag,
        east,
        north,
        active: active.clone(),
    };
    let mut theta = vec![0.0; n];
    let (iterations, residual, history) = if b.iter().all(|v| *v == 0.0) {
        (0, 0.0, vec![0.0])
    } else {
        match opts.method {
            LinearSolver::Pcg => solve_pcg(&sys, &b, &mut theta, opts)?,
            LinearSolver::Jacobi => solve_jacobi(&sys, &b, &mut theta, opts)?,
        }
    };
    let mut pipe_heat = vec![0.0; g.pipes.len()];
    for &(c, p, gc, len) in &robin {
        pipe_heat[p] += gc * len * scale[p] * theta[c];
    }
    let mut heat_out: f64 = pipe_heat.iter().sum();
    if let BottomBc::Robin { h, t_inf } = setup.bottom {
        for i in 0..nx {
            let gc = 1.0 / (0.5 * dys[0] / kof(i) + 1.0 / h) * dx;
            heat_out += gc * (theta[i] - (t_inf - setup.t_w));
        }
    }
    let temps = theta
        .iter()
        .zip(&active)
        .map(|(t, a)| if *a { setup.t_w + t } else { f64::NAN })
        .collect();
    Ok(FdSolution {
        nx,
        ny,
        dx,
        x_n: g.x_n,
        y_edges,
        y_centers,
        temps,
        iterations,
        residual,
        history,
        heat_in,
        heat_out,
        pipe_heat,
    })
}

/// Bilinear interpolation between cell centres, periodic in x and
/// linearly extrapolated in the half cells along the top and bottom.
/// Coolant cells are skipped.
pub fn fd_probe(sol: &FdSolution, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    let y_n = *sol.y_edges.last().unwrap_or(&0.0);
    points
        .iter()
        .map(|&[x, y]| {
            let eps = 1e-12 * sol.x_n.max(y_n);
            if !(x >= -eps && x <= sol.x_n + eps && y >= -eps && y <= y_n + eps) {
                return Err(Error::Range(format!("point ({x}, {y}) is outside the FD grid")));
            }
            let s = x / sol.dx - 0.5;
            let i0f = s.floor();
            let fx = s - i0f;
            let i0 = (i0f as i64).rem_euclid(sol.nx as i64) as usize;
            let i1 = (i0 + 1) % sol.nx;
            let yc = &sol.y_centers;
            let j0 = match yc.iter().rposition(|c| *c <= y) {
                Some(j) => j.min(sol.ny - 2),
                None => 0,
            };
            let j1 = j0 + 1;
            let fy = (y - yc[j0]) / (yc[j1] - yc[j0]);
            let corners = [
                (sol.at(i0, j0), (1.0 - fx) * (1.0 - fy)),
                (sol.at(i1, j0), fx * (1.0 - fy)),
                (sol.at(i0, j1), (1.0 - fx) * fy),
                (sol.at(i1, j1), fx * fy),
            ];
            let (mut sum, mut wsum) = (0.0, 0.0);
            for (t, w) in corners {
                if !t.is_nan() {
                    sum += t * w;
                    wsum += w;
                }
            }
            if corners.iter().any(|c| c.0.is_nan()) {
                // renormalize over the solid corners
                let valid: Vec<f64> = corners.iter().map(|c| c.0).filter(|t| !t.is_nan()).collect();
                if valid.is_empty() {
                    return Err(Error::Range(format!("point ({x}, {y}) lies in the coolant")));
                }
                if wsum.abs() < 1e-14 {
                    return Ok(valid.iter().sum::<f64>() / valid.len() as f64);
                }
                return Ok(sum / wsum);
            }
            Ok(sum)
        })
        .collect()
}

/// Writes the FD field as `x,y,layer,T` rows; coolant cells are omitted.
pub fn write_fd_csv<W: std::io::Write>(sol: &FdSolution, geom: &RigGeometry, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x_m", "y_m", "region", "t_k"])?;
    for j in 0..sol.ny {
        for i in 0..sol.nx {
            let t = sol.at(i, j);
            if t.is_nan() {
                continue;
            }
            let p = [sol.x_center(i), sol.y_centers[j]];
            let region = match geom.region_of(p) {
                Some(Region::Layer(l)) => format!("layer{l}"),
                Some(Region::PipeWall(_)) => "pipes".into(),
                _ => "layer0".into(),
            };
            out.write_record([format!("{:e}", p[0]), format!("{:e}", p[1]), region, format!("{t:.6}")])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Uniform slab: every layer has conductivity `k`, no pipes, flux `q` over
/// the whole top face and convection to `t_inf` at the bottom.
pub fn slab_setup(q: f64, h_bottom: f64, t_inf: f64, k: f64, thickness: f64) -> FdSetup {
    let mut geom = RigGeometry::default();
    let n = geom.layers.len();
    for (i, l) in geom.layers.iter_mut().enumerate() {
        l.k = k;
        l.y_bottom = thickness * i as f64 / n as f64;
        l.y_top = thickness * (i + 1) as f64 / n as f64;
    }
    geom.y_n = thickness;
    geom.x_a = 0.0;
    geom.x_b = geom.x_n;
    geom.probes.clear();
    FdSetup {
        geom,
        q_flux: q,
        h: 1.0,
        t_w: t_inf,
        bottom: BottomBc::Robin { h: h_bottom, t_inf },
        with_pipes: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabCheck {
    pub max_rel_error: f64,
    pub energy_imbalance: f64,
}

/// Solves a slab and compares every cell with `t_inf + q/h + q·y/k`.
pub fn fd_slab_check(q: f64, h_bottom: f64, grid: (usize, usize)) -> Result<SlabCheck> {
    let (t_inf, k) = (290.0, 50.0);
    let s = slab_setup(q, h_bottom, t_inf, k, 0.1);
    let sol = fd_solve_setup(&s, grid, &SolverOptions::default())?;
    let mut max_rel_error: f64 = 0.0;
    for j in 0..sol.ny {
        let exact = t_inf + q / h_bottom + q * sol.y_centers[j] / k;
        for i in 0..sol.nx {
            max_rel_error = max_rel_error.max((sol.at(i, j) - exact).abs() / exact);
        }
    }
    Ok(SlabCheck {
        max_rel_error,
        energy_imbalance: sol.energy_imbalance(),
    })
}

/// Physical-coordinate field `(T, T_X, T_Y, T_XX, T_YY)` in scaled
/// temperature units.
pub type PhysicalField = Box<dyn Fn([f64; 2]) -> [f64; 5] + Send + Sync>;

/// Closed-form `u*` per subdomain. Unset subdomains read as zero.
pub struct AnalyticField {
    x_l: f64,
    y_l: f64,
    h_star: f64,
    fields: Vec<Option<PhysicalField>>,
}

impl AnalyticField {
    pub fn new(model: &RigModel, h_star: f64) -> Self {
        Self {
            x_l: model.scales.x_l,
            y_l: model.scales.y_l,
            h_star,
            fields: (0..=N_LAYERS).map(|_| None).collect(),
        }
    }

    pub fn with(mut self, sub: Subdomain, f: PhysicalField) -> Self {
        self.fields[sub.index()] = Some(f);
        self
    }
}

impl FieldSource for AnalyticField {
    fn jet(&self, sub: Subdomain, p: [f64; 2]) -> Result<PointJet> {
        let [u, ux, uy, uxx, uyy] = match &self.fields[sub.index()] {
            Some(f) => f([p[0] * self.x_l, p[1] * self.y_l]),
            None => [0.0; 5],
        };
        Ok(PointJet {
            u,
            ux: ux * self.x_l,
            uy: uy * self.y_l,
            uxx: uxx * self.x_l * self.x_l,
            uyy: uyy * self.y_l * self.y_l,
        })
    }

    fn h_star(&self) -> f64 {
        self.h_star
    }
}

/// Largest residual magnitude seen by one residual operation on a field
/// that satisfies its condition exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedCheck {
    pub name: String,
    pub points: usize,
    pub max_abs: f64,
}

/// `ε cos(κX) cosh(κ(Y − y0))` with `κ = 2π/x_N`: harmonic, x-periodic,
/// and flat in y at `y0`.
fn periodic_harmonic(x_n: f64, y0: f64, eps: f64) -> PhysicalField {
    let k = 2.0 * PI / x_n;
    Box::new(move |p| {
        let (c, s) = ((k * p[0]).cos(), (k * p[0]).sin());
        let (ch, sh) = ((k * (p[1] - y0)).cosh(), (k * (p[1] - y0)).sinh());
        [eps * c * ch, -eps * k * s * ch, eps * k * c * sh, -eps * k * k * c * ch, eps * k * k * c * ch]
    })
}

/// `a + b ln R` with `R` the distance from `c`.
fn radial(c: [f64; 2], a: f64, b: f64) -> PhysicalField {
    Box::new(move |p| {
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        let r2 = dx * dx + dy * dy;
        let uxx = b * (dy * dy - dx * dx) / (r2 * r2);
        [a + 0.5 * b * r2.ln(), b * dx / r2, b * dy / r2, uxx, -uxx]
    })
}

fn record(name: &str, values: impl IntoIterator<Item = Result<f64>>) -> Result<ManufacturedCheck> {
    let mut max_abs: f64 = 0.0;
    let mut points = 0;
    for v in values {
        max_abs = max_abs.max(v?.abs());
        points += 1;
    }
    Ok(ManufacturedCheck {
        name: name.to_string(),
        points,
        max_abs,
    })
}

/// Runs every residual operation on closed-form fields built to satisfy
/// it: harmonic periodic fields, a piecewise-linear conduction profile
/// with matched interface fluxes, and radial `a + b ln r` fields around the
/// pipes that meet the interface and Robin conditions.
pub fn manufactured_residuals(model: &RigModel) -> Result<Vec<ManufacturedCheck>> {
    let g = &model.geom;
    let s = model.scales;
    let (x_l, y_l) = (s.x_l, s.y_l);
    let star = |p: [f64; 2]| [p[0] / x_l, p[1] / y_l];
    let fracs: Vec<f64> = (0..9).map(|i| (i as f64 + 0.5) / 9.0).collect();
    let mut out = Vec::new();
    let h_star = 300.0 * s.u0;

    let eps = 1e-5;
    let mut harmonic = AnalyticField::new(model, h_star);
    for i in 0..N_LAYERS {
        harmonic = harmonic.with(Subdomain::Layer(i), periodic_harmonic(g.x_n, 0.0, eps));
    }
    let mut pde = Vec::new();
    let mut periodic = Vec::new();
    for i in 0..N_LAYERS {
        let l = &g.layers[i];
        for &fx in &fracs {
            for &fy in &fracs {
                let p = [fx * g.x_n, l.y_bottom + fy * l.thickness()];
                if g.contains(Region::Layer(i), p) {
                    pde.push(residual_pde(&harmonic, model, star(p), Subdomain::Layer(i)));
                }
            }
            let y = star([0.0, l.y_bottom + fx * l.thickness()])[1];
            if g.contains(Region::Layer(i), [0.0, y * y_l]) {
                periodic.push(residual_periodic(&harmonic, model, y, i));
                periodic.push(residual_periodic_value(&harmonic, model, y, i));
            }
        }
    }
    out.push(record("pde harmonic layers", pde)?);
    out.push(record("periodic", periodic)?);

    let bottom = AnalyticField::new(model, h_star).with(Subdomain::Layer(0), periodic_harmonic(g.x_n, 0.0, eps));
    out.push(record(
        "neumann bottom",
        fracs
            .iter()
            .map(|f| residual_neumann(&bottom, model, f * g.x_n / x_l, NeumannBoundary::Bottom)),
    )?);
    let top = AnalyticField::new(model, h_star).with(Subdomain::Layer(4), periodic_harmonic(g.x_n, g.y_n, eps));
    let insulated: Vec<f64> = fracs
        .iter()
        .map(|f| f * g.x_n)
        .filter(|&x| x < g.x_a || x > g.x_b)
        .collect();
    out.push(record(
        "neumann top insulated",
        insulated
            .iter()
            .map(|x| residual_neumann(&top, model, x / x_l, NeumannBoundary::TopInsulated)),
    )?);

    // piecewise linear in y: k̂ᵢ·gᵢ equal in every layer, values matched
    let q = model.k_hat(Subdomain::Layer(4)) * model.alpha_star;
    let mut a = 0.0;
    let mut linear = AnalyticField::new(model, h_star);
    for i in 0..N_LAYERS {
        let slope = q / model.k_hat(Subdomain::Layer(i)) / y_l;
        let y0 = g.layers[i].y_bottom;
        let a0 = a;
        linear = linear.with(
            Subdomain::Layer(i),
            Box::new(move |p| [a0 + slope * (p[1] - y0), 0.0, slope, 0.0, 0.0]),
        );
        a += slope * g.layers[i].thickness();
    }
    let footprint: Vec<f64> = (0..9).map(|i| g.x_a + (g.x_b - g.x_a) * i as f64 / 8.0).collect();
    out.push(record(
        "flux top",
        footprint.iter().map(|x| residual_flux_top(&linear, model, x / x_l)),
    )?);
    let mut planar = Vec::new();
    for lower in 0..N_LAYERS - 1 {
        for &fx in &fracs {
            match residual_interface_planar(&linear, model, fx * g.x_n / x_l, lower) {
                Ok((v, f)) => {
                    planar.push(Ok(v));
                    planar.push(Ok(f));
                }
                Err(Error::Region(_)) if lower == 0 => {}
                Err(e) => planar.push(Err(e)),
            }
        }
    }
    out.push(record("interface planar", planar)?);
    let mut lin_pde = Vec::new();
    for i in 1..N_LAYERS {
        let l = &g.layers[i];
        for &f in &fracs {
            lin_pde.push(residual_pde(&linear, model, star([f * g.x_n, l.y_bottom + 0.5 * l.thickness()]), Subdomain::Layer(i)));
        }
    }
    out.push(record("pde linear profile", lin_pde)?);

    // radial fields: Robin at r_inner, continuity at r_outer
    let b = 2e-4;
    let kp = model.k_hat(Subdomain::Pipes);
    let k0 = model.k_hat(Subdomain::Layer(0));
    let t_w = model.bc.t_w_star;
    let mut conv = Vec::new();
    let mut circ = Vec::new();
    let mut pipe_pde = Vec::new();
    for (j, pipe) in g.pipes.iter().enumerate() {
        let (ri, ro) = (pipe.r_inner, pipe.r_outer);
        let a_p = t_w + kp * y_l * b / (h_star * ri) - b * ri.ln();
        let b0 = kp * b / k0;
        let a_0 = a_p + (b - b0) * ro.ln();
        let field = AnalyticField::new(model, h_star)
            .with(Subdomain::Pipes, radial(pipe.center, a_p, b))
            .with(Subdomain::Layer(0), radial(pipe.center, a_0, b0));
        for k in 0..16 {
            let th = 2.0 * PI * k as f64 / 16.0;
            let at = |r: f64| star([pipe.center[0] + r * th.cos(), pipe.center[1] + r * th.sin()]);
            conv.push(residual_convective(&field, model, at(ri), j, t_w));
            match residual_interface_circular(&field, model, at(ro), j) {
                Ok((v, f)) => {
                    circ.push(Ok(v));
                    circ.push(Ok(f));
                }
                Err(e) => circ.push(Err(e)),
            }
            pipe_pde.push(residual_pde(&field, model, at(0.5 * (ri + ro)), Subdomain::Pipes));
        }
    }
    out.push(record("convective robin", conv)?);
    out.push(record("interface circular", circ)?);
    out.push(record("pde radial pipes", pipe_pde)?);
    Ok(out)
}
