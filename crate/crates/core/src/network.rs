//! Fully connected tanh networks mapping `(x*, y*)` to `u*`.
//!
//! Two evaluation paths share one parameter layout:
//!
//! * [`NetworkParams::forward`] and [`NetworkParams::record`] work point by
//!   point; `record` puts the graph on an autodiff [`Tape`] so any input
//!   derivative is available through the generic machinery.
//! * [`NetworkParams::taylor`] pushes a whole batch through the network
//!   carrying first and pure second input derivatives alongside the values
//!   (Taylor mode), and [`NetworkParams::backward`] pulls loss adjoints of
//!   those channels back to the weights. This is the training path.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Fixed affine map applied to the inputs: `ξ = (x − offset)·scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputMap {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl Default for InputMap {
    fn default() -> Self {
        Self {
            offset: [0.0, 0.0],
            scale: [1.0, 1.0],
        }
    }
}

impl InputMap {
    /// Maps the box `[x0, x1] × [y0, y1]` onto `[-1, 1]²`.
    pub fn unit_box(x: (f64, f64), y: (f64, f64)) -> Self {
        Self {
            offset: [0.5 * (x.0 + x.1), 0.5 * (y.0 + y.1)],
            scale: [2.0 / (x.1 - x.0), 2.0 / (y.1 - y.0)],
        }
    }
}

/// Fixed affine map applied to the raw output: `u = offset + scale·o`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputMap {
    pub offset: f64,
    pub scale: f64,
}

impl Default for OutputMap {
    fn default() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }
}

/// Weights and biases of one feed-forward network.
///
/// Parameters live in one flat vector, layer by layer: the row-major
/// `widths[l+1] × widths[l]` weight matrix followed by its bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    widths: Vec<usize>,
    params: Vec<f64>,
    activation: Activation,
    pub input_map: InputMap,
    pub output_map: OutputMap,
    seed: Option<u64>,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Config(format!("need at least two layer widths, got {widths:?}")));
    }
    if widths.contains(&0) {
        return Err(Error::Config(format!("layer widths must be positive, got {widths:?}")));
    }
    if widths[0] != 2 || *widths.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "network must map 2 inputs to 1 output, got widths {widths:?}"
        )));
    }
    Ok(())
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases, reproducible from `seed`.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(widths));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = glorot_bound(fan_in, fan_out);
            let dist = Uniform::new_inclusive(-bound, bound);
            params.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
            activation: Activation::Tanh,
            input_map: InputMap::default(),
            output_map: OutputMap::default(),
            seed: Some(seed),
        })
    }

    /// All weights and biases zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; param_count(widths)],
            activation: Activation::Tanh,
            input_map: InputMap::default(),
            output_map: OutputMap::default(),
            seed: None,
        })
    }

    /// Builds a network from explicit per-layer weights (row-major) and biases.
    pub fn from_layers(widths: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        check_widths(widths)?;
        if weights.len() != widths.len() - 1 || biases.len() != widths.len() - 1 {
            return Err(Error::Config("layer count does not match widths".into()));
        }
        let mut params = Vec::with_capacity(param_count(widths));
        for (l, w) in widths.windows(2).enumerate() {
            if weights[l].len() != w[0] * w[1] || biases[l].len() != w[1] {
                return Err(Error::Config(format!(
                    "layer {l}: expected {}×{} weights and {} biases",
                    w[1], w[0], w[1]
                )));
            }
            params.extend_from_slice(&weights[l]);
            params.extend_from_slice(&biases[l]);
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
            activation: Activation::Tanh,
            input_map: InputMap::default(),
            output_map: OutputMap::default(),
            seed: None,
        })
    }

    pub fn with_maps(mut self, input: InputMap, output: OutputMap) -> Self {
        self.input_map = input;
        self.output_map = output;
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Offset of layer `l`'s weight block and of its bias block.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = param_count(&self.widths[..=l]);
        (start, start + self.widths[l + 1] * self.widths[l])
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, b) = self.offsets(l);
        ArrayView2::from_shape((self.widths[l + 1], self.widths[l]), &self.params[w..b]).unwrap()
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.offsets(l);
        &self.params[b..b + self.widths[l + 1]]
    }

    pub fn weight_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let (w, b) = self.offsets(l);
        let shape = (self.widths[l + 1], self.widths[l]);
        ArrayViewMut2::from_shape(shape, &mut self.params[w..b]).unwrap()
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b) = self.offsets(l);
        let n = self.widths[l + 1];
        &mut self.params[b..b + n]
    }

    /// Point evaluation `u*(x*, y*)`.
    ///
    /// Summation order matches [`NetworkParams::record`], so the two agree
    /// bit for bit.
    pub fn forward(&self, x: f64, y: f64) -> f64 {
        let mut a = vec![
            (x - self.input_map.offset[0]) * self.input_map.scale[0],
            (y - self.input_map.offset[1]) * self.input_map.scale[1],
        ];
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let w = self.weight(l);
            let b = self.bias(l);
            let next: Vec<f64> = (0..self.widths[l + 1])
                .map(|i| {
                    let mut acc = w[[i, 0]] * a[0];
                    for j in 1..a.len() {
                        acc = acc + w[[i, j]] * a[j];
                    }
                    let z = acc + b[i];
                    if l == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            a = next;
        }
        self.output_map.scale * a[0] + self.output_map.offset
    }

    /// Records `u*(x, y)` on `tape` given input nodes for `x*` and `y*`.
    pub fn record(&self, tape: &mut Tape, x: NodeId, y: NodeId) -> NodeId {
        let xs = tape.offset(x, -self.input_map.offset[0]);
        let xs = tape.scale(xs, self.input_map.scale[0]);
        let ys = tape.offset(y, -self.input_map.offset[1]);
        let ys = tape.scale(ys, self.input_map.scale[1]);
        // offset(x, -c) computes x + (-c), which equals x - c exactly
        let mut a = vec![xs, ys];
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let w = self.weight(l);
            let b = self.bias(l);
            let next: Vec<NodeId> = (0..self.widths[l + 1])
                .map(|i| {
                    let mut acc = tape.scale(a[0], w[[i, 0]]);
                    for (j, &aj) in a.iter().enumerate().skip(1) {
                        let t = tape.scale(aj, w[[i, j]]);
                        acc = tape.add(acc, t);
                    }
                    let z = tape.offset(acc, b[i]);
                    if l == last {
                        z
                    } else {
                        tape.tanh(z)
                    }
                })
                .collect();
            a = next;
        }
        let scaled = tape.scale(a[0], self.output_map.scale);
        let out = tape.offset(scaled, self.output_map.offset);
        tape.set_output(out);
        out
    }

    /// Builds a fresh tape with inputs `x` and `y` holding this network.
    pub fn to_tape(&self) -> Tape {
        let mut tape = Tape::new();
        let x = tape.var("x");
        let y = tape.var("y");
        self.record(&mut tape, x, y);
        tape
    }

    /// Taylor-mode batch forward pass.
    pub fn taylor(&self, points: &[[f64; 2]], channels: Channels) -> (Jet, TaylorCache) {
        let channels = channels.closed();
        let list = channels.list();
        let c = list.len();
        let n = points.len();
        let cn = c * n;
        let im = &self.input_map;

        let mut a0 = Array2::<f64>::zeros((2, cn));
        for (k, ch) in list.iter().enumerate() {
            let block = k * n;
            match ch {
                Channel::V => {
                    for (p, pt) in points.iter().enumerate() {
                        a0[[0, block + p]] = (pt[0] - im.offset[0]) * im.scale[0];
                        a0[[1, block + p]] = (pt[1] - im.offset[1]) * im.scale[1];
                    }
                }
                Channel::X => a0.row_mut(0).slice_mut(ndarray::s![block..block + n]).fill(im.scale[0]),
                Channel::Y => a0.row_mut(1).slice_mut(ndarray::s![block..block + n]).fill(im.scale[1]),
                Channel::XX | Channel::YY => {}
            }
        }

        let mut layers = Vec::with_capacity(self.n_layers());
        let mut input = a0;
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let w = self.weight(l);
            let b = self.bias(l);
            let rows = self.widths[l + 1];
            let mut z = Array2::<f64>::zeros((rows, cn));
            general_mat_mul(1.0, &w, &input, 0.0, &mut z);
            for r in 0..rows {
                let row = z.row_mut(r).into_slice().unwrap();
                for v in &mut row[..n] {
                    *v += b[r];
                }
            }
            if l == last {
                layers.push(LayerCache { input, z: None });
                input = z;
            } else {
                let act = tanh_forward(&z, &list, n);
                layers.push(LayerCache { input, z: Some(z) });
                input = act;
            }
        }

        let om = self.output_map;
        let out = input.row(0).to_vec();
        let mut values = out;
        for (k, ch) in list.iter().enumerate() {
            let block = &mut values[k * n..(k + 1) * n];
            for v in block.iter_mut() {
                *v *= om.scale;
                if *ch == Channel::V {
                    *v += om.offset;
                }
            }
        }
        let jet = Jet {
            n,
            channels,
            values,
        };
        (jet, TaylorCache { layers, channels, n })
    }

    /// Accumulates `∂L/∂θ` into `grad` given `seed = ∂L/∂(output channels)`.
    pub fn backward(&self, cache: &TaylorCache, seed: &Jet, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        assert_eq!(seed.n, cache.n, "seed batch size");
        let list = cache.channels.list();
        let n = cache.n;
        let cn = list.len() * n;
        let om = self.output_map;

        let mut zbar = Array2::<f64>::zeros((1, cn));
        {
            let row = zbar.row_mut(0).into_slice().unwrap();
            for (k, ch) in list.iter().enumerate() {
                if let Some(s) = seed.get(*ch) {
                    for p in 0..n {
                        row[k * n + p] = om.scale * s[p];
                    }
                }
            }
        }

        for l in (0..self.n_layers()).rev() {
            let layer = &cache.layers[l];
            let (wo, bo) = self.offsets(l);
            let (rows, cols) = (self.widths[l + 1], self.widths[l]);
            {
                let mut gw = ArrayViewMut2::from_shape((rows, cols), &mut grad[wo..bo]).unwrap();
                general_mat_mul(1.0, &zbar, &layer.input.t(), 1.0, &mut gw);
            }
            for r in 0..rows {
                let zr = zbar.row(r);
                let zr = zr.as_slice().unwrap();
                grad[bo + r] += zr[..n].iter().sum::<f64>();
            }
            if l == 0 {
                break;
            }
            let mut abar = Array2::<f64>::zeros((cols, cn));
            general_mat_mul(1.0, &self.weight(l).t(), &zbar, 0.0, &mut abar);
            let below = &cache.layers[l - 1];
            let z = below.z.as_ref().expect("hidden layer keeps pre-activations");
            zbar = tanh_backward(z, &layer.input, &abar, &list, n);
        }
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            widths: self.widths.clone(),
            seed: self.seed,
            activation: self.activation,
            input_map: self.input_map,
            output_map: self.output_map,
            weights: (0..self.n_layers()).map(|l| self.weight(l).iter().copied().collect()).collect(),
            biases: (0..self.n_layers()).map(|l| self.bias(l).to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint) -> Result<Self> {
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", ckpt.schema_version),
            ));
        }
        let mut net = Self::from_layers(&ckpt.widths, &ckpt.weights, &ckpt.biases)?;
        net.activation = ckpt.activation;
        net.input_map = ckpt.input_map;
        net.output_map = ckpt.output_map;
        net.seed = ckpt.seed;
        Ok(net)
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Versioned on-disk form of [`NetworkParams`]. Weight matrices are
/// row-major, `widths[l+1]` rows by `widths[l]` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub schema_version: u32,
    pub widths: Vec<usize>,
    pub seed: Option<u64>,
    pub activation: Activation,
    pub input_map: InputMap,
    pub output_map: OutputMap,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Derivative channels carried by the Taylor-mode pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    V,
    X,
    Y,
    XX,
    YY,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Channels {
    pub x: bool,
    pub y: bool,
    pub xx: bool,
    pub yy: bool,
}

impl Channels {
    pub const VALUE: Channels = Channels {
        x: false,
        y: false,
        xx: false,
        yy: false,
    };
    pub const GRADIENT: Channels = Channels {
        x: true,
        y: true,
        xx: false,
        yy: false,
    };
    pub const FULL: Channels = Channels {
        x: true,
        y: true,
        xx: true,
        yy: true,
    };

    /// Second-order channels need their first-order parents.
    fn closed(self) -> Self {
        Self {
            x: self.x || self.xx,
            y: self.y || self.yy,
            ..self
        }
    }

    pub fn list(self) -> Vec<Channel> {
        let mut v = vec![Channel::V];
        if self.x {
            v.push(Channel::X);
        }
        if self.y {
            v.push(Channel::Y);
        }
        if self.xx {
            v.push(Channel::XX);
        }
        if self.yy {
            v.push(Channel::YY);
        }
        v
    }

    pub fn union(self, other: Channels) -> Channels {
        Channels {
            x: self.x || other.x,
            y: self.y || other.y,
            xx: self.xx || other.xx,
            yy: self.yy || other.yy,
        }
    }
}

/// Values and input derivatives of a network over a batch, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub n: usize,
    channels: Channels,
    values: Vec<f64>,
}

impl Jet {
    /// All-zero jet, used as an adjoint seed.
    pub fn zeros(n: usize, channels: Channels) -> Self {
        let channels = channels.closed();
        Self {
            n,
            channels,
            values: vec![0.0; n * channels.list().len()],
        }
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    fn slot(&self, ch: Channel) -> Option<usize> {
        self.channels.list().iter().position(|c| *c == ch)
    }

    pub fn get(&self, ch: Channel) -> Option<&[f64]> {
        self.slot(ch).map(|k| &self.values[k * self.n..(k + 1) * self.n])
    }

    pub fn get_mut(&mut self, ch: Channel) -> Option<&mut [f64]> {
        let n = self.n;
        self.slot(ch).map(move |k| &mut self.values[k * n..(k + 1) * n])
    }

    /// Panicking accessor for channels the caller requested.
    pub fn ch(&self, ch: Channel) -> &[f64] {
        self.get(ch).unwrap_or_else(|| panic!("channel {ch:?} was not computed"))
    }

    pub fn ch_mut(&mut self, ch: Channel) -> &mut [f64] {
        self.get_mut(ch).unwrap_or_else(|| panic!("channel {ch:?} was not requested"))
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Input activations of this layer (all channels).
    input: Array2<f64>,
    /// Pre-activations, kept for hidden layers only.
    z: Option<Array2<f64>>,
}

/// Intermediate state of a Taylor-mode pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct TaylorCache {
    layers: Vec<LayerCache>,
    channels: Channels,
    n: usize,
}

fn block_index(list: &[Channel], ch: Channel) -> Option<usize> {
    list.iter().position(|c| *c == ch)
}

fn tanh_forward(z: &Array2<f64>, list: &[Channel], n: usize) -> Array2<f64> {
    let (rows, cn) = z.dim();
    let mut a = Array2::<f64>::zeros((rows, cn));
    let ix = block_index(list, Channel::X);
    let iy = block_index(list, Channel::Y);
    let ixx = block_index(list, Channel::XX);
    let iyy = block_index(list, Channel::YY);
    for r in 0..rows {
        let zr = z.row(r);
        let zr = zr.as_slice().unwrap();
        let mut ar = a.row_mut(r);
        let ar = ar.as_slice_mut().unwrap();
        for p in 0..n {
            let s = zr[p].tanh();
            let s1 = 1.0 - s * s;
            let s2 = -2.0 * s * s1;
            ar[p] = s;
            if let Some(kx) = ix {
                let zx = zr[kx * n + p];
                ar[kx * n + p] = s1 * zx;
                if let Some(kxx) = ixx {
                    ar[kxx * n + p] = s1 * zr[kxx * n + p] + s2 * zx * zx;
                }
            }
            if let Some(ky) = iy {
                let zy = zr[ky * n + p];
                ar[ky * n + p] = s1 * zy;
                if let Some(kyy) = iyy {
                    ar[kyy * n + p] = s1 * zr[kyy * n + p] + s2 * zy * zy;
                }
            }
        }
    }
    a
}

/// Pulls adjoints of `a = tanh-jet(z)` back to adjoints of `z`.
fn tanh_backward(z: &Array2<f64>, a: &Array2<f64>, abar: &Array2<f64>, list: &[Channel], n: usize) -> Array2<f64> {
    let (rows, cn) = z.dim();
    let mut zbar = Array2::<f64>::zeros((rows, cn));
    let ix = block_index(list, Channel::X);
    let iy = block_index(list, Channel::Y);
    let ixx = block_index(list, Channel::XX);
    let iyy = block_index(list, Channel::YY);
    for r in 0..rows {
        let zr = z.row(r);
        let zr = zr.as_slice().unwrap();
        let ar = a.row(r);
        let ar = ar.as_slice().unwrap();
        let br = abar.row(r);
        let br = br.as_slice().unwrap();
        let mut outr = zbar.row_mut(r);
        let out = outr.as_slice_mut().unwrap();
        for p in 0..n {
            let s = ar[p];
            let s1 = 1.0 - s * s;
            let s2 = -2.0 * s * s1;
            let s3 = -2.0 * s1 * s1 + 4.0 * s * s * s1;
            let mut zv = br[p] * s1;
            for (first, second) in [(ix, ixx), (iy, iyy)] {
                let Some(k1) = first else { continue };
                let z1 = zr[k1 * n + p];
                let b1 = br[k1 * n + p];
                zv += b1 * s2 * z1;
                let mut z1bar = b1 * s1;
                if let Some(k2) = second {
                    let z2 = zr[k2 * n + p];
                    let b2 = br[k2 * n + p];
                    zv += b2 * (s2 * z2 + s3 * z1 * z1);
                    z1bar += b2 * 2.0 * s2 * z1;
                    out[k2 * n + p] = b2 * s1;
                }
                out[k1 * n + p] = z1bar;
            }
            out[p] = zv;
        }
    }
    zbar
}

/// Identifies one of the six networks of the rig model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subdomain {
    /// Material layer 0 (cold plate) to 4 (top aluminium).
    Layer(usize),
    /// The stainless pipe walls, one network for all six passes.
    Pipes,
}

impl Subdomain {
    pub const ALL: [Subdomain; 6] = [
        Subdomain::Layer(0),
        Subdomain::Layer(1),
        Subdomain::Layer(2),
        Subdomain::Layer(3),
        Subdomain::Layer(4),
        Subdomain::Pipes,
    ];

    pub fn index(self) -> usize {
        match self {
            Subdomain::Layer(i) => i,
            Subdomain::Pipes => 5,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0..=4 => Some(Subdomain::Layer(i)),
            5 => Some(Subdomain::Pipes),
            _ => None,
        }
    }

    pub fn name(self) -> String {
        match self {
            Subdomain::Layer(i) => format!("layer{i}"),
            Subdomain::Pipes => "pipes".to_string(),
        }
    }
}

impl std::fmt::Display for Subdomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for Subdomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pipes" => Ok(Subdomain::Pipes),
            _ => s
                .strip_prefix("layer")
                .and_then(|i| i.parse::<usize>().ok())
                .filter(|i| *i < 5)
                .map(Subdomain::Layer)
                .ok_or_else(|| Error::Config(format!("unknown subdomain `{s}`"))),
        }
    }
}

/// The six subdomain networks plus the trainable heat transfer coefficient,
/// stored as `ln h*` so that `h* > 0` always.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkEnsemble {
    pub nets: Vec<NetworkParams>,
    pub log_h_star: f64,
}

impl NetworkEnsemble {
    pub fn new(nets: Vec<NetworkParams>, h_star: f64) -> Result<Self> {
        if nets.len() != 6 {
            return Err(Error::Config(format!("ensemble needs 6 networks, got {}", nets.len())));
        }
        Self::with_nets(nets, h_star)
    }

    /// Any number of networks; used by the single-domain validation problems.
    pub fn with_nets(nets: Vec<NetworkParams>, h_star: f64) -> Result<Self> {
        if nets.is_empty() {
            return Err(Error::Config("ensemble needs at least one network".into()));
        }
        if !(h_star > 0.0 && h_star.is_finite()) {
            return Err(Error::Config(format!("h* must be positive, got {h_star}")));
        }
        Ok(Self {
            nets,
            log_h_star: h_star.ln(),
        })
    }

    /// Same architecture for all six subnets, seeds `seed·16 + index`.
    pub fn init(widths: &[usize], seed: u64, h_star: f64) -> Result<Self> {
        let nets = (0..6)
            .map(|i| NetworkParams::init(widths, seed.wrapping_mul(16).wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(nets, h_star)
    }

    pub fn h_star(&self) -> f64 {
        self.log_h_star.exp()
    }

    pub fn set_h_star(&mut self, h_star: f64) {
        self.log_h_star = h_star.ln();
    }

    pub fn net(&self, s: Subdomain) -> &NetworkParams {
        &self.nets[s.index()]
    }

    pub fn net_mut(&mut self, s: Subdomain) -> &mut NetworkParams {
        &mut self.nets[s.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_net(widths: &[usize], seed: u64) -> NetworkParams {
        let mut net = NetworkParams::init(widths, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for b in 0..net.n_layers() {
            for v in net.bias_mut(b) {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        net.input_map = InputMap {
            offset: [0.3, -0.2],
            scale: [1.7, 0.6],
        };
        net.output_map = OutputMap { offset: 0.25, scale: 1.3 };
        net
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = NetworkParams::zeros(&[2, 8, 8, 1]).unwrap();
        assert_eq!(net.forward(0.4, -3.0), 0.0);
    }

    #[test]
    fn single_hidden_unit_closed_form() {
        let net = NetworkParams::from_layers(&[2, 1, 1], &[vec![1.0, 0.0], vec![1.0]], &[vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(net.forward(0.5, 0.9), 0.5f64.tanh());
    }

    #[test]
    fn forward_matches_tape_bit_for_bit() {
        let net = random_net(&[2, 7, 5, 1], 11);
        let tape = net.to_tape();
        for &(x, y) in &[(0.1, 0.2), (-0.7, 0.33), (0.95, -0.4)] {
            assert_eq!(net.forward(x, y), tape.evaluate(&[("x", x), ("y", y)]).unwrap());
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = NetworkParams::init(&[2, 64, 64, 1], 5).unwrap();
        let b = NetworkParams::init(&[2, 64, 64, 1], 5).unwrap();
        let c = NetworkParams::init(&[2, 64, 64, 1], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        for l in 0..a.n_layers() {
            let bound = glorot_bound(a.widths()[l], a.widths()[l + 1]);
            assert!(a.weight(l).iter().all(|w| w.abs() <= bound));
            assert!(a.bias(l).iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn invalid_widths_are_rejected() {
        assert!(matches!(NetworkParams::init(&[2, 0, 1], 0), Err(Error::Config(_))));
        assert!(matches!(NetworkParams::init(&[3, 4, 1], 0), Err(Error::Config(_))));
        assert!(matches!(NetworkParams::init(&[2, 4, 2], 0), Err(Error::Config(_))));
    }

    #[test]
    fn taylor_channels_match_tape_derivatives() {
        let net = random_net(&[2, 6, 5, 1], 3);
        let tape = net.to_tape();
        let pts = [[0.2, 0.7], [-0.4, 0.1], [0.9, -0.8]];
        let (jet, _) = net.taylor(&pts, Channels::FULL);
        for (p, pt) in pts.iter().enumerate() {
            let at = [("x", pt[0]), ("y", pt[1])];
            let g = tape.gradient(&at).unwrap();
            let uxx = tape.second_derivative(&at, "x", "x").unwrap();
            let uyy = tape.second_derivative(&at, "y", "y").unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
            assert!(close(jet.ch(Channel::V)[p], net.forward(pt[0], pt[1])));
            assert!(close(jet.ch(Channel::X)[p], g["x"]));
            assert!(close(jet.ch(Channel::Y)[p], g["y"]));
            assert!(close(jet.ch(Channel::XX)[p], uxx));
            assert!(close(jet.ch(Channel::YY)[p], uyy));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = random_net(&[2, 5, 4, 1], 8);
        let pts = [[0.2, 0.7], [-0.4, 0.1], [0.9, -0.8], [0.0, 0.3]];
        // L = Σ (c_v u + c_x u_x + c_y u_y + c_xx u_xx + c_yy u_yy)²
        let coef = [0.7, -0.3, 0.4, 0.2, -0.5];
        let loss = |net: &NetworkParams| -> (f64, Jet) {
            let (jet, _) = net.taylor(&pts, Channels::FULL);
            let mut seed = Jet::zeros(pts.len(), Channels::FULL);
            let mut total = 0.0;
            for p in 0..pts.len() {
                let r = coef[0] * jet.ch(Channel::V)[p]
                    + coef[1] * jet.ch(Channel::X)[p]
                    + coef[2] * jet.ch(Channel::Y)[p]
                    + coef[3] * jet.ch(Channel::XX)[p]
                    + coef[4] * jet.ch(Channel::YY)[p];
                total += r * r;
                for (k, ch) in [Channel::V, Channel::X, Channel::Y, Channel::XX, Channel::YY].iter().enumerate() {
                    seed.ch_mut(*ch)[p] = 2.0 * r * coef[k];
                }
            }
            (total, seed)
        };
        let (_, seed) = loss(&net);
        let (_, cache) = net.taylor(&pts, Channels::FULL);
        let mut grad = vec![0.0; net.len()];
        net.backward(&cache, &seed, &mut grad);
        for i in 0..net.len() {
            let h = 1e-6;
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (loss(&plus).0 - loss(&minus).0) / (2.0 * h);
            let tol = 1e-6 * (1.0 + fd.abs());
            assert!((grad[i] - fd).abs() < tol, "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn hidden_unit_permutation_leaves_output_unchanged() {
        let net = random_net(&[2, 4, 3, 1], 21);
        let perm = [2, 0, 3, 1];
        let mut permuted = net.clone();
        for i in 0..4 {
            for j in 0..2 {
                permuted.weight_mut(0)[[i, j]] = net.weight(0)[[perm[i], j]];
            }
            permuted.bias_mut(0)[i] = net.bias(0)[perm[i]];
            for k in 0..3 {
                permuted.weight_mut(1)[[k, i]] = net.weight(1)[[k, perm[i]]];
            }
        }
        for &(x, y) in &[(0.1, 0.5), (-0.3, 0.8)] {
            assert!((net.forward(x, y) - permuted.forward(x, y)).abs() < 1e-14);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = random_net(&[2, 3, 1], 4);
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let back = NetworkParams::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn ensemble_keeps_h_positive() {
        let e = NetworkEnsemble::init(&[2, 4, 1], 1, 1.0).unwrap();
        assert_eq!(e.h_star(), 1.0);
        assert_eq!(e.nets.len(), 6);
        assert!(NetworkEnsemble::init(&[2, 4, 1], 1, -1.0).is_err());
        assert_eq!("layer3".parse::<Subdomain>().unwrap(), Subdomain::Layer(3));
        assert!("layer7".parse::<Subdomain>().is_err());
    }
}
