//! Time-conditioned MLP emitting ambient vectors.
//!
//! Forward passes optionally carry `ntan` forward-mode tangents stacked under
//! the primal rows: a matrix with `B (1 + ntan)` rows whose block `k` holds
//! the directional derivative of every activation along input direction `k`.
//! Linear layers act on all blocks at once (bias only on the primal block),
//! which makes Jacobian-vector products, divergences and their parameter
//! gradients cost a handful of extra matrix products.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::manifold::Manifold;
use crate::rng;

/// Default number of sinusoidal time frequencies.
pub const DEFAULT_TIME_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Silu,
    Relu,
}

impl Activation {
    /// `(f(a), f'(a), f''(a))`.
    #[inline]
    pub fn eval(self, a: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let y = a.tanh();
                let d = 1.0 - y * y;
                (y, d, -2.0 * y * d)
            }
            Activation::Silu => {
                let sg = 1.0 / (1.0 + (-a).exp());
                let d = sg * (1.0 + a * (1.0 - sg));
                let dd = sg * (1.0 - sg) * (2.0 + a * (1.0 - 2.0 * sg));
                (a * sg, d, dd)
            }
            Activation::Relu => {
                if a > 0.0 {
                    (a, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        }
    }

    /// Whether second derivatives exist everywhere (needed by the score loss).
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "silu" | "swish" => Ok(Activation::Silu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Multilayer perceptron `(t, x) -> y` with `y` in the ambient space of a
/// sphere. All weights live in one flat parameter vector; layer `l` stores
/// its `out x in` weight matrix row-major, followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldNet {
    manifold: Manifold,
    layer_dims: Vec<usize>,
    activation: Activation,
    time_features: usize,
    params: Vec<f64>,
}

/// Cached activations of one forward pass.
pub(crate) struct Tape {
    pub batch: usize,
    pub ntan: usize,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    /// Primal output rows followed by the tangent blocks.
    pub output: Array2<f64>,
}

impl FieldNet {
    /// Randomly initialized net with the given hidden widths; weights and
    /// biases uniform in `+-1/sqrt(fan_in)`.
    pub fn new(
        manifold: Manifold,
        hidden: &[usize],
        activation: Activation,
        time_features: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeros(manifold, hidden, activation, time_features)?;
        let mut r = rng::stream(rng::derive(seed, "init"), 0);
        for l in 0..net.num_layers() {
            let (o, i) = (net.layer_dims[l + 1], net.layer_dims[l]);
            let bound = 1.0 / (i as f64).sqrt();
            let (off, len) = (net.offset(l), o * i + o);
            for p in &mut net.params[off..off + len] {
                *p = r.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// Net with every parameter zero (its output is identically zero).
    pub fn zeros(manifold: Manifold, hidden: &[usize], activation: Activation, time_features: usize) -> Result<Self> {
        let d = match manifold {
            Manifold::Sphere(n) => n + 1,
            Manifold::So3 => return Err(Error::Config("field nets live on spheres; route so3 through s5".into())),
        };
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layer of width 0".into()));
        }
        let mut layer_dims = vec![d + 2 * time_features];
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(d);
        Self::from_parts(manifold, layer_dims, activation, time_features, None)
    }

    /// Checked assembly from stored parts; `params = None` means zeros.
    pub fn from_parts(
        manifold: Manifold,
        layer_dims: Vec<usize>,
        activation: Activation,
        time_features: usize,
        params: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d = manifold.ambient_dim();
        if !matches!(manifold, Manifold::Sphere(_)) {
            return Err(Error::Config("field nets live on spheres".into()));
        }
        if layer_dims.len() < 2 || layer_dims[0] != d + 2 * time_features || *layer_dims.last().unwrap() != d {
            return Err(Error::Config(format!(
                "layer dims {layer_dims:?} do not fit {manifold} with {time_features} time features"
            )));
        }
        let count: usize = layer_dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        let params = params.unwrap_or_else(|| vec![0.0; count]);
        if params.len() != count {
            return Err(Error::Config(format!(
                "{} parameters given, layer dims need {count}",
                params.len()
            )));
        }
        Ok(Self {
            manifold,
            layer_dims,
            activation,
            time_features,
            params,
        })
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn ambient_dim(&self) -> usize {
        self.manifold.ambient_dim()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn time_features(&self) -> usize {
        self.time_features
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    fn offset(&self, layer: usize) -> usize {
        self.layer_dims[..=layer]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum::<usize>()
    }

    fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (o, i) = (self.layer_dims[l + 1], self.layer_dims[l]);
        let off = self.offset(l);
        ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).unwrap()
    }

    fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (o, i) = (self.layer_dims[l + 1], self.layer_dims[l]);
        let off = self.offset(l) + o * i;
        ArrayView1::from(&self.params[off..off + o])
    }

    /// Mutable bias of the output layer.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let l = self.num_layers() - 1;
        let (o, i) = (self.layer_dims[l + 1], self.layer_dims[l]);
        let off = self.offset(l) + o * i;
        &mut self.params[off..off + o]
    }

    /// Network input rows `[x, sin(2^k pi t), cos(2^k pi t)]`. `t` holds one
    /// time per row, or a single time shared by all rows.
    pub fn features(&self, t: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let (b, d) = x.dim();
        assert_eq!(d, self.ambient_dim(), "point dimension");
        assert!(t.len() == b || t.len() == 1, "one time per row or one shared time");
        let mut z = Array2::zeros((b, self.layer_dims[0]));
        z.slice_mut(s![.., ..d]).assign(&x);
        for r in 0..b {
            let tr = if t.len() == 1 { t[0] } else { t[r] };
            let mut f = PI * tr;
            for k in 0..self.time_features {
                let (sn, cs) = f.sin_cos();
                z[[r, d + 2 * k]] = sn;
                z[[r, d + 2 * k + 1]] = cs;
                f *= 2.0;
            }
        }
        z
    }

    /// Stacks the primal inputs with `dirs.len()` tangent blocks; block `k`
    /// perturbs the point coordinates by `dirs[k]` (one row per sample) and
    /// leaves the time features fixed.
    pub(crate) fn stacked_inputs(&self, t: &[f64], x: ArrayView2<f64>, dirs: &[ArrayView2<f64>]) -> Array2<f64> {
        let (b, d) = x.dim();
        let w = self.layer_dims[0];
        let mut z = Array2::zeros((b * (1 + dirs.len()), w));
        z.slice_mut(s![..b, ..]).assign(&self.features(t, x));
        for (k, dir) in dirs.iter().enumerate() {
            let lo = (k + 1) * b;
            z.slice_mut(s![lo..lo + b, ..d]).assign(dir);
        }
        z
    }

    /// Forward pass over stacked inputs with `ntan` tangent blocks.
    pub(crate) fn forward_tape(&self, z0: Array2<f64>, ntan: usize) -> Tape {
        let rows = z0.nrows();
        debug_assert_eq!(rows % (1 + ntan), 0);
        let b = rows / (1 + ntan);
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut z = z0;
        for l in 0..layers {
            let mut a = z.dot(&self.weight(l).t());
            a.slice_mut(s![..b, ..])
                .outer_iter_mut()
                .for_each(|mut row| row += &self.bias(l));
            inputs.push(z);
            if l + 1 == layers {
                return Tape {
                    batch: b,
                    ntan,
                    inputs,
                    pre,
                    output: a,
                };
            }
            let h = self.activate(&a, b, ntan);
            pre.push(a);
            z = h;
        }
        unreachable!("at least one layer")
    }

    fn activate(&self, a: &Array2<f64>, b: usize, ntan: usize) -> Array2<f64> {
        let w = a.ncols();
        let mut h = Array2::zeros(a.dim());
        let av = a.as_slice().unwrap();
        let hv = h.as_slice_mut().unwrap();
        for r in 0..b {
            for j in 0..w {
                let (f, d1, _) = self.activation.eval(av[r * w + j]);
                hv[r * w + j] = f;
                for k in 1..=ntan {
                    let q = (k * b + r) * w + j;
                    hv[q] = d1 * av[q];
                }
            }
        }
        h
    }

    /// Reverse accumulation through a tape. `g` is the adjoint of the whole
    /// stacked output; parameter adjoints are added to `grad`.
    pub(crate) fn backward(&self, tape: &Tape, mut g: Array2<f64>, grad: &mut [f64]) {
        let b = tape.batch;
        let ntan = tape.ntan;
        let layers = self.num_layers();
        for l in (0..layers).rev() {
            if l + 1 < layers {
                g = self.activation_adjoint(&tape.pre[l], g, b, ntan);
            }
            let (o, i) = (self.layer_dims[l + 1], self.layer_dims[l]);
            let off = self.offset(l);
            let gw = g.t().dot(&tape.inputs[l]);
            let mut dw = ArrayViewMut2::from_shape((o, i), &mut grad[off..off + o * i]).unwrap();
            dw += &gw;
            let gb = g.slice(s![..b, ..]).sum_axis(Axis(0));
            for (dst, v) in grad[off + o * i..off + o * i + o].iter_mut().zip(gb.iter()) {
                *dst += v;
            }
            if l > 0 {
                g = g.dot(&self.weight(l));
            }
        }
    }

    fn activation_adjoint(&self, a: &Array2<f64>, g: Array2<f64>, b: usize, ntan: usize) -> Array2<f64> {
        let w = a.ncols();
        let mut out = Array2::zeros(a.dim());
        let av = a.as_slice().unwrap();
        let gv = g.as_slice().unwrap();
        let ov = out.as_slice_mut().unwrap();
        for r in 0..b {
            for j in 0..w {
                let p = r * w + j;
                let (_, d1, d2) = self.activation.eval(av[p]);
                let mut acc = d1 * gv[p];
                for k in 1..=ntan {
                    let q = (k * b + r) * w + j;
                    acc += d2 * av[q] * gv[q];
                    ov[q] = d1 * gv[q];
                }
                ov[p] = acc;
            }
        }
        out
    }

    /// Raw ambient network output `y(t, x)`, one row per point.
    pub fn forward(&self, t: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_tape(self.features(t, x), 0).output
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn activation_derivatives_match_differences() {
        for act in [Activation::Tanh, Activation::Silu] {
            for &a in &[-2.3, -0.4, 0.0, 0.7, 3.1] {
                let h = 1e-5;
                let (_, d1, d2) = act.eval(a);
                let fd1 = (act.eval(a + h).0 - act.eval(a - h).0) / (2.0 * h);
                let fd2 = (act.eval(a + h).1 - act.eval(a - h).1) / (2.0 * h);
                assert_abs_diff_eq!(d1, fd1, epsilon = 1e-8);
                assert_abs_diff_eq!(d2, fd2, epsilon = 1e-8);
            }
        }
        assert!(!Activation::Relu.is_smooth());
        assert_eq!("SiLU".parse::<Activation>().unwrap(), Activation::Silu);
    }

    #[test]
    fn shapes_and_parameter_count() {
        let net = FieldNet::new(Manifold::S2, &[16, 8], Activation::Tanh, 4, 1).unwrap();
        assert_eq!(net.layer_dims(), &[11, 16, 8, 3]);
        assert_eq!(net.num_params(), 11 * 16 + 16 + 16 * 8 + 8 + 8 * 3 + 3);
        let x = Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let y = net.forward(&[0.3], x.view());
        assert_eq!(y.dim(), (2, 3));
        assert!(FieldNet::zeros(Manifold::So3, &[4], Activation::Tanh, 4).is_err());
        assert!(FieldNet::from_parts(Manifold::S2, vec![11, 3], Activation::Tanh, 4, Some(vec![0.0; 3])).is_err());
    }

    #[test]
    fn tangent_block_is_directional_derivative() {
        let net = FieldNet::new(Manifold::S5, &[12, 12], Activation::Silu, 3, 4).unwrap();
        let x = Array2::from_shape_fn((3, 6), |(i, j)| ((i * 7 + j * 3) as f64).sin());
        let dir = Array2::from_shape_fn((3, 6), |(i, j)| ((i + 2 * j) as f64).cos());
        let t = [0.2, 0.5, 0.9];
        let tape = net.forward_tape(net.stacked_inputs(&t, x.view(), &[dir.view()]), 1);
        let h = 1e-6;
        let yp = net.forward(&t, (&x + &(&dir * h)).view());
        let ym = net.forward(&t, (&x - &(&dir * h)).view());
        let fd = (yp - ym) / (2.0 * h);
        assert_abs_diff_eq!(tape.output.slice(s![3.., ..]), fd.view(), epsilon = 1e-7);
    }
}
