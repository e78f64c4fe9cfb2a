//! Fully connected scalar-output networks with exact reverse-mode derivatives.
//!
//! Parameters live in one flat vector. Layer by layer it holds the weight matrix
//! (row-major, `fan_out x fan_in`) followed by the bias vector. Because nalgebra is
//! column-major, a row-major `fan_out x fan_in` block is read directly as the
//! transposed `fan_in x fan_out` matrix, which is what the batched products need.

use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    ReLU,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// First derivative. The ReLU derivative at exactly zero is zero.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    #[inline]
    pub fn second_derivative(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => 0.0,
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::ReLU),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

/// Offsets of one dense layer inside a [`ParamVector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerLayout {
    pub fn end(&self) -> usize {
        self.bias_offset + self.fan_out
    }
}

/// Architecture of a scalar-output MLP. An empty `hidden` list is a pure affine model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, activation: Activation) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            activation,
        })
    }

    pub fn affine(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            activation: Activation::ReLU,
        }
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        let mut out = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim;
        let mut offset = 0;
        for &fan_out in self.hidden.iter().chain(std::iter::once(&1)) {
            let layout = LayerLayout {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            };
            offset = layout.end();
            fan_in = fan_out;
            out.push(layout);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| (l.fan_in + 1) * l.fan_out).sum()
    }

    /// Index range of the output layer's weights and bias.
    pub fn last_layer_range(&self) -> Range<usize> {
        let last = *self.layers().last().expect("at least the output layer");
        last.weight_offset..last.end()
    }
}

/// Flat parameter vector θ.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    /// Splits the vector into per-layer `(W, b)` with `W` of shape `fan_out x fan_in`.
    pub fn unflatten(&self, config: &MlpConfig) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
        check_dim(config.param_count(), self.len(), "parameter vector")?;
        Ok(config
            .layers()
            .iter()
            .map(|l| {
                let w = DMatrix::from_row_slice(
                    l.fan_out,
                    l.fan_in,
                    &self.0[l.weight_offset..l.bias_offset],
                );
                let b = DVector::from_column_slice(&self.0[l.bias_offset..l.end()]);
                (w, b)
            })
            .collect())
    }

    pub fn flatten(config: &MlpConfig, layers: &[(DMatrix<f64>, DVector<f64>)]) -> Result<Self> {
        let layout = config.layers();
        check_dim(layout.len(), layers.len(), "layer count")?;
        let mut out = Vec::with_capacity(config.param_count());
        for (l, (w, b)) in layout.iter().zip(layers) {
            check_dim(l.fan_out, w.nrows(), "weight rows")?;
            check_dim(l.fan_in, w.ncols(), "weight cols")?;
            check_dim(l.fan_out, b.len(), "bias length")?;
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        Ok(Self(out))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Gradient of the network output with respect to every parameter at one input.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianRow(pub Vec<f64>);

/// Fan-in scaled uniform weights, zero biases.
pub fn init_params(config: &MlpConfig, seed: u64) -> ParamVector {
    let mut rng = rng_from_seed(seed);
    let mut theta = vec![0.0; config.param_count()];
    for l in config.layers() {
        let bound = (6.0 / l.fan_in as f64).sqrt();
        for w in &mut theta[l.weight_offset..l.bias_offset] {
            *w = rng.random_range(-bound..bound);
        }
    }
    ParamVector(theta)
}

fn weight_t<'a>(theta: &'a [f64], l: &LayerLayout) -> DMatrixView<'a, f64> {
    DMatrixView::from_slice(&theta[l.weight_offset..l.bias_offset], l.fan_in, l.fan_out)
}

struct BatchTrace {
    /// `activations[0]` is the input batch; `activations[l]` the output of hidden layer `l`.
    activations: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers, aligned with `activations[1..]`.
    pre: Vec<DMatrix<f64>>,
    output: DVector<f64>,
}

fn check_inputs(config: &MlpConfig, params: &ParamVector, x: &DMatrix<f64>) -> Result<()> {
    check_dim(config.param_count(), params.len(), "parameter vector")?;
    if x.nrows() > 0 {
        check_dim(config.input_dim, x.ncols(), "input dimension")?;
    }
    Ok(())
}

fn forward_trace(config: &MlpConfig, theta: &[f64], x: &DMatrix<f64>) -> BatchTrace {
    let layers = config.layers();
    let mut activations = vec![x.clone()];
    let mut pre = Vec::with_capacity(layers.len() - 1);
    let last = layers.len() - 1;
    let mut output = DVector::zeros(x.nrows());
    for (i, l) in layers.iter().enumerate() {
        let a = activations.last().expect("input present");
        let mut z = a * weight_t(theta, l);
        for (o, &b) in theta[l.bias_offset..l.end()].iter().enumerate() {
            z.column_mut(o).add_scalar_mut(b);
        }
        if i == last {
            output = z.column(0).into_owned();
        } else {
            let act = config.activation;
            let a_next = z.map(|v| act.apply(v));
            pre.push(z);
            activations.push(a_next);
        }
    }
    BatchTrace {
        activations,
        pre,
        output,
    }
}

/// Runs the reverse sweep from an output adjoint `delta` (m x 1) and hands each layer's
/// `(layout, delta, incoming activation)` to `visit`, from the output layer down.
fn backward_sweep(
    config: &MlpConfig,
    theta: &[f64],
    trace: &BatchTrace,
    mut delta: DMatrix<f64>,
    mut visit: impl FnMut(&LayerLayout, &DMatrix<f64>, &DMatrix<f64>),
) {
    let layers = config.layers();
    let act = config.activation;
    for (i, l) in layers.iter().enumerate().rev() {
        let a_prev = &trace.activations[i];
        visit(l, &delta, a_prev);
        if i > 0 {
            let mut d_prev = &delta * weight_t(theta, l).transpose();
            d_prev.zip_apply(&trace.pre[i - 1], |d, z| *d *= act.derivative(z));
            delta = d_prev;
        }
    }
}

pub fn forward(config: &MlpConfig, params: &ParamVector, x: &[f64]) -> Result<f64> {
    check_dim(config.input_dim, x.len(), "input dimension")?;
    let xm = DMatrix::from_row_slice(1, x.len(), x);
    Ok(forward_batch(config, params, &xm)?[0])
}

/// Row-wise network evaluation of an `m x n` input batch.
pub fn forward_batch(config: &MlpConfig, params: &ParamVector, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_inputs(config, params, x)?;
    if x.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    Ok(forward_trace(config, params.as_slice(), x).output)
}

pub fn jacobian(config: &MlpConfig, params: &ParamVector, x: &[f64]) -> Result<JacobianRow> {
    check_dim(config.input_dim, x.len(), "input dimension")?;
    let xm = DMatrix::from_row_slice(1, x.len(), x);
    let j = jacobian_batch(config, params, &xm)?;
    Ok(JacobianRow(j.row(0).iter().copied().collect()))
}

/// Per-row parameter Jacobians stacked into an `m x d` matrix.
pub fn jacobian_batch(config: &MlpConfig, params: &ParamVector, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_inputs(config, params, x)?;
    let m = x.nrows();
    let d = config.param_count();
    let mut jac = DMatrix::zeros(m, d);
    if m == 0 {
        return Ok(jac);
    }
    let theta = params.as_slice();
    let trace = forward_trace(config, theta, x);
    let out = jac.as_mut_slice();
    backward_sweep(config, theta, &trace, DMatrix::from_element(m, 1, 1.0), |l, delta, a_prev| {
        let ds = delta.as_slice();
        let a_s = a_prev.as_slice();
        for o in 0..l.fan_out {
            let dcol = &ds[o * m..(o + 1) * m];
            for k in 0..l.fan_in {
                let acol = &a_s[k * m..(k + 1) * m];
                let col = l.weight_offset + o * l.fan_in + k;
                for ((dst, &dv), &av) in out[col * m..(col + 1) * m].iter_mut().zip(dcol).zip(acol) {
                    *dst = dv * av;
                }
            }
            let col = l.bias_offset + o;
            out[col * m..(col + 1) * m].copy_from_slice(dcol);
        }
    });
    Ok(jac)
}

/// Value and gradient of the negative log joint
/// `L(θ) = Σ (f(xᵢ;θ) − yᵢ)² / (2σ²) + τ/2 ‖θ‖²`.
pub fn grad_map_objective(
    config: &MlpConfig,
    params: &ParamVector,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    sigma2: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(tau > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prior precision and noise must be positive (tau = {tau}, sigma2 = {sigma2})"
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("objective needs at least one data point".into()));
    }
    check_inputs(config, params, x)?;
    check_dim(x.nrows(), y.len(), "targets")?;
    let theta = params.as_slice();
    let trace = forward_trace(config, theta, x);
    let resid = &trace.output - y;
    let loss = resid.norm_squared() / (2.0 * sigma2) + 0.5 * tau * params.norm_squared();
    let mut grad: Vec<f64> = theta.iter().map(|t| tau * t).collect();
    let delta = DMatrix::from_column_slice(resid.len(), 1, (resid / sigma2).as_slice());
    backward_sweep(config, theta, &trace, delta, |l, delta, a_prev| {
        let gw = a_prev.tr_mul(delta);
        for (g, v) in grad[l.weight_offset..l.bias_offset].iter_mut().zip(gw.iter()) {
            *g += v;
        }
        for (o, g) in grad[l.bias_offset..l.end()].iter_mut().enumerate() {
            *g += delta.column(o).sum();
        }
    });
    Ok((loss, grad))
}

/// Network output and its gradient with respect to the input.
pub fn input_gradient(config: &MlpConfig, params: &ParamVector, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(config.input_dim, x.len(), "input dimension")?;
    check_dim(config.param_count(), params.len(), "parameter vector")?;
    let theta = params.as_slice();
    let layers = config.layers();
    let act = config.activation;
    let mut a = vec![DVector::from_column_slice(x)];
    let mut pre = Vec::new();
    let mut out = 0.0;
    for (i, l) in layers.iter().enumerate() {
        let z = weight_t(theta, l).tr_mul(a.last().unwrap())
            + DVector::from_column_slice(&theta[l.bias_offset..l.end()]);
        if i + 1 == layers.len() {
            out = z[0];
        } else {
            a.push(z.map(|v| act.apply(v)));
            pre.push(z);
        }
    }
    let mut delta = DVector::from_element(1, 1.0);
    for (i, l) in layers.iter().enumerate().rev() {
        let mut back = weight_t(theta, l) * &delta;
        if i > 0 {
            back.zip_apply(&pre[i - 1], |d, z| *d *= act.derivative(z));
        }
        delta = back;
    }
    Ok((out, delta.iter().copied().collect()))
}

/// For a fixed parameter direction `u`, returns `g(x) = J(x)·u` together with `∇ₓ g(x)`.
///
/// Forward tangent propagation in parameter space followed by a reverse sweep over the
/// (primal, tangent) pair.
pub fn jvp_input_gradient(
    config: &MlpConfig,
    params: &ParamVector,
    x: &[f64],
    direction: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_dim(config.input_dim, x.len(), "input dimension")?;
    check_dim(config.param_count(), params.len(), "parameter vector")?;
    check_dim(config.param_count(), direction.len(), "parameter direction")?;
    let theta = params.as_slice();
    let layers = config.layers();
    let act = config.activation;
    let n_layers = layers.len();

    let mut a = vec![DVector::from_column_slice(x)];
    let mut a_dot = vec![DVector::zeros(x.len())];
    let mut z = Vec::with_capacity(n_layers);
    let mut z_dot = Vec::with_capacity(n_layers);
    for (i, l) in layers.iter().enumerate() {
        let wt = weight_t(theta, l);
        let ut = weight_t(direction, l);
        let zi = wt.tr_mul(&a[i]) + DVector::from_column_slice(&theta[l.bias_offset..l.end()]);
        let zdi = wt.tr_mul(&a_dot[i])
            + ut.tr_mul(&a[i])
            + DVector::from_column_slice(&direction[l.bias_offset..l.end()]);
        if i + 1 < n_layers {
            a.push(zi.map(|v| act.apply(v)));
            a_dot.push(zi.zip_map(&zdi, |zv, dv| act.derivative(zv) * dv));
        }
        z.push(zi);
        z_dot.push(zdi);
    }
    let value = z_dot[n_layers - 1][0];

    // Adjoints of (z_l, ż_l) for the current layer.
    let mut zbar = DVector::zeros(1);
    let mut zdbar = DVector::from_element(1, 1.0);
    for i in (0..n_layers).rev() {
        let l = &layers[i];
        let wt = weight_t(theta, l);
        let ut = weight_t(direction, l);
        let adbar = &wt * &zdbar;
        let abar = &ut * &zdbar + &wt * &zbar;
        if i == 0 {
            return Ok((value, abar.iter().copied().collect()));
        }
        let zp = &z[i - 1];
        let zdp = &z_dot[i - 1];
        let mut next_zdbar = DVector::zeros(zp.len());
        let mut next_zbar = DVector::zeros(zp.len());
        for k in 0..zp.len() {
            let d1 = act.derivative(zp[k]);
            let d2 = act.second_derivative(zp[k]);
            next_zdbar[k] = d1 * adbar[k];
            next_zbar[k] = d1 * abar[k] + d2 * zdp[k] * adbar[k];
        }
        zbar = next_zbar;
        zdbar = next_zdbar;
    }
    unreachable!("network has at least one layer")
}
