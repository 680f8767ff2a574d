//! Dense and residual layers with a hand-written backward pass.
//!
//! A network is described by a [`ModelSpec`] and its weights live in a flat
//! [`ParameterVector`]. Each layer owns a contiguous slot holding its weight
//! matrix (row-major, `output x input`) followed by its bias vector.
//!
//! A residual layer computes `x + act(W x + b)`, so it requires equal input
//! and output widths, and with zero weights it is the identity for every
//! activation that maps 0 to 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    #[serde(default)]
    pub residual: bool,
}

impl LayerSpec {
    pub fn dense(input: usize, output: usize, activation: Activation) -> Self {
        LayerSpec {
            input,
            output,
            activation,
            residual: false,
        }
    }

    pub fn residual(width: usize, activation: Activation) -> Self {
        LayerSpec {
            input: width,
            output: width,
            activation,
            residual: true,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = ModelSpec { layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::structural("model has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.input == 0 || l.output == 0 {
                return Err(Error::structural(format!("layer {i} has zero width")));
            }
            if l.residual && l.input != l.output {
                return Err(Error::structural(format!(
                    "residual layer {i} maps {} -> {}",
                    l.input, l.output
                )));
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output != pair[1].input {
                return Err(Error::structural(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output,
                    i + 1,
                    pair[1].input
                )));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn layout(&self) -> Vec<Slot> {
        let mut offset = 0;
        self.layers
            .iter()
            .map(|l| {
                let slot = Slot {
                    offset,
                    len: l.param_count(),
                };
                offset += slot.len;
                slot
            })
            .collect()
    }
}

/// Position of one layer's parameters inside a [`ParameterVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

/// Flat weights of one network together with their per-layer layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Vec<Slot>,
}

impl ParameterVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ParameterVector {
            values: vec![0.0; spec.param_count()],
            layout: spec.layout(),
        }
    }

    /// A single-slot vector, handy for tests and scalar examples.
    pub fn from_values(values: Vec<f64>) -> Self {
        let layout = vec![Slot {
            offset: 0,
            len: values.len(),
        }];
        ParameterVector { values, layout }
    }

    pub fn with_layout(values: Vec<f64>, layout: Vec<Slot>) -> Result<Self> {
        let mut expected = 0;
        for s in &layout {
            if s.offset != expected {
                return Err(Error::structural(format!(
                    "slot offset {} does not follow {expected}",
                    s.offset
                )));
            }
            expected += s.len;
        }
        if expected != values.len() {
            return Err(Error::structural(format!(
                "layout covers {expected} values, vector has {}",
                values.len()
            )));
        }
        Ok(ParameterVector { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[Slot] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        ParameterVector {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    /// Same vector with every coordinate mapped through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ParameterVector {
            values: self.values.iter().map(|&v| f(v)).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        crate::tensor::l2_norm(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn ensure_same_layout(&self, other: &ParameterVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::structural(format!(
                "layout mismatch: {} slots/{} values vs {} slots/{} values",
                self.layout.len(),
                self.values.len(),
                other.layout.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    pub fn ensure_matches(&self, spec: &ModelSpec) -> Result<()> {
        if self.layout != spec.layout() {
            return Err(Error::structural(
                "parameter layout does not match model spec",
            ));
        }
        Ok(())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParameterVector, scale: f64) -> Result<()> {
        self.ensure_same_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Serializes as: layer count, then `(offset, length)` per layer as
    /// little-endian u64, then every value as a little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 16 * self.layout.len() + 8 * self.values.len());
        self.write_bytes(&mut out);
        out
    }

    pub(crate) fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.layout.len() as u64).to_le_bytes());
        for s in &self.layout {
            out.extend_from_slice(&(s.offset as u64).to_le_bytes());
            out.extend_from_slice(&(s.len as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (pv, used) = Self::read_bytes(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after parameter vector",
                bytes.len() - used
            )));
        }
        Ok(pv)
    }

    /// Parses a vector from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub(crate) fn read_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cursor = ByteCursor { bytes, pos: 0 };
        let count = cursor.u64()? as usize;
        let mut layout = Vec::with_capacity(count.min(1 << 16));
        let mut total = 0usize;
        for _ in 0..count {
            let offset = cursor.u64()? as usize;
            let len = cursor.u64()? as usize;
            total = total
                .checked_add(len)
                .ok_or_else(|| Error::Format("layout length overflow".into()))?;
            layout.push(Slot { offset, len });
        }
        let mut values = Vec::with_capacity(total.min(1 << 24));
        for _ in 0..total {
            values.push(f64::from_le_bytes(cursor.take::<8>()?));
        }
        let pv = ParameterVector::with_layout(values, layout)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok((pv, cursor.pos))
    }
}

pub(crate) struct ByteCursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl ByteCursor<'_> {
    pub fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("truncated input at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice has length N"))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take::<8>()?))
    }
}

/// Mini-batch of inputs; targets are interpreted by the consuming loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn new(inputs: Matrix) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::parameter("batch must hold at least one row"));
        }
        Ok(Batch {
            inputs,
            labels: None,
        })
    }

    pub fn labeled(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::structural(format!(
                "{} labels for {} rows",
                labels.len(),
                inputs.rows()
            )));
        }
        let mut b = Batch::new(inputs)?;
        b.labels = Some(labels);
        Ok(b)
    }

    pub fn m(&self) -> usize {
        self.inputs.rows()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParameterVector> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut params = ParameterVector::zeros(spec);
    for (layer, slot) in spec.layers.iter().zip(spec.layout()) {
        let bound = (6.0 / (layer.input + layer.output) as f64).sqrt();
        let weights = &mut params.values[slot.offset..slot.offset + layer.input * layer.output];
        for w in weights {
            *w = rng.random_range(-bound..=bound);
        }
    }
    Ok(params)
}

/// Per-layer record of a forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Matrix,
    pub pre: Matrix,
    pub activated: Matrix,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub layers: Vec<LayerTrace>,
    pub output: Matrix,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParameterVector,
    /// Gradient with respect to the network input, one row per sample.
    pub input: Matrix,
}

fn check_shapes(spec: &ModelSpec, params: &ParameterVector, inputs: &Matrix) -> Result<()> {
    spec.validate()?;
    params.ensure_matches(spec)?;
    if inputs.cols() != spec.input_width() {
        return Err(Error::structural(format!(
            "input width {} does not match model input {}",
            inputs.cols(),
            spec.input_width()
        )));
    }
    Ok(())
}

pub fn forward(spec: &ModelSpec, params: &ParameterVector, inputs: &Matrix) -> Result<Trace> {
    check_shapes(spec, params, inputs)?;
    let m = inputs.rows();
    let mut current = inputs.clone();
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (layer, slot) in spec.layers.iter().zip(params.layout()) {
        let p = &params.values[slot.offset..slot.offset + slot.len];
        let (w, b) = p.split_at(layer.input * layer.output);
        let mut pre = Matrix::zeros(m, layer.output);
        let mut activated = Matrix::zeros(m, layer.output);
        let mut out = Matrix::zeros(m, layer.output);
        for r in 0..m {
            let x = current.row(r);
            let z_row = pre.row_mut(r);
            for o in 0..layer.output {
                let w_row = &w[o * layer.input..(o + 1) * layer.input];
                z_row[o] = b[o] + crate::tensor::dot(w_row, x);
            }
            for (a, z) in activated.row_mut(r).iter_mut().zip(pre.row(r)) {
                *a = layer.activation.apply(*z);
            }
            let out_row = out.row_mut(r);
            out_row.copy_from_slice(activated.row(r));
            if layer.residual {
                for (y, xi) in out_row.iter_mut().zip(x) {
                    *y += xi;
                }
            }
        }
        layers.push(LayerTrace {
            input: current,
            pre,
            activated,
        });
        current = out;
    }
    Ok(Trace {
        layers,
        output: current,
    })
}

/// Network output only, discarding the trace.
pub fn predict(spec: &ModelSpec, params: &ParameterVector, inputs: &Matrix) -> Result<Matrix> {
    forward(spec, params, inputs).map(|t| t.output)
}

/// Backpropagates `loss_grad` (d loss / d output, one row per sample).
pub fn backward(
    spec: &ModelSpec,
    params: &ParameterVector,
    trace: &Trace,
    loss_grad: &Matrix,
) -> Result<Gradients> {
    params.ensure_matches(spec)?;
    if trace.layers.len() != spec.layers.len() {
        return Err(Error::structural("trace does not belong to this model"));
    }
    if loss_grad.rows() != trace.output.rows() || loss_grad.cols() != trace.output.cols() {
        return Err(Error::structural(format!(
            "loss gradient is {}x{}, output is {}x{}",
            loss_grad.rows(),
            loss_grad.cols(),
            trace.output.rows(),
            trace.output.cols()
        )));
    }
    let mut grad = params.zeros_like();
    let mut upstream = loss_grad.clone();
    for ((layer, slot), lt) in spec
        .layers
        .iter()
        .zip(params.layout())
        .zip(&trace.layers)
        .rev()
    {
        let m = lt.input.rows();
        let n_w = layer.input * layer.output;
        let w = &params.values[slot.offset..slot.offset + n_w];
        let g = &mut grad.values[slot.offset..slot.offset + slot.len];
        let mut downstream = Matrix::zeros(m, layer.input);
        let mut delta = vec![0.0; layer.output];
        for r in 0..m {
            let up = upstream.row(r);
            for o in 0..layer.output {
                delta[o] = up[o]
                    * layer
                        .activation
                        .derivative(lt.pre.get(r, o), lt.activated.get(r, o));
            }
            let x = lt.input.row(r);
            let (gw, gb) = g.split_at_mut(n_w);
            for o in 0..layer.output {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let gw_row = &mut gw[o * layer.input..(o + 1) * layer.input];
                for (gwi, xi) in gw_row.iter_mut().zip(x) {
                    *gwi += d * xi;
                }
            }
            let down = downstream.row_mut(r);
            for o in 0..layer.output {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let w_row = &w[o * layer.input..(o + 1) * layer.input];
                for (di, wi) in down.iter_mut().zip(w_row) {
                    *di += d * wi;
                }
            }
            if layer.residual {
                for (di, ui) in down.iter_mut().zip(up) {
                    *di += ui;
                }
            }
        }
        upstream = downstream;
    }
    Ok(Gradients {
        params: grad,
        input: upstream,
    })
}

/// Central-difference gradient of `loss(forward(inputs))` with respect to
/// every parameter.
pub fn finite_diff_grad<F>(
    spec: &ModelSpec,
    params: &ParameterVector,
    inputs: &Matrix,
    loss: F,
    h: f64,
) -> Result<ParameterVector>
where
    F: Fn(&Matrix) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::parameter(format!(
            "step h must be positive, got {h}"
        )));
    }
    check_shapes(spec, params, inputs)?;
    let mut probe = params.clone();
    let mut grad = params.zeros_like();
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let plus = loss(&predict(spec, &probe, inputs)?);
        probe.values[i] = orig - h;
        let minus = loss(&predict(spec, &probe, inputs)?);
        probe.values[i] = orig;
        grad.values[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Central difference of a scalar function of a plain parameter vector.
pub fn finite_diff_scalar<F>(params: &ParameterVector, loss: F, h: f64) -> Result<ParameterVector>
where
    F: Fn(&ParameterVector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::parameter(format!(
            "step h must be positive, got {h}"
        )));
    }
    let mut probe = params.clone();
    let mut grad = params.zeros_like();
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let plus = loss(&probe);
        probe.values[i] = orig - h;
        let minus = loss(&probe);
        probe.values[i] = orig;
        grad.values[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

pub fn sgd_step(
    params: &ParameterVector,
    grad: &ParameterVector,
    alpha: f64,
) -> Result<ParameterVector> {
    if !(alpha >= 0.0) {
        return Err(Error::parameter(format!(
            "learning rate must be non-negative, got {alpha}"
        )));
    }
    params.ensure_same_layout(grad)?;
    let values = params
        .values
        .iter()
        .zip(&grad.values)
        .map(|(p, g)| p - alpha * g)
        .collect();
    Ok(ParameterVector {
        values,
        layout: params.layout.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_2_3() -> ModelSpec {
        ModelSpec::new(vec![LayerSpec::dense(2, 3, Activation::Identity)]).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let spec = ModelSpec::new(vec![LayerSpec::dense(2, 2, Activation::Identity)]).unwrap();
        let a = init_params(&spec, 7).unwrap();
        let b = init_params(&spec, 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = init_params(&spec, 8).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn param_count_includes_bias() {
        let p = init_params(&spec_2_3(), 1).unwrap();
        assert_eq!(p.len(), 9);
        assert!(p.values()[6..].iter().all(|&b| b == 0.0));
        let bound = (6.0f64 / 5.0).sqrt();
        assert!(p.values()[..6].iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ModelSpec::new(vec![
            LayerSpec::dense(2, 3, Activation::Relu),
            LayerSpec::dense(4, 1, Activation::Relu),
        ])
        .is_err());
        let bad_residual = LayerSpec {
            input: 2,
            output: 3,
            activation: Activation::Relu,
            residual: true,
        };
        assert!(ModelSpec::new(vec![bad_residual]).is_err());
        assert!(ModelSpec::new(vec![]).is_err());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = ModelSpec::new(vec![LayerSpec::dense(2, 2, Activation::Identity)]).unwrap();
        let p = ParameterVector::with_layout(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], spec.layout())
            .unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -1.7]]).unwrap();
        assert_eq!(predict(&spec, &p, &x).unwrap(), x);
    }

    #[test]
    fn relu_on_negative_inputs_is_zero() {
        let spec = ModelSpec::new(vec![LayerSpec::dense(2, 2, Activation::Relu)]).unwrap();
        let p = ParameterVector::with_layout(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], spec.layout())
            .unwrap();
        let x = Matrix::from_rows(&[vec![-0.3, -1.7], vec![-2.0, -0.1]]).unwrap();
        assert!(predict(&spec, &p, &x)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn zero_residual_layer_is_identity() {
        for act in [Activation::Relu, Activation::Tanh, Activation::Identity] {
            let spec = ModelSpec::new(vec![LayerSpec::residual(3, act)]).unwrap();
            let p = ParameterVector::zeros(&spec);
            let x = Matrix::from_rows(&[vec![0.5, -2.0, 9.0]]).unwrap();
            assert_eq!(predict(&spec, &p, &x).unwrap(), x);
        }
    }

    #[test]
    fn linear_derivative() {
        // y = w * x with x = 3 and scalar loss y
        let spec = ModelSpec::new(vec![LayerSpec::dense(1, 1, Activation::Identity)]).unwrap();
        let p = ParameterVector::with_layout(vec![0.7, 0.0], spec.layout()).unwrap();
        let x = Matrix::from_rows(&[vec![3.0]]).unwrap();
        let trace = forward(&spec, &p, &x).unwrap();
        let g = backward(&spec, &p, &trace, &Matrix::from_rows(&[vec![1.0]]).unwrap()).unwrap();
        assert_eq!(g.params.values(), &[3.0, 1.0]);
        assert_eq!(g.input.as_slice(), &[0.7]);
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradient() {
        let spec = ModelSpec::new(vec![
            LayerSpec::dense(3, 4, Activation::Tanh),
            LayerSpec::dense(4, 2, Activation::Sigmoid),
        ])
        .unwrap();
        let p = init_params(&spec, 3).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.5]]).unwrap();
        let trace = forward(&spec, &p, &x).unwrap();
        let g = backward(&spec, &p, &trace, &Matrix::zeros(2, 2)).unwrap();
        assert!(g.params.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_foreign_layout() {
        let spec = spec_2_3();
        let p = init_params(&spec, 1).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let trace = forward(&spec, &p, &x).unwrap();
        let other = ParameterVector::from_values(vec![0.0; 8]);
        assert!(backward(&spec, &other, &trace, &Matrix::zeros(1, 3)).is_err());
        assert!(forward(&spec, &p, &Matrix::zeros(1, 5)).is_err());
    }

    #[test]
    fn finite_difference_of_quadratic() {
        let p = ParameterVector::from_values(vec![2.0]);
        let g = finite_diff_scalar(&p, |q| q.values()[0].powi(2), 1e-4).unwrap();
        assert!((g.values()[0] - 4.0).abs() < 1e-6);
        let g = finite_diff_scalar(&p, |_| 5.0, 1e-4).unwrap();
        assert_eq!(g.values(), &[0.0]);
        assert!(finite_diff_scalar(&p, |_| 0.0, 0.0).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let p = ParameterVector::from_values(vec![1.0, 2.0]);
        let g = ParameterVector::from_values(vec![1.0, 1.0]);
        let out = sgd_step(&p, &g, 0.01).unwrap();
        assert!((out.values()[0] - 0.99).abs() < 1e-15);
        assert!((out.values()[1] - 1.99).abs() < 1e-15);
        assert_eq!(sgd_step(&p, &p.zeros_like(), 0.01).unwrap(), p);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        assert!(sgd_step(&p, &ParameterVector::from_values(vec![1.0]), 0.01).is_err());
    }

    #[test]
    fn byte_format_round_trip_and_rejects_truncation() {
        let p = init_params(&spec_2_3(), 5).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), 8 + 16 + 9 * 8);
        assert_eq!(&bytes[..8], &1u64.to_le_bytes());
        assert_eq!(ParameterVector::from_bytes(&bytes).unwrap(), p);
        assert!(ParameterVector::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
