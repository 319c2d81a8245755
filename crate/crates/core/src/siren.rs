//! Sine-activated fully connected network (SIREN) with an analytic backward pass.
//!
//! A network maps pixel coordinates `(x, y)` to RGB values. Every hidden layer
//! computes `sin(omega0 * (W a + b))`; the output layer is affine. All weights of
//! one network instance live in a single flat buffer ([`WeightSet`]) laid out
//! layer 0 first, each layer as its row-major `fan_out x fan_in` weight matrix
//! followed by its bias vector. The same layout is used for gradients and for
//! the serialized payload.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{CoordGrid, ImageTensor, ValueRange};

/// Coordinates in: `(x, y)`.
pub const INPUT_DIM: usize = 2;
/// Values out: RGB.
pub const OUTPUT_DIM: usize = 3;
/// Sine frequency scale used unless a caller overrides it.
pub const DEFAULT_OMEGA0: f64 = 30.0;

/// Prediction rows, one per coordinate, `OUTPUT_DIM` columns, signed range (unclamped).
pub type PredictedImage = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub hidden_layers: usize,
    pub neurons: usize,
    pub omega0: f64,
}

/// Position of one dense layer inside a flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NetworkArch {
    pub fn new(hidden_layers: usize, neurons: usize) -> Result<Self> {
        Self::with_omega0(hidden_layers, neurons, DEFAULT_OMEGA0)
    }

    pub fn with_omega0(hidden_layers: usize, neurons: usize, omega0: f64) -> Result<Self> {
        let arch = NetworkArch {
            hidden_layers,
            neurons,
            omega0,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 {
            return Err(Error::InvalidArch("at least one hidden layer is required".into()));
        }
        if self.neurons == 0 {
            return Err(Error::InvalidArch("neurons per layer must be positive".into()));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::InvalidArch(format!(
                "omega0 must be positive, got {}",
                self.omega0
            )));
        }
        Ok(())
    }

    /// Dense layers in evaluation order, the output layer last.
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut offset = 0;
        let mut fan_in = INPUT_DIM;
        for k in 0..=self.hidden_layers {
            let fan_out = if k == self.hidden_layers {
                OUTPUT_DIM
            } else {
                self.neurons
            };
            let shape = LayerShape {
                fan_in,
                fan_out,
                offset,
            };
            offset += shape.len();
            fan_in = fan_out;
            shapes.push(shape);
        }
        shapes
    }
}

/// Number of trainable scalars: `3n + (l-1)(n^2+n) + 3(n+1)`.
pub fn param_count(arch: &NetworkArch) -> usize {
    let n = arch.neurons;
    let l = arch.hidden_layers;
    3 * n + (l - 1) * (n * n + n) + (n + 1) * 3
}

/// All weights and biases of one network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    arch: NetworkArch,
    values: Vec<f64>,
}

/// Per-parameter gradient, congruent with the [`WeightSet`] it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    arch: NetworkArch,
    values: Vec<f64>,
}

fn check_len(arch: &NetworkArch, len: usize) -> Result<()> {
    let expected = param_count(arch);
    if len != expected {
        return Err(Error::ShapeMismatch(format!(
            "expected {expected} parameters for l={}, n={}, got {len}",
            arch.hidden_layers, arch.neurons
        )));
    }
    Ok(())
}

fn layer_views<'a>(values: &'a [f64], shape: &LayerShape) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let w = &values[shape.offset..shape.offset + shape.weight_len()];
    let b = &values[shape.offset + shape.weight_len()..shape.offset + shape.len()];
    (
        ArrayView2::from_shape((shape.fan_out, shape.fan_in), w).expect("layer shape"),
        ArrayView1::from(b),
    )
}

impl WeightSet {
    pub fn zeros(arch: NetworkArch) -> Self {
        WeightSet {
            arch,
            values: vec![0.0; param_count(&arch)],
        }
    }

    pub fn from_values(arch: NetworkArch, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        check_len(&arch, values.len())?;
        Ok(WeightSet { arch, values })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_congruent(&self, other: &WeightSet) -> bool {
        self.arch == other.arch && self.values.len() == other.values.len()
    }

    /// Weight matrix (`fan_out x fan_in`) and bias of layer `k`.
    pub fn layer(&self, k: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let shape = self.arch.layers()[k];
        layer_views(&self.values, &shape)
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &WeightSet) -> Result<()> {
        if !self.is_congruent(other) {
            return Err(Error::ShapeMismatch("weight sets are not congruent".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }
}

impl std::ops::Add<&WeightSet> for &WeightSet {
    type Output = WeightSet;

    fn add(self, rhs: &WeightSet) -> WeightSet {
        assert!(self.is_congruent(rhs), "weight sets are not congruent");
        WeightSet {
            arch: self.arch,
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        }
    }
}

impl std::ops::Mul<f64> for &WeightSet {
    type Output = WeightSet;

    fn mul(self, c: f64) -> WeightSet {
        WeightSet {
            arch: self.arch,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

impl GradientSet {
    pub fn zeros(arch: NetworkArch) -> Self {
        GradientSet {
            arch,
            values: vec![0.0; param_count(&arch)],
        }
    }

    pub fn from_values(arch: NetworkArch, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        check_len(&arch, values.len())?;
        Ok(GradientSet { arch, values })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_congruent_with(&self, w: &WeightSet) -> bool {
        self.arch == w.arch && self.values.len() == w.values.len()
    }

    pub fn layer(&self, k: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let shape = self.arch.layers()[k];
        layer_views(&self.values, &shape)
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &GradientSet) -> Result<()> {
        if self.arch != other.arch || self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch("gradient sets are not congruent".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }
}

/// Deterministic SIREN initialization.
///
/// Layer 0 draws from `U(-1/INPUT_DIM, 1/INPUT_DIM)`, every later layer from
/// `U(-sqrt(6/fan_in)/omega0, sqrt(6/fan_in)/omega0)`. Biases start at zero.
pub fn init_weights(arch: &NetworkArch, seed: u64) -> WeightSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WeightSet::zeros(*arch);
    for (k, shape) in arch.layers().iter().enumerate() {
        let bound = init_bound(arch, k, shape.fan_in);
        for v in &mut w.values[shape.offset..shape.offset + shape.weight_len()] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    w
}

/// Half-width of the uniform initialization range for layer `k`.
pub fn init_bound(arch: &NetworkArch, k: usize, fan_in: usize) -> f64 {
    if k == 0 {
        1.0 / INPUT_DIM as f64
    } else {
        (6.0 / fan_in as f64).sqrt() / arch.omega0
    }
}

/// Intermediate values kept for the backward pass.
struct Trace {
    /// Input to each layer; index 0 is the coordinate matrix.
    inputs: Vec<Array2<f64>>,
    /// `cos(omega0 * (W a + b))` for each hidden layer.
    cosines: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn check_coords(coords: &ArrayView2<'_, f64>) -> Result<()> {
    if coords.ncols() != INPUT_DIM {
        return Err(Error::ShapeMismatch(format!(
            "coordinates have {} columns, network expects {INPUT_DIM}",
            coords.ncols()
        )));
    }
    Ok(())
}

fn affine(a: &ArrayView2<'_, f64>, w: &ArrayView2<'_, f64>, b: &ArrayView1<'_, f64>) -> Array2<f64> {
    let mut z = a.dot(&w.t());
    z += b;
    z
}

fn run(values: &[f64], arch: &NetworkArch, coords: ArrayView2<'_, f64>, keep: bool) -> Trace {
    let layers = arch.layers();
    let omega0 = arch.omega0;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut cosines = Vec::with_capacity(layers.len() - 1);
    let mut a = coords.to_owned();
    for shape in &layers[..layers.len() - 1] {
        let (w, b) = layer_views(values, shape);
        let z = affine(&a.view(), &w, &b);
        let mut sines = Array2::zeros(z.raw_dim());
        if keep {
            let mut cos = Array2::zeros(z.raw_dim());
            Zip::from(&mut sines).and(&mut cos).and(&z).for_each(|s, c, &z| {
                let (sn, cs) = (omega0 * z).sin_cos();
                *s = sn;
                *c = cs;
            });
            cosines.push(cos);
            inputs.push(std::mem::replace(&mut a, sines));
        } else {
            Zip::from(&mut sines).and(&z).for_each(|s, &z| *s = (omega0 * z).sin());
            a = sines;
        }
    }
    let (w, b) = layer_views(values, layers.last().expect("output layer"));
    let output = affine(&a.view(), &w, &b);
    if keep {
        inputs.push(a);
    }
    Trace {
        inputs,
        cosines,
        output,
    }
}

/// Evaluate the network at every coordinate row.
pub fn forward(w: &WeightSet, coords: &CoordGrid) -> Result<PredictedImage> {
    forward_rows(w, coords.points())
}

/// [`forward`] over a raw `rows x 2` coordinate matrix.
pub fn forward_rows(w: &WeightSet, coords: ArrayView2<'_, f64>) -> Result<PredictedImage> {
    check_coords(&coords)?;
    Ok(run(&w.values, &w.arch, coords, false).output)
}

/// Loss, gradient and the prediction they were computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: GradientSet,
    pub prediction: PredictedImage,
}

/// Mean squared error over every pixel channel and its exact gradient.
pub fn loss_and_grad(w: &WeightSet, coords: &CoordGrid, target: &ImageTensor) -> Result<(f64, GradientSet)> {
    let eval = evaluate(w, coords, target)?;
    Ok((eval.loss, eval.grad))
}

/// Like [`loss_and_grad`] but also returns the prediction.
pub fn evaluate(w: &WeightSet, coords: &CoordGrid, target: &ImageTensor) -> Result<Evaluation> {
    if target.range() != ValueRange::Signed {
        return Err(Error::InvalidImage(
            "training targets must be in the signed [-1, 1] range".into(),
        ));
    }
    if target.channels() != OUTPUT_DIM {
        return Err(Error::ShapeMismatch(format!(
            "target has {} channels, network outputs {OUTPUT_DIM}",
            target.channels()
        )));
    }
    evaluate_rows(w, coords.points(), target.pixels())
}

/// [`evaluate`] over raw coordinate and target matrices (`rows x 2`, `rows x 3`).
pub fn evaluate_rows(w: &WeightSet, coords: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Evaluation> {
    check_coords(&coords)?;
    if target.dim() != (coords.nrows(), OUTPUT_DIM) {
        return Err(Error::ShapeMismatch(format!(
            "target is {:?}, expected ({}, {OUTPUT_DIM})",
            target.dim(),
            coords.nrows()
        )));
    }
    let arch = w.arch;
    let layers = arch.layers();
    let trace = run(&w.values, &arch, coords, true);
    let count = (trace.output.len()) as f64;

    let mut delta = &trace.output - &target;
    let loss = delta.iter().map(|r| r * r).sum::<f64>() / count;
    delta *= 2.0 / count;

    let mut grad = GradientSet::zeros(arch);
    for k in (0..layers.len()).rev() {
        let shape = layers[k];
        if k < layers.len() - 1 {
            // through sin(omega0 * z)
            Zip::from(&mut delta)
                .and(&trace.cosines[k])
                .for_each(|d, &c| *d *= arch.omega0 * c);
        }
        let a = &trace.inputs[k];
        let gw = delta.t().dot(a);
        let gb = delta.sum_axis(Axis(0));
        write_layer(&mut grad.values, &shape, &gw, &gb);
        if k > 0 {
            let (w_k, _) = layer_views(&w.values, &shape);
            delta = delta.dot(&w_k);
        }
    }
    Ok(Evaluation {
        loss,
        grad,
        prediction: trace.output,
    })
}

fn write_layer(values: &mut [f64], shape: &LayerShape, gw: &Array2<f64>, gb: &Array1<f64>) {
    let w = &mut values[shape.offset..shape.offset + shape.weight_len()];
    for (dst, src) in w.iter_mut().zip(gw.iter()) {
        *dst = *src;
    }
    let b = &mut values[shape.offset + shape.weight_len()..shape.offset + shape.len()];
    for (dst, src) in b.iter_mut().zip(gb.iter()) {
        *dst = *src;
    }
}

/// Mean squared error only; no gradient.
pub fn loss(w: &WeightSet, coords: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    let pred = forward_rows(w, coords)?;
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "target is {:?}, prediction is {:?}",
            target.dim(),
            pred.dim()
        )));
    }
    let sum: f64 = Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t));
    Ok(sum / pred.len() as f64)
}
