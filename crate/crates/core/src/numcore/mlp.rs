use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, norm_inf, DenseMatrix};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Regression loss, averaged over every element of the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mae,
    #[default]
    Mse,
}

/// All trainable parameters, layer by layer: row-major weights then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatParams(pub Vec<f64>);

impl FlatParams {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.0)
    }

    pub fn norm2(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// `self + s·other`
    pub fn add_scaled(&self, s: f64, other: &FlatParams) -> FlatParams {
        assert_eq!(self.len(), other.len());
        FlatParams(self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect())
    }

    pub fn scale(&self, s: f64) -> FlatParams {
        FlatParams(self.0.iter().map(|a| a * s).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// A batch of labeled regression samples: one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: DenseMatrix,
    pub targets: DenseMatrix,
}

impl LabeledBatch {
    pub fn new(inputs: DenseMatrix, targets: DenseMatrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let inputs: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
        let targets: Vec<_> = pairs.iter().map(|p| p.1.clone()).collect();
        Self::new(DenseMatrix::from_rows(&inputs)?, DenseMatrix::from_rows(&targets)?)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Feed-forward network `[n0, n1, ..., nL]` with parameters stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: FlatParams,
    /// (weight offset, bias offset) per layer
    offsets: Vec<(usize, usize)>,
}

fn layer_offsets(layer_sizes: &[usize]) -> (Vec<(usize, usize)>, usize) {
    let mut offsets = Vec::with_capacity(layer_sizes.len() - 1);
    let mut at = 0;
    for w in layer_sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        offsets.push((at, at + n_in * n_out));
        at += n_in * n_out + n_out;
    }
    (offsets, at)
}

fn validate_layers(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least two layer sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Number of parameters of a `layer_sizes` network: Σ nᵢ·nᵢ₊₁ + nᵢ₊₁.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Forward activations kept for the backward pass; `acts[0]` is the input.
struct Tape {
    acts: Vec<DenseMatrix>,
}

impl MlpModel {
    /// Uniform fan-based (Glorot) weights, zero biases, deterministic in `seed`.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_layers(layer_sizes)?;
        let (offsets, total) = layer_offsets(layer_sizes);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, w) in layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let start = offsets[l].0;
            for p in &mut params[start..start + n_in * n_out] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params: FlatParams(params),
            offsets,
        })
    }

    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_layers(layer_sizes)?;
        let (offsets, total) = layer_offsets(layer_sizes);
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params: FlatParams::zeros(total),
            offsets,
        })
    }

    /// Builds a model from explicit per-layer weights (`out × in`) and biases.
    pub fn from_layers(
        weights: &[DenseMatrix],
        biases: &[Vec<f64>],
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Config("need one bias vector per weight matrix".into()));
        }
        let mut sizes = vec![weights[0].cols()];
        for (w, b) in weights.iter().zip(biases) {
            if w.cols() != *sizes.last().unwrap() {
                return Err(Error::Shape("consecutive layer dimensions disagree".into()));
            }
            if b.len() != w.rows() {
                return Err(Error::Shape("bias length differs from layer width".into()));
            }
            sizes.push(w.rows());
        }
        let mut model = Self::zeros(&sizes, activation)?;
        for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
            let (wo, bo) = model.offsets[l];
            model.params.0[wo..wo + w.as_slice().len()].copy_from_slice(w.as_slice());
            model.params.0[bo..bo + b.len()].copy_from_slice(b);
        }
        if !model.params.is_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &FlatParams {
        &self.params
    }

    pub fn flatten(&self) -> FlatParams {
        self.params.clone()
    }

    /// Same architecture with a different parameter vector.
    pub fn with_params(&self, params: FlatParams) -> Result<Self> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            params,
            offsets: self.offsets.clone(),
        })
    }

    pub fn weight(&self, layer: usize) -> DenseMatrix {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let (wo, _) = self.offsets[layer];
        DenseMatrix::from_row_major(n_out, n_in, self.params.0[wo..wo + n_in * n_out].to_vec())
            .expect("layer slice has the right length")
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (_, bo) = self.offsets[layer];
        &self.params.0[bo..bo + self.layer_sizes[layer + 1]]
    }

    #[inline]
    fn weight_row<'a>(&self, params: &'a [f64], layer: usize, row: usize) -> &'a [f64] {
        let n_in = self.layer_sizes[layer];
        let start = self.offsets[layer].0 + row * n_in;
        &params[start..start + n_in]
    }

    /// Evaluates the network on one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut a = input.to_vec();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let b = self.bias(l);
            let mut z: Vec<f64> = (0..self.layer_sizes[l + 1])
                .map(|j| dot(self.weight_row(&self.params.0, l, j), &a) + b[j])
                .collect();
            if l != last {
                for v in &mut z {
                    *v = self.activation.apply(*v);
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Evaluates the network on every row of `inputs`.
    pub fn forward_batch(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_batch_inputs(inputs)?;
        let tape = self.forward_tape(&self.params.0, inputs);
        Ok(tape.acts.into_iter().last().unwrap())
    }

    fn check_batch_inputs(&self, inputs: &DenseMatrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, batch has {} columns",
                self.input_dim(),
                inputs.cols()
            )));
        }
        Ok(())
    }

    fn forward_tape(&self, params: &[f64], inputs: &DenseMatrix) -> Tape {
        let batch = inputs.rows();
        let mut acts = Vec::with_capacity(self.layer_sizes.len());
        acts.push(inputs.clone());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let n_out = self.layer_sizes[l + 1];
            let bo = self.offsets[l].1;
            let bias = &params[bo..bo + n_out];
            let prev = acts.last().unwrap();
            let mut z = DenseMatrix::zeros(batch, n_out);
            for s in 0..batch {
                let x = prev.row(s);
                let out = z.row_mut(s);
                for j in 0..n_out {
                    let v = dot(self.weight_row(params, l, j), x) + bias[j];
                    out[j] = if l == last { v } else { self.activation.apply(v) };
                }
            }
            acts.push(z);
        }
        Tape { acts }
    }

    /// Backpropagates `delta` (dL/d output, one row per sample) and
    /// accumulates parameter gradients into `grad`.
    fn backward(&self, params: &[f64], tape: &Tape, mut delta: DenseMatrix, grad: &mut [f64]) {
        let batch = delta.rows();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (wo, bo) = self.offsets[l];
            let a_prev = &tape.acts[l];
            {
                let (gw, gb) = grad[wo..bo + n_out].split_at_mut(n_in * n_out);
                for s in 0..batch {
                    let d = delta.row(s);
                    let x = a_prev.row(s);
                    for j in 0..n_out {
                        if d[j] != 0.0 {
                            axpy(d[j], x, &mut gw[j * n_in..(j + 1) * n_in]);
                            gb[j] += d[j];
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut next = DenseMatrix::zeros(batch, n_in);
            for s in 0..batch {
                let d = delta.row(s);
                let out = next.row_mut(s);
                for j in 0..n_out {
                    if d[j] != 0.0 {
                        axpy(d[j], self.weight_row(params, l, j), out);
                    }
                }
                for (o, a) in out.iter_mut().zip(a_prev.row(s)) {
                    *o *= self.activation.derivative_from_output(*a);
                }
            }
            delta = next;
        }
    }

    fn check_batch(&self, batch: &LabeledBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        self.check_batch_inputs(&batch.inputs)?;
        if batch.targets.cols() != self.output_dim() {
            return Err(Error::Shape(format!(
                "network has {} outputs, targets have {} columns",
                self.output_dim(),
                batch.targets.cols()
            )));
        }
        Ok(())
    }

    /// Mean loss over every batch element.
    pub fn loss(&self, batch: &LabeledBatch, loss: Loss) -> Result<f64> {
        self.check_batch(batch)?;
        let out = self.forward_tape(&self.params.0, &batch.inputs);
        let pred = out.acts.last().unwrap();
        let denom = (batch.len() * self.output_dim()) as f64;
        let total: f64 = pred
            .as_slice()
            .iter()
            .zip(batch.targets.as_slice())
            .map(|(p, t)| {
                let e = p - t;
                match loss {
                    Loss::Mae => e.abs(),
                    Loss::Mse => e * e,
                }
            })
            .sum();
        Ok(total / denom)
    }

    /// Loss value and ∇θ of the mean loss over `batch`. The MAE subgradient
    /// at an exactly-zero residual is 0.
    pub fn loss_and_gradient(&self, batch: &LabeledBatch, loss: Loss) -> Result<(f64, FlatParams)> {
        self.check_batch(batch)?;
        self.loss_and_gradient_at(&self.params.0, batch, loss, None)
    }

    pub fn param_gradient(&self, batch: &LabeledBatch, loss: Loss) -> Result<FlatParams> {
        Ok(self.loss_and_gradient(batch, loss)?.1)
    }

    /// Gradient at an arbitrary parameter vector of this architecture.
    /// `frozen_signs` replaces `sign(e)` in the MAE derivative (used by the
    /// Hessian-vector product so MAE kinks do not leak into finite differences).
    fn loss_and_gradient_at(
        &self,
        params: &[f64],
        batch: &LabeledBatch,
        loss: Loss,
        frozen_signs: Option<&[f64]>,
    ) -> Result<(f64, FlatParams)> {
        let tape = self.forward_tape(params, &batch.inputs);
        let pred = tape.acts.last().unwrap();
        let denom = (batch.len() * self.output_dim()) as f64;
        let mut delta = DenseMatrix::zeros(pred.rows(), pred.cols());
        let mut total = 0.0;
        for (i, ((d, p), t)) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(pred.as_slice())
            .zip(batch.targets.as_slice())
            .enumerate()
        {
            let e = p - t;
            match loss {
                Loss::Mae => {
                    total += e.abs();
                    let sign = match frozen_signs {
                        Some(s) => s[i],
                        None => mae_sign(e),
                    };
                    *d = sign / denom;
                }
                Loss::Mse => {
                    total += e * e;
                    *d = 2.0 * e / denom;
                }
            }
        }
        let mut grad = vec![0.0; params.len()];
        self.backward(params, &tape, delta, &mut grad);
        let grad = FlatParams(grad);
        if !grad.is_finite() || !total.is_finite() {
            return Err(Error::Numeric("non-finite loss or gradient".into()));
        }
        Ok((total / denom, grad))
    }

    /// ∂ output / ∂ input, shape `output_dim × input_dim`, one reverse pass
    /// per output row.
    pub fn input_jacobian(&self, input: &[f64]) -> Result<DenseMatrix> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let x = DenseMatrix::from_row_major(1, input.len(), input.to_vec())?;
        let tape = self.forward_tape(&self.params.0, &x);
        let n_out = self.output_dim();
        let mut jac = DenseMatrix::zeros(n_out, self.input_dim());
        for o in 0..n_out {
            let mut delta = vec![0.0; n_out];
            delta[o] = 1.0;
            let row = self.input_gradient(&tape, delta);
            jac.row_mut(o).copy_from_slice(&row);
        }
        Ok(jac)
    }

    /// Forward value together with the input Jacobian, sharing one forward pass.
    pub fn forward_with_jacobian(&self, input: &[f64]) -> Result<(Vec<f64>, DenseMatrix)> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let x = DenseMatrix::from_row_major(1, input.len(), input.to_vec())?;
        let tape = self.forward_tape(&self.params.0, &x);
        let n_out = self.output_dim();
        let value = tape.acts.last().unwrap().row(0).to_vec();
        let mut jac = DenseMatrix::zeros(n_out, self.input_dim());
        for o in 0..n_out {
            let mut delta = vec![0.0; n_out];
            delta[o] = 1.0;
            let row = self.input_gradient(&tape, delta);
            jac.row_mut(o).copy_from_slice(&row);
        }
        Ok((value, jac))
    }

    /// Reverse pass of a single-sample tape down to the input.
    fn input_gradient(&self, tape: &Tape, mut delta: Vec<f64>) -> Vec<f64> {
        let params = &self.params.0;
        for l in (0..self.num_layers()).rev() {
            let n_in = self.layer_sizes[l];
            let mut next = vec![0.0; n_in];
            for (j, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    axpy(*d, self.weight_row(params, l, j), &mut next);
                }
            }
            if l > 0 {
                for (o, a) in next.iter_mut().zip(tape.acts[l].row(0)) {
                    *o *= self.activation.derivative_from_output(*a);
                }
            }
            delta = next;
        }
        delta
    }

    /// H·v for H = ∇²θ L(θ), by central differences of the analytic gradient.
    /// For MAE the residual signs are frozen at θ, so the loss itself
    /// contributes no curvature.
    pub fn hessian_vector_product(
        &self,
        batch: &LabeledBatch,
        loss: Loss,
        v: &FlatParams,
    ) -> Result<FlatParams> {
        self.check_batch(batch)?;
        if v.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "direction has {} entries, model has {} parameters",
                v.len(),
                self.param_count()
            )));
        }
        let signs: Option<Vec<f64>> = match loss {
            Loss::Mae => {
                let pred = self.forward_batch(&batch.inputs)?;
                Some(
                    pred.as_slice()
                        .iter()
                        .zip(batch.targets.as_slice())
                        .map(|(p, t)| mae_sign(p - t))
                        .collect(),
                )
            }
            Loss::Mse => None,
        };
        let hv = hvp_central_difference(&self.params.0, &v.0, |theta| {
            self.loss_and_gradient_at(theta, batch, loss, signs.as_deref())
                .map(|(_, g)| g.0)
        })?;
        Ok(FlatParams(hv))
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            weights: (0..self.num_layers()).map(|l| self.weight(l).to_rows()).collect(),
            biases: (0..self.num_layers()).map(|l| self.bias(l).to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &MlpCheckpoint) -> Result<Self> {
        validate_layers(&ckpt.layer_sizes)?;
        let weights = ckpt
            .weights
            .iter()
            .map(|w| DenseMatrix::from_rows(w))
            .collect::<Result<Vec<_>>>()?;
        let model = Self::from_layers(&weights, &ckpt.biases, ckpt.activation)?;
        if model.layer_sizes != ckpt.layer_sizes {
            return Err(Error::Shape(format!(
                "checkpoint declares layers {:?} but weights imply {:?}",
                ckpt.layer_sizes, model.layer_sizes
            )));
        }
        Ok(model)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: MlpCheckpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ckpt)
    }
}

#[inline]
fn mae_sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Central-difference Hessian-vector product of a gradient map:
/// `(∇L(θ+εv) − ∇L(θ−εv)) / 2ε` with `ε = 1e-4·(1+‖θ‖∞)`, applied along the
/// unit-∞-norm direction `v/‖v‖∞` and rescaled.
pub fn hvp_central_difference<F>(theta: &[f64], v: &[f64], mut grad: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if theta.len() != v.len() {
        return Err(Error::Shape("direction length differs from parameters".into()));
    }
    let scale = norm_inf(v);
    if scale == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    let eps = 1e-4 * (1.0 + norm_inf(theta));
    let step = eps / scale;
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + step * d).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t - step * d).collect();
    let gp = grad(&plus)?;
    let gm = grad(&minus)?;
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) * scale / (2.0 * eps))
        .collect())
}

/// On-disk model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// per layer, `out × in` nested row-major arrays
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}
