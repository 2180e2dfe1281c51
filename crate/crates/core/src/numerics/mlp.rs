//! Dense layers, MLP stacks, and the backbone / prediction-head / dual-head model.
//!
//! The model applies the backbone first: `outputs = pred_head(backbone(x))`,
//! and the dual head scores the same embeddings: `dual = dual_head(backbone(x))`.
//! Weights are row-major `(out_dim, in_dim)`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Matrix};
use super::seeded_rng;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Softplus,
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Softplus => softplus(z),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(z),
        }
    }
}

/// Affine map followed by an element-wise activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return shape_err("layer dimensions must be at least 1");
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return shape_err(format!(
                "layer {in_dim}->{out_dim} got {} weights and {} biases",
                weights.len(),
                bias.len()
            ));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    /// Kaiming-uniform for relu layers, Xavier-uniform otherwise; zero bias.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            Activation::Identity | Activation::Softplus => {
                (6.0 / (in_dim + out_dim) as f64).sqrt()
            }
        };
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    fn weight_row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    fn pre_activation(&self, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows(), self.out_dim);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let zi = z.row_mut(i);
            for (o, zo) in zi.iter_mut().enumerate() {
                *zo = dot(xi, self.weight_row(o)) + self.bias[o];
            }
        }
        z
    }
}

/// Gradients of one dense layer, same layout as the layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// Inputs and pre-activations of every layer from one forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    batch: usize,
}

/// A chain of dense layers. An empty chain is the identity map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return shape_err(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    l + 1,
                    pair[1].in_dim
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn identity() -> Self {
        Self { layers: Vec::new() }
    }

    /// `dims` has one more entry than `activations`.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() != activations.len() + 1 {
            return shape_err("need exactly one activation per layer");
        }
        if dims.contains(&0) {
            return shape_err("all layer widths must be at least 1");
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| Dense::init(w[0], w[1], a, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.in_dim)
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.out_dim)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if let Some(d) = self.in_dim() {
            if x.cols() != d {
                return shape_err(format!("input has {} columns, network expects {d}", x.cols()));
            }
        }
        Ok(())
    }

    /// Forward pass without keeping intermediates.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = layer.pre_activation(&h);
            let act = layer.activation;
            z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let z = layer.pre_activation(&h);
            let act = layer.activation;
            let next = z.map(|v| act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        let cache = MlpCache {
            inputs,
            pre,
            batch: x.rows(),
        };
        Ok((h, cache))
    }

    /// Backpropagates `grad_out` (gradient w.r.t. this network's output).
    /// Returns per-layer parameter gradients and, when requested, the
    /// gradient w.r.t. the network input.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &Matrix,
        want_input_grad: bool,
    ) -> Result<(Vec<LayerGrads>, Option<Matrix>)> {
        if cache.pre.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "cache has {} layers, network has {}",
                cache.pre.len(),
                self.layers.len()
            )));
        }
        if grad_out.rows() != cache.batch {
            return shape_err(format!(
                "output gradient has {} rows, forward batch had {}",
                grad_out.rows(),
                cache.batch
            ));
        }
        if let Some(d) = self.out_dim() {
            if grad_out.cols() != d {
                return shape_err(format!(
                    "output gradient has {} columns, network outputs {d}",
                    grad_out.cols()
                ));
            }
        }
        let mut grads: Vec<LayerGrads> = self.layers.iter().map(LayerGrads::zeros_like).collect();
        let mut g = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[l];
            let x = &cache.inputs[l];
            if z.shape() != (cache.batch, layer.out_dim) || x.cols() != layer.in_dim {
                return Err(Error::Contract(format!("cache shapes do not match layer {l}")));
            }
            let act = layer.activation;
            for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
                *gv *= act.derivative(zv);
            }
            let lg = &mut grads[l];
            for i in 0..cache.batch {
                let gi = g.row(i);
                let xi = x.row(i);
                for (o, &go) in gi.iter().enumerate() {
                    if go != 0.0 {
                        axpy(
                            go,
                            xi,
                            &mut lg.weights[o * layer.in_dim..(o + 1) * layer.in_dim],
                        );
                        lg.bias[o] += go;
                    }
                }
            }
            if l == 0 && !want_input_grad {
                return Ok((grads, None));
            }
            let mut prev = Matrix::zeros(cache.batch, layer.in_dim);
            for i in 0..cache.batch {
                let gi = g.row(i).to_vec();
                let pi = prev.row_mut(i);
                for (o, &go) in gi.iter().enumerate() {
                    if go != 0.0 {
                        axpy(go, layer.weight_row(o), pi);
                    }
                }
            }
            g = prev;
        }
        Ok((grads, want_input_grad.then_some(g)))
    }

    /// Flat views of every parameter tensor, ordered weights then bias per layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

pub fn grad_tensors(grads: &[LayerGrads]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
        .collect()
}

fn default_dual_hidden() -> Vec<usize> {
    vec![64, 32, 16]
}

/// Shape of the classifier/regressor: backbone widths plus the output size.
///
/// The last hidden width is the embedding dimension. With no hidden layers the
/// backbone is the identity and the model is a single affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_dual_hidden")]
    pub dual_hidden_dims: Vec<usize>,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Relu,
            dual_hidden_dims: default_dual_hidden(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return shape_err("input and output dimensions must be at least 1");
        }
        if self.hidden_dims.iter().chain(&self.dual_hidden_dims).any(|&d| d == 0) {
            return shape_err("hidden widths must be at least 1");
        }
        if self.activation == Activation::Softplus {
            return Err(Error::Input("hidden activation must be relu or identity".into()));
        }
        Ok(())
    }
}

/// Backbone, prediction head, and dual head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub backbone: Mlp,
    pub pred_head: Mlp,
    pub dual_head: Mlp,
}

/// Builds a dual head `embedding -> hidden... -> 1` with relu hidden layers
/// and a softplus output.
pub fn init_dual_head<R: Rng + ?Sized>(
    embedding_dim: usize,
    hidden: &[usize],
    rng: &mut R,
) -> Result<Mlp> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(embedding_dim);
    dims.extend_from_slice(hidden);
    dims.push(1);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(Activation::Softplus);
    Mlp::init(&dims, &acts, rng)
}

pub fn init_params(arch: &MlpArchitecture, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = seeded_rng(seed, 0);
    let mut dims = vec![arch.input_dim];
    dims.extend_from_slice(&arch.hidden_dims);
    let acts = vec![arch.activation; arch.hidden_dims.len()];
    let backbone = Mlp::init(&dims, &acts, &mut rng)?;
    let emb = arch.embedding_dim();
    let pred_head = Mlp::init(&[emb, arch.output_dim], &[Activation::Identity], &mut rng)?;
    let dual_head = init_dual_head(emb, &arch.dual_hidden_dims, &mut rng)?;
    Ok(ModelParams {
        backbone,
        pred_head,
        dual_head,
    })
}

/// Everything needed to backpropagate through one `forward` call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    fingerprint: u64,
    backbone: MlpCache,
    head: MlpCache,
    out_shape: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub embeddings: Matrix,
    pub outputs: Matrix,
    pub cache: ForwardCache,
}

/// Gradients of the backbone and prediction head.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub backbone: Vec<LayerGrads>,
    pub pred_head: Vec<LayerGrads>,
}

impl ParamGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = grad_tensors(&self.backbone);
        t.extend(grad_tensors(&self.pred_head));
        t
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl ModelParams {
    pub fn embedding_dim(&self) -> usize {
        self.backbone
            .out_dim()
            .or_else(|| self.pred_head.in_dim())
            .expect("prediction head is never empty")
    }

    pub fn input_dim(&self) -> usize {
        self.backbone
            .in_dim()
            .or_else(|| self.pred_head.in_dim())
            .expect("prediction head is never empty")
    }

    /// Backbone then prediction-head tensors, the order `ParamGrads::tensors` uses.
    pub fn primal_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.backbone.tensors_mut();
        t.extend(self.pred_head.tensors_mut());
        t
    }

    /// FNV-1a over the bit patterns of all backbone and head parameters.
    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self
            .backbone
            .tensors()
            .into_iter()
            .chain(self.pred_head.tensors())
        {
            for v in t {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        self.backbone.infer(x)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let e = self.embed(x)?;
        self.pred_head.infer(&e)
    }

    /// Dual-head scores of already-computed embeddings.
    pub fn dual_scores(&self, embeddings: &Matrix) -> Result<Vec<f64>> {
        Ok(self.dual_head.infer(embeddings)?.into_vec())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        let d = self.input_dim();
        if x.cols() != d {
            return shape_err(format!("batch has {} features, model expects {d}", x.cols()));
        }
        Ok(())
    }
}

pub fn forward(params: &ModelParams, x_batch: &Matrix) -> Result<Forward> {
    params.check_input(x_batch)?;
    let (embeddings, backbone) = params.backbone.forward(x_batch)?;
    let (outputs, head) = params.pred_head.forward(&embeddings)?;
    let cache = ForwardCache {
        fingerprint: params.fingerprint(),
        backbone,
        head,
        out_shape: outputs.shape(),
    };
    Ok(Forward {
        embeddings,
        outputs,
        cache,
    })
}

/// Exact gradient of any scalar whose derivative w.r.t. the model outputs is
/// `grad_outputs`. Linear in `grad_outputs`.
pub fn backward_lagrangian(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_outputs: &Matrix,
) -> Result<ParamGrads> {
    backward_with_input(params, cache, grad_outputs, false).map(|(g, _)| g)
}

/// Like [`backward_lagrangian`], optionally also returning the input gradient.
pub fn backward_with_input(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_outputs: &Matrix,
    want_input_grad: bool,
) -> Result<(ParamGrads, Option<Matrix>)> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::Contract(
            "forward cache was produced with different parameters".into(),
        ));
    }
    if grad_outputs.shape() != cache.out_shape {
        return shape_err(format!(
            "output gradient is {:?}, outputs were {:?}",
            grad_outputs.shape(),
            cache.out_shape
        ));
    }
    let (pred_head, g_emb) = params.pred_head.backward(&cache.head, grad_outputs, true)?;
    let g_emb = g_emb.expect("requested");
    let (backbone, g_in) = params
        .backbone
        .backward(&cache.backbone, &g_emb, want_input_grad)?;
    Ok((
        ParamGrads {
            backbone,
            pred_head,
        },
        g_in,
    ))
}
