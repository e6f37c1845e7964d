//! Small networks expressed as autodiff graph templates, parameter handles
//! and the Adam optimizer.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::spaces::{batch_tensor, diff, signals_from_tensor, Geometry, GridSignal, SpaceSpec};

/// A parametric map from `[batch, input_len]` to `[batch, output_len]`,
/// described as a graph-building recipe.
pub trait Network: Send + Sync + fmt::Debug {
    fn input_len(&self) -> usize;

    fn output_len(&self) -> usize;

    fn param_shapes(&self) -> Vec<Vec<usize>>;

    /// Builds the network on `x` with parameter nodes in `param_shapes` order.
    fn build(&self, graph: &mut Graph, x: NodeId, params: &[NodeId]) -> Result<NodeId>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Softplus => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Softplus),
            _ => None,
        }
    }

    fn apply(self, graph: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => graph.relu(x),
            Activation::Tanh => graph.tanh(x),
            Activation::Softplus => graph.softplus(x),
        }
    }
}

/// Fully connected network; the activation follows every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
}

impl Mlp {
    /// `sizes` lists the layer widths from input to output.
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Mlp { sizes, activation })
    }

    /// Recovers the architecture from `[W₀, b₀, W₁, b₁, …]` shapes.
    pub fn from_params(params: &[Tensor], activation: Activation) -> Result<Self> {
        if params.is_empty() || !params.len().is_multiple_of(2) {
            return Err(Error::Format("expected weight/bias pairs".into()));
        }
        let mut sizes = Vec::new();
        for (k, pair) in params.chunks(2).enumerate() {
            let (w, b) = (pair[0].shape(), pair[1].shape());
            if w.len() != 2 || b.len() != 1 || w[1] != b[0] {
                return Err(Error::Format(format!("layer {k}: weight {w:?}, bias {b:?}")));
            }
            if let Some(&last) = sizes.last() {
                if last != w[0] {
                    return Err(Error::Format(format!("layer {k} input {} != {last}", w[0])));
                }
            } else {
                sizes.push(w[0]);
            }
            sizes.push(w[1]);
        }
        Mlp::new(sizes, activation)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Weights uniform on `±1/√fan_in`, biases zero.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<Tensor> {
        let mut params = Vec::with_capacity(2 * (self.sizes.len() - 1));
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(Tensor::matrix(fan_in, fan_out, data).expect("weight shape"));
            params.push(Tensor::zeros(&[fan_out]));
        }
        params
    }
}

impl Network for Mlp {
    fn input_len(&self) -> usize {
        self.sizes[0]
    }

    fn output_len(&self) -> usize {
        *self.sizes.last().expect("nonempty sizes")
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.sizes
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect()
    }

    fn build(&self, graph: &mut Graph, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let layers = self.sizes.len() - 1;
        let mut h = x;
        for (k, pair) in params.chunks(2).enumerate() {
            h = graph.affine_layer(h, pair[0], pair[1])?;
            if k + 1 < layers {
                h = self.activation.apply(graph, h);
            }
        }
        Ok(h)
    }
}

/// `x ↦ ⟨a, x⟩` with `a` as the single parameter.
#[derive(Debug, Clone)]
pub struct LinearFunctional {
    len: usize,
}

impl LinearFunctional {
    pub fn handle(a: Vec<f64>) -> CriticHandle {
        let net = LinearFunctional { len: a.len() };
        CriticHandle::new(Arc::new(net), vec![Tensor::vector(a)]).expect("matching shapes")
    }
}

impl Network for LinearFunctional {
    fn input_len(&self) -> usize {
        self.len
    }

    fn output_len(&self) -> usize {
        1
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![self.len]]
    }

    fn build(&self, graph: &mut Graph, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let batch = graph.shape(x)[0];
        let a = graph.broadcast_rows(params[0], batch)?;
        let prod = graph.mul(x, a)?;
        let s = graph.sum_cols(prod)?;
        graph.broadcast_cols(s, 1)
    }
}

/// `x ↦ c · ‖x‖_B`, built from differentiable ops.
#[derive(Debug, Clone)]
pub struct NormFunctional {
    pub space: SpaceSpec,
    pub geometry: Geometry,
    pub scale: f64,
}

impl NormFunctional {
    pub fn handle(space: SpaceSpec, geometry: Geometry, scale: f64) -> CriticHandle {
        CriticHandle::new(Arc::new(NormFunctional { space, geometry, scale }), Vec::new()).expect("no parameters")
    }
}

impl Network for NormFunctional {
    fn input_len(&self) -> usize {
        self.geometry.len()
    }

    fn output_len(&self) -> usize {
        1
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        Vec::new()
    }

    fn build(&self, graph: &mut Graph, x: NodeId, _params: &[NodeId]) -> Result<NodeId> {
        let n = diff::norm_rows(graph, x, &self.space, self.geometry)?;
        let n = graph.scale(n, self.scale);
        graph.broadcast_cols(n, 1)
    }
}

/// The constant map.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub len: usize,
    pub value: f64,
}

impl ConstantField {
    pub fn handle(len: usize, value: f64) -> CriticHandle {
        CriticHandle::new(Arc::new(ConstantField { len, value }), Vec::new()).expect("no params")
    }
}

impl Network for ConstantField {
    fn input_len(&self) -> usize {
        self.len
    }

    fn output_len(&self) -> usize {
        1
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        Vec::new()
    }

    fn build(&self, graph: &mut Graph, x: NodeId, _params: &[NodeId]) -> Result<NodeId> {
        let s = graph.sum_cols(x)?;
        let c = graph.affine(s, 0.0, self.value);
        graph.broadcast_cols(c, 1)
    }
}

/// Another network with its output multiplied by `alpha`.
#[derive(Debug, Clone)]
pub struct ScaledNetwork {
    pub inner: Arc<dyn Network>,
    pub alpha: f64,
}

impl Network for ScaledNetwork {
    fn input_len(&self) -> usize {
        self.inner.input_len()
    }

    fn output_len(&self) -> usize {
        self.inner.output_len()
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.inner.param_shapes()
    }

    fn build(&self, graph: &mut Graph, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let y = self.inner.build(graph, x, params)?;
        Ok(graph.scale(y, self.alpha))
    }
}

fn check_params(net: &dyn Network, params: &[Tensor]) -> Result<()> {
    let shapes = net.param_shapes();
    if shapes.len() != params.len() {
        return Err(Error::shape(
            "parameters",
            format!("network expects {} tensors, got {}", shapes.len(), params.len()),
        ));
    }
    for (k, (s, t)) in shapes.iter().zip(params).enumerate() {
        if s.as_slice() != t.shape() {
            return Err(Error::shape(
                format!("parameter {k}"),
                format!("expected {s:?}, got {:?}", t.shape()),
            ));
        }
    }
    Ok(())
}

/// Parameter nodes declared as graph inputs, in network order.
pub fn param_inputs(graph: &mut Graph, net: &dyn Network, prefix: &str) -> Vec<NodeId> {
    net.param_shapes()
        .iter()
        .enumerate()
        .map(|(k, s)| graph.input(format!("{prefix}{k}"), s))
        .collect()
}

/// A scalar-valued network `D : B → ℝ` with concrete parameters.
#[derive(Debug, Clone)]
pub struct CriticHandle {
    network: Arc<dyn Network>,
    params: Vec<Tensor>,
}

impl CriticHandle {
    pub fn new(network: Arc<dyn Network>, params: Vec<Tensor>) -> Result<Self> {
        if network.output_len() != 1 {
            return Err(Error::invalid("critic output must be scalar"));
        }
        check_params(network.as_ref(), &params)?;
        Ok(CriticHandle { network, params })
    }

    pub fn network(&self) -> &Arc<dyn Network> {
        &self.network
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.network.input_len()
    }

    /// Same critic with output multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> CriticHandle {
        CriticHandle {
            network: Arc::new(ScaledNetwork {
                inner: Arc::clone(&self.network),
                alpha,
            }),
            params: self.params.clone(),
        }
    }

    /// Builds per-sample scores `[batch]` on `x` with parameter nodes.
    pub fn build_scores(&self, graph: &mut Graph, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let out = self.network.build(graph, x, params)?;
        graph.sum_cols(out)
    }

    fn check_batch(&self, xs: &[GridSignal]) -> Result<Tensor> {
        if let Some(x) = xs.iter().find(|x| x.len() != self.input_len()) {
            return Err(Error::shape(
                "critic input",
                format!("expected {} entries, got {}", self.input_len(), x.len()),
            ));
        }
        if xs.is_empty() {
            return Err(Error::EmptySample);
        }
        batch_tensor(xs)
    }

    fn feeds<'a>(&'a self, x: &'a Tensor) -> Vec<&'a Tensor> {
        std::iter::once(x).chain(self.params.iter()).collect()
    }

    pub fn values(&self, xs: &[GridSignal]) -> Result<Vec<f64>> {
        let batch = self.check_batch(xs)?;
        let mut g = Graph::new();
        let x = g.input("x", batch.shape());
        let params = param_inputs(&mut g, self.network.as_ref(), "theta");
        let scores = self.build_scores(&mut g, x, &params)?;
        Ok(g.eval(&self.feeds(&batch), &[scores])?.remove(0).into_data())
    }

    pub fn value(&self, x: &GridSignal) -> Result<f64> {
        Ok(self.values(std::slice::from_ref(x))?[0])
    }

    /// Scores and per-sample input gradients `∇ₓD(x_k)` (rows of the
    /// returned `[batch, n]` tensor).
    pub fn values_and_gradients(&self, xs: &[GridSignal]) -> Result<(Vec<f64>, Tensor)> {
        let batch = self.check_batch(xs)?;
        let mut g = Graph::new();
        let x = g.input("x", batch.shape());
        let params = param_inputs(&mut g, self.network.as_ref(), "theta");
        let scores = self.build_scores(&mut g, x, &params)?;
        let total = g.sum(scores);
        let dx = g.grad(total, &[x])?[0];
        let mut out = g.eval(&self.feeds(&batch), &[scores, dx])?;
        let grads = out.pop().expect("gradient");
        Ok((out.pop().expect("scores").into_data(), grads))
    }

    pub fn gradient(&self, x: &GridSignal) -> Result<Tensor> {
        let (_, g) = self.values_and_gradients(std::slice::from_ref(x))?;
        Ok(Tensor::vector(g.into_data()))
    }
}

/// A generator `G : Z → B` with concrete parameters.
#[derive(Debug, Clone)]
pub struct GeneratorHandle {
    network: Arc<dyn Network>,
    params: Vec<Tensor>,
    geometry: Geometry,
}

impl GeneratorHandle {
    pub fn new(network: Arc<dyn Network>, params: Vec<Tensor>, geometry: Geometry) -> Result<Self> {
        if network.output_len() != geometry.len() {
            return Err(Error::shape(
                "generator",
                format!("outputs {} entries for geometry {geometry}", network.output_len()),
            ));
        }
        check_params(network.as_ref(), &params)?;
        Ok(GeneratorHandle {
            network,
            params,
            geometry,
        })
    }

    pub fn network(&self) -> &Arc<dyn Network> {
        &self.network
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn latent_dim(&self) -> usize {
        self.network.input_len()
    }

    /// Maps a `[batch, latent_dim]` tensor of latents to samples.
    pub fn generate(&self, latents: &Tensor) -> Result<Vec<GridSignal>> {
        let mut g = Graph::new();
        let z = g.input("z", latents.shape());
        let params = param_inputs(&mut g, self.network.as_ref(), "phi");
        let out = self.network.build(&mut g, z, &params)?;
        let feeds: Vec<&Tensor> = std::iter::once(latents).chain(self.params.iter()).collect();
        let t = g.eval(&feeds, &[out])?.remove(0);
        signals_from_tensor(&t, self.geometry)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * d;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * d * d;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
