//! Theory-guided residual network: embeddings of the query, the traffic
//! slice, and the road conditions are fused and combined with the fastest
//! route from A*. The theory route's edge vector is both an input to the
//! correction head and the base the head corrects: the head's sigmoid output
//! is the per-edge probability of disagreeing with the theory route, so a
//! silent head reproduces A* exactly and a trained head can both add and
//! remove edges. Gradients are derived by hand and checked against finite
//! differences in the tests.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roadnet::{RoadNetwork, Route, RouteQuery, CONDITION_WIDTH};
use crate::router::{astar, TheoryRoute};
use crate::traffic::{speeds_at, TrafficTensor};
use crate::validator::project;

/// Probabilities are clamped into `[LOSS_CLAMP, 1 - LOSS_CLAMP]` inside the
/// loss so `log` never sees zero.
pub const LOSS_CLAMP: f64 = 1e-7;

/// Per-edge selection probabilities, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftRoute {
    probs: Vec<f64>,
}

impl SoftRoute {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!("probability {p} at edge {i} outside [0, 1]")));
            }
        }
        Ok(SoftRoute { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense layer, row-major `out_dim x in_dim` weights plus a bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl Linear {
    pub(crate) fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            w: vec![0.0; out_dim * in_dim],
            b: vec![0.0; out_dim],
            out_dim,
            in_dim,
        }
    }

    /// Uniform init in (-sqrt(1/fan_in), +sqrt(1/fan_in)) for weights and bias.
    pub(crate) fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha20Rng) -> Self {
        let scale = (1.0 / in_dim as f64).sqrt();
        let mut layer = Linear::zeros(out_dim, in_dim);
        for w in layer.w.iter_mut() {
            *w = rng.gen_range(-scale..scale);
        }
        for b in layer.b.iter_mut() {
            *b = rng.gen_range(-scale..scale);
        }
        layer
    }

    /// Pre-activation `W x + b`.
    pub(crate) fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.b.clone();
        for (row, out_v) in out.iter_mut().enumerate() {
            let w_row = &self.w[row * self.in_dim..(row + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, xv) in w_row.iter().zip(x) {
                acc += w * xv;
            }
            *out_v += acc;
        }
        out
    }

    /// Accumulates `delta (outer) x` into the weight gradient and `delta`
    /// into the bias gradient.
    pub(crate) fn accumulate_outer(&mut self, delta: &[f64], x: &[f64]) {
        for (row, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let w_row = &mut self.w[row * self.in_dim..(row + 1) * self.in_dim];
            for (w, xv) in w_row.iter_mut().zip(x) {
                *w += d * xv;
            }
            self.b[row] += d;
        }
    }

    /// `W^T delta`, the gradient flowing back into this layer's input.
    pub(crate) fn backprop_input(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_dim];
        for (row, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let w_row = &self.w[row * self.in_dim..(row + 1) * self.in_dim];
            for (o, w) in out.iter_mut().zip(w_row) {
                *o += d * w;
            }
        }
        out
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for w in self.w.iter_mut() {
            *w *= factor;
        }
        for b in self.b.iter_mut() {
            *b *= factor;
        }
    }

    /// Momentum step: `v = momentum * v + g`, then `theta -= lr * v`.
    pub(crate) fn sgd_step(&mut self, velocity: &mut Linear, grad: &Linear, lr: f64, momentum: f64) {
        for ((w, v), g) in self.w.iter_mut().zip(&mut velocity.w).zip(&grad.w) {
            *v = momentum * *v + g;
            *w -= lr * *v;
        }
        for ((b, v), g) in self.b.iter_mut().zip(&mut velocity.b).zip(&grad.b) {
            *v = momentum * *v + g;
            *b -= lr * *v;
        }
    }

    pub(crate) fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Weights of the residual network. `head` sees the theory route
/// concatenated with the fused embedding, and its sigmoid output is added
/// back onto the theory route.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualParams {
    pub query_embed: Linear,   // H x query_width
    pub traffic_embed: Linear, // H x M
    pub cond_embed: Linear,    // H x (100 * M)
    pub fusion: Linear,        // H x 3H
    pub head: Linear,          // M x (M + H)
    pub hidden: usize,
    pub segment_count: usize,
    pub query_width: usize,
}

impl ResidualParams {
    pub fn init(segment_count: usize, hidden: usize, query_width: usize, rng: &mut ChaCha20Rng) -> Self {
        ResidualParams {
            query_embed: Linear::init(hidden, query_width, rng),
            traffic_embed: Linear::init(hidden, segment_count, rng),
            cond_embed: Linear::init(hidden, CONDITION_WIDTH * segment_count, rng),
            fusion: Linear::init(hidden, 3 * hidden, rng),
            head: Linear::init(segment_count, segment_count + hidden, rng),
            hidden,
            segment_count,
            query_width,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ResidualParams {
            query_embed: Linear::zeros(self.hidden, self.query_width),
            traffic_embed: Linear::zeros(self.hidden, self.segment_count),
            cond_embed: Linear::zeros(self.hidden, CONDITION_WIDTH * self.segment_count),
            fusion: Linear::zeros(self.hidden, 3 * self.hidden),
            head: Linear::zeros(self.segment_count, self.segment_count + self.hidden),
            ..*self
        }
    }

    pub fn layers(&self) -> [&Linear; 5] {
        [
            &self.query_embed,
            &self.traffic_embed,
            &self.cond_embed,
            &self.fusion,
            &self.head,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Linear; 5] {
        [
            &mut self.query_embed,
            &mut self.traffic_embed,
            &mut self.cond_embed,
            &mut self.fusion,
            &mut self.head,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Flat parameter access in declaration order (per layer: weights then
    /// bias), used by the finite-difference tests and the checkpoint format.
    pub fn nudge(&mut self, index: usize, delta: f64) {
        let mut k = index;
        for layer in self.layers_mut() {
            if k < layer.w.len() {
                layer.w[k] += delta;
                return;
            }
            k -= layer.w.len();
            if k < layer.b.len() {
                layer.b[k] += delta;
                return;
            }
            k -= layer.b.len();
        }
        panic!("parameter index {index} out of range");
    }
}

/// Per-dataset constants shared across forward passes: the flattened
/// condition matrix, the bounding box for query normalization, and one
/// traffic column per interval. Like the query coordinates and the condition
/// features, the traffic input is normalized: each speed is divided by its
/// segment's limit, giving the congestion level in (0, 1.2].
pub struct ModelInputs {
    pub flat_condition: Vec<f64>,
    pub speed_columns: Vec<Vec<f64>>,
    pub bbox: (f64, f64, f64, f64),
    pub t_total: usize,
    pub segment_count: usize,
}

impl ModelInputs {
    pub fn new(net: &RoadNetwork, traffic: &TrafficTensor) -> Result<Self> {
        if traffic.segment_count() != net.segment_count() {
            return Err(Error::Dimension {
                expected: net.segment_count(),
                got: traffic.segment_count(),
                context: "traffic tensor vs network",
            });
        }
        let mut flat_condition = Vec::with_capacity(CONDITION_WIDTH * net.segment_count());
        for seg in net.segments() {
            flat_condition.extend_from_slice(seg.condition.values());
        }
        let speed_columns = (0..traffic.t_total())
            .map(|t| {
                let column = speeds_at(traffic, t)?;
                Ok(column
                    .iter()
                    .zip(net.segments())
                    .map(|(&v, seg)| v / seg.speed_limit)
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelInputs {
            flat_condition,
            speed_columns,
            bbox: net.bounding_box(),
            t_total: traffic.t_total(),
            segment_count: net.segment_count(),
        })
    }

    pub fn query_width(&self) -> usize {
        query_width(self.t_total)
    }

    fn encode(&self, query: &RouteQuery, net: &RoadNetwork) -> Vec<f64> {
        encode_query_with_bbox(query, net, self.bbox, self.t_total)
    }
}

/// Width of the encoded query: origin and destination coordinates, plus the
/// normalized departure interval when the tensor has more than one.
pub fn query_width(t_total: usize) -> usize {
    if t_total > 1 {
        5
    } else {
        4
    }
}

fn normalize(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

fn encode_query_with_bbox(
    query: &RouteQuery,
    net: &RoadNetwork,
    bbox: (f64, f64, f64, f64),
    t_total: usize,
) -> Vec<f64> {
    let (min_x, min_y, max_x, max_y) = bbox;
    let origin = &net.intersections()[query.origin];
    let destination = &net.intersections()[query.destination];
    let mut out = vec![
        normalize(origin.x, min_x, max_x),
        normalize(origin.y, min_y, max_y),
        normalize(destination.x, min_x, max_x),
        normalize(destination.y, min_y, max_y),
    ];
    if t_total > 1 {
        out.push(query.departure_interval as f64 / (t_total - 1) as f64);
    }
    out
}

/// Bounding-box-normalized `[S_x, S_y, E_x, E_y]`, with the departure
/// interval appended as a fifth entry when the dataset has several intervals.
pub fn encode_query(query: &RouteQuery, net: &RoadNetwork, t_total: usize) -> Result<Vec<f64>> {
    net.validate_query(query, t_total)?;
    Ok(encode_query_with_bbox(query, net, net.bounding_box(), t_total))
}

/// One training or evaluation sample with its cached theory route.
#[derive(Debug, Clone)]
pub struct Sample {
    pub query: RouteQuery,
    pub query_encoding: Vec<f64>,
    pub interval: usize,
    /// The A* edge vector as 0/1 reals.
    pub theory: Vec<f64>,
    /// The observed edge vector as 0/1 reals.
    pub target: Vec<f64>,
}

pub(crate) fn binary(edges: &[bool]) -> Vec<f64> {
    edges.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect()
}

/// Builds samples for the given routes, computing each distinct query's A*
/// route exactly once.
pub fn build_samples(
    net: &RoadNetwork,
    traffic: &TrafficTensor,
    inputs: &ModelInputs,
    routes: &[Route],
) -> Result<Vec<Sample>> {
    let mut theory_cache: HashMap<(usize, usize, usize), Vec<f64>> = HashMap::new();
    routes
        .iter()
        .map(|route| {
            let q = route.query;
            let key = (q.origin, q.destination, q.departure_interval);
            let theory = match theory_cache.get(&key) {
                Some(t) => t.clone(),
                None => {
                    let t = binary(&astar(net, traffic, q)?.edges);
                    theory_cache.insert(key, t.clone());
                    t
                }
            };
            Ok(Sample {
                query: q,
                query_encoding: inputs.encode(&q, net),
                interval: q.departure_interval,
                theory,
                target: binary(&route.edges),
            })
        })
        .collect()
}

struct ResidualForward {
    z1: Vec<f64>,
    z2: Vec<f64>,
    z3: Vec<f64>,
    z4: Vec<f64>,
    head_sig: Vec<f64>,
    raw: Vec<f64>,
    probs: Vec<f64>,
}

impl ResidualParams {
    /// Pre-activation of the condition embedding. The condition matrix is
    /// constant for a dataset, so this is computed once per parameter state
    /// instead of once per sample.
    pub fn cond_preactivation(&self, inputs: &ModelInputs) -> Vec<f64> {
        self.cond_embed.affine(&inputs.flat_condition)
    }

    fn forward_parts(&self, inputs: &ModelInputs, cond_pre: &[f64], sample: &Sample) -> ResidualForward {
        let z1: Vec<f64> = self
            .query_embed
            .affine(&sample.query_encoding)
            .into_iter()
            .map(sigmoid)
            .collect();
        let z2: Vec<f64> = self
            .traffic_embed
            .affine(&inputs.speed_columns[sample.interval])
            .into_iter()
            .map(sigmoid)
            .collect();
        let z3: Vec<f64> = cond_pre.iter().map(|&u| sigmoid(u)).collect();
        let mut fused_in = Vec::with_capacity(3 * self.hidden);
        fused_in.extend_from_slice(&z1);
        fused_in.extend_from_slice(&z2);
        fused_in.extend_from_slice(&z3);
        let z4: Vec<f64> = self.fusion.affine(&fused_in).into_iter().map(sigmoid).collect();

        let mut head_in = Vec::with_capacity(self.segment_count + self.hidden);
        head_in.extend_from_slice(&sample.theory);
        head_in.extend_from_slice(&z4);
        let head_sig: Vec<f64> = self.head.affine(&head_in).into_iter().map(sigmoid).collect();

        // Residual combination: the head output is the probability of
        // flipping the corresponding theory selection, p = s + a - 2sa.
        // A silent head (s -> 0) reproduces the theory route exactly; the
        // result stays in [0, 1] with live gradients on and off the theory
        // path.
        let raw: Vec<f64> = head_sig
            .iter()
            .zip(&sample.theory)
            .map(|(&s, &a)| s + a - 2.0 * s * a)
            .collect();
        let probs: Vec<f64> = raw.iter().map(|&r| r.clamp(0.0, 1.0)).collect();
        ResidualForward {
            z1,
            z2,
            z3,
            z4,
            head_sig,
            raw,
            probs,
        }
    }

    fn forward_probs(&self, inputs: &ModelInputs, cond_pre: &[f64], sample: &Sample) -> Vec<f64> {
        self.forward_parts(inputs, cond_pre, sample).probs
    }
}

fn check_shapes(params: &ResidualParams, inputs: &ModelInputs) -> Result<()> {
    if params.segment_count != inputs.segment_count {
        return Err(Error::Dimension {
            expected: inputs.segment_count,
            got: params.segment_count,
            context: "model segment count",
        });
    }
    if params.query_width != inputs.query_width() {
        return Err(Error::Dimension {
            expected: inputs.query_width(),
            got: params.query_width,
            context: "model query width",
        });
    }
    Ok(())
}

/// Full forward pass for one query against a prepared theory route.
pub fn forward(
    params: &ResidualParams,
    query: &RouteQuery,
    traffic: &TrafficTensor,
    net: &RoadNetwork,
    theory: &TheoryRoute,
) -> Result<SoftRoute> {
    let inputs = ModelInputs::new(net, traffic)?;
    check_shapes(params, &inputs)?;
    net.validate_query(query, traffic.t_total())?;
    if theory.edges.len() != params.segment_count {
        return Err(Error::Dimension {
            expected: params.segment_count,
            got: theory.edges.len(),
            context: "theory route vector",
        });
    }
    let sample = Sample {
        query: *query,
        query_encoding: inputs.encode(query, net),
        interval: query.departure_interval,
        theory: binary(&theory.edges),
        target: vec![0.0; params.segment_count],
    };
    let cond_pre = params.cond_preactivation(&inputs);
    let probs = params.forward_probs(&inputs, &cond_pre, &sample);
    SoftRoute::new(probs)
}

pub(crate) fn loss_on_probs(probs: &[f64], target: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(target) {
        let p = p.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / probs.len() as f64
}

/// Mean per-edge binary cross-entropy between the soft route and the
/// observed binary route.
pub fn loss(soft: &SoftRoute, target: &Route) -> Result<f64> {
    if soft.probs.len() != target.edges.len() {
        return Err(Error::Dimension {
            expected: target.edges.len(),
            got: soft.probs.len(),
            context: "soft route vs target",
        });
    }
    Ok(loss_on_probs(&soft.probs, &binary(&target.edges)))
}

/// Gradient of the loss with respect to the model's output probability.
/// Zero wherever the loss clamp pins the probability.
fn raw_grad(raw: f64, target: f64, m: usize) -> f64 {
    if raw <= LOSS_CLAMP || raw >= 1.0 - LOSS_CLAMP {
        0.0
    } else {
        (raw - target) / (raw * (1.0 - raw)) / m as f64
    }
}

/// Exact analytic gradients of the mean loss over the batch. No gradient
/// flows through the theory route: it is an input, not a parameter.
pub fn backward(
    params: &ResidualParams,
    inputs: &ModelInputs,
    cond_pre: &[f64],
    batch: &[&Sample],
) -> ResidualParams {
    assert!(!batch.is_empty(), "backward needs a nonempty batch");
    let m = params.segment_count;
    let h = params.hidden;
    let mut grads = params.zeros_like();
    let mut delta3_sum = vec![0.0; h];

    for sample in batch {
        let fwd = params.forward_parts(inputs, cond_pre, sample);

        let mut delta5 = vec![0.0; m];
        for (j, d) in delta5.iter_mut().enumerate() {
            let g = raw_grad(fwd.raw[j], sample.target[j], m);
            // d raw / d s = 1 - 2a for the flip combination.
            let flip = 1.0 - 2.0 * sample.theory[j];
            *d = g * flip * fwd.head_sig[j] * (1.0 - fwd.head_sig[j]);
        }
        let mut head_in = Vec::with_capacity(m + h);
        head_in.extend_from_slice(&sample.theory);
        head_in.extend_from_slice(&fwd.z4);
        grads.head.accumulate_outer(&delta5, &head_in);

        let g_head_in = params.head.backprop_input(&delta5);
        let delta4: Vec<f64> = (0..h)
            .map(|k| g_head_in[m + k] * fwd.z4[k] * (1.0 - fwd.z4[k]))
            .collect();
        let mut fused_in = Vec::with_capacity(3 * h);
        fused_in.extend_from_slice(&fwd.z1);
        fused_in.extend_from_slice(&fwd.z2);
        fused_in.extend_from_slice(&fwd.z3);
        grads.fusion.accumulate_outer(&delta4, &fused_in);

        let g_fused = params.fusion.backprop_input(&delta4);
        let delta1: Vec<f64> = (0..h).map(|k| g_fused[k] * fwd.z1[k] * (1.0 - fwd.z1[k])).collect();
        let delta2: Vec<f64> = (0..h)
            .map(|k| g_fused[h + k] * fwd.z2[k] * (1.0 - fwd.z2[k]))
            .collect();
        for k in 0..h {
            delta3_sum[k] += g_fused[2 * h + k] * fwd.z3[k] * (1.0 - fwd.z3[k]);
        }
        grads.query_embed.accumulate_outer(&delta1, &sample.query_encoding);
        grads
            .traffic_embed
            .accumulate_outer(&delta2, &inputs.speed_columns[sample.interval]);
    }

    // The condition input is shared by every sample, so its rank-one weight
    // gradient is applied once for the whole batch.
    grads.cond_embed.accumulate_outer(&delta3_sum, &inputs.flat_condition);

    let scale = 1.0 / batch.len() as f64;
    for layer in grads.layers_mut() {
        layer.scale(scale);
    }
    grads
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Momentum { momentum: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_width: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 1000,
            batch_size: 16,
            seed: 0,
            hidden_width: 32,
            optimizer: Optimizer::Momentum { momentum: 0.9 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate {} must be nonnegative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        if let Optimizer::Momentum { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
            }
        }
        Ok(())
    }

    fn momentum(&self) -> f64 {
        match self.optimizer {
            Optimizer::Sgd => 0.0,
            Optimizer::Momentum { momentum } => momentum,
        }
    }
}

/// Loss curves from one training run.
#[derive(Debug, Clone)]
pub struct TrainStats {
    /// Mean train-split loss before any update.
    pub initial_train_loss: f64,
    /// Mean train-split loss after each epoch.
    pub train_loss: Vec<f64>,
    /// Mean validation-split loss after each epoch (empty when there is no
    /// validation split).
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were returned (0 = before training).
    pub best_epoch: usize,
}

/// A network the shared minibatch trainer can fit: the residual model and
/// the plain baseline both implement this.
pub(crate) trait TrainableNet: Clone {
    fn init_for(inputs: &ModelInputs, hidden: usize, rng: &mut ChaCha20Rng) -> Self;
    /// Pre-activations for inputs that are constant across the dataset (the
    /// flattened condition matrix), recomputed once per parameter state.
    fn constant_pre(&self, inputs: &ModelInputs) -> Vec<f64>;
    fn probs(&self, inputs: &ModelInputs, pre: &[f64], sample: &Sample) -> Vec<f64>;
    fn batch_grads(&self, inputs: &ModelInputs, pre: &[f64], batch: &[&Sample]) -> Self;
    fn step(&mut self, velocity: &mut Self, grads: &Self, lr: f64, momentum: f64);
    fn zeroed(&self) -> Self;
}

impl TrainableNet for ResidualParams {
    fn init_for(inputs: &ModelInputs, hidden: usize, rng: &mut ChaCha20Rng) -> Self {
        ResidualParams::init(inputs.segment_count, hidden, inputs.query_width(), rng)
    }

    fn constant_pre(&self, inputs: &ModelInputs) -> Vec<f64> {
        self.cond_preactivation(inputs)
    }

    fn probs(&self, inputs: &ModelInputs, pre: &[f64], sample: &Sample) -> Vec<f64> {
        self.forward_probs(inputs, pre, sample)
    }

    fn batch_grads(&self, inputs: &ModelInputs, pre: &[f64], batch: &[&Sample]) -> Self {
        backward(self, inputs, pre, batch)
    }

    fn step(&mut self, velocity: &mut Self, grads: &Self, lr: f64, momentum: f64) {
        self.query_embed.sgd_step(&mut velocity.query_embed, &grads.query_embed, lr, momentum);
        self.traffic_embed.sgd_step(&mut velocity.traffic_embed, &grads.traffic_embed, lr, momentum);
        self.cond_embed.sgd_step(&mut velocity.cond_embed, &grads.cond_embed, lr, momentum);
        self.fusion.sgd_step(&mut velocity.fusion, &grads.fusion, lr, momentum);
        self.head.sgd_step(&mut velocity.head, &grads.head, lr, momentum);
    }

    fn zeroed(&self) -> Self {
        self.zeros_like()
    }
}

pub(crate) fn mean_loss<N: TrainableNet>(
    net: &N,
    inputs: &ModelInputs,
    pre: &[f64],
    samples: &[&Sample],
) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| loss_on_probs(&net.probs(inputs, pre, s), &s.target))
        .sum();
    total / samples.len() as f64
}

/// Shared trainer: seeded init, per-epoch shuffle, minibatch SGD with
/// optional momentum, and best-validation-loss checkpointing. Deterministic
/// for a fixed config.
pub(crate) fn fit<N: TrainableNet>(
    config: &TrainConfig,
    inputs: &ModelInputs,
    train: &[Sample],
    val: &[Sample],
) -> Result<(N, TrainStats)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty train split".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut net = N::init_for(inputs, config.hidden_width, &mut rng);
    let mut velocity = net.zeroed();
    let momentum = config.momentum();

    let train_refs: Vec<&Sample> = train.iter().collect();
    let val_refs: Vec<&Sample> = val.iter().collect();
    let eval = |n: &N, set: &[&Sample]| {
        let pre = n.constant_pre(inputs);
        mean_loss(n, inputs, &pre, set)
    };

    let initial_train_loss = eval(&net, &train_refs);
    let mut best = net.clone();
    let mut best_val = if val_refs.is_empty() {
        f64::INFINITY
    } else {
        eval(&net, &val_refs)
    };
    let mut stats = TrainStats {
        initial_train_loss,
        train_loss: Vec::with_capacity(config.epochs),
        val_loss: Vec::with_capacity(config.epochs),
        best_epoch: 0,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let pre = net.constant_pre(inputs);
            let grads = net.batch_grads(inputs, &pre, &batch);
            net.step(&mut velocity, &grads, config.learning_rate, momentum);
        }
        stats.train_loss.push(eval(&net, &train_refs));
        if !val_refs.is_empty() {
            let vl = eval(&net, &val_refs);
            stats.val_loss.push(vl);
            if vl < best_val {
                best_val = vl;
                best = net.clone();
                stats.best_epoch = epoch + 1;
            }
        }
    }
    if val_refs.is_empty() {
        best = net;
        stats.best_epoch = config.epochs;
    }
    Ok((best, stats))
}

/// Mean loss of the residual model over prepared samples.
pub fn mean_batch_loss(params: &ResidualParams, inputs: &ModelInputs, batch: &[&Sample]) -> f64 {
    let pre = params.cond_preactivation(inputs);
    mean_loss(params, inputs, &pre, batch)
}

/// Minibatch gradient descent over prepared samples; returns the parameters
/// with the best validation loss (final parameters when `val` is empty).
pub fn train_on_samples(
    config: &TrainConfig,
    inputs: &ModelInputs,
    train: &[Sample],
    val: &[Sample],
) -> Result<(ResidualParams, TrainStats)> {
    fit::<ResidualParams>(config, inputs, train, val)
}

/// End-to-end training for a route list whose split indices were computed by
/// the experiment layer. The theory route per sample is computed once and
/// cached.
pub fn train(
    config: &TrainConfig,
    routes: &[Route],
    train_idx: &[usize],
    val_idx: &[usize],
    net: &RoadNetwork,
    traffic: &TrafficTensor,
) -> Result<(ResidualParams, TrainStats)> {
    let inputs = ModelInputs::new(net, traffic)?;
    let pick = |idx: &[usize]| -> Vec<Route> { idx.iter().map(|&i| routes[i].clone()).collect() };
    let train_samples = build_samples(net, traffic, &inputs, &pick(train_idx))?;
    let val_samples = build_samples(net, traffic, &inputs, &pick(val_idx))?;
    train_on_samples(config, &inputs, &train_samples, &val_samples)
}

/// Inference: A* route, residual correction, then projection onto a valid
/// path.
pub fn predict(
    params: &ResidualParams,
    query: &RouteQuery,
    traffic: &TrafficTensor,
    net: &RoadNetwork,
) -> Result<Route> {
    let theory = astar(net, traffic, *query)?;
    let soft = forward(params, query, traffic, net, &theory)?;
    project(net, &soft, *query)
}

const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: `version, M, H, query_width` as little-endian u32,
/// then each layer's row-major weights and bias as little-endian f64 in
/// declaration order.
pub fn save_checkpoint(params: &ResidualParams, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 8 * params.param_count());
    for header in [
        CHECKPOINT_VERSION,
        params.segment_count as u32,
        params.hidden as u32,
        params.query_width as u32,
    ] {
        bytes.extend_from_slice(&header.to_le_bytes());
    }
    for layer in params.layers() {
        for &v in layer.w.iter().chain(&layer.b) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, net: &RoadNetwork) -> Result<ResidualParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = |detail: String| Error::Parse {
        path: path.display().to_string(),
        detail,
    };
    if bytes.len() < 16 {
        return Err(parse("truncated header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(0);
    if version != CHECKPOINT_VERSION {
        return Err(parse(format!("unsupported format version {version}")));
    }
    let m = word(1) as usize;
    let hidden = word(2) as usize;
    let qw = word(3) as usize;
    if m != net.segment_count() {
        return Err(parse(format!(
            "checkpoint was trained for {m} segments, network has {}",
            net.segment_count()
        )));
    }
    if hidden == 0 || !(4..=5).contains(&qw) {
        return Err(parse(format!("implausible header: H {hidden}, query width {qw}")));
    }
    let mut params = ResidualParams {
        query_embed: Linear::zeros(hidden, qw),
        traffic_embed: Linear::zeros(hidden, m),
        cond_embed: Linear::zeros(hidden, CONDITION_WIDTH * m),
        fusion: Linear::zeros(hidden, 3 * hidden),
        head: Linear::zeros(m, m + hidden),
        hidden,
        segment_count: m,
        query_width: qw,
    };
    let expected = 16 + 8 * params.param_count();
    if bytes.len() != expected {
        return Err(parse(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut offset = 16;
    for layer in params.layers_mut() {
        for v in layer.w.iter_mut().chain(layer.b.iter_mut()) {
            *v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_grid_city, gen_traffic, gen_routes, DriverModel};
    use crate::roadnet::is_valid_path;

    fn fixture() -> (RoadNetwork, TrafficTensor) {
        let net = gen_grid_city(2, 2, 100.0, 13).unwrap();
        let traffic = gen_traffic(&net, 4, 14);
        (net, traffic)
    }

    fn sample_query() -> RouteQuery {
        RouteQuery { origin: 0, destination: 3, departure_interval: 1 }
    }

    #[test]
    fn encode_query_normalization() {
        let net = gen_grid_city(3, 3, 100.0, 1).unwrap();
        // Bounding-box corners map to 0 and 1.
        let q = RouteQuery { origin: 0, destination: 8, departure_interval: 0 };
        assert_eq!(encode_query(&q, &net, 1).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        // The grid centroid maps to 0.5.
        let q = RouteQuery { origin: 4, destination: 0, departure_interval: 2 };
        let enc = encode_query(&q, &net, 4).unwrap();
        assert_eq!(enc.len(), 5);
        assert_eq!(&enc[..2], &[0.5, 0.5]);
        assert_eq!(enc[4], 2.0 / 3.0);
        // Independent recomputation of (x - min) / (max - min).
        let q = RouteQuery { origin: 5, destination: 7, departure_interval: 0 };
        let enc = encode_query(&q, &net, 1).unwrap();
        let node = net.intersection(5).unwrap();
        assert_eq!(enc[0], (node.x - 0.0) / 200.0);
        assert_eq!(enc[1], (node.y - 0.0) / 200.0);
    }

    #[test]
    fn zeroed_head_reproduces_theory_route() {
        let (net, traffic) = fixture();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut params = ResidualParams::init(net.segment_count(), 4, query_width(4), &mut rng);
        for w in params.head.w.iter_mut() {
            *w = 0.0;
        }
        for b in params.head.b.iter_mut() {
            *b = -30.0;
        }
        let q = sample_query();
        let theory = astar(&net, &traffic, q).unwrap();
        let soft = forward(&params, &q, &traffic, &net, &theory).unwrap();
        for (p, &on) in soft.probs().iter().zip(&theory.edges) {
            let target = if on { 1.0 } else { 0.0 };
            assert!((p - target).abs() < 1e-9, "{p} vs {target}");
        }
    }

    #[test]
    fn all_zero_params_are_maximally_uncertain() {
        let (net, traffic) = fixture();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut params = ResidualParams::init(net.segment_count(), 4, query_width(4), &mut rng);
        for layer in params.layers_mut() {
            for w in layer.w.iter_mut() {
                *w = 0.0;
            }
            for b in layer.b.iter_mut() {
                *b = 0.0;
            }
        }
        // sigma(0) = 0.5: a coin-flip disagreement probability puts every
        // edge at 0.5 regardless of the theory route.
        let q = sample_query();
        let theory = astar(&net, &traffic, q).unwrap();
        let soft = forward(&params, &q, &traffic, &net, &theory).unwrap();
        for p in soft.probs() {
            assert_eq!(*p, 0.5);
        }
    }

    /// Straight-line reimplementation of the five equations, kept independent
    /// of the layer machinery on purpose.
    fn forward_oracle(
        params: &ResidualParams,
        a: &[f64],
        v: &[f64],
        c: &[f64],
        theory: &[f64],
    ) -> Vec<f64> {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let dense = |layer: &Linear, x: &[f64]| -> Vec<f64> {
            (0..layer.out_dim)
                .map(|i| {
                    let row = &layer.w[i * layer.in_dim..(i + 1) * layer.in_dim];
                    let acc = layer.b[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                    sig(acc)
                })
                .collect()
        };
        let z1 = dense(&params.query_embed, a);
        let z2 = dense(&params.traffic_embed, v);
        let z3 = dense(&params.cond_embed, c);
        let z123: Vec<f64> = z1.iter().chain(&z2).chain(&z3).copied().collect();
        let z4 = dense(&params.fusion, &z123);
        let head_in: Vec<f64> = theory.iter().chain(&z4).copied().collect();
        let s5 = dense(&params.head, &head_in);
        s5.iter()
            .zip(theory)
            .map(|(&s, &r)| (s + r - 2.0 * s * r).clamp(0.0, 1.0))
            .collect()
    }

    #[test]
    fn forward_matches_equation_oracle() {
        let (net, traffic) = fixture();
        let inputs = ModelInputs::new(&net, &traffic).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let params = ResidualParams::init(net.segment_count(), 4, inputs.query_width(), &mut rng);
        let q = sample_query();
        let theory = astar(&net, &traffic, q).unwrap();
        let soft = forward(&params, &q, &traffic, &net, &theory).unwrap();

        let a = encode_query(&q, &net, traffic.t_total()).unwrap();
        let v = &inputs.speed_columns[q.departure_interval];
        let expected = forward_oracle(&params, &a, v, &inputs.flat_condition, &binary(&theory.edges));
        for (got, want) in soft.probs().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_perfect_and_uniform() {
        let (net, _) = fixture();
        let m = net.segment_count();
        let q = sample_query();
        let target = Route::from_edge_ids(q, &[0, 2], m).unwrap();
        let exact = SoftRoute::new(binary(&target.edges)).unwrap();
        assert!(loss(&exact, &target).unwrap() <= 1e-6);
        let uniform = SoftRoute::new(vec![0.5; m]).unwrap();
        let l = loss(&uniform, &target).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_scalar_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let m = 8;
        let probs: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let target: Vec<bool> = (0..m).map(|_| rng.gen::<bool>()).collect();
        let q = sample_query();
        let route = Route { query: q, edges: target.clone() };
        let got = loss(&SoftRoute::new(probs.clone()).unwrap(), &route).unwrap();
        let mut expected = 0.0;
        for j in 0..m {
            let y = if target[j] { 1.0 } else { 0.0 };
            let p = probs[j].clamp(1e-7, 1.0 - 1e-7);
            expected += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        }
        expected /= m as f64;
        assert!((got - expected).abs() < 1e-12);
    }

    fn fd_setup() -> (RoadNetwork, TrafficTensor, ModelInputs, ResidualParams, Vec<Sample>) {
        let net = gen_grid_city(2, 2, 100.0, 13).unwrap();
        let traffic = gen_traffic(&net, 4, 14);
        let inputs = ModelInputs::new(&net, &traffic).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let params = ResidualParams::init(net.segment_count(), 4, inputs.query_width(), &mut rng);
        let driver = DriverModel { alpha_cond: 40.0, noise_scale: 1.0, seed: 7, ..DriverModel::default() };
        let routes = gen_routes(&net, &traffic, &driver, 6, 8).unwrap();
        let samples = build_samples(&net, &traffic, &inputs, &routes).unwrap();
        (net, traffic, inputs, params, samples)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (_, _, inputs, params, samples) = fd_setup();
        let batch: Vec<&Sample> = samples.iter().collect();
        let cond_pre = params.cond_preactivation(&inputs);
        let grads = backward(&params, &inputs, &cond_pre, &batch);

        let grad_flat: Vec<f64> = grads
            .layers()
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied().collect::<Vec<_>>())
            .collect();
        let eps = 1e-4;
        // Spot-check a spread of parameters here; the acceptance suite sweeps
        // all of them.
        let count = params.param_count();
        for k in (0..count).step_by(97) {
            let mut plus = params.clone();
            plus.nudge(k, eps);
            let mut minus = params.clone();
            minus.nudge(k, -eps);
            let pre_p = plus.cond_preactivation(&inputs);
            let pre_m = minus.cond_preactivation(&inputs);
            let numeric =
                (mean_loss(&plus, &inputs, &pre_p, &batch) - mean_loss(&minus, &inputs, &pre_m, &batch))
                    / (2.0 * eps);
            let analytic = grad_flat[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
            assert!(rel < 1e-4, "param {k}: analytic {analytic}, numeric {numeric}");
        }
    }

    #[test]
    fn clamped_output_kills_head_gradient_row() {
        let (_, _, inputs, mut params, samples) = fd_setup();
        // Saturate the head on one theory edge so its probability falls
        // below the loss clamp; the whole gradient row must vanish.
        let sample = samples
            .iter()
            .find(|s| s.theory.contains(&1.0))
            .unwrap()
            .clone();
        let j = sample.theory.iter().position(|&t| t == 1.0).unwrap();
        params.head.b[j] = 30.0;
        let cond_pre = params.cond_preactivation(&inputs);
        let grads = backward(&params, &inputs, &cond_pre, &[&sample]);
        let row = &grads.head.w[j * grads.head.in_dim..(j + 1) * grads.head.in_dim];
        assert!(row.iter().all(|&g| g == 0.0));
        assert_eq!(grads.head.b[j], 0.0);
    }

    #[test]
    fn duplicated_sample_keeps_mean_gradient() {
        let (_, _, inputs, params, samples) = fd_setup();
        let cond_pre = params.cond_preactivation(&inputs);
        let single = backward(&params, &inputs, &cond_pre, &[&samples[0]]);
        let doubled = backward(&params, &inputs, &cond_pre, &[&samples[0], &samples[0]]);
        for (a, b) in single.layers().iter().zip(doubled.layers().iter()) {
            for (x, y) in a.w.iter().zip(&b.w) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_lr_zero_is_identity() {
        let (_, _, inputs, _, samples) = fd_setup();
        let config = TrainConfig { epochs: 3, seed: 42, hidden_width: 4, ..TrainConfig::default() };
        let (a, _) = train_on_samples(&config, &inputs, &samples, &samples[..2]).unwrap();
        let (b, _) = train_on_samples(&config, &inputs, &samples, &samples[..2]).unwrap();
        assert_eq!(a, b);

        let frozen = TrainConfig { learning_rate: 0.0, ..config };
        let (c, stats) = train_on_samples(&frozen, &inputs, &samples, &[]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let init = ResidualParams::init(inputs.segment_count, 4, inputs.query_width(), &mut rng);
        assert_eq!(c, init);
        assert_eq!(stats.train_loss.last().copied(), Some(stats.initial_train_loss));
    }

    #[test]
    fn empty_train_split_is_config_error() {
        let (_, _, inputs, _, samples) = fd_setup();
        let config = TrainConfig::default();
        let err = train_on_samples(&config, &inputs, &[], &samples).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn predict_with_zeroed_head_equals_astar() {
        let (net, traffic) = fixture();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut params = ResidualParams::init(net.segment_count(), 4, query_width(4), &mut rng);
        for w in params.head.w.iter_mut() {
            *w = 0.0;
        }
        for b in params.head.b.iter_mut() {
            *b = -30.0;
        }
        for (o, d) in [(0usize, 3usize), (1, 2), (3, 0)] {
            let q = RouteQuery { origin: o, destination: d, departure_interval: 2 };
            let predicted = predict(&params, &q, &traffic, &net).unwrap();
            let theory = astar(&net, &traffic, q).unwrap();
            assert_eq!(predicted.edges, theory.edges);
            assert!(is_valid_path(&net, &predicted).unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let (net, traffic) = fixture();
        let inputs = ModelInputs::new(&net, &traffic).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let params = ResidualParams::init(net.segment_count(), 4, inputs.query_width(), &mut rng);
        let dir = std::env::temp_dir().join(format!("routelearn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path, &net).unwrap();
        assert_eq!(params, loaded);

        let other = gen_grid_city(3, 3, 100.0, 1).unwrap();
        assert!(matches!(load_checkpoint(&path, &other), Err(Error::Parse { .. })));
        std::fs::remove_dir_all(&dir).ok();
    }
}
