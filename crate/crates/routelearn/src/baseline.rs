//! Plain data-driven baseline: the same query, traffic, and condition
//! embeddings as the residual model, with the theory-route concatenation and
//! the residual add removed. The two fully connected layers after the
//! embeddings use ReLU for the fusion and a sigmoid output for the per-edge
//! probabilities. Shares the loss and the minibatch trainer with the
//! residual model.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::model::{
    encode_query, fit, sigmoid, Linear, ModelInputs, Sample, SoftRoute, TrainConfig, TrainStats,
    TrainableNet, LOSS_CLAMP,
};
use crate::roadnet::{RoadNetwork, RouteQuery, CONDITION_WIDTH};
use crate::traffic::TrafficTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub query_embed: Linear,   // H x query_width
    pub traffic_embed: Linear, // H x M
    pub cond_embed: Linear,    // H x (100 * M)
    pub fusion: Linear,        // H x 3H, ReLU
    pub out: Linear,           // M x H, sigmoid
    pub hidden: usize,
    pub segment_count: usize,
    pub query_width: usize,
}

struct BaselineForward {
    z1: Vec<f64>,
    z2: Vec<f64>,
    z3: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl BaselineParams {
    pub fn init(segment_count: usize, hidden: usize, query_width: usize, rng: &mut ChaCha20Rng) -> Self {
        BaselineParams {
            query_embed: Linear::init(hidden, query_width, rng),
            traffic_embed: Linear::init(hidden, segment_count, rng),
            cond_embed: Linear::init(hidden, CONDITION_WIDTH * segment_count, rng),
            fusion: Linear::init(hidden, 3 * hidden, rng),
            out: Linear::init(segment_count, hidden, rng),
            hidden,
            segment_count,
            query_width,
        }
    }

    fn forward_parts(&self, inputs: &ModelInputs, cond_pre: &[f64], sample: &Sample) -> BaselineForward {
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
        let hidden: Vec<f64> = self.fusion.affine(&fused_in).into_iter().map(|u| u.max(0.0)).collect();
        let probs: Vec<f64> = self.out.affine(&hidden).into_iter().map(sigmoid).collect();
        BaselineForward {
            z1,
            z2,
            z3,
            hidden,
            probs,
        }
    }
}

impl TrainableNet for BaselineParams {
    fn init_for(inputs: &ModelInputs, hidden: usize, rng: &mut ChaCha20Rng) -> Self {
        BaselineParams::init(inputs.segment_count, hidden, inputs.query_width(), rng)
    }

    fn constant_pre(&self, inputs: &ModelInputs) -> Vec<f64> {
        self.cond_embed.affine(&inputs.flat_condition)
    }

    fn probs(&self, inputs: &ModelInputs, pre: &[f64], sample: &Sample) -> Vec<f64> {
        self.forward_parts(inputs, pre, sample).probs
    }

    fn batch_grads(&self, inputs: &ModelInputs, pre: &[f64], batch: &[&Sample]) -> Self {
        let m = self.segment_count;
        let h = self.hidden;
        let mut grads = self.zeroed();
        let mut cond_delta_sum = vec![0.0; h];

        for sample in batch {
            let fwd = self.forward_parts(inputs, pre, sample);
            // Sigmoid output with cross-entropy: the output delta collapses
            // to (p - y) / M inside the loss clamp, zero outside it.
            let delta_out: Vec<f64> = fwd
                .probs
                .iter()
                .zip(&sample.target)
                .map(|(&p, &y)| {
                    if p <= LOSS_CLAMP || p >= 1.0 - LOSS_CLAMP {
                        0.0
                    } else {
                        (p - y) / m as f64
                    }
                })
                .collect();
            grads.out.accumulate_outer(&delta_out, &fwd.hidden);

            let g_hidden = self.out.backprop_input(&delta_out);
            let delta_hidden: Vec<f64> = g_hidden
                .iter()
                .zip(&fwd.hidden)
                .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
                .collect();
            let mut fused_in = Vec::with_capacity(3 * h);
            fused_in.extend_from_slice(&fwd.z1);
            fused_in.extend_from_slice(&fwd.z2);
            fused_in.extend_from_slice(&fwd.z3);
            grads.fusion.accumulate_outer(&delta_hidden, &fused_in);

            let g_fused = self.fusion.backprop_input(&delta_hidden);
            let delta1: Vec<f64> = (0..h).map(|k| g_fused[k] * fwd.z1[k] * (1.0 - fwd.z1[k])).collect();
            let delta2: Vec<f64> = (0..h)
                .map(|k| g_fused[h + k] * fwd.z2[k] * (1.0 - fwd.z2[k]))
                .collect();
            for k in 0..h {
                cond_delta_sum[k] += g_fused[2 * h + k] * fwd.z3[k] * (1.0 - fwd.z3[k]);
            }
            grads.query_embed.accumulate_outer(&delta1, &sample.query_encoding);
            grads
                .traffic_embed
                .accumulate_outer(&delta2, &inputs.speed_columns[sample.interval]);
        }
        grads.cond_embed.accumulate_outer(&cond_delta_sum, &inputs.flat_condition);

        let scale = 1.0 / batch.len() as f64;
        grads.query_embed.scale(scale);
        grads.traffic_embed.scale(scale);
        grads.cond_embed.scale(scale);
        grads.fusion.scale(scale);
        grads.out.scale(scale);
        grads
    }

    fn step(&mut self, velocity: &mut Self, grads: &Self, lr: f64, momentum: f64) {
        self.query_embed.sgd_step(&mut velocity.query_embed, &grads.query_embed, lr, momentum);
        self.traffic_embed.sgd_step(&mut velocity.traffic_embed, &grads.traffic_embed, lr, momentum);
        self.cond_embed.sgd_step(&mut velocity.cond_embed, &grads.cond_embed, lr, momentum);
        self.fusion.sgd_step(&mut velocity.fusion, &grads.fusion, lr, momentum);
        self.out.sgd_step(&mut velocity.out, &grads.out, lr, momentum);
    }

    fn zeroed(&self) -> Self {
        BaselineParams {
            query_embed: Linear::zeros(self.hidden, self.query_width),
            traffic_embed: Linear::zeros(self.hidden, self.segment_count),
            cond_embed: Linear::zeros(self.hidden, CONDITION_WIDTH * self.segment_count),
            fusion: Linear::zeros(self.hidden, 3 * self.hidden),
            out: Linear::zeros(self.segment_count, self.hidden),
            ..*self
        }
    }
}

pub fn train_baseline_on_samples(
    config: &TrainConfig,
    inputs: &ModelInputs,
    train: &[Sample],
    val: &[Sample],
) -> Result<(BaselineParams, TrainStats)> {
    fit::<BaselineParams>(config, inputs, train, val)
}

/// Soft route for one query from the trained baseline.
pub fn forward_baseline(
    params: &BaselineParams,
    query: &RouteQuery,
    traffic: &TrafficTensor,
    net: &RoadNetwork,
) -> Result<SoftRoute> {
    let inputs = ModelInputs::new(net, traffic)?;
    if params.segment_count != inputs.segment_count || params.query_width != inputs.query_width() {
        return Err(Error::Dimension {
            expected: inputs.segment_count,
            got: params.segment_count,
            context: "baseline model vs network",
        });
    }
    net.validate_query(query, traffic.t_total())?;
    let sample = Sample {
        query: *query,
        query_encoding: encode_query(query, net, traffic.t_total())?,
        interval: query.departure_interval,
        theory: vec![0.0; params.segment_count],
        target: vec![0.0; params.segment_count],
    };
    let pre = params.constant_pre(&inputs);
    SoftRoute::new(params.probs(&inputs, &pre, &sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_grid_city, gen_routes, gen_traffic, DriverModel};
    use crate::model::{build_samples, mean_loss};
    use rand::SeedableRng;

    fn setup() -> (ModelInputs, BaselineParams, Vec<Sample>) {
        let net = gen_grid_city(2, 2, 100.0, 13).unwrap();
        let traffic = gen_traffic(&net, 4, 14);
        let inputs = ModelInputs::new(&net, &traffic).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(55);
        let params = BaselineParams::init(net.segment_count(), 4, inputs.query_width(), &mut rng);
        let driver = DriverModel { alpha_cond: 40.0, noise_scale: 1.0, seed: 7, ..DriverModel::default() };
        let routes = gen_routes(&net, &traffic, &driver, 6, 8).unwrap();
        let samples = build_samples(&net, &traffic, &inputs, &routes).unwrap();
        (inputs, params, samples)
    }

    #[test]
    fn baseline_gradients_match_finite_differences() {
        let (inputs, params, samples) = setup();
        let batch: Vec<&Sample> = samples.iter().collect();
        let pre = params.constant_pre(&inputs);
        let grads = params.batch_grads(&inputs, &pre, &batch);

        let flat = |p: &BaselineParams| -> Vec<f64> {
            [&p.query_embed, &p.traffic_embed, &p.cond_embed, &p.fusion, &p.out]
                .iter()
                .flat_map(|l| l.w.iter().chain(&l.b).copied().collect::<Vec<_>>())
                .collect()
        };
        let grad_flat = flat(&grads);
        let base_flat = flat(&params);
        let eps = 1e-4;
        let rebuild = |values: &[f64]| -> BaselineParams {
            let mut p = params.clone();
            let mut it = values.iter().copied();
            for layer in [
                &mut p.query_embed,
                &mut p.traffic_embed,
                &mut p.cond_embed,
                &mut p.fusion,
                &mut p.out,
            ] {
                for w in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                    *w = it.next().unwrap();
                }
            }
            p
        };
        for k in (0..base_flat.len()).step_by(131) {
            let mut plus = base_flat.clone();
            plus[k] += eps;
            let mut minus = base_flat.clone();
            minus[k] -= eps;
            let p_plus = rebuild(&plus);
            let p_minus = rebuild(&minus);
            let lp = mean_loss(&p_plus, &inputs, &p_plus.constant_pre(&inputs), &batch);
            let lm = mean_loss(&p_minus, &inputs, &p_minus.constant_pre(&inputs), &batch);
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = grad_flat[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
            assert!(rel < 1e-4, "param {k}: analytic {analytic}, numeric {numeric}");
        }
    }

    #[test]
    fn baseline_training_reduces_loss_deterministically() {
        let (inputs, _, samples) = setup();
        let config = TrainConfig { epochs: 20, seed: 3, hidden_width: 8, ..TrainConfig::default() };
        let (a, stats_a) = train_baseline_on_samples(&config, &inputs, &samples, &[]).unwrap();
        let (b, _) = train_baseline_on_samples(&config, &inputs, &samples, &[]).unwrap();
        assert_eq!(a, b);
        assert!(stats_a.train_loss.last().unwrap() < &stats_a.initial_train_loss);
    }
}
