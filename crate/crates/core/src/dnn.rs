//! Feed-forward regression network: sigmoid hidden layers, one linear
//! output, trained with Levenberg–Marquardt on standardized data.
//!
//! Parameters are kept flat, layer by layer, each layer as its weight
//! matrix (row-major, `out × in`) followed by its bias vector. Residuals
//! are `target − output` on the standardized target scale.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lm::{self, LeastSquaresProblem, LmConfig, LmOutcome};
use crate::metrics::{full_report, MetricsReport};
use crate::regression::{fit_columns, standardize, Standardization};
use crate::{ChannelSet, Dataset, Error, Result, SampleRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnnStandardization {
    pub inputs: Vec<Standardization>,
    pub target: Standardization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "DnnRepr", try_from = "DnnRepr")]
pub struct DnnModel {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    pub channels: Option<ChannelSet>,
    pub standardization: DnnStandardization,
    pub seed: u64,
    pub training_metrics: Option<MetricsReport>,
}

#[derive(Serialize, Deserialize)]
struct DnnRepr {
    channels: Option<ChannelSet>,
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    standardization: DnnStandardization,
    seed: u64,
    training_metrics: Option<MetricsReport>,
}

impl From<DnnModel> for DnnRepr {
    fn from(m: DnnModel) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..m.n_layers() {
            let (fan_in, fan_out) = (m.layer_sizes[l], m.layer_sizes[l + 1]);
            let (w, b) = m.layer(l);
            weights.push(w.chunks(fan_in).map(<[f64]>::to_vec).collect());
            debug_assert_eq!(b.len(), fan_out);
            biases.push(b.to_vec());
        }
        DnnRepr {
            channels: m.channels,
            layer_sizes: m.layer_sizes,
            weights,
            biases,
            standardization: m.standardization,
            seed: m.seed,
            training_metrics: m.training_metrics,
        }
    }
}

impl TryFrom<DnnRepr> for DnnModel {
    type Error = Error;

    fn try_from(r: DnnRepr) -> Result<Self> {
        check_sizes(&r.layer_sizes)?;
        let bad = || Error::InvalidInput("dnn weight shapes do not chain".into());
        if r.weights.len() != r.layer_sizes.len() - 1 || r.biases.len() != r.weights.len() {
            return Err(bad());
        }
        let mut params: Vec<f64> = Vec::new();
        for (l, (w, b)) in r.weights.iter().zip(&r.biases).enumerate() {
            let (fan_in, fan_out) = (r.layer_sizes[l], r.layer_sizes[l + 1]);
            if w.len() != fan_out || w.iter().any(|row| row.len() != fan_in) || b.len() != fan_out {
                return Err(bad());
            }
            params.extend(w.iter().flatten());
            params.extend(b);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite dnn parameter".into()));
        }
        if r.standardization.inputs.len() != r.layer_sizes[0] {
            return Err(Error::InvalidInput("standardization length mismatch".into()));
        }
        for s in r.standardization.inputs.iter().chain([&r.standardization.target]) {
            s.check()?;
        }
        Ok(DnnModel {
            layer_sizes: r.layer_sizes,
            params,
            channels: r.channels,
            standardization: r.standardization,
            seed: r.seed,
            training_metrics: r.training_metrics,
        })
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument("layer sizes must be at least 1 each, with input and output".into()));
    }
    if *sizes.last().unwrap() != 1 {
        return Err(Error::InvalidArgument("output layer must have size 1".into()));
    }
    Ok(())
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Builds a network with weights and biases drawn uniformly from
/// `[−1/√fan_in, 1/√fan_in]`, deterministic per seed. Standardization
/// starts as the identity.
pub fn init_network(layer_sizes: &[usize], seed: u64) -> Result<DnnModel> {
    check_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(param_count(layer_sizes));
    for w in layer_sizes.windows(2) {
        let bound = 1.0 / (w[0] as f64).sqrt();
        for _ in 0..(w[0] * w[1] + w[1]) {
            params.push(rng.random_range(-bound..=bound));
        }
    }
    Ok(DnnModel {
        layer_sizes: layer_sizes.to_vec(),
        params,
        channels: None,
        standardization: DnnStandardization {
            inputs: vec![Standardization::IDENTITY; layer_sizes[0]],
            target: Standardization::IDENTITY,
        },
        seed,
        training_metrics: None,
    })
}

impl DnnModel {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.layer_sizes[..=layer])
    }

    /// Weights (row-major, `out × in`) and biases of a layer.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let start = self.offset(l);
        let (w, rest) = self.params[start..].split_at(fan_in * fan_out);
        (w, &rest[..fan_out])
    }

    /// Weight matrix shape `(out, in)` of each layer.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_sizes.windows(2).map(|w| (w[1], w[0])).collect()
    }

    /// Output on the standardized scale, with every layer's activations.
    fn forward_std(&self, params: &[f64], z: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let mut acts = Vec::with_capacity(self.layer_sizes.len());
        acts.push(z.to_vec());
        let mut offset = 0;
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &params[offset..offset + fan_in * fan_out];
            let b = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let input = &acts[l];
            let out: Vec<f64> = (0..fan_out)
                .map(|k| {
                    let pre = b[k]
                        + w[k * fan_in..(k + 1) * fan_in]
                            .iter()
                            .zip(input)
                            .map(|(a, x)| a * x)
                            .sum::<f64>();
                    if l == last {
                        pre
                    } else {
                        sigmoid(pre)
                    }
                })
                .collect();
            acts.push(out);
        }
        (acts[acts.len() - 1][0], acts)
    }

    /// `∂output/∂θ` for one standardized input, by reverse accumulation.
    fn output_gradient(&self, params: &[f64], z: &[f64]) -> Vec<f64> {
        let (_, acts) = self.forward_std(params, z);
        let mut grad = vec![0.0; params.len()];
        // delta holds ∂output/∂pre-activation of the current layer
        let mut delta = vec![1.0];
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let start = param_count(&self.layer_sizes[..=l]);
            let input = &acts[l];
            for k in 0..fan_out {
                for j in 0..fan_in {
                    grad[start + k * fan_in + j] = delta[k] * input[j];
                }
                grad[start + fan_in * fan_out + k] = delta[k];
            }
            if l > 0 {
                let w = &params[start..start + fan_in * fan_out];
                delta = (0..fan_in)
                    .map(|j| {
                        let back: f64 = (0..fan_out).map(|k| w[k * fan_in + j] * delta[k]).sum();
                        let a = input[j];
                        back * a * (1.0 - a)
                    })
                    .collect();
            }
        }
        grad
    }

    /// Estimated glucose in mg/dl for a raw channel vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let z = standardize(x, &self.standardization.inputs)?;
        let (out, _) = self.forward_std(&self.params, &z);
        Ok(self.standardization.target.invert(out))
    }

    pub fn predict_volts(&self, volts: [f64; 3]) -> Result<f64> {
        let channels = self
            .channels
            .ok_or_else(|| Error::InvalidInput("network has no channel set".into()))?;
        self.forward(&channels.select(volts))
    }

    pub fn predict_record(&self, record: &SampleRecord) -> Result<f64> {
        self.predict_volts(record.volts())
    }
}

/// Residuals of a network over a batch of standardized samples.
pub struct Batch<'a> {
    model: &'a DnnModel,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl<'a> Batch<'a> {
    /// Standardizes raw inputs and targets with the model's parameters.
    pub fn new(model: &'a DnnModel, inputs: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        let inputs = inputs
            .iter()
            .map(|x| standardize(x, &model.standardization.inputs))
            .collect::<Result<Vec<_>>>()?;
        let targets = targets
            .iter()
            .map(|t| model.standardization.target.apply(*t))
            .collect();
        Ok(Batch {
            model,
            inputs,
            targets,
        })
    }
}

impl LeastSquaresProblem for Batch<'_> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn residuals(&self, params: &[f64]) -> Vec<f64> {
        self.inputs
            .iter()
            .zip(&self.targets)
            .map(|(z, t)| t - self.model.forward_std(params, z).0)
            .collect()
    }

    fn jacobian(&self, params: &[f64]) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = self
            .inputs
            .par_iter()
            .map(|z| self.model.output_gradient(params, z))
            .collect();
        let n = params.len();
        DMatrix::from_fn(rows.len(), n, |i, j| -rows[i][j])
    }
}

/// Residual Jacobian `∂(target − output)/∂θ` on the standardized scale,
/// one row per sample.
pub fn jacobian(model: &DnnModel, inputs: &[Vec<f64>], targets: &[f64]) -> Result<DMatrix<f64>> {
    let batch = Batch::new(model, inputs, targets)?;
    Ok(batch.jacobian(&model.params))
}

#[derive(Clone, Debug)]
pub struct TrainedDnn {
    pub model: DnnModel,
    pub outcome: LmOutcome,
}

/// Runs Levenberg–Marquardt from `model`'s current parameters, keeping its
/// standardization. Returns the best parameters seen.
pub fn train_lm(model: &DnnModel, inputs: &[Vec<f64>], targets: &[f64], cfg: &LmConfig) -> Result<TrainedDnn> {
    if inputs.len() * 5 <= model.n_params() {
        tracing::warn!(
            samples = inputs.len(),
            params = model.n_params(),
            "few samples for the network size"
        );
    }
    let batch = Batch::new(model, inputs, targets)?;
    let outcome = lm::minimize(&batch, &model.params, cfg)?;
    if outcome.diverged() {
        tracing::warn!(iterations = outcome.iterations, "LM damping overflow; returning best parameters");
    }
    let mut trained = model.clone();
    trained.params = outcome.params.clone();
    Ok(TrainedDnn {
        model: trained,
        outcome,
    })
}

/// Standardizes the training data, initialises a network with the given
/// hidden sizes from `cfg.seed` and trains it.
pub fn fit_dnn(train: &Dataset, channels: ChannelSet, hidden: &[usize], cfg: &LmConfig) -> Result<TrainedDnn> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs = train.inputs(channels);
    let targets = train.targets();
    let mut sizes = vec![channels.len()];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    let mut model = init_network(&sizes, cfg.seed)?;
    model.channels = Some(channels);
    model.standardization = DnnStandardization {
        inputs: fit_columns(&inputs, channels.len())?,
        target: Standardization::fit(targets.iter().copied(), "target")?,
    };
    let mut trained = train_lm(&model, &inputs, &targets, cfg)?;
    let fitted = inputs
        .iter()
        .map(|x| trained.model.forward(x))
        .collect::<Result<Vec<_>>>()?;
    trained.model.training_metrics = full_report(&targets, &fitted).ok();
    Ok(trained)
}

/// Parses hidden layer sizes such as `10` or `10,10,10`.
pub fn parse_hidden(spec: &str) -> Result<Vec<usize>> {
    let sizes = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad layer list {spec:?}")))?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("bad layer list {spec:?}")));
    }
    Ok(sizes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_network(&[3, 10, 1], 7).unwrap();
        let b = init_network(&[3, 10, 1], 7).unwrap();
        let bytes = |m: &DnnModel| m.params().iter().flat_map(|p| p.to_le_bytes()).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(a.weight_shapes(), vec![(10, 3), (1, 10)]);
        assert_eq!(a.n_params(), 10 * 3 + 10 + 10 + 1);
        let c = init_network(&[3, 10, 1], 8).unwrap();
        assert!(a.params().iter().zip(c.params()).any(|(x, y)| x != y));
        let bound = 1.0 / 3f64.sqrt();
        let (w0, _) = a.layer(0);
        assert!(w0.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(init_network(&[3], 0).is_err());
        assert!(init_network(&[3, 0, 1], 0).is_err());
        assert!(init_network(&[3, 4, 2], 0).is_err());
    }

    #[test]
    fn zero_network_outputs_target_mean() {
        let mut m = init_network(&[3, 5, 1], 1).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        m.standardization.target = Standardization { mean: 140.0, std: 50.0 };
        assert_eq!(m.forward(&[3.7, 2.0, 1.2]).unwrap(), 140.0);
        let j = jacobian(&m, &[vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.5]], &[150.0, 120.0]).unwrap();
        let last = m.n_params() - 1;
        assert_eq!(j[(0, last)], -1.0);
        assert_eq!(j[(1, last)], -1.0);
        assert_eq!(j.shape(), (2, m.n_params()));
    }

    #[test]
    fn single_hidden_neuron_by_hand() {
        let mut m = init_network(&[1, 1, 1], 0).unwrap();
        // w1 = 0.7, b1 = -0.2, w2 = 1.5, b2 = 0.3
        m.params_mut().copy_from_slice(&[0.7, -0.2, 1.5, 0.3]);
        let x = 0.9;
        let hidden = 1.0 / (1.0 + (-(0.7 * x - 0.2f64)).exp());
        let expected = 1.5 * hidden + 0.3;
        assert!((m.forward(&[x]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn saturated_inputs_stay_finite() {
        let mut m = init_network(&[3, 10, 1], 3).unwrap();
        m.standardization.inputs = vec![Standardization { mean: 3.7, std: 0.2 }; 3];
        for scale in [-10.0, 10.0] {
            let out = m.forward(&[3.7 * scale, 2.0 * scale, 1.2 * scale]).unwrap();
            assert!(out.is_finite());
        }
    }

    #[test]
    fn arity_mismatch() {
        let m = init_network(&[3, 4, 1], 0).unwrap();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::ArityMismatch { .. })));
    }

    #[test]
    fn parses_hidden_lists() {
        assert_eq!(parse_hidden("10").unwrap(), vec![10]);
        assert_eq!(parse_hidden("10,10,10").unwrap(), vec![10, 10, 10]);
        assert!(parse_hidden("10,,3").is_err());
        assert!(parse_hidden("0").is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = init_network(&[2, 3, 1], 4).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"weights\":[[["));
        let back: DnnModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
