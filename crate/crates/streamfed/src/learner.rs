//! Synthetic classification task and the local full-batch learner.
//!
//! Features are drawn from an isotropic Gaussian around per-class means. The
//! classifier is a single-hidden-layer tanh network with a softmax head,
//! trained by `E` steps of full-batch gradient descent; a client's upload is
//! the accumulated negative gradient sum, which equals the parameter
//! difference divided by the local learning rate.

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// One labeled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// Synthetic-task parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub feature_dim: usize,
    /// Isotropic noise level around the class means. Class means are
    /// standard-normal draws, so at the default dimension the typical mean
    /// separation is a few units; sigma near one keeps the best attainable
    /// accuracy around 0.95, leaving headroom for policy-induced differences.
    pub noise_sigma: f64,
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidParameter("feature_dim must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Gaussian-mixture classification task with one mean per class.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_means: Vec<Vec<f64>>,
    pub noise_sigma: f64,
}

impl SyntheticTask {
    /// Draws pairwise-distinct class means from a standard normal.
    pub fn build(rng: &mut SimRng, num_classes: usize, config: &TaskConfig) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::InvalidParameter("need at least 2 classes".into()));
        }
        let class_means: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| {
                (0..config.feature_dim)
                    .map(|_| StandardNormal.sample(rng))
                    .collect()
            })
            .collect();
        for a in 0..num_classes {
            for b in a + 1..num_classes {
                if class_means[a] == class_means[b] {
                    return Err(Error::InvalidParameter(format!(
                        "class means {a} and {b} coincide"
                    )));
                }
            }
        }
        Ok(Self {
            num_classes,
            feature_dim: config.feature_dim,
            class_means,
            noise_sigma: config.noise_sigma,
        })
    }

    /// Samples a feature vector for `label`: class mean plus isotropic noise.
    pub fn sample_item(&self, rng: &mut SimRng, label: usize) -> Result<Vec<f64>> {
        if label >= self.num_classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} out of range for {} classes",
                self.num_classes
            )));
        }
        let mean = &self.class_means[label];
        Ok(mean
            .iter()
            .map(|&m| {
                let noise: f64 = StandardNormal.sample(rng);
                m + self.noise_sigma * noise
            })
            .collect())
    }

    /// Builds a test set balanced over `classes` (counts within one of each
    /// other), with features drawn from the class mixture.
    pub fn make_test_set(
        &self,
        rng: &mut SimRng,
        classes: &[usize],
        size: usize,
    ) -> Result<Vec<Example>> {
        if classes.is_empty() {
            return Err(Error::InvalidParameter("no classes for test set".into()));
        }
        (0..size)
            .map(|i| {
                let label = classes[i % classes.len()];
                Ok(Example::new(self.sample_item(rng, label)?, label))
            })
            .collect()
    }
}

/// Layer sizes of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn param_len(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.classes + self.classes
    }
}

/// Flat parameter vector of the input -> hidden(tanh) -> softmax network.
///
/// Layout: `w1[input][hidden] | b1[hidden] | w2[hidden][classes] | b2[classes]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            values: vec![0.0; dims.param_len()],
            dims,
        }
    }

    /// Scaled-uniform fan-in initialization: each layer's weights are drawn
    /// from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases start at zero.
    pub fn init(rng: &mut SimRng, dims: ModelDims) -> Self {
        let mut params = Self::zeros(dims);
        let bound1 = 1.0 / (dims.input as f64).sqrt();
        let bound2 = 1.0 / (dims.hidden as f64).sqrt();
        {
            let (w1, _, w2, _) = params.split_mut();
            for w in w1 {
                *w = rng.gen_range(-bound1..bound1);
            }
            for w in w2 {
                *w = rng.gen_range(-bound2..bound2);
            }
        }
        params
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn from_values(dims: ModelDims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.param_len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for dims requiring {}",
                values.len(),
                dims.param_len()
            )));
        }
        Ok(Self { dims, values })
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let d = &self.dims;
        let (w1, rest) = self.values.split_at(d.input * d.hidden);
        let (b1, rest) = rest.split_at(d.hidden);
        let (w2, b2) = rest.split_at(d.hidden * d.classes);
        (w1, b1, w2, b2)
    }

    fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let d = self.dims;
        let (w1, rest) = self.values.split_at_mut(d.input * d.hidden);
        let (b1, rest) = rest.split_at_mut(d.hidden);
        let (w2, b2) = rest.split_at_mut(d.hidden * d.classes);
        (w1, b1, w2, b2)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-example forward pass: hidden activations and class probabilities.
fn forward_one(params: &ModelParams, features: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = &params.dims;
    let (w1, b1, w2, b2) = params.split();
    let mut hidden = b1.to_vec();
    for (i, &x) in features.iter().enumerate() {
        let row = &w1[i * d.hidden..(i + 1) * d.hidden];
        for (h, &w) in hidden.iter_mut().zip(row) {
            *h += x * w;
        }
    }
    for h in hidden.iter_mut() {
        *h = h.tanh();
    }
    let mut logits = b2.to_vec();
    for (h_idx, &h) in hidden.iter().enumerate() {
        let row = &w2[h_idx * d.classes..(h_idx + 1) * d.classes];
        for (z, &w) in logits.iter_mut().zip(row) {
            *z += h * w;
        }
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let norm: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= norm;
    }
    (hidden, probs)
}

/// Mean softmax cross-entropy of the model on a dataset, in nats.
pub fn forward_loss(params: &ModelParams, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut loss = 0.0;
    for ex in data {
        let (_, probs) = forward_one(params, &ex.features);
        loss += -(probs[ex.label].max(f64::MIN_POSITIVE)).ln();
    }
    Ok(loss / data.len() as f64)
}

/// Exact full-batch gradient of [`forward_loss`] with respect to the
/// parameters, same layout as the parameter vector.
pub fn gradient(params: &ModelParams, data: &[Example]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = params.dims;
    let (_, _, w2, _) = params.split();
    let mut grad = vec![0.0; d.param_len()];
    let scale = 1.0 / data.len() as f64;
    let (g_w1, rest) = grad.split_at_mut(d.input * d.hidden);
    let (g_b1, rest) = rest.split_at_mut(d.hidden);
    let (g_w2, g_b2) = rest.split_at_mut(d.hidden * d.classes);

    let mut dz = vec![0.0; d.classes];
    let mut da = vec![0.0; d.hidden];
    for ex in data {
        let (hidden, probs) = forward_one(params, &ex.features);
        for (c, (out, &p)) in dz.iter_mut().zip(&probs).enumerate() {
            *out = scale * (p - if c == ex.label { 1.0 } else { 0.0 });
        }
        for (h_idx, &h) in hidden.iter().enumerate() {
            let w_row = &w2[h_idx * d.classes..(h_idx + 1) * d.classes];
            let g_row = &mut g_w2[h_idx * d.classes..(h_idx + 1) * d.classes];
            let mut back = 0.0;
            for ((g, &w), &delta) in g_row.iter_mut().zip(w_row).zip(&dz) {
                *g += h * delta;
                back += w * delta;
            }
            da[h_idx] = back * (1.0 - h * h);
        }
        for (g, &delta) in g_b2.iter_mut().zip(&dz) {
            *g += delta;
        }
        for (i, &x) in ex.features.iter().enumerate() {
            let g_row = &mut g_w1[i * d.hidden..(i + 1) * d.hidden];
            for (g, &delta) in g_row.iter_mut().zip(&da) {
                *g += x * delta;
            }
        }
        for (g, &delta) in g_b1.iter_mut().zip(&da) {
            *g += delta;
        }
    }
    Ok(grad)
}

/// Runs `steps` full-batch gradient-descent steps from `params_init`.
///
/// Returns the final parameters and the accumulated update
/// `delta = -sum_tau g_tau`, which equals `(w_E - w_0) / eta_local` up to
/// floating-point rounding.
pub fn local_train(
    params_init: &ModelParams,
    data: &[Example],
    steps: usize,
    eta_local: f64,
) -> Result<(ModelParams, Vec<f64>)> {
    if steps == 0 {
        return Err(Error::InvalidParameter("need at least one local step".into()));
    }
    if !(eta_local > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "local learning rate must be positive, got {eta_local}"
        )));
    }
    let mut params = params_init.clone();
    let mut delta = vec![0.0; params.dims.param_len()];
    for step in 0..steps {
        let grad = gradient(&params, data)?;
        for ((w, d), &g) in params.values_mut().iter_mut().zip(delta.iter_mut()).zip(&grad) {
            *w -= eta_local * g;
            *d -= g;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite {
                context: "local gradient descent",
                step,
            });
        }
    }
    Ok((params, delta))
}

/// Fraction of test examples whose argmax prediction is correct.
/// Logit ties resolve to the lowest class index.
pub fn evaluate(params: &ModelParams, test_set: &[Example]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for ex in test_set {
        let (_, probs) = forward_one(params, &ex.features);
        let mut best = 0usize;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = c;
            }
        }
        if best == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamTag};

    fn rng(seed: u64) -> SimRng {
        substream(seed, 0, StreamTag::Task)
    }

    fn small_dims() -> ModelDims {
        ModelDims {
            input: 4,
            hidden: 6,
            classes: 3,
        }
    }

    fn random_params(seed: u64, dims: ModelDims) -> ModelParams {
        let mut r = rng(seed);
        let values = (0..dims.param_len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        ModelParams::from_values(dims, values).unwrap()
    }

    fn random_data(seed: u64, dims: ModelDims, n: usize) -> Vec<Example> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let features = (0..dims.input).map(|_| r.gen_range(-2.0..2.0)).collect();
                Example::new(features, r.gen_range(0..dims.classes))
            })
            .collect()
    }

    #[test]
    fn sample_item_zero_noise_returns_class_mean() {
        let task = SyntheticTask::build(
            &mut rng(1),
            3,
            &TaskConfig {
                feature_dim: 5,
                noise_sigma: 0.0,
            },
        )
        .unwrap();
        let x = task.sample_item(&mut rng(2), 1).unwrap();
        assert_eq!(x, task.class_means[1]);
        assert!(task.sample_item(&mut rng(2), 3).is_err());
    }

    #[test]
    fn sample_item_mean_concentrates_by_clt() {
        let sigma = 0.8;
        let task = SyntheticTask::build(
            &mut rng(3),
            2,
            &TaskConfig {
                feature_dim: 4,
                noise_sigma: sigma,
            },
        )
        .unwrap();
        let n = 10_000;
        let mut mean = vec![0.0; 4];
        let mut r = rng(4);
        for _ in 0..n {
            let x = task.sample_item(&mut r, 0).unwrap();
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        for (m, &target) in mean.iter().zip(&task.class_means[0]) {
            assert!((m / n as f64 - target).abs() < 5.0 * sigma / 100.0);
        }
    }

    #[test]
    fn nearest_mean_oracle_beats_ninety_percent_when_separated() {
        // Means pushed far apart relative to the noise.
        let mut task = SyntheticTask::build(
            &mut rng(5),
            4,
            &TaskConfig {
                feature_dim: 8,
                noise_sigma: 0.5,
            },
        )
        .unwrap();
        for (c, mean) in task.class_means.iter_mut().enumerate() {
            for m in mean.iter_mut() {
                *m *= 4.0;
            }
            mean[0] += 10.0 * c as f64;
        }
        let mut r = rng(6);
        let mut correct = 0;
        let trials = 2_000;
        for _ in 0..trials {
            let label = r.gen_range(0..4);
            let x = task.sample_item(&mut r, label).unwrap();
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = task.class_means[a]
                        .iter()
                        .zip(&x)
                        .map(|(m, v)| (m - v).powi(2))
                        .sum();
                    let db: f64 = task.class_means[b]
                        .iter()
                        .zip(&x)
                        .map(|(m, v)| (m - v).powi(2))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if nearest == label {
                correct += 1;
            }
        }
        assert!(correct as f64 / trials as f64 > 0.9);
    }

    #[test]
    fn test_set_is_balanced() {
        let task = SyntheticTask::build(
            &mut rng(7),
            5,
            &TaskConfig {
                feature_dim: 3,
                noise_sigma: 1.0,
            },
        )
        .unwrap();
        let classes = [0usize, 2, 4];
        let test = task.make_test_set(&mut rng(8), &classes, 100).unwrap();
        let mut counts = [0usize; 5];
        for ex in &test {
            counts[ex.label] += 1;
        }
        assert_eq!(counts[1], 0);
        assert_eq!(counts[3], 0);
        let present = [counts[0], counts[2], counts[4]];
        assert!(present.iter().max().unwrap() - present.iter().min().unwrap() <= 1);
    }

    #[test]
    fn zero_params_give_log_r_loss() {
        let dims = small_dims();
        let params = ModelParams::zeros(dims);
        let data = random_data(9, dims, 50);
        let loss = forward_loss(&params, &data).unwrap();
        assert!((loss - (dims.classes as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_logits_drive_loss_to_zero() {
        // A network with huge output bias on the true class approximates the
        // infinite-margin limit.
        let dims = ModelDims {
            input: 2,
            hidden: 2,
            classes: 2,
        };
        let mut params = ModelParams::zeros(dims);
        let b2_start = dims.input * dims.hidden + dims.hidden + dims.hidden * dims.classes;
        params.values_mut()[b2_start] = 50.0;
        let data = vec![Example::new(vec![0.3, -0.2], 0)];
        assert!(forward_loss(&params, &data).unwrap() < 1e-12);
    }

    #[test]
    fn one_gd_step_decreases_loss() {
        let dims = small_dims();
        let params = random_params(10, dims);
        let data = random_data(11, dims, 40);
        let before = forward_loss(&params, &data).unwrap();
        let (after_params, _) = local_train(&params, &data, 1, 1e-3).unwrap();
        let after = forward_loss(&after_params, &data).unwrap();
        assert!(after < before);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let dims = small_dims();
        let params = random_params(12, dims);
        let data = random_data(13, dims, 20);
        let grad = gradient(&params, &data).unwrap();
        let h = 1e-5;
        let mut coord_rng = rng(14);
        let mut max_rel = 0.0f64;
        for _ in 0..100 {
            let i = coord_rng.gen_range(0..dims.param_len());
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let numeric = (forward_loss(&plus, &data).unwrap()
                - forward_loss(&minus, &data).unwrap())
                / (2.0 * h);
            let denom = numeric.abs().max(grad[i].abs()).max(1e-8);
            max_rel = max_rel.max((numeric - grad[i]).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn gradient_is_invariant_to_dataset_duplication() {
        let dims = small_dims();
        let params = random_params(15, dims);
        let data = random_data(16, dims, 15);
        let doubled: Vec<Example> = data.iter().chain(&data).cloned().collect();
        let g1 = gradient(&params, &data).unwrap();
        let g2 = gradient(&params, &doubled).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_converged_point() {
        let dims = ModelDims {
            input: 2,
            hidden: 3,
            classes: 2,
        };
        // Identical features with conflicting labels put the minimum at an
        // interior point (both class probabilities 1/2), so GD converges to
        // a genuine stationary point instead of running off to infinity.
        let data = vec![
            Example::new(vec![1.0, 0.5], 0),
            Example::new(vec![1.0, 0.5], 1),
        ];
        let mut params = random_params(17, dims);
        for _ in 0..40 {
            let (p, _) = local_train(&params, &data, 50, 0.5).unwrap();
            params = p;
        }
        let g = gradient(&params, &data).unwrap();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
        let loss = forward_loss(&params, &data).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn single_step_delta_is_negative_gradient() {
        let dims = small_dims();
        let params = random_params(18, dims);
        let data = random_data(19, dims, 30);
        let g = gradient(&params, &data).unwrap();
        let (_, delta) = local_train(&params, &data, 1, 0.1).unwrap();
        for (d, &gi) in delta.iter().zip(&g) {
            assert_eq!(*d, -gi);
        }
    }

    #[test]
    fn vanishing_learning_rate_freezes_iterates() {
        let dims = small_dims();
        let params = random_params(20, dims);
        let data = random_data(21, dims, 30);
        assert!(local_train(&params, &data, 3, 0.0).is_err());
        let steps = 4;
        let (final_params, delta) = local_train(&params, &data, steps, 1e-12).unwrap();
        for (a, b) in final_params.values().iter().zip(params.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        // delta -> -E * g(w_0) in the frozen limit.
        let g = gradient(&params, &data).unwrap();
        for (d, &gi) in delta.iter().zip(&g) {
            assert!((d + steps as f64 * gi).abs() < 1e-9);
        }
    }

    #[test]
    fn delta_identities_agree() {
        let dims = small_dims();
        let eta = 0.05;
        let steps = 7;
        for seed in 0..5 {
            let params = random_params(22 + seed, dims);
            let data = random_data(40 + seed, dims, 25);
            let (final_params, delta) = local_train(&params, &data, steps, eta).unwrap();
            for ((&w_end, &w_start), &d) in final_params
                .values()
                .iter()
                .zip(params.values())
                .zip(&delta)
            {
                assert!(((w_end - w_start) / eta - d).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gd_with_small_rate_never_increases_loss() {
        let dims = small_dims();
        let params = random_params(30, dims);
        let data = random_data(31, dims, 40);
        let mut current = params;
        let mut last = forward_loss(&current, &data).unwrap();
        for _ in 0..20 {
            let (next, _) = local_train(&current, &data, 1, 5e-3).unwrap();
            let loss = forward_loss(&next, &data).unwrap();
            assert!(loss <= last + 1e-12);
            last = loss;
            current = next;
        }
    }

    #[test]
    fn evaluate_handles_perfect_and_uniform_models() {
        let dims = ModelDims {
            input: 4,
            hidden: 4,
            classes: 4,
        };
        let task = SyntheticTask::build(
            &mut rng(32),
            4,
            &TaskConfig {
                feature_dim: 4,
                noise_sigma: 1.0,
            },
        )
        .unwrap();
        let test = task
            .make_test_set(&mut rng(33), &[0, 1, 2, 3], 2_000)
            .unwrap();
        // All-zero parameters tie every logit; argmax resolves to class 0, so
        // accuracy equals the share of class-0 examples: 1/R on a balanced set.
        let acc = evaluate(&ModelParams::zeros(dims), &test).unwrap();
        let p = 0.25;
        let se = (p * (1.0 - p) / test.len() as f64).sqrt();
        assert!((acc - p).abs() <= 3.0 * se + 1.0 / test.len() as f64);

        // Train to separate a tiny deterministic set; accuracy hits 1.
        let data = vec![
            Example::new(vec![2.0, 0.0, 0.0, 0.0], 0),
            Example::new(vec![0.0, 2.0, 0.0, 0.0], 1),
            Example::new(vec![0.0, 0.0, 2.0, 0.0], 2),
            Example::new(vec![0.0, 0.0, 0.0, 2.0], 3),
        ];
        let mut params = ModelParams::init(&mut rng(34), dims);
        for _ in 0..100 {
            let (p, _) = local_train(&params, &data, 10, 0.5).unwrap();
            params = p;
        }
        assert_eq!(evaluate(&params, &data).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_invariant_under_monotone_logit_transforms() {
        // Scaling w2 and b2 by a positive constant applies a strictly
        // increasing map to every example's logits.
        let dims = small_dims();
        let params = random_params(35, dims);
        let test = random_data(36, dims, 200);
        let base = evaluate(&params, &test).unwrap();
        let mut scaled = params.clone();
        let w2_start = dims.input * dims.hidden + dims.hidden;
        for v in &mut scaled.values_mut()[w2_start..] {
            *v *= 3.0;
        }
        assert_eq!(base, evaluate(&scaled, &test).unwrap());
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let dims = small_dims();
        let a = ModelParams::init(&mut rng(37), dims);
        let b = ModelParams::init(&mut rng(37), dims);
        assert_eq!(a, b);
        assert!(a.is_finite());
    }
}
