//! MSE loss, the Adam optimizer, the early-stopped training loop, and the
//! short fine-tuning protocol.

use std::io::Write;

use ndarray::{Array, Array3, Dimension};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::FrameBatch;
use crate::error::{Error, Result};
use crate::nn::{Model, Scalar};

/// Mean squared error over all elements, plus its gradient with respect to
/// the prediction: `2 * (pred - target) / element_count`.
pub fn mse_loss<T: Scalar, D: Dimension>(
    pred: &Array<T, D>,
    target: &Array<T, D>,
) -> Result<(T, Array<T, D>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = T::from(pred.len()).unwrap();
    let mut loss = T::zero();
    let mut grad = pred.clone();
    for (g, &t) in grad.iter_mut().zip(target.iter()) {
        let d = *g - t;
        loss += d * d;
        *g = (T::one() + T::one()) * d / n;
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for AdamHyper<T> {
    fn default() -> Self {
        Self {
            beta1: T::from(0.9).unwrap(),
            beta2: T::from(0.999).unwrap(),
            epsilon: T::from(1e-8).unwrap(),
        }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_shapes(lens: &[usize]) -> Self {
        Self {
            m: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn for_model(model: &Model<T>) -> Self {
        Self::for_shapes(&model.trainable_shapes())
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update over parallel parameter/gradient slice lists. The step
/// counter increments before the update so bias correction sees `t >= 1`.
/// Non-finite gradients abort the step with the state untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: T,
    hyper: &AdamHyper<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam buffers disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads.iter()) {
        if p.len() != g.len() {
            return Err(Error::Shape("parameter/gradient slice lengths differ".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gradient; adam step aborted".into()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - hyper.beta1.powi(t);
    let bc2 = T::one() - hyper.beta2.powi(t);
    let one = T::one();

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = hyper.beta1 * m[i] + (one - hyper.beta1) * gi;
            v[i] = hyper.beta2 * v[i] + (one - hyper.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs of no validation improvement before training stops.
    pub patience: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 20,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::DegenerateInput("adam betas must lie in (0, 1)".into()));
        }
        if self.patience == 0 {
            return Err(Error::DegenerateInput("patience must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::DegenerateInput(
                "batch_size must be >= 2 (batchnorm needs batch statistics)".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::DegenerateInput("learning rate must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn hyper<T: Scalar>(&self) -> AdamHyper<T> {
        AdamHyper {
            beta1: T::from(self.beta1).unwrap(),
            beta2: T::from(self.beta2).unwrap(),
            epsilon: T::from(self.adam_epsilon).unwrap(),
        }
    }
}

/// Tracks the best validation loss and decides when patience is exhausted.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_epoch: Option<usize>,
    best_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best validation loss; caller should snapshot.
    Improved,
    Continue,
    /// `patience` epochs have passed since the best epoch.
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be >= 1");
        Self { patience, best_epoch: None, best_loss: f64::INFINITY }
    }

    /// Feed the validation loss of `epoch` (0-based, strictly increasing).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = val_loss < self.best_loss;
        if improved {
            self.best_loss = val_loss;
            self.best_epoch = Some(epoch);
            return StopDecision::Improved;
        }
        match self.best_epoch {
            Some(best) if epoch - best >= self.patience => StopDecision::Stop,
            // A NaN first loss never improves; treat epoch 0 as the anchor.
            None if epoch >= self.patience => StopDecision::Stop,
            _ => StopDecision::Continue,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub is_best: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    PatienceExhausted,
    MaxEpochsReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn best_val_mse(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.epochs[e].val_mse)
    }
}

pub const TRAIN_LOG_HEADER: &str = "epoch,train_mse,val_mse,best";

struct Dataset {
    inputs: Array3<f32>,
    targets: Array3<f32>,
}

fn dataset_from_pairs(pairs: (&FrameBatch, &FrameBatch), what: &str) -> Result<Dataset> {
    let (noisy, clean) = pairs;
    if noisy.count() == 0 || clean.count() == 0 {
        return Err(Error::EmptyInput(format!("{what} set has no frames")));
    }
    if noisy.count() != clean.count() || noisy.frame_len() != clean.frame_len() {
        return Err(Error::Shape(format!(
            "{what} pair sizes disagree: {}x{} vs {}x{}",
            noisy.count(),
            noisy.frame_len(),
            clean.count(),
            clean.frame_len()
        )));
    }
    if !noisy.normalized || !clean.normalized {
        return Err(Error::InconsistentFrames(format!(
            "{what} frames must be windowed and normalized"
        )));
    }
    let to_tensor = |batch: &FrameBatch| {
        let (n, f) = batch.frames.dim();
        let mut t = Array3::<f32>::zeros((n, 1, f));
        for i in 0..n {
            for j in 0..f {
                t[[i, 0, j]] = batch.frames[[i, j]] as f32;
            }
        }
        t
    };
    Ok(Dataset { inputs: to_tensor(noisy), targets: to_tensor(clean) })
}

fn gather(data: &Array3<f32>, idx: &[usize]) -> Array3<f32> {
    let (_, c, t) = data.dim();
    let mut out = Array3::zeros((idx.len(), c, t));
    for (row, &i) in idx.iter().enumerate() {
        out.slice_mut(ndarray::s![row, .., ..])
            .assign(&data.slice(ndarray::s![i, .., ..]));
    }
    out
}

/// One epoch of shuffled mini-batch Adam updates. Returns the
/// element-weighted mean training MSE. Trailing chunks of a single frame
/// are skipped because batchnorm cannot take statistics over one item.
fn run_epoch(
    model: &mut Model<f32>,
    data: &Dataset,
    order: &[usize],
    cfg: &TrainConfig,
    state: &mut AdamState<f32>,
) -> Result<f64> {
    let hyper = cfg.hyper::<f32>();
    let lr = cfg.learning_rate as f32;
    let mut loss_sum = 0.0f64;
    let mut elems = 0usize;
    for chunk in order.chunks(cfg.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let x = gather(&data.inputs, chunk);
        let y = gather(&data.targets, chunk);
        let (pred, tape) = model.forward_train(&x)?;
        let (loss, grad) = mse_loss(&pred, &y)?;
        let grads = model.backward(tape, &grad)?;
        {
            let mut params = model.trainable_params_mut();
            adam_step(&mut params, &grads.trainable_slices(), state, lr, &hyper)?;
        }
        loss_sum += loss as f64 * x.len() as f64;
        elems += x.len();
    }
    if elems == 0 {
        return Err(Error::EmptyInput("no trainable batch of at least 2 frames".into()));
    }
    Ok(loss_sum / elems as f64)
}

/// Full-dataset MSE in inference mode, evaluated in bounded batches.
pub fn evaluate_mse(model: &Model<f32>, data_inputs: &Array3<f32>, data_targets: &Array3<f32>) -> Result<f64> {
    let n = data_inputs.dim().0;
    let mut err_sum = 0.0f64;
    let mut elems = 0usize;
    let chunk = 256;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let x = data_inputs.slice(ndarray::s![start..end, .., ..]).to_owned();
        let y = data_targets.slice(ndarray::s![start..end, .., ..]);
        let pred = model.forward_infer(&x)?;
        for (p, t) in pred.iter().zip(y.iter()) {
            let d = (*p - *t) as f64;
            err_sum += d * d;
        }
        elems += x.len();
        start = end;
    }
    Ok(err_sum / elems as f64)
}

/// Validation MSE of a model against (noisy, clean) frame pairs.
pub fn validation_mse(model: &Model<f32>, pairs: (&FrameBatch, &FrameBatch)) -> Result<f64> {
    let data = dataset_from_pairs(pairs, "validation")?;
    evaluate_mse(model, &data.inputs, &data.targets)
}

/// Train with shuffled mini-batches and early stopping: after every epoch
/// the full validation MSE is computed in inference mode, the model is
/// snapshotted whenever it improves, and training stops once `patience`
/// epochs pass without improvement (or at `max_epochs`). Returns the
/// best snapshot.
///
/// Each epoch emits one CSV line (`epoch,train_mse,val_mse,best`) to `log`
/// when a sink is given.
pub fn train(
    model: Model<f32>,
    train_pairs: (&FrameBatch, &FrameBatch),
    val_pairs: (&FrameBatch, &FrameBatch),
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<(Model<f32>, TrainReport)> {
    cfg.validate()?;
    let train_data = dataset_from_pairs(train_pairs, "training")?;
    let val_data = dataset_from_pairs(val_pairs, "validation")?;

    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{TRAIN_LOG_HEADER}")?;
    }

    let mut model = model;
    let mut state = AdamState::for_model(&model);
    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut snapshot: Option<Model<f32>> = None;
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochsReached;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_data.inputs.dim().0).collect();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let train_mse = run_epoch(&mut model, &train_data, &order, cfg, &mut state)?;
        let val_mse = evaluate_mse(&model, &val_data.inputs, &val_data.targets)?;

        let decision = stopping.observe(epoch, val_mse);
        let is_best = decision == StopDecision::Improved;
        if is_best {
            snapshot = Some(model.clone());
        }
        records.push(EpochRecord { epoch, train_mse, val_mse, is_best });
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{epoch},{train_mse},{val_mse},{}", if is_best { 1 } else { 0 })?;
        }
        if decision == StopDecision::Stop {
            stop_reason = StopReason::PatienceExhausted;
            break;
        }
    }

    let best_epoch = stopping.best_epoch();
    let report = TrainReport { epochs: records, best_epoch, stop_reason };
    Ok((snapshot.unwrap_or(model), report))
}

/// Exactly `epochs` epochs of Adam updates with fresh optimizer state and
/// no early stopping; returns the final parameters.
pub fn finetune(
    model: Model<f32>,
    pairs: (&FrameBatch, &FrameBatch),
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<Model<f32>> {
    cfg.validate()?;
    if epochs == 0 {
        return Ok(model);
    }
    let data = dataset_from_pairs(pairs, "fine-tuning")?;
    let mut model = model;
    let mut state = AdamState::for_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..data.inputs.dim().0).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        run_epoch(&mut model, &data, &order, cfg, &mut state)?;
    }
    Ok(model)
}

/// Central-difference gradient check in the model's own precision.
/// Perturbs every trainable parameter (and every input element) by
/// `h = h_rel * (1 + |theta|)` and compares against the analytic gradients.
/// Returns the maximum relative error seen.
pub fn gradient_check<T: Scalar>(
    model: &mut Model<T>,
    input: &Array3<T>,
    target: &Array3<T>,
    h_rel: f64,
) -> Result<f64> {
    let (_, grad_pred) = {
        let (pred, _tape) = model.forward_train(input)?;
        mse_loss(&pred, target)?
    };
    let (_, tape) = model.forward_train(input)?;
    let analytic = model.backward(tape, &grad_pred)?;

    let loss_of = |m: &mut Model<T>, x: &Array3<T>| -> Result<f64> {
        let (pred, _tape) = m.forward_train(x)?;
        let (loss, _) = mse_loss(&pred, target)?;
        Ok(loss.to_f64().unwrap())
    };

    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
    let mut max_rel = 0.0f64;

    let n_slices = model.trainable_shapes().len();
    for s in 0..n_slices {
        let len = model.trainable_shapes()[s];
        for i in 0..len {
            let theta = model.trainable_params_mut()[s][i].to_f64().unwrap();
            let h = h_rel * (1.0 + theta.abs());
            let hp = T::from(theta + h).unwrap();
            let hm = T::from(theta - h).unwrap();
            // Use the actually-representable perturbations for the divisor.
            let dh = hp.to_f64().unwrap() - hm.to_f64().unwrap();

            model.trainable_params_mut()[s][i] = hp;
            let up = loss_of(model, input)?;
            model.trainable_params_mut()[s][i] = hm;
            let down = loss_of(model, input)?;
            model.trainable_params_mut()[s][i] = T::from(theta).unwrap();

            let numeric = (up - down) / dh;
            let a = analytic.trainable_slices()[s][i].to_f64().unwrap();
            max_rel = max_rel.max(rel(a, numeric));
        }
    }

    // Input gradient too.
    let mut x = input.clone();
    for idx in ndarray::indices(input.dim()) {
        let v = input[idx].to_f64().unwrap();
        let h = h_rel * (1.0 + v.abs());
        let hp = T::from(v + h).unwrap();
        let hm = T::from(v - h).unwrap();
        let dh = hp.to_f64().unwrap() - hm.to_f64().unwrap();
        x[idx] = hp;
        let up = loss_of(model, &x)?;
        x[idx] = hm;
        let down = loss_of(model, &x)?;
        x[idx] = input[idx];
        let numeric = (up - down) / dh;
        let a = analytic.input[idx].to_f64().unwrap();
        max_rel = max_rel.max(rel(a, numeric));
    }

    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{compute_norm_stats, frame_signal, FramingConfig, NormStats};
    use crate::nn::{build_model, LayerSpec, ModelSpec};
    use crate::AudioClip;
    use ndarray::{arr1, Array2};
    use rand::{Rng, SeedableRng};

    #[test]
    fn mse_identity_and_constant_offset() {
        let a = arr1(&[1.0, 2.0, 3.0]);
        let (loss, grad) = mse_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));

        let b = arr1(&[1.5, 2.5, 3.5]);
        let (loss, grad) = mse_loss(&b, &a).unwrap();
        assert!((loss - 0.25f64).abs() < 1e-15);
        for &g in grad.iter() {
            assert!((g - 2.0 * 0.5 / 3.0f64).abs() < 1e-15);
        }
    }

    #[test]
    fn mse_matches_naive_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Array2::from_shape_fn((13, 7), |_| rng.random_range(-2.0..2.0));
        let t = Array2::from_shape_fn((13, 7), |_| rng.random_range(-2.0..2.0));
        let (loss, _) = mse_loss(&p, &t).unwrap();
        let mut acc = 0.0;
        for (a, b) in p.iter().zip(t.iter()) {
            acc += (a - b) * (a - b);
        }
        acc /= p.len() as f64;
        assert!((loss - acc).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = arr1(&[1.0, 2.0]);
        let b = arr1(&[1.0, 2.0, 3.0]);
        assert!(matches!(mse_loss(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut theta = vec![1.0f64, -2.0];
        let grads = vec![0.0f64, 0.0];
        let mut state = AdamState::for_shapes(&[2]);
        adam_step(
            &mut [&mut theta],
            &[grads.as_slice()],
            &mut state,
            0.001,
            &AdamHyper::default(),
        )
        .unwrap();
        assert_eq!(theta, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_hand_evaluated() {
        // theta = 0, g = 2, lr = 0.001:
        // m_hat = 2, v_hat = 4, theta <- -0.001 * 2 / (2 + 1e-8).
        let mut theta = vec![0.0f64];
        let grads = vec![2.0f64];
        let mut state = AdamState::for_shapes(&[1]);
        adam_step(&mut [&mut theta], &[grads.as_slice()], &mut state, 0.001, &AdamHyper::default())
            .unwrap();
        let expected = -0.001 * (2.0 / (2.0 + 1e-8));
        assert!((theta[0] - expected).abs() < 1e-15, "{} vs {expected}", theta[0]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        // f(theta) = (theta - 3)^2, df = 2 (theta - 3).
        let mut theta = vec![0.0f64];
        let mut state = AdamState::for_shapes(&[1]);
        let hyper = AdamHyper::default();
        for _ in 0..200 {
            let g = vec![2.0 * (theta[0] - 3.0)];
            adam_step(&mut [&mut theta], &[g.as_slice()], &mut state, 0.1, &hyper).unwrap();
        }
        assert!((theta[0] - 3.0).abs() < 0.01, "theta {}", theta[0]);
    }

    #[test]
    fn adam_zero_learning_rate_is_identity() {
        let mut theta = vec![0.7f64, -0.3];
        let grads = vec![1.0f64, -2.0];
        let mut state = AdamState::for_shapes(&[2]);
        adam_step(&mut [&mut theta], &[grads.as_slice()], &mut state, 0.0, &AdamHyper::default())
            .unwrap();
        assert_eq!(theta, vec![0.7, -0.3]);
    }

    #[test]
    fn adam_aborts_on_non_finite_gradient() {
        let mut theta = vec![1.0f64];
        let grads = vec![f64::NAN];
        let mut state = AdamState::for_shapes(&[1]);
        let before = state.clone();
        let err = adam_step(
            &mut [&mut theta],
            &[grads.as_slice()],
            &mut state,
            0.001,
            &AdamHyper::default(),
        );
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(theta, vec![1.0]);
        assert_eq!(state.step(), before.step());
    }

    #[test]
    fn early_stopping_worsening_sequence() {
        // 21 strictly worsening losses with patience 20: epoch 0 is best,
        // training stops after exactly 21 observed epochs.
        let mut es = EarlyStopping::new(20);
        let mut epochs_run = 0;
        for epoch in 0..100 {
            epochs_run += 1;
            let decision = es.observe(epoch, 1.0 + epoch as f64);
            if decision == StopDecision::Stop {
                break;
            }
        }
        assert_eq!(epochs_run, 21);
        assert_eq!(es.best_epoch(), Some(0));
    }

    #[test]
    fn early_stopping_argmin_and_stop_epoch() {
        // Loss dips at epoch 7, then worsens.
        let losses: Vec<f64> = (0..100)
            .map(|e| if e <= 7 { 10.0 - e as f64 } else { 5.0 + e as f64 })
            .collect();
        let mut es = EarlyStopping::new(5);
        let mut stop_at = None;
        for (epoch, &loss) in losses.iter().enumerate() {
            if es.observe(epoch, loss) == StopDecision::Stop {
                stop_at = Some(epoch);
                break;
            }
        }
        assert_eq!(es.best_epoch(), Some(7));
        assert_eq!(stop_at, Some(12)); // argmin + patience
    }

    fn identity_pairs(len: usize, seed: u64) -> (FrameBatch, FrameBatch, NormStats) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip =
            AudioClip::new((0..len).map(|_| rng.random_range(-0.8..0.8)).collect(), 16000).unwrap();
        let cfg = FramingConfig::new(32, 16, 16000).unwrap();
        let stats = compute_norm_stats(&clip).unwrap();
        let frames = frame_signal(&clip, &cfg, &stats).unwrap();
        (frames.clone(), frames, stats)
    }

    fn tiny_model(frame_len: usize, seed: u64) -> Model<f32> {
        let spec = ModelSpec::new(
            frame_len,
            vec![
                LayerSpec::Conv1d { in_channels: 1, out_channels: 4, kernel_len: 5 },
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::PRelu { channels: 4 },
                LayerSpec::Conv1d { in_channels: 4, out_channels: 1, kernel_len: 5 },
            ],
        )
        .unwrap();
        build_model(&spec, seed).unwrap()
    }

    #[test]
    fn training_learns_the_identity_task() {
        let (noisy, clean, _) = identity_pairs(4000, 2);
        let model = tiny_model(32, 3);
        let cfg = TrainConfig {
            max_epochs: 30,
            batch_size: 32,
            learning_rate: 2e-3,
            ..TrainConfig::default()
        };
        let (_, report) = train(model, (&noisy, &clean), (&noisy, &clean), &cfg, None).unwrap();
        let first = report.epochs.first().unwrap().train_mse;
        let last = report.epochs.last().unwrap().train_mse;
        assert!(
            last < 0.05 * first,
            "train MSE did not drop enough: first {first}, last {last}"
        );

        // Median-of-5 smoothed training loss is monotone non-increasing.
        let losses: Vec<f64> = report.epochs.iter().map(|r| r.train_mse).collect();
        let smoothed: Vec<f64> = losses
            .windows(5)
            .map(|w| {
                let mut v = w.to_vec();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                v[2]
            })
            .collect();
        for pair in smoothed.windows(2) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-9),
                "smoothed loss rose: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn returned_model_has_min_validation_mse() {
        let (noisy, clean, _) = identity_pairs(2000, 4);
        let model = tiny_model(32, 5);
        let cfg =
            TrainConfig { max_epochs: 8, batch_size: 16, ..TrainConfig::default() };
        let (best, report) =
            train(model, (&noisy, &clean), (&noisy, &clean), &cfg, None).unwrap();
        let min_val =
            report.epochs.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_mse().unwrap(), min_val);
        let recomputed = validation_mse(&best, (&noisy, &clean)).unwrap();
        assert!((recomputed - min_val).abs() <= 1e-12 * (1.0 + min_val));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (noisy, clean, _) = identity_pairs(2000, 6);
        let cfg = TrainConfig { max_epochs: 4, batch_size: 16, ..TrainConfig::default() };
        let run = || {
            let model = tiny_model(32, 7);
            train(model, (&noisy, &clean), (&noisy, &clean), &cfg, None).unwrap()
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn train_emits_csv_log() {
        let (noisy, clean, _) = identity_pairs(1200, 8);
        let model = tiny_model(32, 9);
        let cfg = TrainConfig { max_epochs: 2, batch_size: 16, ..TrainConfig::default() };
        let mut buf = Vec::new();
        train(model, (&noisy, &clean), (&noisy, &clean), &cfg, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRAIN_LOG_HEADER);
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn zero_max_epochs_returns_model_unchanged() {
        let (noisy, clean, _) = identity_pairs(1200, 10);
        let model = tiny_model(32, 11);
        let reference = model.clone();
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let (out, report) = train(model, (&noisy, &clean), (&noisy, &clean), &cfg, None).unwrap();
        assert_eq!(out, reference);
        assert!(report.epochs.is_empty());
        assert_eq!(report.best_epoch, None);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (noisy, clean, _) = identity_pairs(1200, 12);
        let empty = FrameBatch {
            frames: Array2::zeros((0, 32)),
            config: FramingConfig::new(32, 16, 16000).unwrap(),
            normalized: true,
        };
        let model = tiny_model(32, 13);
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(model, (&empty, &empty), (&noisy, &clean), &cfg, None),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn finetune_zero_epochs_is_identity() {
        let (noisy, clean, _) = identity_pairs(1200, 14);
        let model = tiny_model(32, 15);
        let reference = model.clone();
        let out = finetune(model, (&noisy, &clean), 0, &TrainConfig::default()).unwrap();
        assert_eq!(out, reference);
    }

    #[test]
    fn finetune_on_fitted_data_does_not_regress() {
        let (noisy, clean, _) = identity_pairs(3000, 16);
        let model = tiny_model(32, 17);
        let cfg = TrainConfig {
            max_epochs: 25,
            batch_size: 32,
            learning_rate: 2e-3,
            ..TrainConfig::default()
        };
        let (fitted, _) = train(model, (&noisy, &clean), (&noisy, &clean), &cfg, None).unwrap();
        let before = validation_mse(&fitted, (&noisy, &clean)).unwrap();
        let tuned = finetune(fitted, (&noisy, &clean), 5, &cfg).unwrap();
        let after = validation_mse(&tuned, (&noisy, &clean)).unwrap();
        assert!(after <= before + 1e-6, "before {before}, after {after}");
    }
}
