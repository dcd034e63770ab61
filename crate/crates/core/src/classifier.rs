//! A per-pixel linear softmax classifier over representation channels.
//!
//! Deliberately small: one weight row per class over the channel values
//! of a single pixel (plus bias), trained by plain mini-batch gradient
//! descent. It exists to exercise the full data path — encode, train,
//! predict, evaluate — with contracts that can be checked exactly
//! (analytic gradients against finite differences, loss against a direct
//! evaluation), not to compete with a real segmentation network.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{LabelMap, Sample, IGNORE_ID};
use crate::event::SensorGeometry;
use crate::repr::ReprTensor;

/// Magic bytes of the LPM1 model checkpoint.
pub const LPM1_MAGIC: [u8; 4] = *b"LPM1";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("every pixel is ignored; nothing to score")]
    AllPixelsIgnored,
    #[error("model expects {expected} channels, input has {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("logits length {found} does not match {expected} (pixels × classes)")]
    LogitsLength { expected: usize, found: usize },
    #[error("label {0} is out of range for the configured class count")]
    BadLabel(u8),
    #[error("training requires at least one sample")]
    NoSamples,
    #[error("invalid training configuration: {0}")]
    BadConfig(&'static str),
    #[error("loss became non-finite at step {step}")]
    DivergenceDetected { step: u32 },
    #[error("bad magic bytes (expected \"LPM1\")")]
    BadMagic,
    #[error("checkpoint truncated or malformed")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-pixel linear model: `logit_c = w_c · normalize(features) + b_c`.
///
/// Weights are stored row-major, one row of `feature_count + 1` values
/// per class with the bias last. Feature normalization (per-channel mean
/// and standard deviation, fixed at training time) is part of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPixelModel {
    num_classes: u8,
    feature_count: usize,
    weights: Vec<f64>,
    feature_norm: Vec<(f64, f64)>,
}

impl LinearPixelModel {
    /// All-zero weights, identity normalization.
    pub fn zeros(num_classes: u8, feature_count: usize) -> Self {
        assert!(num_classes > 0, "need at least one class");
        LinearPixelModel {
            num_classes,
            feature_count,
            weights: vec![0.0; num_classes as usize * (feature_count + 1)],
            feature_norm: vec![(0.0, 1.0); feature_count],
        }
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces the full weight matrix (class-major, bias last in each
    /// row). The normalization constants are left untouched.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<(), ClassifierError> {
        if weights.len() != self.weights.len() {
            return Err(ClassifierError::BadConfig(
                "weight vector has the wrong length",
            ));
        }
        self.weights.copy_from_slice(weights);
        Ok(())
    }

    pub fn feature_norm(&self) -> &[(f64, f64)] {
        &self.feature_norm
    }

    fn row(&self, class: usize) -> &[f64] {
        let stride = self.feature_count + 1;
        &self.weights[class * stride..(class + 1) * stride]
    }

    /// Logits for one pixel's raw (unnormalized) feature vector.
    fn logits_into(&self, features: &[f64], out: &mut [f64]) {
        for (c, slot) in out.iter_mut().enumerate() {
            let row = self.row(c);
            let mut z = row[self.feature_count];
            for f in 0..self.feature_count {
                let (mean, std) = self.feature_norm[f];
                z += row[f] * ((features[f] - mean) / std);
            }
            *slot = z;
        }
    }

    /// Labels every pixel with its argmax class; ties go to the lowest
    /// class id.
    pub fn predict(&self, tensor: &ReprTensor) -> Result<LabelMap, ClassifierError> {
        if tensor.channels() != self.feature_count {
            return Err(ClassifierError::ChannelMismatch {
                expected: self.feature_count,
                found: tensor.channels(),
            });
        }
        let geometry = tensor.geometry();
        let mut out = vec![0u8; geometry.pixel_count()];
        let mut logits = vec![0.0; self.num_classes as usize];
        for y in 0..geometry.height {
            for x in 0..geometry.width {
                self.logits_into(tensor.pixel(x, y), &mut logits);
                let mut best = 0usize;
                for (c, &z) in logits.iter().enumerate().skip(1) {
                    if z > logits[best] {
                        best = c;
                    }
                }
                out[y as usize * geometry.width as usize + x as usize] = best as u8;
            }
        }
        Ok(LabelMap::new(geometry, out).expect("sized to geometry"))
    }

    /// Writes the LPM1 checkpoint: magic, u16 class count, u16 feature
    /// count, then per-feature (mean, std) f64 pairs, then the weight
    /// rows, all little-endian.
    pub fn write_checkpoint<W: Write>(&self, writer: &mut W) -> Result<(), ClassifierError> {
        writer.write_all(&LPM1_MAGIC)?;
        writer.write_all(&(self.num_classes as u16).to_le_bytes())?;
        writer.write_all(&(self.feature_count as u16).to_le_bytes())?;
        for &(mean, std) in &self.feature_norm {
            writer.write_all(&mean.to_le_bytes())?;
            writer.write_all(&std.to_le_bytes())?;
        }
        for &w in &self.weights {
            writer.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut reader: R) -> Result<Self, ClassifierError> {
        let mut header = [0u8; 8];
        reader.read_exact(&mut header).map_err(|_| ClassifierError::BadMagic)?;
        if header[0..4] != LPM1_MAGIC {
            return Err(ClassifierError::BadMagic);
        }
        let num_classes = u16::from_le_bytes([header[4], header[5]]);
        let feature_count = u16::from_le_bytes([header[6], header[7]]) as usize;
        if num_classes == 0 || num_classes > u8::MAX as u16 {
            return Err(ClassifierError::Truncated);
        }
        let read_f64 = |reader: &mut R| -> Result<f64, ClassifierError> {
            let mut buf = [0u8; 8];
            reader.read_exact(&mut buf).map_err(|_| ClassifierError::Truncated)?;
            Ok(f64::from_le_bytes(buf))
        };
        let mut feature_norm = Vec::with_capacity(feature_count);
        for _ in 0..feature_count {
            let mean = read_f64(&mut reader)?;
            let std = read_f64(&mut reader)?;
            feature_norm.push((mean, std));
        }
        let weight_count = num_classes as usize * (feature_count + 1);
        let mut weights = Vec::with_capacity(weight_count);
        for _ in 0..weight_count {
            weights.push(read_f64(&mut reader)?);
        }
        Ok(LinearPixelModel {
            num_classes: num_classes as u8,
            feature_count,
            weights,
            feature_norm,
        })
    }
}

/// Numerically stable per-pixel softmax (max-logit subtraction).
fn softmax_into(logits: &[f64], probs: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
}

/// Mean cross-entropy of per-pixel logits against a label map.
///
/// `logits` holds `num_classes` values per pixel in raster order. Ignored
/// pixels contribute nothing to the loss but still get probabilities.
/// Returns the loss and the per-pixel probability raster (same layout).
pub fn softmax_cross_entropy(
    logits: &[f64],
    num_classes: usize,
    truth: &LabelMap,
) -> Result<(f64, Vec<f64>), ClassifierError> {
    let pixels = truth.geometry().pixel_count();
    let expected = pixels * num_classes;
    if logits.len() != expected {
        return Err(ClassifierError::LogitsLength {
            expected,
            found: logits.len(),
        });
    }
    let mut probs = vec![0.0; logits.len()];
    let mut loss_sum = 0.0;
    let mut labeled = 0u64;
    for (px, &label) in truth.data().iter().enumerate() {
        let range = px * num_classes..(px + 1) * num_classes;
        softmax_into(&logits[range.clone()], &mut probs[range.clone()]);
        if label == IGNORE_ID {
            continue;
        }
        if label as usize >= num_classes {
            return Err(ClassifierError::BadLabel(label));
        }
        loss_sum -= probs[px * num_classes + label as usize].ln();
        labeled += 1;
    }
    if labeled == 0 {
        return Err(ClassifierError::AllPixelsIgnored);
    }
    Ok((loss_sum / labeled as f64, probs))
}

/// A flat batch of labeled pixels: `features` is row-major
/// pixel-by-pixel, `labels` holds one class id per pixel (never ignore).
#[derive(Debug, Clone)]
pub struct PixelBatch {
    pub feature_count: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PixelBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn features_of(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_count..(i + 1) * self.feature_count]
    }
}

/// Mean cross-entropy of the model on a batch, plus the L2 penalty
/// `l2/2 · Σw²` over non-bias weights.
pub fn batch_loss(
    model: &LinearPixelModel,
    batch: &PixelBatch,
    l2: f64,
) -> Result<f64, ClassifierError> {
    if batch.feature_count != model.feature_count {
        return Err(ClassifierError::ChannelMismatch {
            expected: model.feature_count,
            found: batch.feature_count,
        });
    }
    if batch.is_empty() {
        return Err(ClassifierError::AllPixelsIgnored);
    }
    let c = model.num_classes as usize;
    let mut logits = vec![0.0; c];
    let mut probs = vec![0.0; c];
    let mut loss_sum = 0.0;
    for i in 0..batch.len() {
        let label = batch.labels[i];
        if label as usize >= c {
            return Err(ClassifierError::BadLabel(label));
        }
        model.logits_into(batch.features_of(i), &mut logits);
        softmax_into(&logits, &mut probs);
        loss_sum -= probs[label as usize].ln();
    }
    let mut penalty = 0.0;
    let stride = model.feature_count + 1;
    for class in 0..c {
        for f in 0..model.feature_count {
            let w = model.weights[class * stride + f];
            penalty += w * w;
        }
    }
    Ok(loss_sum / batch.len() as f64 + 0.5 * l2 * penalty)
}

/// Analytic gradient of [`batch_loss`] with respect to every weight,
/// same layout as the model's weight vector. The mean over the batch
/// makes the gradient invariant to duplicating all pixels; the L2 term
/// never touches bias entries.
pub fn loss_gradient(
    model: &LinearPixelModel,
    batch: &PixelBatch,
    l2: f64,
) -> Result<Vec<f64>, ClassifierError> {
    if batch.feature_count != model.feature_count {
        return Err(ClassifierError::ChannelMismatch {
            expected: model.feature_count,
            found: batch.feature_count,
        });
    }
    if batch.is_empty() {
        return Err(ClassifierError::AllPixelsIgnored);
    }
    let c = model.num_classes as usize;
    let stride = model.feature_count + 1;
    let mut grad = vec![0.0; model.weights.len()];
    let mut logits = vec![0.0; c];
    let mut probs = vec![0.0; c];
    let scale = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        let label = batch.labels[i];
        if label as usize >= c {
            return Err(ClassifierError::BadLabel(label));
        }
        let features = batch.features_of(i);
        model.logits_into(features, &mut logits);
        softmax_into(&logits, &mut probs);
        for class in 0..c {
            let residual = probs[class] - if class == label as usize { 1.0 } else { 0.0 };
            let row = &mut grad[class * stride..(class + 1) * stride];
            for f in 0..model.feature_count {
                let (mean, std) = model.feature_norm[f];
                row[f] += scale * residual * ((features[f] - mean) / std);
            }
            row[model.feature_count] += scale * residual;
        }
    }
    for class in 0..c {
        for f in 0..model.feature_count {
            grad[class * stride + f] += l2 * model.weights[class * stride + f];
        }
    }
    Ok(grad)
}

/// Gradient-descent hyperparameters. `num_classes` fixes the model size;
/// batches are drawn with replacement from all labeled training pixels.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: u32,
    pub batch_pixels: usize,
    pub seed: u64,
    pub l2: f64,
    pub num_classes: u8,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            steps: 200,
            batch_pixels: 1024,
            seed: 0,
            l2: 0.0,
            num_classes: 6,
        }
    }
}

/// All labeled pixels pooled from a sample set, with the feature
/// normalization statistics computed over them.
struct TrainingPool {
    feature_count: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    norm: Vec<(f64, f64)>,
}

fn build_pool(samples: &[Sample], num_classes: u8) -> Result<TrainingPool, ClassifierError> {
    let feature_count = samples[0].tensor.channels();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for sample in samples {
        if sample.tensor.channels() != feature_count {
            return Err(ClassifierError::ChannelMismatch {
                expected: feature_count,
                found: sample.tensor.channels(),
            });
        }
        let geometry = sample.tensor.geometry();
        for y in 0..geometry.height {
            for x in 0..geometry.width {
                let label = sample.labels.value(x, y);
                if label == IGNORE_ID {
                    continue;
                }
                if label >= num_classes {
                    return Err(ClassifierError::BadLabel(label));
                }
                features.extend_from_slice(sample.tensor.pixel(x, y));
                labels.push(label);
            }
        }
    }
    if labels.is_empty() {
        return Err(ClassifierError::AllPixelsIgnored);
    }
    let n = labels.len() as f64;
    let mut norm = Vec::with_capacity(feature_count);
    for f in 0..feature_count {
        let mean = (0..labels.len())
            .map(|i| features[i * feature_count + f])
            .sum::<f64>()
            / n;
        let var = (0..labels.len())
            .map(|i| {
                let d = features[i * feature_count + f] - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        norm.push((mean, std));
    }
    Ok(TrainingPool {
        feature_count,
        features,
        labels,
        norm,
    })
}

/// Trains a fresh model by mini-batch gradient descent; returns it with
/// the per-step loss trace. Deterministic for a fixed seed.
pub fn train(
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<(LinearPixelModel, Vec<f64>), ClassifierError> {
    if samples.is_empty() {
        return Err(ClassifierError::NoSamples);
    }
    if config.steps == 0 {
        return Err(ClassifierError::BadConfig("steps must be at least 1"));
    }
    if !(config.learning_rate > 0.0) {
        return Err(ClassifierError::BadConfig("learning rate must be positive"));
    }
    if config.batch_pixels == 0 {
        return Err(ClassifierError::BadConfig("batch size must be at least 1"));
    }
    if config.l2 < 0.0 {
        return Err(ClassifierError::BadConfig("l2 must be non-negative"));
    }
    let pool = build_pool(samples, config.num_classes)?;
    let mut model = LinearPixelModel::zeros(config.num_classes, pool.feature_count);
    model.feature_norm = pool.norm.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::with_capacity(config.steps as usize);
    let mut batch = PixelBatch {
        feature_count: pool.feature_count,
        features: Vec::with_capacity(config.batch_pixels * pool.feature_count),
        labels: Vec::with_capacity(config.batch_pixels),
    };
    for step in 0..config.steps {
        batch.features.clear();
        batch.labels.clear();
        for _ in 0..config.batch_pixels {
            let i = rng.gen_range(0..pool.labels.len());
            batch
                .features
                .extend_from_slice(&pool.features[i * pool.feature_count..(i + 1) * pool.feature_count]);
            batch.labels.push(pool.labels[i]);
        }
        let loss = batch_loss(&model, &batch, config.l2)?;
        if !loss.is_finite() {
            return Err(ClassifierError::DivergenceDetected { step });
        }
        trace.push(loss);
        let grad = loss_gradient(&model, &batch, config.l2)?;
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
    }
    Ok((model, trace))
}

/// Convenience: geometry-checked prediction for tensors that must match
/// a reference geometry (e.g. truth maps during evaluation).
pub fn predict_checked(
    model: &LinearPixelModel,
    tensor: &ReprTensor,
    expected_geometry: Option<SensorGeometry>,
) -> Result<LabelMap, ClassifierError> {
    if let Some(g) = expected_geometry {
        if tensor.geometry() != g {
            return Err(ClassifierError::ChannelMismatch {
                expected: g.pixel_count(),
                found: tensor.geometry().pixel_count(),
            });
        }
    }
    model.predict(tensor)
}
