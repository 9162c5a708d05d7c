//! RMSprop optimization, dataset splitting, the epoch loop, and evaluation.

use crate::error::{Error, Result};
use crate::model::{Gradients, Model};
use crate::niftio::{DatasetManifest, ManifestRow, Split};
use crate::rngutil::derive_seed;
use crate::tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Stream tags so shuffling and dropout never share a seed.
const TAG_SPLIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_DROPOUT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Rows are split independently; scans of one subject may straddle the
    /// split. This mirrors the published random scan-level split, at the
    /// cost of subject leakage between train and validation.
    Scan,
    /// All scans of a subject land on the same side. Recommended when
    /// subjects have multiple modalities.
    Subject,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rmsprop_rho: f64,
    pub rmsprop_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub split_fraction: f64,
    pub split_mode: SplitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            rmsprop_rho: 0.9,
            rmsprop_epsilon: 1e-7,
            batch_size: 4,
            epochs: 14,
            seed: 0,
            split_fraction: 0.8,
            split_mode: SplitMode::Scan,
        }
    }
}

impl TrainConfig {
    /// Checks field domains. A zero learning rate is allowed (it makes the
    /// update a null op, which the tests rely on).
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Argument(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0 < self.rmsprop_rho && self.rmsprop_rho < 1.0) {
            return Err(Error::Argument(format!(
                "rmsprop_rho must be in (0, 1), got {}",
                self.rmsprop_rho
            )));
        }
        if self.rmsprop_epsilon <= 0.0 {
            return Err(Error::Argument(format!(
                "rmsprop_epsilon must be positive, got {}",
                self.rmsprop_epsilon
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        if !(0.0 < self.split_fraction && self.split_fraction < 1.0) {
            return Err(Error::Argument(format!(
                "split_fraction must be in (0, 1), got {}",
                self.split_fraction
            )));
        }
        Ok(())
    }
}

/// One labeled training sample.
#[derive(Debug, Clone)]
pub struct Sample<T: Scalar> {
    pub input: Tensor<T>,
    pub label: usize,
}

pub type Dataset<T> = Vec<Sample<T>>;

/// Loss/accuracy bookkeeping for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Serializes epoch records as `epoch,train_loss,train_acc,val_loss,val_acc`.
pub fn epochs_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        ));
    }
    out
}

/// Per-parameter mean-square gradient accumulators, shaped like the model's
/// trainable tensors and initialized to zero.
pub struct OptimizerState<T: Scalar> {
    accs: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self {
            accs: model
                .trainable_tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()).expect("parameter shapes are valid"))
                .collect(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor<T>] {
        &self.accs
    }
}

/// One RMSprop update on a single parameter tensor:
/// s <- rho * s + (1 - rho) * g^2; p <- p - lr * g / (sqrt(s) + eps).
pub fn rmsprop_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    acc: &mut Tensor<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != acc.shape() {
        return Err(Error::Contract(format!(
            "rmsprop_step: param {:?}, grad {:?}, state {:?} must agree",
            param.shape(),
            grad.shape(),
            acc.shape()
        )));
    }
    let rho = T::from_f64(cfg.rmsprop_rho);
    let one_minus_rho = T::one() - rho;
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.rmsprop_epsilon);
    for ((p, &g), s) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(acc.data_mut())
    {
        *s = *s * rho + one_minus_rho * g * g;
        *p = *p - lr * g / (s.sqrt() + eps);
    }
    Ok(())
}

/// Applies one RMSprop step to every trainable tensor of the model.
pub fn apply_gradients<T: Scalar>(
    model: &mut Model<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let params = model.trainable_tensors_mut();
    let grad_tensors = grads.tensors();
    if params.len() != grad_tensors.len() || params.len() != state.accs.len() {
        return Err(Error::Contract(format!(
            "{} params, {} gradients, {} accumulators",
            params.len(),
            grad_tensors.len(),
            state.accs.len()
        )));
    }
    for ((p, g), s) in params.into_iter().zip(grad_tensors).zip(&mut state.accs) {
        rmsprop_step(p, g, s, cfg)?;
    }
    Ok(())
}

/// Splits a manifest into train and validation sets. Deterministic per seed.
/// Returns the two manifests plus stratification warnings (a cohort missing
/// from either side is reported, not fatal).
pub fn split_dataset(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<(DatasetManifest, DatasetManifest, Vec<String>)> {
    cfg.validate()?;
    let rows = manifest.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_SPLIT]));

    let (train_rows, val_rows): (Vec<ManifestRow>, Vec<ManifestRow>) = match cfg.split_mode {
        SplitMode::Scan => {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.shuffle(&mut rng);
            let n_train = ((rows.len() as f64) * cfg.split_fraction).floor() as usize;
            if n_train == 0 || n_train == rows.len() {
                return Err(Error::Argument(format!(
                    "split of {} rows at fraction {} leaves one side empty",
                    rows.len(),
                    cfg.split_fraction
                )));
            }
            let train_set: Vec<usize> = idx[..n_train].to_vec();
            let mut train = Vec::new();
            let mut val = Vec::new();
            for (i, row) in rows.iter().enumerate() {
                if train_set.contains(&i) {
                    train.push(row.clone());
                } else {
                    val.push(row.clone());
                }
            }
            (train, val)
        }
        SplitMode::Subject => {
            // Unique subjects in first-appearance order, then shuffled.
            let mut subjects: Vec<&str> = Vec::new();
            for row in rows {
                if !subjects.contains(&row.subject_id.as_str()) {
                    subjects.push(&row.subject_id);
                }
            }
            subjects.shuffle(&mut rng);
            let n_train = ((subjects.len() as f64) * cfg.split_fraction).floor() as usize;
            if n_train == 0 || n_train == subjects.len() {
                return Err(Error::Argument(format!(
                    "subject split of {} subjects at fraction {} leaves one side empty",
                    subjects.len(),
                    cfg.split_fraction
                )));
            }
            let train_subjects = &subjects[..n_train];
            let mut train = Vec::new();
            let mut val = Vec::new();
            for row in rows {
                if train_subjects.contains(&row.subject_id.as_str()) {
                    train.push(row.clone());
                } else {
                    val.push(row.clone());
                }
            }
            (train, val)
        }
    };

    let mark = |mut rows: Vec<ManifestRow>, split: Split| -> Vec<ManifestRow> {
        for r in &mut rows {
            r.split = Some(split);
        }
        rows
    };
    let train = DatasetManifest::new(mark(train_rows, Split::Train))?;
    let val = DatasetManifest::new(mark(val_rows, Split::Val))?;

    let mut warnings = Vec::new();
    for (side, m) in [("training", &train), ("validation", &val)] {
        for (class, &count) in crate::model::CLASS_NAMES.iter().zip(&m.class_counts()) {
            if count == 0 {
                warnings.push(format!("class \"{class}\" has no scans in the {side} split"));
            }
        }
    }
    Ok((train, val, warnings))
}

/// Evaluation summary; predictions are aligned with the dataset order.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Argument("evaluate requires a non-empty dataset".into()));
    }
    let inputs: Vec<Tensor<T>> = data.iter().map(|s| s.input.clone()).collect();
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    let logits = model.forward_eval(&inputs)?;
    let (loss, _) = crate::layers::softmax_cross_entropy(&logits, &labels)?;
    let predictions: Vec<usize> = logits.iter().map(Tensor::argmax).collect();
    let correct = predictions
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(EvalResult {
        loss: loss.to_f64(),
        accuracy: correct as f64 / data.len() as f64,
        predictions,
    })
}

/// Trains for `cfg.epochs` epochs: seeded shuffle, mini-batches (the last
/// partial batch is kept), train-mode forward, loss and backward, RMSprop
/// step, then a full eval-mode validation pass. `on_epoch` runs after each
/// epoch's record is complete.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_data: &Dataset<T>,
    val_data: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Argument("train and validation sets must be non-empty".into()));
    }
    for s in train_data.iter().chain(val_data.iter()) {
        if s.input.shape() != model.input_shape() {
            return Err(Error::Shape(format!(
                "sample shape {:?} does not match model input {:?}",
                s.input.shape(),
                model.input_shape()
            )));
        }
        if s.label >= 3 {
            return Err(Error::Argument(format!("label {} out of range", s.label)));
        }
    }

    let mut state = OptimizerState::new(model);
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<Tensor<T>> =
                chunk.iter().map(|&i| train_data[i].input.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_data[i].label).collect();
            let mut rngs: Vec<ChaCha8Rng> = (0..chunk.len())
                .map(|s| {
                    ChaCha8Rng::seed_from_u64(derive_seed(
                        cfg.seed,
                        &[TAG_DROPOUT, epoch as u64, batch_idx as u64, s as u64],
                    ))
                })
                .collect();

            let (logits, caches) = model.forward_train(&inputs, &mut rngs)?;
            let (loss, grad_logits) = crate::layers::softmax_cross_entropy(&logits, &labels)?;
            let loss = loss.to_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    value: loss,
                });
            }
            let grads = model.backward(&caches, grad_logits)?;
            apply_gradients(model, &grads, &mut state, cfg)?;

            loss_sum += loss * chunk.len() as f64;
            correct += logits
                .iter()
                .zip(&labels)
                .filter(|(lg, &lb)| lg.argmax() == lb)
                .count();
        }

        let val = evaluate(model, val_data)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_data.len() as f64,
            train_accuracy: correct as f64 / train_data.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        };
        on_epoch(&record);
        records.push(record);
    }
    model.set_epoch(cfg.epochs as u64);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model_3d_small, LayerKind, LayerSpec};
    use crate::niftio::{AgeClass, Modality};

    #[test]
    fn rmsprop_hand_example() {
        // p=1, g=1, s=0, rho=0.9, lr=1e-4:
        // s -> 0.1, p -> 1 - 1e-4 / (sqrt(0.1) + 1e-7) = 0.99968377...
        let cfg = TrainConfig::default();
        let mut p = Tensor::vector(vec![1.0f64]).unwrap();
        let g = Tensor::vector(vec![1.0f64]).unwrap();
        let mut s = Tensor::vector(vec![0.0f64]).unwrap();
        rmsprop_step(&mut p, &g, &mut s, &cfg).unwrap();
        assert!((s.data()[0] - 0.1).abs() < 1e-15);
        let expected = 1.0 - 1e-4 / (0.1f64.sqrt() + 1e-7);
        assert!((p.data()[0] - expected).abs() < 1e-12);
        assert!((p.data()[0] - 0.99968377).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = TrainConfig::default();
        let mut p = Tensor::vector(vec![0.5f64, -2.0]).unwrap();
        let g = Tensor::zeros(&[2]).unwrap();
        let mut s = Tensor::zeros(&[2]).unwrap();
        let before = p.clone();
        for _ in 0..100 {
            rmsprop_step(&mut p, &g, &mut s, &cfg).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn rmsprop_minimizes_a_convex_quadratic() {
        // f(p) = p^2, gradient 2p, from p = 5 with lr 0.01.
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut p = Tensor::vector(vec![5.0f64]).unwrap();
        let mut s = Tensor::zeros(&[1]).unwrap();
        for _ in 0..2000 {
            let g = Tensor::vector(vec![2.0 * p.data()[0]]).unwrap();
            rmsprop_step(&mut p, &g, &mut s, &cfg).unwrap();
        }
        assert!(p.data()[0].abs() < 0.1, "p = {}", p.data()[0]);
    }

    #[test]
    fn accumulators_stay_non_negative() {
        let cfg = TrainConfig::default();
        let mut p = Tensor::<f64>::random_uniform(&[32], -1.0, 1.0, 1).unwrap();
        let mut s = Tensor::zeros(&[32]).unwrap();
        for seed in 0..50 {
            let g = Tensor::random_uniform(&[32], -2.0, 2.0, seed).unwrap();
            rmsprop_step(&mut p, &g, &mut s, &cfg).unwrap();
            assert!(s.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let cfg = TrainConfig::default();
        let mut p = Tensor::<f64>::zeros(&[3]).unwrap();
        let g = Tensor::<f64>::zeros(&[4]).unwrap();
        let mut s = Tensor::<f64>::zeros(&[3]).unwrap();
        assert!(matches!(
            rmsprop_step(&mut p, &g, &mut s, &cfg),
            Err(Error::Contract(_))
        ));
    }

    fn manifest_of(n: usize, subjects: usize) -> DatasetManifest {
        let rows = (0..n)
            .map(|i| ManifestRow {
                path: format!("scan_{i}.nii"),
                subject_id: format!("subj_{}", i % subjects),
                modality: Modality::T1,
                age_class: AgeClass::ALL[i % 3],
                split: None,
            })
            .collect();
        DatasetManifest::new(rows).unwrap()
    }

    #[test]
    fn scan_split_317_gives_253_64() {
        let m = manifest_of(317, 112);
        let cfg = TrainConfig::default();
        let (train, val, _) = split_dataset(&m, &cfg).unwrap();
        assert_eq!(train.len(), 253);
        assert_eq!(val.len(), 64);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let m = manifest_of(50, 10);
        let cfg = TrainConfig {
            seed: 9,
            ..TrainConfig::default()
        };
        let (t1, v1, _) = split_dataset(&m, &cfg).unwrap();
        let (t2, v2, _) = split_dataset(&m, &cfg).unwrap();
        let paths = |m: &DatasetManifest| -> Vec<String> {
            m.rows().iter().map(|r| r.path.clone()).collect()
        };
        assert_eq!(paths(&t1), paths(&t2));
        assert_eq!(paths(&v1), paths(&v2));
    }

    #[test]
    fn subject_split_keeps_subjects_whole() {
        let m = manifest_of(60, 12);
        let cfg = TrainConfig {
            split_mode: SplitMode::Subject,
            seed: 4,
            ..TrainConfig::default()
        };
        let (train, val, _) = split_dataset(&m, &cfg).unwrap();
        let train_subjects: Vec<&str> =
            train.rows().iter().map(|r| r.subject_id.as_str()).collect();
        for r in val.rows() {
            assert!(!train_subjects.contains(&r.subject_id.as_str()));
        }
        assert_eq!(train.len() + val.len(), 60);
    }

    #[test]
    fn missing_class_yields_a_warning_not_an_error() {
        // Two rows of one class: any split leaves some cohort empty somewhere.
        let rows = vec![
            ManifestRow {
                path: "a.nii".into(),
                subject_id: "s1".into(),
                modality: Modality::T1,
                age_class: AgeClass::Newborn,
                split: None,
            },
            ManifestRow {
                path: "b.nii".into(),
                subject_id: "s2".into(),
                modality: Modality::T1,
                age_class: AgeClass::Newborn,
                split: None,
            },
        ];
        let m = DatasetManifest::new(rows).unwrap();
        let cfg = TrainConfig {
            split_fraction: 0.5,
            ..TrainConfig::default()
        };
        let (_, _, warnings) = split_dataset(&m, &cfg).unwrap();
        assert!(!warnings.is_empty());
    }

    fn tiny_dataset(n: usize, shape: &[usize]) -> Dataset<f32> {
        (0..n)
            .map(|i| Sample {
                input: Tensor::random_uniform(shape, 0.0, 1.0, 1000 + i as u64).unwrap(),
                label: i % 3,
            })
            .collect()
    }

    fn flat_model(input: &[usize]) -> Model<f32> {
        let layers = vec![
            LayerSpec::new("flatten_1", LayerKind::Flatten),
            LayerSpec::new("dense_1", LayerKind::Dense { units: 8, relu: true }),
            LayerSpec::new("dense_2", LayerKind::Dense { units: 3, relu: false }),
        ];
        let mut m = Model::new("custom", input.to_vec(), layers).unwrap();
        m.init_params(3);
        m
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let mut m = flat_model(&[4, 4, 1]);
        let data = tiny_dataset(6, &[4, 4, 1]);
        let before: Vec<Tensor<f32>> = m.trainable_tensors().into_iter().cloned().collect();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        train(&mut m, &data, &data, &cfg, |_| {}).unwrap();
        for (b, a) in before.iter().zip(m.trainable_tensors()) {
            assert_eq!(b.data(), a.data());
        }
    }

    #[test]
    fn record_count_matches_epochs_and_runs_are_reproducible() {
        let data = tiny_dataset(8, &[4, 4, 1]);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 5,
            batch_size: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut m1 = flat_model(&[4, 4, 1]);
        let r1 = train(&mut m1, &data, &data, &cfg, |_| {}).unwrap();
        assert_eq!(r1.len(), 5);

        let mut m2 = flat_model(&[4, 4, 1]);
        let r2 = train(&mut m2, &data, &data, &cfg, |_| {}).unwrap();
        assert_eq!(r1, r2);
        for (a, b) in m1.trainable_tensors().iter().zip(m2.trainable_tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn evaluate_is_pure_and_consistent() {
        let m = flat_model(&[4, 4, 1]);
        let data = tiny_dataset(5, &[4, 4, 1]);
        let e1 = evaluate(&m, &data).unwrap();
        let e2 = evaluate(&m, &data).unwrap();
        assert_eq!(e1.loss, e2.loss);
        assert_eq!(e1.predictions, e2.predictions);
        assert_eq!(e1.predictions.len(), 5);
        let correct = e1
            .predictions
            .iter()
            .zip(data.iter())
            .filter(|(p, s)| **p == s.label)
            .count();
        assert_eq!(e1.accuracy, correct as f64 / 5.0);
    }

    #[test]
    fn single_correct_sample_scores_full_accuracy() {
        let m = flat_model(&[4, 4, 1]);
        let probe = tiny_dataset(1, &[4, 4, 1]);
        let pred = evaluate(&m, &probe).unwrap().predictions[0];
        let data = vec![Sample {
            input: probe[0].input.clone(),
            label: pred,
        }];
        let e = evaluate(&m, &data).unwrap();
        assert_eq!(e.accuracy, 1.0);
    }

    #[test]
    fn epochs_csv_format_is_stable() {
        let recs = vec![EpochRecord {
            epoch: 0,
            train_loss: 1.5,
            train_accuracy: 0.25,
            val_loss: 1.25,
            val_accuracy: 0.5,
        }];
        let csv = epochs_to_csv(&recs);
        assert_eq!(
            csv,
            "epoch,train_loss,train_acc,val_loss,val_acc\n0,1.500000,0.250000,1.250000,0.500000\n"
        );
    }
}
