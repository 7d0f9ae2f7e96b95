//! Training loop with early stopping, evaluation, k-fold cross-validation,
//! and the cross-dataset train/test matrix.
//!
//! Every experiment is a pure function of (samples, config, seed): epoch
//! shuffling, weight initialization, and fold assignment all derive from
//! the config seed, and batch gradients are accumulated over fixed-size
//! chunks so results are bitwise independent of the worker count.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::data::{preprocess_oriented, split_folds, DataError, GazeSample};
use crate::model::{GazeNet, ModelError, NetGrads};
use crate::optim::{adam_step, mse_loss, sample_error, AdamHyper, AdamState, OptimError};
use crate::rng::Rng;

/// Samples per gradient-accumulation chunk. Fixing this (rather than
/// deriving it from the worker count) pins the floating-point reduction
/// order for any `jobs` setting.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("train: empty sample list")]
    EmptySampleSet,
    #[error("train: {subjects} subject(s) cannot provide a validation split; need at least 2")]
    TooFewSubjectsForValidation { subjects: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("evaluate: empty sample list")]
    EmptyEvalSet,
    #[error("matrix: {0}")]
    BadMatrix(String),
    #[error("matrix cell (train {train}, test {test}) has no leakage-free test samples")]
    EmptyCell { train: String, test: String },
    #[error("subject leak: {subject} appears in both train and test sets")]
    SubjectLeak { subject: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    /// Early stopping: epochs without validation improvement before halting.
    pub patience: usize,
    /// Fraction of training subjects held out for validation.
    pub val_fraction: f64,
    /// Double the training rows with mirrored twins.
    pub mirror: bool,
    pub seed: u64,
    /// Validate on the training set itself (memorization experiments).
    pub overfit: bool,
    /// Feed zeros instead of the head pose (ablation experiments).
    pub zero_head_pose: bool,
    /// Stop as soon as validation MAE drops below this target, degrees.
    pub target_val_mae: Option<f64>,
    /// Worker threads for batch gradients. Results do not depend on it.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            batch_size: 32,
            adam: AdamHyper::default(),
            patience: 10,
            val_fraction: 0.1,
            mirror: true,
            seed: 0,
            overfit: false,
            zero_head_pose: false,
            target_val_mae: None,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.max_epochs == 0 {
            return Err(HarnessError::BadConfig("max_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(HarnessError::BadConfig("patience must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(HarnessError::BadConfig(format!(
                "val_fraction {} must be in (0, 1)",
                self.val_fraction
            )));
        }
        if self.jobs == 0 {
            return Err(HarnessError::BadConfig("jobs must be >= 1".into()));
        }
        self.adam
            .validate()
            .map_err(|e| HarnessError::BadConfig(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mae: f64,
}

/// Result of one training run: the best-validation snapshot plus the full
/// loss history.
#[derive(Debug)]
pub struct TrainRun {
    pub net: GazeNet<f32>,
    pub history: Vec<EpochStats>,
    /// Training rows per epoch (doubled when mirroring is on).
    pub train_rows: usize,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    /// Total Adam steps taken.
    pub steps: usize,
}

/// MAE statistics over one evaluation set, degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub mae_mean_deg: f64,
    pub mae_std_deg: f64,
    pub max_error_deg: f64,
    pub n_samples: usize,
}

impl EvalReport {
    fn from_errors(mut errors: Vec<f64>) -> Result<Self, HarnessError> {
        if errors.is_empty() {
            return Err(HarnessError::EmptyEvalSet);
        }
        // Sorting makes the reduction order, and hence the report, exactly
        // permutation-invariant.
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        Ok(EvalReport {
            mae_mean_deg: mean,
            mae_std_deg: var.sqrt(),
            max_error_deg: *errors.last().unwrap(),
            n_samples: errors.len(),
        })
    }
}

/// Per-fold reports plus the pooled report over all held-out predictions.
#[derive(Clone, Debug)]
pub struct CvReport {
    pub folds: Vec<EvalReport>,
    pub pooled: EvalReport,
}

/// Cross-dataset grid: cell `[i][j]` evaluates the model trained on
/// dataset `i` against leakage-free samples of dataset `j`. The last
/// row/column is the combined dataset.
#[derive(Clone, Debug)]
pub struct MatrixReport {
    pub names: Vec<String>,
    pub cells: Vec<Vec<EvalReport>>,
}

impl MatrixReport {
    pub fn row_max_mae(&self, row: usize) -> f64 {
        self.cells[row]
            .iter()
            .map(|c| c.mae_mean_deg)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Forward one sample and return predicted (pitch, yaw) in degrees.
pub fn predict(net: &GazeNet<f32>, sample: &GazeSample) -> Result<[f64; 2], HarnessError> {
    predict_oriented(net, sample, false, false)
}

fn predict_oriented(
    net: &GazeNet<f32>,
    sample: &GazeSample,
    mirrored: bool,
    zero_head: bool,
) -> Result<[f64; 2], HarnessError> {
    let (eyes, mut head) = preprocess_oriented(sample, mirrored)?;
    if zero_head {
        head = [0.0; 3];
    }
    let (pitch, yaw, _) = net.forward(&eyes, &head)?;
    Ok([pitch as f64, yaw as f64])
}

fn prediction_errors(
    net: &GazeNet<f32>,
    samples: &[GazeSample],
    zero_head: bool,
) -> Result<Vec<f64>, HarnessError> {
    samples
        .iter()
        .map(|s| {
            let pred = predict_oriented(net, s, false, zero_head)?;
            Ok(sample_error(&pred, &[s.gaze[0] as f64, s.gaze[1] as f64]))
        })
        .collect()
}

/// Evaluate a network: MAE mean and standard deviation plus the largest
/// per-sample error.
pub fn evaluate(net: &GazeNet<f32>, samples: &[GazeSample]) -> Result<EvalReport, HarnessError> {
    evaluate_with(net, samples, false)
}

fn evaluate_with(
    net: &GazeNet<f32>,
    samples: &[GazeSample],
    zero_head: bool,
) -> Result<EvalReport, HarnessError> {
    EvalReport::from_errors(prediction_errors(net, samples, zero_head)?)
}

/// A training row: sample index plus mirror orientation.
type Row = (usize, bool);

type ChunkResult = Result<(NetGrads<f32>, f64), HarnessError>;

fn row_gradients(
    net: &GazeNet<f32>,
    samples: &[GazeSample],
    rows: &[Row],
    zero_head: bool,
) -> ChunkResult {
    let mut grads = NetGrads::zeros_like(net);
    let mut loss_sum = 0.0f64;
    for &(idx, mirrored) in rows {
        let sample = &samples[idx];
        let (eyes, mut head) = preprocess_oriented(sample, mirrored)?;
        if zero_head {
            head = [0.0; 3];
        }
        let target = if mirrored {
            [sample.gaze[0], -sample.gaze[1]]
        } else {
            sample.gaze
        };
        let (pitch, yaw, trace) = net.forward(&eyes, &head)?;
        let (loss, grad2) = mse_loss(&[pitch, yaw], &target);
        loss_sum += loss as f64;
        grads.add_assign(&net.backward(&trace, &grad2)?);
    }
    Ok((grads, loss_sum))
}

/// Mean gradient over a batch. Work is split over fixed-size chunks; the
/// chunk results are reduced in chunk order, so the sum is identical for
/// every worker count.
fn batch_gradients(
    net: &GazeNet<f32>,
    samples: &[GazeSample],
    batch: &[Row],
    zero_head: bool,
    jobs: usize,
) -> ChunkResult {
    let chunks: Vec<&[Row]> = batch.chunks(GRAD_CHUNK).collect();
    let results: Vec<ChunkResult> = if jobs <= 1 || chunks.len() <= 1 {
        chunks
            .iter()
            .map(|c| row_gradients(net, samples, c, zero_head))
            .collect()
    } else {
        let slots: Vec<Mutex<Option<ChunkResult>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(chunks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = row_gradients(net, samples, chunks[i], zero_head);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("chunk computed"))
            .collect()
    };

    let mut total = NetGrads::zeros_like(net);
    let mut loss_sum = 0.0f64;
    for r in results {
        let (g, l) = r?;
        total.add_assign(&g);
        loss_sum += l;
    }
    let scale = 1.0 / batch.len() as f32;
    total.scale(scale);
    Ok((total, loss_sum / batch.len() as f64))
}

/// Deterministic subject-level validation split: the first
/// `round(val_fraction * n)` subjects (at least one, never all) of the
/// seeded shuffle order validate, the rest train.
fn validation_split(
    samples: &[GazeSample],
    val_fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>), HarnessError> {
    let subjects: BTreeSet<&str> = samples.iter().map(|s| s.base_subject()).collect();
    if subjects.len() < 2 {
        return Err(HarnessError::TooFewSubjectsForValidation {
            subjects: subjects.len(),
        });
    }
    let mut ordered: Vec<&str> = subjects.into_iter().collect();
    rng.shuffle(&mut ordered);
    let n_val = ((ordered.len() as f64 * val_fraction).round() as usize)
        .clamp(1, ordered.len() - 1);
    let val_subjects: BTreeSet<&str> = ordered[..n_val].iter().copied().collect();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if val_subjects.contains(s.base_subject()) {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    Ok((train_idx, val_idx))
}

/// Train a network with MSE/Adam and early stopping on validation MAE.
/// Returns the best-validation snapshot, never a later, worse one.
pub fn train(samples: &[GazeSample], config: &TrainConfig) -> Result<TrainRun, HarnessError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(HarnessError::EmptySampleSet);
    }
    for s in samples {
        s.validate()?;
    }

    let mut root = Rng::new(config.seed);
    let mut init_rng = root.split();
    let mut split_rng = root.split();
    let mut shuffle_rng = root.split();

    let (train_idx, val_idx) = if config.overfit {
        let all: Vec<usize> = (0..samples.len()).collect();
        (all.clone(), all)
    } else {
        validation_split(samples, config.val_fraction, &mut split_rng)?
    };

    let mut rows: Vec<Row> = train_idx.iter().map(|&i| (i, false)).collect();
    if config.mirror {
        rows.extend(train_idx.iter().map(|&i| (i, true)));
    }
    let train_rows = rows.len();
    let val_samples: Vec<GazeSample> = val_idx.iter().map(|&i| samples[i].clone()).collect();

    let mut net = GazeNet::build(&mut init_rng);
    let mut state = AdamState::new(&net.params());
    let mut history = Vec::new();
    let mut best_net = net.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_improve = 0usize;
    let mut steps = 0usize;

    for epoch in 0..config.max_epochs {
        shuffle_rng.shuffle(&mut rows);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for batch in rows.chunks(config.batch_size) {
            let (grads, mean_loss) =
                batch_gradients(&net, samples, batch, config.zero_head_pose, config.jobs)?;
            let grad_refs: Vec<&crate::tensor::Tensor<f32>> = grads.tensors.iter().collect();
            adam_step(&mut net.params_mut(), &grad_refs, &mut state, &config.adam)?;
            epoch_loss += mean_loss;
            batches += 1;
            steps += 1;
        }
        let val_mae = evaluate_with(&net, &val_samples, config.zero_head_pose)?.mae_mean_deg;
        history.push(EpochStats {
            epoch,
            train_mse: epoch_loss / batches.max(1) as f64,
            val_mae,
        });
        if val_mae < best_val {
            best_val = val_mae;
            best_net = net.clone();
            best_epoch = epoch;
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= config.patience {
                break;
            }
        }
        if config.target_val_mae.is_some_and(|t| best_val < t) {
            break;
        }
    }

    Ok(TrainRun {
        net: best_net,
        history,
        train_rows,
        best_epoch,
        best_val_mae: best_val,
        steps,
    })
}

fn subject_set(samples: &[GazeSample]) -> BTreeSet<String> {
    samples.iter().map(|s| s.base_subject().to_string()).collect()
}

fn assert_disjoint(
    train: &BTreeSet<String>,
    test: &[GazeSample],
) -> Result<(), HarnessError> {
    for s in test {
        if train.contains(s.base_subject()) {
            return Err(HarnessError::SubjectLeak {
                subject: s.base_subject().to_string(),
            });
        }
    }
    Ok(())
}

/// Subject-disjoint k-fold cross-validation: train on k-1 folds, evaluate
/// on the held-out fold, and pool all held-out errors.
pub fn cross_validate(
    samples: &[GazeSample],
    k: usize,
    config: &TrainConfig,
) -> Result<CvReport, HarnessError> {
    let split = split_folds(samples, k, config.seed)?;
    let mut fold_reports = Vec::with_capacity(k);
    let mut pooled_errors = Vec::new();
    for f in 0..k {
        let test: Vec<GazeSample> = split.folds()[f].iter().map(|&i| samples[i].clone()).collect();
        let train_set: Vec<GazeSample> = (0..k)
            .filter(|&g| g != f)
            .flat_map(|g| split.folds()[g].iter().map(|&i| samples[i].clone()))
            .collect();
        assert_disjoint(&subject_set(&train_set), &test)?;
        let run = train(&train_set, config)?;
        let errors = prediction_errors(&run.net, &test, config.zero_head_pose)?;
        fold_reports.push(EvalReport::from_errors(errors.clone())?);
        pooled_errors.extend(errors);
    }
    Ok(CvReport {
        pooled: EvalReport::from_errors(pooled_errors)?,
        folds: fold_reports,
    })
}

/// Cross-dataset matrix over the named datasets plus their union.
///
/// For every dataset, `1/holdout_k` of its subjects (the first fold of a
/// seeded split) are held out of all training. Each row trains once on the
/// remaining subjects of its source; each cell then evaluates on the test
/// dataset's samples whose subjects never entered that row's training set,
/// so the diagonal (and the combined row) report held-out error only.
pub fn cross_dataset_matrix(
    datasets: &[(String, Vec<GazeSample>)],
    holdout_k: usize,
    config: &TrainConfig,
) -> Result<MatrixReport, HarnessError> {
    if datasets.len() < 2 {
        return Err(HarnessError::BadMatrix(format!(
            "need at least 2 datasets, got {}",
            datasets.len()
        )));
    }
    let mut names: Vec<String> = datasets.iter().map(|(n, _)| n.clone()).collect();
    let unique: BTreeSet<&String> = names.iter().collect();
    if unique.len() != names.len() || names.iter().any(|n| n == "combined") {
        return Err(HarnessError::BadMatrix(
            "dataset names must be unique and not `combined`".into(),
        ));
    }

    // Per-dataset holdout: fold 0 of a seeded subject split.
    let mut train_parts: Vec<Vec<GazeSample>> = Vec::new();
    for (name, samples) in datasets {
        if samples.is_empty() {
            return Err(HarnessError::BadMatrix(format!("dataset `{name}` is empty")));
        }
        let split = split_folds(samples, holdout_k, config.seed)?;
        let holdout: BTreeSet<usize> = split.folds()[0].iter().copied().collect();
        train_parts.push(
            (0..samples.len())
                .filter(|i| !holdout.contains(i))
                .map(|i| samples[i].clone())
                .collect(),
        );
    }
    let combined_train: Vec<GazeSample> = train_parts.iter().flatten().cloned().collect();
    let combined_test: Vec<GazeSample> =
        datasets.iter().flat_map(|(_, s)| s.iter().cloned()).collect();

    names.push("combined".to_string());
    let mut sources: Vec<&[GazeSample]> = train_parts.iter().map(Vec::as_slice).collect();
    sources.push(&combined_train);
    let mut test_sets: Vec<&[GazeSample]> = datasets.iter().map(|(_, s)| s.as_slice()).collect();
    test_sets.push(&combined_test);

    let mut cells = Vec::with_capacity(names.len());
    for (row, source) in sources.iter().enumerate() {
        let run = train(source, config)?;
        let trained_on = subject_set(source);
        let mut row_cells = Vec::with_capacity(names.len());
        for (col, test_set) in test_sets.iter().enumerate() {
            let test: Vec<GazeSample> = test_set
                .iter()
                .filter(|s| !trained_on.contains(s.base_subject()))
                .cloned()
                .collect();
            if test.is_empty() {
                return Err(HarnessError::EmptyCell {
                    train: names[row].clone(),
                    test: names[col].clone(),
                });
            }
            assert_disjoint(&trained_on, &test)?;
            row_cells.push(evaluate_with(&run.net, &test, config.zero_head_pose)?);
        }
        cells.push(row_cells);
    }
    Ok(MatrixReport { names, cells })
}
