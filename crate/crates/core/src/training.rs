//! Mini-batch training with cross-entropy, per-clip majority voting and
//! finite-difference gradient checking.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{Bucket, Segment, SplitPlan};
use crate::layers::FrameBlock;
use crate::model::{ModelError, ModelGradients, TrainedModel};

/// Probabilities are clamped to at least this before taking the log.
pub const CE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("training split has no segments")]
    EmptyTrainingSplit,
    #[error("clip prediction needs at least one segment")]
    EmptySegments,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("clip {0:?} is not in the split plan")]
    UnknownClip(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub(crate) fn cross_entropy_unchecked(pred: &[f64], target: usize) -> f64 {
    -pred[target].max(CE_EPSILON).ln()
}

/// `-ln(pred[target])`, with the probability clamped to [`CE_EPSILON`].
pub fn cross_entropy(pred: &[f64], target: usize) -> Result<f64, TrainError> {
    if target >= pred.len() {
        return Err(TrainError::TargetOutOfRange {
            target,
            classes: pred.len(),
        });
    }
    Ok(cross_entropy_unchecked(pred, target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    GradientDescent,
    /// Classical momentum with the given coefficient.
    Momentum(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Training segment hop, recorded in reports; 0 means the segment size.
    pub hop: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 200,
            seed: 1337,
            patience: 10,
            hop: 0,
            optimizer: Optimizer::Momentum(0.9),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if let Optimizer::Momentum(m) = self.optimizer {
            if !(0.0..1.0).contains(&m) {
                return bad("momentum must be in [0, 1)");
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let (optimizer, momentum) = match self.optimizer {
            Optimizer::GradientDescent => ("sgd", 0.0),
            Optimizer::Momentum(m) => ("momentum", m),
        };
        format!(
            "learning_rate = {:?}\nbatch_size = {}\nepochs = {}\nseed = {}\npatience = {}\nhop = {}\noptimizer = {optimizer}\nmomentum = {momentum:?}\n",
            self.learning_rate, self.batch_size, self.epochs, self.seed, self.patience, self.hop
        )
    }
}

/// All segments of one clip and the clip's true label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSegments {
    pub clip_id: String,
    pub label: usize,
    pub segments: Vec<Segment>,
}

/// Groups segments by clip id (sorted), keeping each clip's segment order.
pub fn group_segments(segments: Vec<Segment>) -> Vec<ClipSegments> {
    let mut map: BTreeMap<String, ClipSegments> = BTreeMap::new();
    for s in segments {
        map.entry(s.clip_id.clone())
            .or_insert_with(|| ClipSegments {
                clip_id: s.clip_id.clone(),
                label: s.label,
                segments: Vec::new(),
            })
            .segments
            .push(s);
    }
    map.into_values().collect()
}

/// Clip-level decision from its segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPrediction {
    pub class: usize,
    pub votes: Vec<usize>,
    pub mean_probabilities: Vec<f64>,
}

fn argmax(v: &[f64]) -> usize {
    // first maximum wins
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Majority vote over per-segment probability vectors. Ties go to the class
/// with the highest mean probability, then the lowest class id. The mean is
/// summed in sorted order so it doesn't depend on segment order.
pub fn vote(probabilities: &[Vec<f64>]) -> Result<ClipPrediction, TrainError> {
    let first = probabilities.first().ok_or(TrainError::EmptySegments)?;
    let classes = first.len();
    let mut votes = vec![0usize; classes];
    for p in probabilities {
        votes[argmax(p)] += 1;
    }
    let mut mean = vec![0.0; classes];
    let mut column = Vec::with_capacity(probabilities.len());
    for (c, m) in mean.iter_mut().enumerate() {
        column.clear();
        column.extend(probabilities.iter().map(|p| p[c]));
        column.sort_by(f64::total_cmp);
        *m = column.iter().sum::<f64>() / probabilities.len() as f64;
    }
    let top = *votes.iter().max().expect("non-empty");
    let mut class = usize::MAX;
    for c in (0..classes).filter(|&c| votes[c] == top) {
        if class == usize::MAX || mean[c] > mean[class] {
            class = c;
        }
    }
    Ok(ClipPrediction {
        class,
        votes,
        mean_probabilities: mean,
    })
}

pub fn predict_clip(model: &TrainedModel, segments: &[Segment]) -> Result<ClipPrediction, TrainError> {
    if segments.is_empty() {
        return Err(TrainError::EmptySegments);
    }
    let probs = segments
        .iter()
        .map(|s| model.forward(&s.frames))
        .collect::<Result<Vec<_>, _>>()?;
    vote(&probs)
}

/// Clip counts by true class (rows) and predicted class (columns). The last
/// column counts clips that had no segments and so no prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * (classes + 1)],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `predicted = None` records a clip without a prediction.
    pub fn record(&mut self, truth: usize, predicted: Option<usize>) {
        let col = predicted.unwrap_or(self.classes);
        self.counts[truth * (self.classes + 1) + col] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * (self.classes + 1) + predicted]
    }

    pub fn unpredicted(&self, truth: usize) -> usize {
        self.get(truth, self.classes)
    }

    pub fn row_sum(&self, truth: usize) -> usize {
        let w = self.classes + 1;
        self.counts[truth * w..(truth + 1) * w].iter().sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in 0..self.classes {
            let w = self.classes + 1;
            let row: Vec<String> = self.counts[r * w..(r + 1) * w].iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub clips: usize,
    pub correct: usize,
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
}

/// Per-clip accuracy by majority vote. Clips without segments count as wrong.
pub fn evaluate(model: &TrainedModel, clips: &[ClipSegments]) -> Result<EvalReport, TrainError> {
    let classes = model.class_count();
    let predictions: Vec<Option<ClipPrediction>> = clips
        .par_iter()
        .map(|c| {
            if c.segments.is_empty() {
                Ok(None)
            } else {
                predict_clip(model, &c.segments).map(Some)
            }
        })
        .collect::<Result<_, _>>()?;
    let mut confusion = ConfusionMatrix::new(classes);
    let mut correct = 0;
    let mut warnings = Vec::new();
    for (clip, pred) in clips.iter().zip(&predictions) {
        if clip.label >= classes {
            return Err(TrainError::TargetOutOfRange {
                target: clip.label,
                classes,
            });
        }
        match pred {
            Some(p) => {
                confusion.record(clip.label, Some(p.class));
                correct += usize::from(p.class == clip.label);
            }
            None => {
                warnings.push(format!("clip {:?} has no segments; counted as an error", clip.clip_id));
                confusion.record(clip.label, None);
            }
        }
    }
    Ok(EvalReport {
        accuracy: if clips.is_empty() {
            0.0
        } else {
            correct as f64 / clips.len() as f64
        },
        clips: clips.len(),
        correct,
        confusion,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Segment-level accuracy over the epoch's training pass.
    pub train_accuracy: f64,
    pub validation_loss: Option<f64>,
    /// Clip-level (majority vote) validation accuracy.
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub test: Option<EvalReport>,
    pub config: TrainConfig,
    /// Not part of [`RunReport::to_text`], which must be reproducible.
    pub wall_clock_seconds: f64,
}

impl RunReport {
    /// Key-value report plus the test confusion matrix. Floats use Rust's
    /// shortest round-trip formatting, so identical runs give identical text.
    pub fn to_text(&self) -> String {
        let mut s = String::from("[config]\n");
        s.push_str(&self.config.to_text());
        s.push_str("\n[summary]\n");
        let _ = writeln!(s, "epochs_run = {}", self.epochs.len());
        let _ = writeln!(s, "best_epoch = {}", self.best_epoch);
        let _ = writeln!(s, "stopped_early = {}", self.stopped_early);
        if let Some(t) = &self.test {
            let _ = writeln!(s, "test_clips = {}", t.clips);
            let _ = writeln!(s, "test_correct = {}", t.correct);
            let _ = writeln!(s, "test_accuracy = {:?}", t.accuracy);
        }
        s.push_str("\n[epochs]\n# epoch train_loss train_accuracy validation_loss validation_accuracy\n");
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:?}"));
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{} {:?} {:?} {} {}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                opt(e.validation_loss),
                opt(e.validation_accuracy)
            );
        }
        if let Some(t) = &self.test {
            s.push_str("\n[confusion]\n# rows: true class, columns: predicted class, last column: no prediction\n");
            s.push_str(&t.confusion.to_text());
            for w in &t.warnings {
                let _ = writeln!(s, "# warning: {w}");
            }
        }
        s
    }
}

/// Segments per parallel work unit. Fixed so results don't depend on the
/// number of threads.
const GRADIENT_CHUNK: usize = 8;

fn batch_gradients(model: &TrainedModel, batch: &[&Segment]) -> Result<(f64, usize, ModelGradients), TrainError> {
    let partials: Vec<(f64, usize, ModelGradients)> = batch
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut grads = ModelGradients::zeros_like(model);
            let mut loss = 0.0;
            let mut correct = 0;
            for s in chunk {
                let tape = model.forward_taped(&s.frames)?;
                loss += cross_entropy(&tape.probabilities, s.label)?;
                correct += usize::from(argmax(&tape.probabilities) == s.label);
                let mut g = tape.probabilities.clone();
                g[s.label] -= 1.0;
                grads.accumulate(&model.backward(&tape, &g)?);
            }
            Ok::<_, TrainError>((loss, correct, grads))
        })
        .collect::<Result<_, _>>()?;
    let mut iter = partials.into_iter();
    let (mut loss, mut correct, mut grads) = iter.next().expect("batch is non-empty");
    for (l, c, g) in iter {
        loss += l;
        correct += c;
        grads.accumulate(&g);
    }
    Ok((loss, correct, grads))
}

fn mean_loss(model: &TrainedModel, segments: &[&Segment]) -> Result<f64, TrainError> {
    let losses: Vec<f64> = segments
        .par_iter()
        .map(|s| cross_entropy(&model.forward(&s.frames)?, s.label))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains on the plan's `train` clips, early-stopping on the `validation`
/// clips' mean segment loss (training loss when there is no validation set),
/// and evaluates the best parameters on the `test` clips.
pub fn train(
    model: &TrainedModel,
    clips: &[ClipSegments],
    plan: &SplitPlan,
    config: &TrainConfig,
) -> Result<(TrainedModel, RunReport), TrainError> {
    config.validate()?;
    let started = Instant::now();
    let mut by_bucket: BTreeMap<Bucket, Vec<&ClipSegments>> = BTreeMap::new();
    for c in clips {
        let bucket = plan
            .bucket(&c.clip_id)
            .ok_or_else(|| TrainError::UnknownClip(c.clip_id.clone()))?;
        by_bucket.entry(bucket).or_default().push(c);
    }
    let segments_of = |b: Bucket| -> Vec<&Segment> {
        by_bucket
            .get(&b)
            .map(|cs| cs.iter().flat_map(|c| c.segments.iter()).collect())
            .unwrap_or_default()
    };
    let train_segments = segments_of(Bucket::Train);
    if train_segments.is_empty() {
        return Err(TrainError::EmptyTrainingSplit);
    }
    let val_clips: Vec<ClipSegments> = by_bucket
        .get(&Bucket::Validation)
        .map(|cs| cs.iter().map(|&c| c.clone()).collect())
        .unwrap_or_default();
    let val_segments = segments_of(Bucket::Validation);

    let mut current = model.clone();
    let mut velocity: Vec<Vec<f64>> = current.parameters().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_segments.len()).collect();

    let mut best = (f64::INFINITY, 0usize, current.clone());
    let mut epochs = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Segment> = idx.iter().map(|&i| train_segments[i]).collect();
            let (loss, correct, mut grads) = batch_gradients(&current, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch, batch: b, loss });
            }
            epoch_loss += loss;
            epoch_correct += correct;
            grads.scale(1.0 / batch.len() as f64);
            let lr = config.learning_rate;
            for ((param, grad), vel) in current
                .parameters_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(&mut velocity)
            {
                match config.optimizer {
                    Optimizer::GradientDescent => {
                        for (p, g) in param.iter_mut().zip(grad) {
                            *p -= lr * g;
                        }
                    }
                    Optimizer::Momentum(mu) => {
                        for ((p, g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
                            *v = mu * *v - lr * g;
                            *p += *v;
                        }
                    }
                }
            }
        }
        let n = train_segments.len() as f64;
        let train_loss = epoch_loss / n;
        let (validation_loss, validation_accuracy) = if val_segments.is_empty() {
            (None, None)
        } else {
            let loss = mean_loss(&current, &val_segments)?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: usize::MAX,
                    loss,
                });
            }
            (Some(loss), Some(evaluate(&current, &val_clips)?.accuracy))
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy: epoch_correct as f64 / n,
            validation_loss,
            validation_accuracy,
        });
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, validation loss {}",
            validation_loss.map_or("-".into(), |v| format!("{v:.5}"))
        );
        let monitored = validation_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, epoch, current.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
    }

    let (_, best_epoch, best_model) = best;
    let test_clips: Vec<ClipSegments> = by_bucket
        .get(&Bucket::Test)
        .map(|cs| cs.iter().map(|&c| c.clone()).collect())
        .unwrap_or_default();
    let test = if test_clips.is_empty() {
        None
    } else {
        Some(evaluate(&best_model, &test_clips)?)
    };
    let report = RunReport {
        epochs,
        best_epoch,
        stopped_early,
        test,
        config: config.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((best_model, report))
}

/// Finite-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Exact zeros in the checked segment are replaced by this.
pub const GRAD_CHECK_NUDGE: f64 = 1e-7;
/// Gradient magnitudes below this are compared on an absolute scale: the
/// relative error is `|a - n| / max(|a|, |n|, GRAD_CHECK_SCALE_FLOOR)`.
pub const GRAD_CHECK_SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Elements whose difference had to be taken one-sided because a PReLU
    /// kink lay within one step.
    pub one_sided: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_relative_error < self.tolerance)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tensors {
            let _ = writeln!(
                s,
                "{} {} elements max_rel {:.3e} max_abs {:.3e} one_sided {} {}",
                t.name,
                t.elements,
                t.max_relative_error,
                t.max_absolute_error,
                t.one_sided,
                if t.max_relative_error < self.tolerance {
                    "PASS"
                } else {
                    "FAIL"
                }
            );
        }
        let _ = writeln!(
            s,
            "overall max_rel {:.3e} tolerance {:e} {}",
            self.max_relative_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_SCALE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares [`TrainedModel::loss_and_gradients`] against central differences.
pub fn grad_check(
    model: &TrainedModel,
    segment: &FrameBlock,
    target: usize,
    tolerance: f64,
) -> Result<GradCheckReport, TrainError> {
    grad_check_with(model, segment, target, tolerance, |m, s, t| {
        Ok(m.loss_and_gradients(s, t)?.1)
    })
}

/// Gradient check against an arbitrary analytic gradient routine.
///
/// Each parameter is perturbed by `+-h`. When the PReLU branch pattern at
/// `+h` or `-h` differs from the unperturbed one, the difference is taken on
/// the side that keeps the pattern, with the second-order one-sided formula
/// `(4 f(h/2) - f(h) - 3 f(0)) / h`.
pub fn grad_check_with(
    model: &TrainedModel,
    segment: &FrameBlock,
    target: usize,
    tolerance: f64,
    analytic: impl Fn(&TrainedModel, &FrameBlock, usize) -> Result<ModelGradients, TrainError>,
) -> Result<GradCheckReport, TrainError> {
    let nudged = FrameBlock::new(segment.matrix().map(|v| if v == 0.0 { GRAD_CHECK_NUDGE } else { v }))
        .map_err(ModelError::from)?;
    let segment = &nudged;
    let grads = analytic(model, segment, target)?;
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    let analytic_tensors: Vec<Vec<f64>> = grads.tensors().into_iter().map(<[f64]>::to_vec).collect();

    let eval = |m: &TrainedModel| -> Result<(f64, Vec<bool>), TrainError> {
        let tape = m.forward_taped(segment)?;
        Ok((cross_entropy(&tape.probabilities, target)?, tape.kink_pattern()))
    };
    let (f0, p0) = eval(model)?;
    let h = GRAD_CHECK_STEP;
    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let analytic = &analytic_tensors[ti];
        let len = analytic.len();
        let mut check = TensorCheck {
            name,
            elements: len,
            max_relative_error: 0.0,
            max_absolute_error: 0.0,
            one_sided: 0,
        };
        for (i, &a) in analytic.iter().enumerate() {
            let original = probe.parameters_mut()[ti][i];
            let at = |delta: f64, probe: &mut TrainedModel| {
                probe.parameters_mut()[ti][i] = original + delta;
                let r = eval(probe);
                probe.parameters_mut()[ti][i] = original;
                r
            };
            let (fp, pp) = at(h, &mut probe)?;
            let (fm, pm) = at(-h, &mut probe)?;
            let numeric = if pp == p0 && pm == p0 {
                (fp - fm) / (2.0 * h)
            } else if pp == p0 {
                check.one_sided += 1;
                let (fh, _) = at(h / 2.0, &mut probe)?;
                (4.0 * fh - fp - 3.0 * f0) / h
            } else if pm == p0 {
                check.one_sided += 1;
                let (fh, _) = at(-h / 2.0, &mut probe)?;
                -(4.0 * fh - fm - 3.0 * f0) / h
            } else {
                (fp - fm) / (2.0 * h)
            };
            check.max_relative_error = check.max_relative_error.max(relative_error(a, numeric));
            check.max_absolute_error = check.max_absolute_error.max((a - numeric).abs());
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tolerance, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let c = 7;
        let u = vec![1.0 / c as f64; c];
        assert!((cross_entropy(&u, 3).unwrap() - (c as f64).ln()).abs() < 1e-12);
        assert!((cross_entropy(&[0.7, 0.3], 1).unwrap() - 1.203_972_804_325_936).abs() < 1e-12);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - (-CE_EPSILON.ln())).abs() < 1e-12);
        assert!(cross_entropy(&[1.0], 1).is_err());
    }

    #[test]
    fn vote_examples() {
        let p = |v: &[f64]| v.to_vec();
        let all2 = vec![p(&[0.1, 0.2, 0.7]); 4];
        assert_eq!(vote(&all2).unwrap().class, 2);
        assert_eq!(vote(&[p(&[0.6, 0.4])]).unwrap().class, 0);
        // 2 votes each; mean for class 0 is 0.6, class 1 is 0.4
        let tie = vec![p(&[0.9, 0.1]), p(&[0.9, 0.1]), p(&[0.4, 0.6]), p(&[0.2, 0.8])];
        let pred = vote(&tie).unwrap();
        assert_eq!(pred.votes, vec![2, 2]);
        assert!((pred.mean_probabilities[0] - 0.6).abs() < 1e-12);
        assert_eq!(pred.class, 0);
        // full tie falls to the lowest id
        let flat = vec![p(&[0.5, 0.5]), p(&[0.5, 0.5])];
        assert_eq!(vote(&flat).unwrap().class, 0);
        assert_eq!(vote(&[]).unwrap_err(), TrainError::EmptySegments);
    }

    #[test]
    fn confusion_rows_include_unpredicted() {
        let mut c = ConfusionMatrix::new(2);
        c.record(0, Some(0));
        c.record(0, None);
        c.record(1, Some(0));
        assert_eq!(c.row_sum(0), 2);
        assert_eq!(c.unpredicted(0), 1);
        assert_eq!(c.get(1, 0), 1);
        assert_eq!(c.to_text(), "1 0 1\n1 0 0\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            optimizer: Optimizer::Momentum(1.5),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }
}
