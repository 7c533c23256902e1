//! Training loops and the leave-one-source-out protocol.
//!
//! Three modes share one loop over a balanced stream:
//!
//! * `baseline` trains extractor and classifier on the disease loss alone.
//! * `grad_reversal` routes the features through a gradient-reversal node
//!   into the discriminator, runs one backward pass over `L_p + L_s`, and
//!   updates all three components together.
//! * `alternating` first takes `d_steps` discriminator steps on `L_s` with
//!   the extractor frozen, then one extractor and classifier step on
//!   `L_p − λ·L_s` with the discriminator frozen.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::datapipe::{stack, BalancedStream, Dataset, SourcedExample};
use crate::error::{Error, Result};
use crate::eval::{auc_roc, evaluate, EvalReport, ReportRow};
use crate::model::{self, ModelParams, Trainable};
use crate::objectives::{bce_loss, minmax_objectives, one_hot, source_ce_loss, Sgd};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    GradReversal,
    Alternating,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::GradReversal => "grad_reversal",
            Mode::Alternating => "alternating",
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != Mode::Baseline
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "grad_reversal" => Ok(Mode::GradReversal),
            "alternating" => Ok(Mode::Alternating),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected baseline, grad_reversal or alternating"
            ))),
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub mode: Mode,
    /// Discriminator updates per extractor update; alternating mode only.
    pub d_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Leave-one-out restricts itself to this source when set.
    pub held_out_source: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            mode: Mode::GradReversal,
            d_steps: 1,
            epochs: 30,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            seed: 7,
            held_out_source: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.d_steps == 0 {
            return Err(Error::Config("d_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Sgd::new(self.lr, self.momentum).map(|_| ())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{k}: cannot parse {v:?}")))
        }
        match key {
            "lambda" => self.lambda = num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "d_steps" => self.d_steps = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "held_out" => self.held_out_source = Some(value.to_string()),
            other => return Err(Error::Config(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode={}", self.mode)?;
        writeln!(f, "lambda={}", self.lambda)?;
        writeln!(f, "d_steps={}", self.d_steps)?;
        writeln!(f, "epochs={}", self.epochs)?;
        writeln!(f, "batch={}", self.batch_size)?;
        writeln!(f, "lr={}", self.lr)?;
        writeln!(f, "momentum={}", self.momentum)?;
        writeln!(f, "seed={}", self.seed)?;
        if let Some(h) = &self.held_out_source {
            writeln!(f, "held_out={h}")?;
        }
        Ok(())
    }
}

/// Per-epoch averages over the batches of the epoch. The source fields are
/// `None` for baseline runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    #[serde(rename = "L_p")]
    pub l_p: f64,
    #[serde(rename = "L_s")]
    pub l_s: Option<f64>,
    pub disc_acc: Option<f64>,
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub epochs: Vec<EpochStats>,
    pub checkpoint: Option<PathBuf>,
}

impl RunRecord {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// A stacked batch ready for a step.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<f64>,
    pub sources: Vec<usize>,
}

impl Batch {
    pub fn gather(examples: &[SourcedExample], idx: &[usize]) -> Result<Self> {
        let (x, labels, sources) = stack(examples, idx)?;
        Ok(Batch { x, labels, sources })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Losses and hit counts observed while taking one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub n: usize,
    pub l_p: f64,
    pub l_s: Option<f64>,
    pub correct: usize,
    pub disc_correct: Option<usize>,
}

fn count_correct(probs: &[f64], labels: &[f64]) -> usize {
    probs.iter().zip(labels).filter(|(p, y)| (**p > 0.5) == (**y == 1.0)).count()
}

fn count_disc_correct(scores: &Tensor, sources: &[usize]) -> usize {
    let s = scores.shape()[1];
    scores
        .data()
        .chunks(s)
        .zip(sources)
        .filter(|(row, &src)| crate::eval::argmax(row) == src)
        .count()
}

/// Parameters, optimizer state and the per-batch update rules.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    params: ModelParams,
    opt: Sgd,
}

const EXTRACTOR_AND_CLASSIFIER: Trainable = Trainable { extractor: true, classifier: true, discriminator: false };
const DISCRIMINATOR_ONLY: Trainable = Trainable { extractor: false, classifier: false, discriminator: true };

impl Trainer {
    /// Fresh parameters for `num_sources` training sources.
    pub fn new(config: TrainConfig, num_sources: usize) -> Result<Self> {
        config.validate()?;
        if config.mode.is_adversarial() && num_sources < 2 {
            return Err(Error::Config(format!(
                "{} mode needs at least 2 training sources, got {num_sources}",
                config.mode
            )));
        }
        let disc = config.mode.is_adversarial().then_some(num_sources);
        let params = ModelParams::init(disc, config.seed)?;
        Trainer::with_params(config, params)
    }

    pub fn with_params(config: TrainConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        if config.mode.is_adversarial() != params.discriminator.is_some() {
            return Err(Error::Config(format!(
                "{} mode with {} discriminator",
                config.mode,
                if params.discriminator.is_some() { "a" } else { "no" }
            )));
        }
        let opt = Sgd::new(config.lr, config.momentum)?;
        Ok(Trainer { config, params, opt })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    fn targets(&self, batch: &Batch) -> Result<Tensor> {
        let s = self.params.num_sources().expect("adversarial modes build a discriminator");
        one_hot(&batch.sources, s)
    }

    /// One update on `batch` according to the configured mode.
    pub fn step(&mut self, batch: &Batch) -> Result<StepStats> {
        match self.config.mode {
            Mode::Baseline => self.baseline_step(batch),
            Mode::GradReversal => self.grad_reversal_step(batch),
            Mode::Alternating => self.alternating_step(batch),
        }
    }

    fn baseline_step(&mut self, batch: &Batch) -> Result<StepStats> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, EXTRACTOR_AND_CLASSIFIER);
        let x = g.constant(batch.x.clone());
        let ex = model::extract(&mut g, &b, x)?;
        let p = model::classify(&mut g, &b, ex.features)?;
        let l_p = bce_loss(&mut g, p, &batch.labels)?;
        g.backward(l_p)?;
        self.apply(&g, &b, EXTRACTOR_AND_CLASSIFIER)?;
        Ok(StepStats {
            n: batch.len(),
            l_p: g.value(l_p).item(),
            l_s: None,
            correct: count_correct(g.value(p).data(), &batch.labels),
            disc_correct: None,
        })
    }

    fn grad_reversal_step(&mut self, batch: &Batch) -> Result<StepStats> {
        let targets = self.targets(batch)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, Trainable::ALL);
        let x = g.constant(batch.x.clone());
        let ex = model::extract(&mut g, &b, x)?;
        let p = model::classify(&mut g, &b, ex.features)?;
        let l_p = bce_loss(&mut g, p, &batch.labels)?;
        let reversed = g.gradient_reversal(ex.features, self.config.lambda)?;
        let s = model::discriminate(&mut g, &b, reversed)?;
        let l_s = source_ce_loss(&mut g, s, &targets)?;
        let total = g.add(l_p, l_s)?;
        g.backward(total)?;
        self.apply(&g, &b, Trainable::ALL)?;
        Ok(StepStats {
            n: batch.len(),
            l_p: g.value(l_p).item(),
            l_s: Some(g.value(l_s).item()),
            correct: count_correct(g.value(p).data(), &batch.labels),
            disc_correct: Some(count_disc_correct(g.value(s), &batch.sources)),
        })
    }

    fn alternating_step(&mut self, batch: &Batch) -> Result<StepStats> {
        let targets = self.targets(batch)?;
        // the extractor is frozen during discriminator steps, so its features are fixed
        let features = self.params.extract(&batch.x)?;
        for _ in 0..self.config.d_steps {
            let mut g = Graph::new();
            let b = self.params.bind(&mut g, DISCRIMINATOR_ONLY);
            let f = g.constant(features.clone());
            let s = model::discriminate(&mut g, &b, f)?;
            let l_s = source_ce_loss(&mut g, s, &targets)?;
            g.backward(l_s)?;
            self.apply(&g, &b, DISCRIMINATOR_ONLY)?;
        }
        self.extractor_step(batch, &targets)
    }

    /// Extractor and classifier update on `L_p − λ·L_s` with the discriminator frozen.
    fn extractor_step(&mut self, batch: &Batch, targets: &Tensor) -> Result<StepStats> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, EXTRACTOR_AND_CLASSIFIER);
        let x = g.constant(batch.x.clone());
        let ex = model::extract(&mut g, &b, x)?;
        let p = model::classify(&mut g, &b, ex.features)?;
        let l_p = bce_loss(&mut g, p, &batch.labels)?;
        let s = model::discriminate(&mut g, &b, ex.features)?;
        let l_s = source_ce_loss(&mut g, s, targets)?;
        let (objective, _) = minmax_objectives(&mut g, l_p, l_s, self.config.lambda)?;
        g.backward(objective)?;
        self.apply(&g, &b, EXTRACTOR_AND_CLASSIFIER)?;
        Ok(StepStats {
            n: batch.len(),
            l_p: g.value(l_p).item(),
            l_s: Some(g.value(l_s).item()),
            correct: count_correct(g.value(p).data(), &batch.labels),
            disc_correct: Some(count_disc_correct(g.value(s), &batch.sources)),
        })
    }

    /// Alternating step with both objectives differentiated at the same
    /// parameters before either update is applied. With `d_steps = 1` this
    /// is the same update as a gradient-reversal step.
    pub fn synchronized_alternating_step(&mut self, batch: &Batch) -> Result<StepStats> {
        if self.config.mode != Mode::Alternating {
            return Err(Error::Config("synchronized step requires alternating mode".into()));
        }
        let targets = self.targets(batch)?;
        let features = self.params.extract(&batch.x)?;
        let mut gd = Graph::new();
        let bd = self.params.bind(&mut gd, DISCRIMINATOR_ONLY);
        let f = gd.constant(features);
        let s = model::discriminate(&mut gd, &bd, f)?;
        let l_s = source_ce_loss(&mut gd, s, &targets)?;
        gd.backward(l_s)?;

        let mut ge = Graph::new();
        let be = self.params.bind(&mut ge, EXTRACTOR_AND_CLASSIFIER);
        let x = ge.constant(batch.x.clone());
        let ex = model::extract(&mut ge, &be, x)?;
        let p = model::classify(&mut ge, &be, ex.features)?;
        let l_p = bce_loss(&mut ge, p, &batch.labels)?;
        let se = model::discriminate(&mut ge, &be, ex.features)?;
        let l_se = source_ce_loss(&mut ge, se, &targets)?;
        let (objective, _) = minmax_objectives(&mut ge, l_p, l_se, self.config.lambda)?;
        ge.backward(objective)?;

        self.params.zero_grad();
        self.params.accumulate_grads(&gd, &bd);
        self.params.accumulate_grads(&ge, &be);
        self.opt.step(self.params.select_mut(Trainable::ALL))?;
        self.params.zero_grad();
        Ok(StepStats {
            n: batch.len(),
            l_p: ge.value(l_p).item(),
            l_s: Some(ge.value(l_se).item()),
            correct: count_correct(ge.value(p).data(), &batch.labels),
            disc_correct: Some(count_disc_correct(ge.value(se), &batch.sources)),
        })
    }

    fn apply(&mut self, g: &Graph, b: &model::BoundParams, which: Trainable) -> Result<()> {
        self.params.zero_grad();
        self.params.accumulate_grads(g, b);
        self.opt.step(self.params.select_mut(which))?;
        self.params.zero_grad();
        Ok(())
    }
}

/// Sums step statistics into epoch averages.
#[derive(Clone, Debug, Default)]
struct EpochAccumulator {
    n: usize,
    l_p: f64,
    l_s: f64,
    correct: usize,
    disc_correct: usize,
    adversarial: bool,
}

impl EpochAccumulator {
    fn add(&mut self, s: &StepStats) {
        self.n += s.n;
        self.l_p += s.l_p * s.n as f64;
        self.correct += s.correct;
        if let (Some(l), Some(c)) = (s.l_s, s.disc_correct) {
            self.adversarial = true;
            self.l_s += l * s.n as f64;
            self.disc_correct += c;
        }
    }

    fn finish(&self, epoch: usize) -> EpochStats {
        let n = self.n as f64;
        EpochStats {
            epoch,
            l_p: self.l_p / n,
            l_s: self.adversarial.then(|| self.l_s / n),
            disc_acc: self.adversarial.then(|| self.disc_correct as f64 / n),
            train_acc: self.correct as f64 / n,
        }
    }
}

/// Trains on `examples` whose sources are `0..num_sources`.
pub fn train(config: &TrainConfig, examples: &[SourcedExample], num_sources: usize) -> Result<(ModelParams, RunRecord)> {
    train_with(config, examples, num_sources, |_, _| {})
}

/// [`train`] with a hook called after every epoch.
pub fn train_with(
    config: &TrainConfig,
    examples: &[SourcedExample],
    num_sources: usize,
    mut on_epoch: impl FnMut(&EpochStats, &ModelParams),
) -> Result<(ModelParams, RunRecord)> {
    let sources: Vec<usize> = examples.iter().map(|e| e.source).collect();
    let mut stream = BalancedStream::new(&sources, num_sources, config.batch_size, config.seed)?;
    let mut trainer = Trainer::new(config.clone(), num_sources)?;
    let mut record = RunRecord { config: config.clone(), epochs: Vec::new(), checkpoint: None };
    for epoch in 0..config.epochs {
        let mut acc = EpochAccumulator::default();
        for idx in stream.next_epoch() {
            let batch = Batch::gather(examples, &idx)?;
            acc.add(&trainer.step(&batch)?);
        }
        let stats = acc.finish(epoch);
        log::info!(
            "{} epoch {epoch}: L_p {:.4} L_s {} disc_acc {} train_acc {:.3}",
            config.mode,
            stats.l_p,
            stats.l_s.map_or("-".into(), |v| format!("{v:.4}")),
            stats.disc_acc.map_or("-".into(), |v| format!("{v:.3}")),
            stats.train_acc
        );
        if !stats.l_p.is_finite() {
            return Err(Error::Validation(format!("disease loss diverged at epoch {epoch}")));
        }
        on_epoch(&stats, trainer.params());
        record.epochs.push(stats);
    }
    Ok((trainer.into_params(), record))
}

/// Examples of the kept sources, re-indexed densely in the original order.
pub fn restrict(examples: &[SourcedExample], keep: &[usize]) -> Vec<SourcedExample> {
    examples
        .iter()
        .filter_map(|e| {
            keep.iter().position(|&k| k == e.source).map(|s| SourcedExample { source: s, ..e.clone() })
        })
        .collect()
}

/// One trained model of a leave-one-out fold.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub params: ModelParams,
    pub record: RunRecord,
    pub auc_in_source: f64,
    pub auc_out_of_source: f64,
}

#[derive(Clone, Debug)]
pub struct Fold {
    pub held_out: String,
    /// Training sources, in the order the discriminator indexes them.
    pub train_sources: Vec<String>,
    pub baseline: FoldRun,
    /// The configured adversarial mode; `None` when the mode is baseline.
    pub proposed: Option<FoldRun>,
}

#[derive(Clone, Debug)]
pub struct LooOutcome {
    pub config: TrainConfig,
    pub folds: Vec<Fold>,
    pub report: EvalReport,
}

fn run_fold(config: &TrainConfig, data: &Dataset, held: usize) -> Result<Fold> {
    let keep: Vec<usize> = (0..data.num_sources()).filter(|&s| s != held).collect();
    let train_set = restrict(&data.train, &keep);
    let in_source = restrict(&data.test, &keep);
    let out_source: Vec<SourcedExample> = data.test.iter().filter(|e| e.source == held).cloned().collect();
    let fit = |mode: Mode| -> Result<FoldRun> {
        let cfg = TrainConfig { mode, ..config.clone() };
        let (params, record) = train(&cfg, &train_set, keep.len())?;
        let auc_in_source = auc_roc(&evaluate(&params, &in_source)?)?;
        let auc_out_of_source = auc_roc(&evaluate(&params, &out_source)?)?;
        Ok(FoldRun { params, record, auc_in_source, auc_out_of_source })
    };
    let baseline = fit(Mode::Baseline)?;
    let proposed = if config.mode.is_adversarial() { Some(fit(config.mode)?) } else { None };
    Ok(Fold {
        held_out: data.source_names[held].clone(),
        train_sources: keep.iter().map(|&s| data.source_names[s].clone()).collect(),
        baseline,
        proposed,
    })
}

/// For each held-out source (or only `config.held_out_source`), trains a
/// baseline and the configured mode on the remaining sources and scores
/// both on the in-source and out-of-source test splits. Up to `jobs` folds
/// run at once; results come back in source order either way.
pub fn run_leave_one_out(config: &TrainConfig, data: &Dataset, jobs: usize) -> Result<LooOutcome> {
    config.validate()?;
    let s = data.num_sources();
    if s < 3 {
        return Err(Error::Config(format!("leave-one-out needs at least 3 sources, got {s}")));
    }
    for (i, name) in data.source_names.iter().enumerate() {
        if !data.train.iter().any(|e| e.source == i) {
            return Err(Error::Validation(format!("source {name} has no training split")));
        }
        if !data.test.iter().any(|e| e.source == i) {
            return Err(Error::Validation(format!("source {name} has no test split")));
        }
    }
    let held: Vec<usize> = match &config.held_out_source {
        Some(name) => vec![data
            .source_index(name)
            .ok_or_else(|| Error::Config(format!("held-out source {name:?} not in data")))?],
        None => (0..s).collect(),
    };
    let mut folds = Vec::with_capacity(held.len());
    for group in held.chunks(jobs.max(1)) {
        let results: Vec<Result<Fold>> = std::thread::scope(|scope| {
            let handles: Vec<_> = group.iter().map(|&h| scope.spawn(move || run_fold(config, data, h))).collect();
            handles.into_iter().map(|h| h.join().expect("fold thread panicked")).collect()
        });
        for r in results {
            folds.push(r?);
        }
    }
    let mut report = EvalReport::default();
    for f in &folds {
        for (mode, run) in [(Mode::Baseline, Some(&f.baseline)), (config.mode, f.proposed.as_ref())] {
            if let Some(run) = run {
                report.rows.push(ReportRow::new(&f.held_out, mode.name(), run.auc_in_source, run.auc_out_of_source));
            }
        }
    }
    Ok(LooOutcome { config: config.clone(), folds, report })
}

impl LooOutcome {
    /// Writes per-fold checkpoints and epoch logs, the report in JSON and
    /// text, and the resolved configuration.
    pub fn write(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, fold) in self.folds.iter_mut().enumerate() {
            let base_ckpt = dir.join(format!("fold{i}.baseline.ckpt"));
            fold.baseline.params.save(&base_ckpt)?;
            fold.baseline.record.checkpoint = Some(base_ckpt);
            fold.baseline.record.write_jsonl(dir.join(format!("fold{i}.baseline.jsonl")))?;
            if let Some(p) = &mut fold.proposed {
                let ckpt = dir.join(format!("fold{i}.ckpt"));
                p.params.save(&ckpt)?;
                p.record.checkpoint = Some(ckpt);
                p.record.write_jsonl(dir.join(format!("fold{i}.jsonl")))?;
            }
        }
        self.report.write(dir)?;
        let mut cfg = self.config.to_string();
        for (i, f) in self.folds.iter().enumerate() {
            cfg.push_str(&format!("fold{i}={} (train: {})\n", f.held_out, f.train_sources.join(",")));
        }
        let path = dir.join("config.txt");
        fs::write(&path, cfg).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{generate, SynthSpec};

    fn tiny(n: usize) -> Dataset {
        let spec = SynthSpec { n, sources: 3, rho: vec![0.9, 0.9, 0.0], stamp: vec![1.0, 0.5, 1.0], size: 16, ..Default::default() };
        generate(&spec).unwrap()
    }

    fn cfg(mode: Mode) -> TrainConfig {
        TrainConfig { mode, epochs: 2, batch_size: 8, ..TrainConfig::default() }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Baseline, Mode::GradReversal, Mode::Alternating] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("adversarial".parse::<Mode>().is_err());
    }

    #[test]
    fn adversarial_needs_two_sources() {
        let err = Trainer::new(cfg(Mode::GradReversal), 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(Trainer::new(cfg(Mode::Baseline), 1).is_ok());
    }

    #[test]
    fn baseline_never_builds_a_discriminator() {
        let data = tiny(8);
        let (params, record) = train(&cfg(Mode::Baseline), &data.train, 3).unwrap();
        assert!(params.discriminator.is_none());
        assert_eq!(record.epochs.len(), 2);
        assert!(record.epochs.iter().all(|e| e.l_s.is_none() && e.disc_acc.is_none()));
        let line = record.to_jsonl().unwrap();
        assert!(line.starts_with("{\"epoch\":0,\"L_p\":") && line.contains("\"L_s\":null"));
    }

    #[test]
    fn alternating_freezes_the_other_side() {
        let data = tiny(8);
        let mut t = Trainer::new(TrainConfig { d_steps: 2, ..cfg(Mode::Alternating) }, 3).unwrap();
        let batch = Batch::gather(&data.train, &[0, 1, 9, 10, 17, 18]).unwrap();
        let before = t.params().clone();
        let targets = t.targets(&batch).unwrap();
        let features = t.params.extract(&batch.x).unwrap();
        let mut g = Graph::new();
        let b = t.params.bind(&mut g, DISCRIMINATOR_ONLY);
        let f = g.constant(features);
        let s = model::discriminate(&mut g, &b, f).unwrap();
        let l = source_ce_loss(&mut g, s, &targets).unwrap();
        g.backward(l).unwrap();
        t.apply(&g, &b, DISCRIMINATOR_ONLY).unwrap();
        assert_eq!(t.params().extractor, before.extractor);
        assert_eq!(t.params().classifier, before.classifier);
        assert_ne!(t.params().discriminator, before.discriminator);
        let mid = t.params().clone();
        t.extractor_step(&batch, &targets).unwrap();
        assert_eq!(t.params().discriminator, mid.discriminator);
        assert_ne!(t.params().extractor, mid.extractor);
    }

    #[test]
    fn loo_needs_three_sources_and_test_splits() {
        let mut data = tiny(4);
        let two = Dataset { source_names: data.source_names[..2].to_vec(), ..data.clone() };
        assert!(run_leave_one_out(&cfg(Mode::Baseline), &two, 1).is_err());
        data.test.retain(|e| e.source != 1);
        let err = run_leave_one_out(&cfg(Mode::Baseline), &data, 1).unwrap_err();
        assert!(err.to_string().contains("src1"), "{err}");
    }
}
