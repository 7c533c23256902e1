//! Command-line front end: `synth`, `train`, `eval`, `loo` and `gradcam`.
//!
//! Outputs are files. Every run echoes its resolved configuration next to
//! its results, and all randomness derives from `--seed`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::attribution::grad_cam;
use crate::datapipe::pgm::read_pgm;
use crate::datapipe::{write_synth, Dataset, Manifest, SourcedExample, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{auc_roc, evaluate, EvalReport, ReportRow};
use crate::model::ModelParams;
use crate::training::{restrict, run_leave_one_out, train, Mode, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "xinv", version, about = "Source-invariant feature learning with an adversarial discriminator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-source dataset
    Synth {
        /// key=value generator settings
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the training split
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Source to leave out of training
        #[arg(long)]
        held_out: Option<String>,
    },
    /// Score a checkpoint on a data directory's test split or a manifest
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Data directory (its test.csv is used) or a manifest CSV
        #[arg(long)]
        data: PathBuf,
        /// Report in-source vs out-of-source AUC for this source
        #[arg(long)]
        held_out: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-source-out experiment: baseline and the chosen mode per fold
    Loo {
        #[command(flatten)]
        run: RunArgs,
        /// Only hold out this source
        #[arg(long)]
        held_out: Option<String>,
        /// Folds trained concurrently
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Grad-CAM heatmap for one image
    Gradcam {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Heatmap PGM; the composite and CSV are written beside it
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    Baseline,
    #[value(alias = "grad-reversal")]
    GradReversal,
    Alternating,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::GradReversal => Mode::GradReversal,
            ModeArg::Alternating => Mode::Alternating,
        }
    }
}

/// Training flags shared by `train` and `loo`. Unset flags fall back to the
/// `--spec` file, then to the defaults.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// key=value training settings
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub d_steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

impl RunArgs {
    pub fn resolve(&self, held_out: Option<&str>) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.spec {
            read_key_values(path, |k, v| cfg.set(k, v))?;
        }
        if let Some(m) = self.mode {
            cfg.mode = m.into();
        }
        macro_rules! overlay {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag {
                    cfg.$field = v;
                }
            )*};
        }
        overlay!(lambda => lambda, d_steps => d_steps, epochs => epochs, batch => batch_size, lr => lr, momentum => momentum, seed => seed);
        if let Some(h) = held_out {
            cfg.held_out_source = Some(h.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Feeds each `key=value` line of `path` to `set`; `#` starts a comment.
fn read_key_values(path: &Path, mut set: impl FnMut(&str, &str) -> Result<()>) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let (k, v) = line.split_once('=').ok_or_else(|| parse(format!("expected key=value, got {line:?}")))?;
        set(k.trim(), v.trim()).map_err(|e| parse(e.to_string()))?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, seed, out } => {
            let mut s = match spec {
                Some(p) => SynthSpec::load(p)?,
                None => SynthSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            create_dir(&out)?;
            let o = write_synth(&s, &out)?;
            println!("wrote {} and {}", o.train_manifest.display(), o.test_manifest.display());
            Ok(())
        }
        Command::Train { run, held_out } => cmd_train(&run, held_out.as_deref()),
        Command::Eval { ckpt, data, held_out, out } => cmd_eval(&ckpt, &data, held_out.as_deref(), out.as_deref()),
        Command::Loo { run, held_out, jobs } => {
            let cfg = run.resolve(held_out.as_deref())?;
            let data = Dataset::load(&run.data)?;
            let mut outcome = run_leave_one_out(&cfg, &data, jobs)?;
            outcome.write(&run.out)?;
            print!("{}", outcome.report.table());
            Ok(())
        }
        Command::Gradcam { ckpt, image, out } => {
            let params = ModelParams::load(&ckpt)?;
            let img = read_pgm(&image)?;
            let hm = grad_cam(&params, &img.to_tensor())?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            hm.write_all(&out, &img)?;
            let (y, x) = hm.argmax();
            println!("wrote {} (peak at row {y}, column {x})", out.display());
            Ok(())
        }
    }
}

fn cmd_train(run: &RunArgs, held_out: Option<&str>) -> Result<()> {
    let cfg = run.resolve(held_out)?;
    let data = Dataset::load(&run.data)?;
    let keep: Vec<usize> = match held_out {
        Some(h) => {
            let hi = data.source_index(h).ok_or_else(|| Error::Config(format!("unknown source {h:?}")))?;
            (0..data.num_sources()).filter(|&s| s != hi).collect()
        }
        None => (0..data.num_sources()).filter(|&s| data.train.iter().any(|e| e.source == s)).collect(),
    };
    let examples = restrict(&data.train, &keep);
    let (params, mut record) = train(&cfg, &examples, keep.len())?;
    create_dir(&run.out)?;
    let ckpt = run.out.join("model.ckpt");
    params.save(&ckpt)?;
    record.checkpoint = Some(ckpt.clone());
    record.write_jsonl(run.out.join("run.jsonl"))?;
    let names: Vec<&str> = keep.iter().map(|&s| data.source_names[s].as_str()).collect();
    write_text(&run.out.join("config.txt"), &format!("{cfg}train_sources={}\n", names.join(",")))?;
    if let Some(last) = record.last() {
        println!("epoch {}: L_p {:.4} train_acc {:.3}", last.epoch, last.l_p, last.train_acc);
    }
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Path, held_out: Option<&str>, out: Option<&Path>) -> Result<()> {
    let params = ModelParams::load(ckpt)?;
    let (names, test): (Vec<String>, Vec<SourcedExample>) = if data.is_dir() {
        let d = Dataset::load(data)?;
        (d.source_names, d.test)
    } else {
        let m = Manifest::load(data)?;
        let size = m.image_size()?;
        (m.source_names().to_vec(), m.load_examples(size)?)
    };
    let mut lines = vec![format!("checkpoint={}", ckpt.display()), format!("data={}", data.display())];
    let overall = auc_roc(&evaluate(&params, &test)?)?;
    lines.push(format!("auc_all={overall}"));
    for (i, name) in names.iter().enumerate() {
        let part: Vec<SourcedExample> = test.iter().filter(|e| e.source == i).cloned().collect();
        if let Ok(auc) = evaluate(&params, &part).and_then(|s| auc_roc(&s)) {
            lines.push(format!("auc[{name}]={auc}"));
        }
    }
    let mut report = EvalReport::default();
    if let Some(h) = held_out {
        let hi = names.iter().position(|n| n == h).ok_or_else(|| Error::Config(format!("unknown source {h:?}")))?;
        let (out_src, in_src): (Vec<SourcedExample>, Vec<SourcedExample>) =
            test.iter().cloned().partition(|e| e.source == hi);
        let mode = if params.discriminator.is_some() { "adversarial" } else { "baseline" };
        report.rows.push(ReportRow::new(
            h,
            mode,
            auc_roc(&evaluate(&params, &in_src)?)?,
            auc_roc(&evaluate(&params, &out_src)?)?,
        ));
    }
    let text = lines.join("\n") + "\n";
    print!("{text}");
    if !report.rows.is_empty() {
        print!("{}", report.table());
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("eval.txt"), &text)?;
        if !report.rows.is_empty() {
            report.write(dir)?;
        }
    }
    Ok(())
}
