//! Trains one model on three synthetic sources and scores it on the fourth.
//!
//! Run with `cargo run --release --example train -- [baseline|grad_reversal|alternating] [epochs]`.

use xinv::datapipe::{generate, SourcedExample, SynthSpec};
use xinv::eval::{auc_roc, discriminator_accuracy, evaluate};
use xinv::training::{restrict, train_with, Mode, TrainConfig};

fn main() -> xinv::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: Mode = args.next().as_deref().unwrap_or("grad_reversal").parse()?;
    let epochs = args.next().map_or(Ok(10), |e| e.parse()).map_err(|e| xinv::Error::Config(format!("epochs: {e}")))?;
    let data = generate(&SynthSpec { n: 400, ..SynthSpec::default() })?;
    let keep = [0, 1, 2];
    let train_set = restrict(&data.train, &keep);
    let in_source = restrict(&data.test, &keep);
    let out_source: Vec<SourcedExample> = data.test.iter().filter(|e| e.source == 3).cloned().collect();

    let cfg = TrainConfig { mode, epochs, ..TrainConfig::default() };
    let (params, _) = train_with(&cfg, &train_set, keep.len(), |e, _| {
        println!(
            "epoch {:>2}  L_p {:.4}  L_s {}  disc_acc {}  train_acc {:.3}",
            e.epoch,
            e.l_p,
            e.l_s.map_or("-".into(), |v| format!("{v:.4}")),
            e.disc_acc.map_or("-".into(), |v| format!("{v:.3}")),
            e.train_acc
        );
    })?;
    println!("in-source AUC      {:.3}", auc_roc(&evaluate(&params, &in_source)?)?);
    println!("out-of-source AUC  {:.3}", auc_roc(&evaluate(&params, &out_source)?)?);
    if mode.is_adversarial() {
        println!("discriminator accuracy on in-source test {:.3}", discriminator_accuracy(&params, &in_source)?);
    }
    Ok(())
}
