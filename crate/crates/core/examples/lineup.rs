//! Trains every variant on one config and prints the comparison table.
//!
//! `cargo run --release -p alstm-core --example lineup -- <config> [seed]`

use alstm_core::harness::{compare, run_experiment_with, ExperimentConfig, Variant};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: lineup <config> [seed] [variants]");
    let mut base = ExperimentConfig::load(path.as_ref()).unwrap_or_else(|e| panic!("{e}"));
    if let Some(seed) = args.next() {
        base = base.with_seed(seed.parse().expect("integer seed"));
    }
    let variants: Vec<Variant> = match args.next() {
        Some(list) => list.split(',').map(|v| v.parse().expect("variant name")).collect(),
        None => Variant::ALL[..5].to_vec(),
    };
    let mut configs = Vec::new();
    for v in variants {
        let mut cfg = base.clone();
        cfg.model.variant = v;
        let started = std::time::Instant::now();
        let summary = run_experiment_with(&cfg, |r| {
            eprintln!(
                "{v} epoch {} loss {:.4} dev {:.4} ({:.1}s)",
                r.epoch,
                r.train_loss,
                r.dev_frame_accuracy,
                started.elapsed().as_secs_f64()
            )
        })
        .unwrap_or_else(|e| panic!("{v}: {e}"));
        eprintln!("{v}: test {:.4} mass {:?}", summary.test_frame_accuracy, summary.clean_channel_mass);
        configs.push(cfg);
    }
    print!("{}", compare(&configs).unwrap().to_text());
}
