//! Meta-trains a small encoder on synthetic rubric tasks and compares it with
//! the per-task supervised baseline on held-out questions.
//!
//! Pass a TOML run configuration as the first argument to override
//! `configs/quick.toml`.

use protofeed::config::RunConfig;
use protofeed::evalkit::{eval_meta_test, supervised_baseline};
use protofeed::pipeline;

const DEFAULT: &str = include_str!("../../../configs/quick.toml");

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path).expect("config readable"),
        None => DEFAULT.to_string(),
    };
    let cfg = RunConfig::from_toml(&text).expect("valid config");
    let p = pipeline::prepare(&cfg, pipeline::corpus(&cfg)).unwrap();
    println!(
        "{} meta-train tasks, {} meta-test tasks, vocabulary {}",
        p.train.len(),
        p.test.len(),
        p.featurizer.vocab_size()
    );

    let before = eval_meta_test(
        &p.model,
        &p.model.init_params(cfg.seed),
        &p.featurizer,
        &p.test,
        cfg.tasks.k,
        cfg.tasks.q,
        &cfg.eval.seeds,
    )
    .unwrap();
    let out = pipeline::train(&cfg, &p).unwrap();
    for (e, m) in out.log.epoch_means().iter().enumerate() {
        println!("epoch {e}: loss {m:.4}");
    }
    let after = eval_meta_test(
        &p.model,
        &out.params,
        &p.featurizer,
        &p.test,
        cfg.tasks.k,
        cfg.tasks.q,
        &cfg.eval.seeds,
    )
    .unwrap();
    let base = supervised_baseline(
        p.model.config(),
        &p.featurizer,
        &p.test,
        cfg.tasks.k,
        cfg.tasks.q,
        &cfg.eval.seeds,
        &cfg.eval.baseline,
    )
    .unwrap();
    for (name, r) in [
        ("untrained", &before),
        ("meta-trained", &after),
        ("supervised", &base),
    ] {
        println!(
            "{name:>12}: AP {:.3} ± {:.3}  P@50 {:.3}  P@75 {:.3}  AUC {:.3}",
            r.mean.ap, r.std.ap, r.mean.p50, r.mean.p75, r.mean.auc
        );
    }
}
