//! Meta-test AP as the support set shrinks from 10 to 1 shot per class. The
//! smaller support sets are prefixes of the 10-shot ones and the queries are
//! shared.

use protofeed::config::RunConfig;
use protofeed::evalkit::degrade_study;
use protofeed::pipeline;

fn main() {
    let cfg = RunConfig::from_toml(
        "[data]\nnum_questions = 10\n[model]\nd_model = 32\nlayers = 1\nheads = 2\nd_ff = 64\nmax_len = 128\n[train]\nepochs = 6\n[train.adam]\npeak_lr = 2e-3\n[eval]\nseeds = [0, 1, 2]\n",
    )
    .unwrap();
    let p = pipeline::prepare(&cfg, pipeline::corpus(&cfg)).unwrap();
    let out = pipeline::train(&cfg, &p).unwrap();
    let reports = degrade_study(
        &p.model,
        &out.params,
        &p.featurizer,
        &p.test,
        &[10, 5, 2, 1],
        cfg.tasks.q,
        &cfg.eval.seeds,
    )
    .unwrap();
    println!("shots  AP      P@50    AUC");
    for r in reports {
        println!(
            "{:>5}  {:.4}  {:.4}  {:.4}",
            r.shots, r.mean.ap, r.mean.p50, r.mean.auc
        );
    }
}
