use protofeed::config::RunConfig;
use protofeed::evalkit::{eval_meta_test, make_split, SplitMode};
use protofeed::pipeline;
use protofeed::protolearn::{load_checkpoint, save_checkpoint, ProtoError};

pub fn tiny_config() -> RunConfig {
    RunConfig::from_toml(
        r#"
[data]
num_questions = 8
students_per_question = 60
[tasks]
k = 3
q = 3
[model]
d_model = 16
layers = 1
heads = 2
d_ff = 32
max_len = 64
side_dim = 8
[train]
epochs = 2
[train.adam]
peak_lr = 1e-3
[eval]
seeds = [0, 1]
degrade_shots = [3, 1]
"#,
    )
    .unwrap()
}

#[test]
fn train_is_reproducible_and_checkpoints_round_trip() {
    let cfg = tiny_config();
    let p = pipeline::prepare(&cfg, pipeline::corpus(&cfg)).unwrap();
    assert!(!p.train.is_empty() && !p.test.is_empty());
    let a = pipeline::train(&cfg, &p).unwrap();
    let b = pipeline::train(&cfg, &p).unwrap();
    assert_eq!(a.log.to_tsv(), b.log.to_tsv());
    assert_eq!(a.steps as usize, cfg.train.epochs * p.train.len());

    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("ckpt/model");
    save_checkpoint(
        &stem,
        &a.params,
        pipeline::manifest(&cfg, &p.model, &p.featurizer, a.steps),
    )
    .unwrap();
    let (params, manifest) = load_checkpoint(&stem).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash());
    let r1 = eval_meta_test(&p.model, &a.params, &p.featurizer, &p.test, 3, 3, &[0]).unwrap();
    let r2 = eval_meta_test(&p.model, &params, &p.featurizer, &p.test, 3, 3, &[0]).unwrap();
    assert_eq!(r1, r2);

    // A truncated blob is refused.
    let bin = dir.path().join("ckpt/model.bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(&stem).is_err());
}

#[test]
fn checkpoint_with_foreign_shapes_is_rejected() {
    let cfg = tiny_config();
    let p = pipeline::prepare(&cfg, pipeline::corpus(&cfg)).unwrap();
    let params = p.model.init_params(0);
    let mut manifest = pipeline::manifest(&cfg, &p.model, &p.featurizer, 0);
    manifest.encoder.d_ff += 8;
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("m");
    save_checkpoint(&stem, &params, manifest).unwrap();
    assert!(matches!(
        load_checkpoint(&stem),
        Err(ProtoError::ManifestMismatch(_))
    ));
}

#[test]
fn splits_never_separate_rubric_items() {
    let cfg = tiny_config();
    let data = pipeline::corpus(&cfg);
    let options = data.options();
    for seed in 0..20 {
        let plan = make_split(&data, SplitMode::HeldOutRubric, 0.2, seed).unwrap();
        for o in &options {
            let side = plan.test_ids.contains(&o.option_id);
            for other in options.iter().filter(|x| x.item_id == o.item_id) {
                assert_eq!(plan.test_ids.contains(&other.option_id), side);
            }
        }
    }
}
