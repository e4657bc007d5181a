//! Compares analytic gradients of the episode loss with central differences
//! in a 64-bit shadow copy, for every fusion mode.

use protofeed::encoder::{EncoderConfig, FusionMode, Pass};
use protofeed::protolearn::{EpisodeBatch, LossConfig, ProtoModel};
use protofeed::tensor::{gradient_check, GradCheckOptions, Graph, TensorError};

fn main() {
    let batch = EpisodeBatch {
        task_id: "demo".into(),
        n_classes: 2,
        support: vec![vec![3, 4, 5], vec![3, 6], vec![9, 10, 11, 12], vec![10, 12]],
        support_labels: vec![0, 0, 1, 1],
        query: vec![vec![4, 5], vec![11, 9]],
        query_labels: vec![0, 1],
        prompt: vec![2, 3],
        rubric: vec![4],
    };
    for fusion in FusionMode::ALL {
        let cfg = EncoderConfig {
            vocab_size: 16,
            max_len: 8,
            d_model: 8,
            layers: 1,
            heads: 2,
            d_ff: 16,
            dropout: 0.0,
            fusion,
            adapter_dim: 4,
            side_vocab_size: 8,
            side_dim: 4,
            init_std: 0.3,
            ..Default::default()
        };
        let model = ProtoModel::new(cfg, LossConfig::default()).unwrap();
        let params = model.init_params(11);
        let report = gradient_check(
            &params,
            |g: &mut Graph<f64>, p| {
                model
                    .episode_loss(g, p, &batch, &mut Pass::Eval)
                    .map_err(|e| TensorError::InvalidArgument(e.to_string()))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        println!(
            "{fusion:?}: max relative error {:.2e} over {} coordinates (worst {})",
            report.max_rel_error, report.coords_checked, report.worst_tensor
        );
    }
}
