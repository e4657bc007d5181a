//! Encodes the same programs under each side-information fusion mode and
//! shows how the prompt and rubric text change the pooled embeddings.

use protofeed::encoder::{Encoder, EncoderConfig, FusionMode, Pass};
use protofeed::protolearn::SideVocab;
use protofeed::tensor::Graph;

fn main() {
    let side = SideVocab::build([
        "count the even numbers",
        "loop stops one iteration early",
        "missing return statement",
    ]);
    let prompt = side.encode("count the even numbers");
    let programs: [&[u32]; 2] = [&[4, 5, 6, 7], &[4, 8, 6]];
    for fusion in FusionMode::ALL {
        let enc = Encoder::new(EncoderConfig {
            vocab_size: 32,
            max_len: 16,
            d_model: 16,
            layers: 2,
            heads: 2,
            d_ff: 32,
            fusion,
            side_vocab_size: side.size(),
            side_dim: 8,
            init_std: 0.2,
            ..Default::default()
        })
        .unwrap();
        let params = enc.init_params(5);
        let pooled = |rubric: &str| {
            let mut g = Graph::<f32>::new();
            let p = params.bind(&mut g);
            let s = enc
                .embed_side(&mut g, &p, &prompt, &side.encode(rubric))
                .unwrap();
            let out = enc
                .fuse_and_encode(&mut g, &p, &programs, Some(s), &mut Pass::Eval)
                .unwrap();
            g.value(out.pooled).row(0).to_vec()
        };
        let a = pooled("loop stops one iteration early");
        let b = pooled("missing return statement");
        let shift: f32 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        println!(
            "{fusion:?}: {} tensors, {} scalars, rubric shift {shift:.4}",
            params.len(),
            params.num_scalars()
        );
    }
    println!("(FiLM and adapters start as the identity, so their shift is zero before training)");
}
