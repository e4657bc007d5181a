//! Trains briefly, embeds every synthetic program and writes a 2-D PCA
//! projection (`id`, `x`, `y`) to `embeddings.tsv` in the temp directory.

use protofeed::config::RunConfig;
use protofeed::evalkit::export_embeddings;
use protofeed::pipeline;

fn main() {
    let cfg = RunConfig::from_toml(
        "[data]\nnum_questions = 6\n[tasks]\nk = 5\nq = 5\n[model]\nd_model = 16\nlayers = 1\nheads = 2\nd_ff = 32\nmax_len = 96\n[train]\nepochs = 3\n[eval]\ndegrade_shots = [5, 1]\n",
    )
    .unwrap();
    let p = pipeline::prepare(&cfg, pipeline::corpus(&cfg)).unwrap();
    let out = pipeline::train(&cfg, &p).unwrap();
    let path = std::env::temp_dir().join("embeddings.tsv");
    let pca = export_embeddings(&p.model, &out.params, &p.featurizer, &p.data, &path).unwrap();
    println!("{} points written to {}", pca.coords.len(), path.display());
    println!(
        "explained variance: {:.4} {:.4}",
        pca.explained[0], pca.explained[1]
    );
}
