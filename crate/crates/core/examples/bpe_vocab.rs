//! Trains subword merges on a synthetic corpus and shows how programs split.

use protofeed::lexnorm::{bpe_train, lex_normalize, obfuscate, LexConfig, ObfuscationMode};
use protofeed::taskforge::synth_corpus;

fn main() {
    let lex = LexConfig::default();
    let data = synth_corpus(3, 6, 60);
    let corpus: Vec<_> = data
        .programs_by_question()
        .into_values()
        .flatten()
        .map(|src| {
            let seq = lex_normalize(&src, &lex).unwrap();
            obfuscate(
                &seq,
                ObfuscationMode::TestSequential,
                lex.num_vars,
                lex.num_funcs,
            )
            .unwrap()
        })
        .collect();
    let table = bpe_train(&corpus, 150, &lex);
    println!(
        "{} programs, {} merges, vocabulary {}",
        corpus.len(),
        table.merges().len(),
        table.vocab_size()
    );
    for (l, r) in table.merges().iter().take(10) {
        println!("  merge {l} + {r}");
    }
    let ids = table.encode(&corpus[0]).unwrap();
    println!("\n{} tokens -> {} ids", corpus[0].len(), ids.len());
    println!("{}", table.pieces(&ids).join(" | "));
    assert_eq!(table.decode(&ids, &lex.keywords), corpus[0]);
}
