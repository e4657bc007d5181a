//! Lexes a program, prints the marked token stream, then renames every
//! identifier with sequential and seeded random slots.

use protofeed::lexnorm::{lex_normalize, obfuscate, LexConfig, ObfuscationMode};
use protofeed::taskforge::check_syntax;

const SOURCE: &str = "\
def countEvens(numList):
    total = 0
    for n in numList:
        if n % 2 == 0:
            total += 1
    return total
";

fn main() {
    let lex = LexConfig::default();
    let seq = lex_normalize(SOURCE, &lex).expect("program lexes");
    println!("tokens:     {}", seq.to_marked_string());
    println!("outcome:    {}", check_syntax(&seq));

    let seq_slots = obfuscate(
        &seq,
        ObfuscationMode::TestSequential,
        lex.num_vars,
        lex.num_funcs,
    )
    .unwrap();
    println!("sequential: {}", seq_slots.to_marked_string());
    for seed in [1, 2] {
        let rnd = obfuscate(
            &seq,
            ObfuscationMode::TrainRandom(seed),
            lex.num_vars,
            lex.num_funcs,
        )
        .unwrap();
        println!("random {seed}:   {}", rnd.to_marked_string());
    }
    println!("\nround trip:\n{}", seq.to_source());
}
