use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::token::{Token, TokenKind, TokenSequence};
use super::LexError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObfuscationMode {
    /// Consistent renaming with slots drawn uniformly without replacement.
    TrainRandom(u64),
    /// Slots 1, 2, ... assigned in first-occurrence order.
    TestSequential,
}

/// Replaces every variable and function name with a slot token.
///
/// A name counts as a function name when it appears directly after `def`
/// anywhere in the sequence; all of its occurrences then share one function
/// slot. Every other name gets a variable slot.
pub fn obfuscate(
    seq: &TokenSequence,
    mode: ObfuscationMode,
    num_vars: u16,
    num_funcs: u16,
) -> Result<TokenSequence, LexError> {
    let mut functions: HashSet<&str> = HashSet::new();
    for pair in seq.tokens.windows(2) {
        if pair[0].kind == TokenKind::Keyword
            && pair[0].text == "def"
            && pair[1].kind == TokenKind::Name
        {
            functions.insert(pair[1].text.as_str());
        }
    }

    let mut var_order: Vec<&str> = Vec::new();
    let mut func_order: Vec<&str> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for t in &seq.tokens {
        if t.kind == TokenKind::Name && seen.insert(t.text.as_str()) {
            if functions.contains(t.text.as_str()) {
                func_order.push(&t.text);
            } else {
                var_order.push(&t.text);
            }
        }
    }
    if var_order.len() > num_vars as usize {
        return Err(LexError::SlotExhausted {
            kind: "variable",
            needed: var_order.len(),
            budget: num_vars as usize,
        });
    }
    if func_order.len() > num_funcs as usize {
        return Err(LexError::SlotExhausted {
            kind: "function",
            needed: func_order.len(),
            budget: num_funcs as usize,
        });
    }

    let (var_slots, func_slots): (Vec<u16>, Vec<u16>) = match mode {
        ObfuscationMode::TestSequential => ((1..=num_vars).collect(), (1..=num_funcs).collect()),
        ObfuscationMode::TrainRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<u16> = (1..=num_vars).collect();
            let mut f: Vec<u16> = (1..=num_funcs).collect();
            v.shuffle(&mut rng);
            f.shuffle(&mut rng);
            (v, f)
        }
    };

    let mut mapping: HashMap<&str, TokenKind> = HashMap::new();
    for (name, slot) in var_order.iter().zip(&var_slots) {
        mapping.insert(name, TokenKind::VarSlot(*slot));
    }
    for (name, slot) in func_order.iter().zip(&func_slots) {
        mapping.insert(name, TokenKind::FuncSlot(*slot));
    }

    Ok(seq
        .tokens
        .iter()
        .map(|t| match t.kind {
            TokenKind::Name => Token::marker(mapping[t.text.as_str()]),
            _ => t.clone(),
        })
        .collect())
}
