#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use protofeed::lexnorm::{
    bpe_train, lex_normalize, obfuscate, LexConfig, MergeTable, ObfuscationMode, Token, TokenKind,
    TokenSequence,
};
use protofeed::taskforge::{synth_corpus_with, OutcomeClass, SynthConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Reference grammar over marked token strings.

const HEADER_WORDS: [&str; 6] = ["def", "if", "elif", "else", "for", "while"];
const STATEMENT_WORDS: [&str; 10] = [
    "def", "return", "if", "elif", "else", "for", "while", "pass", "break", "continue",
];
const BINARY_SYMBOLS: [&str; 29] = [
    "=", "==", "!=", "<", ">", "<=", ">=", "*", "/", "//", "%", "**", ".", "&", "|", "^", "<<",
    ">>", "->", "+=", "-=", "*=", "/=", "//=", "%=", "**=", "&=", "|=", "^=",
];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Cat {
    Operand,
    Open,
    Close,
    Comma,
    Colon,
    Unary,
    Not,
    BinKw,
    Stmt,
    BinOp,
    Invalid,
}

/// Layout markers that carry no program content.
fn is_marker(w: &str) -> bool {
    matches!(w, "<newline>" | "<scope>" | "</scope>" | "<pad>" | "<task>")
}

fn category(w: &str, keywords: &[&str]) -> Cat {
    if w == "<mask>" || w.starts_with("<var:") || w.starts_with("<func:") {
        return Cat::Operand;
    }
    let c = w.chars().next().unwrap();
    if c.is_ascii_digit() || c == '\'' || c == '"' {
        return Cat::Operand;
    }
    if c.is_ascii_alphabetic() || c == '_' {
        if !keywords.contains(&w) {
            return Cat::Operand;
        }
        return match w {
            "not" => Cat::Not,
            "and" | "or" | "in" => Cat::BinKw,
            s if STATEMENT_WORDS.contains(&s) => Cat::Stmt,
            _ => Cat::Invalid,
        };
    }
    match w {
        "(" | "[" | "{" => Cat::Open,
        ")" | "]" | "}" => Cat::Close,
        "," => Cat::Comma,
        ":" => Cat::Colon,
        "-" | "+" | "~" => Cat::Unary,
        s if BINARY_SYMBOLS.contains(&s) => Cat::BinOp,
        _ => Cat::Invalid,
    }
}

/// Reference classification of a marked token string.
pub fn oracle_class(marked: &str) -> OutcomeClass {
    let keywords: Vec<&str> = protofeed::lexnorm::DEFAULT_KEYWORDS.to_vec();
    let words: Vec<&str> = marked.split_whitespace().collect();
    let lines: Vec<Vec<&str>> = words
        .split(|w| *w == "<newline>")
        .map(|l| {
            l.iter()
                .copied()
                .filter(|w| !is_marker(w))
                .collect::<Vec<_>>()
        })
        .filter(|l: &Vec<&str>| !l.is_empty())
        .collect();

    // Brackets, one line at a time.
    for l in &lines {
        let mut stack = Vec::new();
        for w in l {
            match *w {
                "(" | "[" | "{" => stack.push(*w),
                ")" | "]" | "}" => {
                    let want = match *w {
                        ")" => "(",
                        "]" => "[",
                        _ => "{",
                    };
                    if stack.pop() != Some(want) {
                        return OutcomeClass::SyntaxParen;
                    }
                }
                _ => {}
            }
        }
        if !stack.is_empty() {
            return OutcomeClass::SyntaxParen;
        }
    }

    // A line ends in ':' exactly when it starts with a header word.
    for l in &lines {
        if HEADER_WORDS.contains(&l[0]) != (*l.last().unwrap() == ":") {
            return OutcomeClass::SyntaxColon;
        }
    }

    if !oracle_indentation(&words) {
        return OutcomeClass::Indentation;
    }

    for l in &lines {
        if !oracle_expression(l, &keywords) {
            return OutcomeClass::SyntaxExpr;
        }
    }

    if !oracle_arity(&lines) {
        return OutcomeClass::NameArity;
    }
    OutcomeClass::Ok
}

fn oracle_indentation(words: &[&str]) -> bool {
    let mut depth = 0i64;
    let mut needs_body = false;
    let mut header = false;
    let mut has_content = false;
    let mut at_start = true;
    let close_line = |has_content: &mut bool, header: bool, needs_body: &mut bool| -> bool {
        if *has_content {
            if *needs_body {
                return false;
            }
            *needs_body = header;
            *has_content = false;
        }
        true
    };
    for w in words {
        match *w {
            "<newline>" => {
                if !close_line(&mut has_content, header, &mut needs_body) {
                    return false;
                }
                at_start = true;
            }
            "<scope>" => {
                if !(needs_body && at_start) {
                    return false;
                }
                needs_body = false;
                depth += 1;
            }
            "</scope>" => {
                if depth == 0 || needs_body {
                    return false;
                }
                depth -= 1;
            }
            "<pad>" | "<task>" => {}
            w => {
                if !has_content {
                    header = HEADER_WORDS.contains(&w);
                }
                has_content = true;
                at_start = false;
            }
        }
    }
    close_line(&mut has_content, header, &mut needs_body) && depth == 0 && !needs_body
}

fn oracle_expression(line: &[&str], keywords: &[&str]) -> bool {
    use Cat::*;
    let mut prev: Option<Cat> = None;
    let mut prev_word = "";
    for w in line {
        let c = category(w, keywords);
        let after_value = matches!(prev, Some(Operand) | Some(Close));
        let ok = match c {
            Invalid => false,
            Operand => !after_value,
            Stmt => prev.is_none(),
            BinKw => after_value || (*w == "in" && prev_word == "not"),
            BinOp => after_value,
            Close | Colon => !matches!(prev, Some(Unary) | Some(Not) | Some(BinKw) | Some(BinOp)),
            Comma => !matches!(
                prev,
                None | Some(Stmt)
                    | Some(Open)
                    | Some(Unary)
                    | Some(Not)
                    | Some(BinKw)
                    | Some(BinOp)
            ),
            Open | Unary | Not => true,
        };
        if !ok {
            return false;
        }
        prev = Some(match c {
            Colon => Comma,
            other => other,
        });
        prev_word = w;
    }
    !matches!(prev, Some(Unary) | Some(Not) | Some(BinKw) | Some(BinOp))
}

fn callable(w: &str) -> bool {
    let c = w.chars().next().unwrap();
    w.starts_with("<var:")
        || w.starts_with("<func:")
        || ((c.is_ascii_alphabetic() || c == '_')
            && !protofeed::lexnorm::DEFAULT_KEYWORDS.contains(&w))
}

/// Top-level comma groups inside the bracket opened at `open`.
fn groups<'a>(line: &[&'a str], open: usize) -> Vec<Vec<&'a str>> {
    let mut out: Vec<Vec<&str>> = vec![vec![]];
    let mut depth = 0;
    for w in &line[open..] {
        match *w {
            "(" | "[" | "{" => {
                depth += 1;
                if depth > 1 {
                    out.last_mut().unwrap().push(w);
                }
            }
            ")" | "]" | "}" => {
                depth -= 1;
                if depth == 0 {
                    break;
                }
                out.last_mut().unwrap().push(w);
            }
            "," if depth == 1 => out.push(vec![]),
            _ => out.last_mut().unwrap().push(w),
        }
    }
    if out.len() == 1 && out[0].is_empty() {
        out.clear();
    }
    out
}

fn oracle_arity(lines: &[Vec<&str>]) -> bool {
    let mut defs: HashMap<&str, HashSet<usize>> = HashMap::new();
    for l in lines {
        if l.len() >= 3 && l[0] == "def" && l[2] == "(" && callable(l[1]) {
            let params = groups(l, 2);
            let firsts: Vec<&str> = params
                .iter()
                .filter_map(|g| g.first().copied())
                .filter(|w| callable(w))
                .collect();
            let distinct: HashSet<&str> = firsts.iter().copied().collect();
            if distinct.len() != firsts.len() {
                return false;
            }
            defs.entry(l[1]).or_default().insert(params.len());
        }
    }
    for l in lines {
        for i in 0..l.len().saturating_sub(1) {
            if l[i + 1] != "(" || (i > 0 && l[i - 1] == "def") || !callable(l[i]) {
                continue;
            }
            if let Some(arities) = defs.get(l[i]) {
                if !arities.contains(&groups(l, i + 1).len()) {
                    return false;
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Program suites.

/// Distinct sources from a synthetic corpus with frequent slips.
pub fn synth_sources(seed: u64, questions: usize, students: usize, slip_rate: f64) -> Vec<String> {
    let cfg = SynthConfig {
        seed,
        num_questions: questions,
        students_per_question: students,
        slip_rate,
        ..SynthConfig::default()
    };
    let data = synth_corpus_with(&cfg);
    data.programs_by_question()
        .into_values()
        .flatten()
        .collect()
}

const INSERTS: [&str; 16] = [
    "(", ")", ":", "=", "+", "-", ",", "x", "1", "if", "not", "in", "return", "==", "[", "]",
];

/// Applies one random token-level edit: delete, duplicate, swap, insert or
/// delete a whole line.
pub fn mutate(seq: &TokenSequence, rng: &mut ChaCha8Rng) -> TokenSequence {
    let mut toks = seq.tokens.clone();
    let content: Vec<usize> = (0..toks.len())
        .filter(|&i| !toks[i].kind.is_marker())
        .collect();
    if content.is_empty() {
        return seq.clone();
    }
    let i = *content.choose(rng).unwrap();
    match rng.random_range(0..5) {
        0 => {
            toks.remove(i);
        }
        1 => {
            let t = toks[i].clone();
            toks.insert(i, t);
        }
        2 => {
            if let Some(&j) = content.iter().find(|&&j| j > i) {
                toks.swap(i, j);
            }
        }
        3 => {
            let w = INSERTS.choose(rng).unwrap();
            let t = TokenSequence::from_marked_string(w, &LexConfig::default().keywords)
                .unwrap()
                .tokens[0]
                .clone();
            toks.insert(i, t);
        }
        _ => {
            // Drop the line holding token i, together with its newline.
            let start = (0..i)
                .rev()
                .find(|&j| toks[j].kind == TokenKind::NewlineMark)
                .map_or(0, |j| j + 1);
            let end = (i..toks.len())
                .find(|&j| toks[j].kind == TokenKind::NewlineMark)
                .map_or(toks.len(), |j| j + 1);
            let kept: Vec<Token> = toks[start..end]
                .iter()
                .filter(|t| matches!(t.kind, TokenKind::ScopeEnter | TokenKind::ScopeExit))
                .cloned()
                .collect();
            toks.splice(start..end, kept);
        }
    }
    TokenSequence::new(toks)
}

/// 500 programs: synthetic submissions (clean and slipped) plus random
/// token-level mutations of them.
pub fn syntax_suite() -> Vec<TokenSequence> {
    let lex = LexConfig::default();
    let base: Vec<TokenSequence> = synth_sources(11, 6, 60, 0.5)
        .iter()
        .map(|s| lex_normalize(s, &lex).expect("synthetic programs lex"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut suite: Vec<TokenSequence> = base.iter().take(250).cloned().collect();
    while suite.len() < 500 {
        let b = base.choose(&mut rng).unwrap();
        let mut m = mutate(b, &mut rng);
        if rng.random_bool(0.3) {
            m = mutate(&m, &mut rng);
        }
        suite.push(m);
    }
    suite
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles.

/// AP from the definition: the precision at the rank of every positive,
/// ranks counted as the number of items ordered at or before it.
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let before = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a <= b);
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut total = 0.0;
    for i in (0..n).filter(|&i| labels[i]) {
        let rank = (0..n).filter(|&j| before(j, i)).count() as f64;
        let tp = (0..n).filter(|&j| labels[j] && before(j, i)).count() as f64;
        total += tp / rank;
    }
    total / pos
}

pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in (0..scores.len()).filter(|&i| labels[i]) {
        for j in (0..scores.len()).filter(|&j| !labels[j]) {
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn precision_at_recall_oracle(scores: &[f64], labels: &[bool], r: f64) -> f64 {
    let n = scores.len();
    let before = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a <= b);
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut best: f64 = 0.0;
    // Every prefix ends at some item i.
    for i in 0..n {
        let k = (0..n).filter(|&j| before(j, i)).count() as f64;
        let tp = (0..n).filter(|&j| labels[j] && before(j, i)).count() as f64;
        if tp / pos >= r - 1e-9 {
            best = best.max(tp / k);
        }
    }
    best
}

/// Random scores (with deliberate ties) and labels holding at least one of
/// each class.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=100);
    let levels = rng.random_range(2..=20);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    (scores, labels)
}

/// 1000 distinct lexed programs from the synthetic generator.
pub fn property_programs() -> Vec<TokenSequence> {
    let lex = LexConfig::default();
    let mut srcs = synth_sources(21, 12, 120, 0.3);
    srcs.truncate(1000);
    assert_eq!(srcs.len(), 1000, "corpus too small");
    srcs.iter()
        .map(|s| lex_normalize(s, &lex).unwrap())
        .collect()
}

pub fn check_relex(programs: &[TokenSequence]) -> Result<(), String> {
    let lex = LexConfig::default();
    for seq in programs {
        let again = lex_normalize(&seq.to_source(), &lex).map_err(|e| e.to_string())?;
        if &again != seq {
            return Err(format!("re-lex changed:\n{}", seq.to_source()));
        }
    }
    Ok(())
}

fn check_slots(orig: &TokenSequence, obf: &TokenSequence) -> Result<(), String> {
    if orig.len() != obf.len() {
        return Err("length changed".into());
    }
    let mut forward: HashMap<&str, TokenKind> = HashMap::new();
    let mut backward: HashMap<TokenKind, &str> = HashMap::new();
    for (a, b) in orig.iter().zip(obf.iter()) {
        if a.kind == TokenKind::Name {
            if !matches!(b.kind, TokenKind::VarSlot(_) | TokenKind::FuncSlot(_)) {
                return Err(format!("name {} left unrenamed", a.text));
            }
            if *forward.entry(a.text.as_str()).or_insert(b.kind) != b.kind {
                return Err(format!("name {} renamed twice", a.text));
            }
            if *backward.entry(b.kind).or_insert(a.text.as_str()) != a.text {
                return Err(format!("slot {:?} shared", b.kind));
            }
        } else if a != b {
            return Err(format!("non-name token {} changed", a.text));
        }
    }
    Ok(())
}

pub fn check_obfuscation(programs: &[TokenSequence]) -> Result<(), String> {
    let lex = LexConfig::default();
    let run =
        |seq, mode| obfuscate(seq, mode, lex.num_vars, lex.num_funcs).map_err(|e| e.to_string());
    for (i, seq) in programs.iter().enumerate() {
        check_slots(seq, &run(seq, ObfuscationMode::TestSequential)?)?;
        let rnd = run(seq, ObfuscationMode::TrainRandom(i as u64))?;
        check_slots(seq, &rnd)?;
        if rnd != run(seq, ObfuscationMode::TrainRandom(i as u64))? {
            return Err(format!(
                "random renaming of program {i} is not reproducible"
            ));
        }
    }
    Ok(())
}

/// Training and encoding are deterministic, survive a text round trip, and
/// `encode(decode(ids)) == ids`.
pub fn check_bpe(programs: &[TokenSequence]) -> Result<(), String> {
    let lex = LexConfig::default();
    let table = bpe_train(&programs[..500], 300, &lex);
    if table != bpe_train(&programs[..500], 300, &lex) {
        return Err("merge training is not deterministic".into());
    }
    let reloaded = MergeTable::from_text(&table.to_text()).map_err(|e| e.to_string())?;
    for (i, seq) in programs.iter().enumerate() {
        let ids = table.encode(seq).map_err(|e| e.to_string())?;
        if ids != table.encode(seq).map_err(|e| e.to_string())? {
            return Err(format!("program {i} encodes differently twice"));
        }
        if ids != reloaded.encode(seq).map_err(|e| e.to_string())? {
            return Err(format!("program {i} encodes differently after reload"));
        }
        let again = table
            .encode(&table.decode(&ids, &lex.keywords))
            .map_err(|e| e.to_string())?;
        if again != ids {
            return Err(format!("program {i} does not survive decode and re-encode"));
        }
    }
    Ok(())
}
