//! Self-supervised tasks built from unlabeled programs.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::syntax::{check_syntax, OutcomeClass};
use super::task::{Example, SideText, Task, TaskOrigin};
use super::TaskError;
use crate::lexnorm::{Token, TokenKind, TokenSequence};
use crate::rng::rng_for;

/// Attempts at drawing two disjoint class pools before giving up on a corpus.
const MAX_DRAWS: usize = 32;

fn masked(tokens: &TokenSequence, target: &(TokenKind, String)) -> TokenSequence {
    tokens
        .iter()
        .map(|t| {
            if t.kind == target.0 && t.text == target.1 {
                Token::marker(TokenKind::Mask)
            } else {
                t.clone()
            }
        })
        .collect()
}

/// Tokens eligible for masking, with the corpus indices of programs holding them.
fn mask_candidates(
    corpus: &[Example],
    names: bool,
    need: usize,
) -> BTreeMap<(TokenKind, String), Vec<usize>> {
    let mut holders: BTreeMap<(TokenKind, String), Vec<usize>> = BTreeMap::new();
    for (i, ex) in corpus.iter().enumerate() {
        let mut seen = HashSet::new();
        for t in ex.tokens.iter() {
            let eligible = matches!(t.kind, TokenKind::Keyword | TokenKind::Symbol)
                || (names && t.kind == TokenKind::Name);
            if eligible && seen.insert((t.kind, t.text.as_str())) {
                holders.entry((t.kind, t.text.clone())).or_default().push(i);
            }
        }
    }
    holders.retain(|_, v| v.len() >= need);
    holders
}

/// Draws `need` members of `a` and then `need` members of `b` outside the first draw.
fn disjoint_pools(
    rng: &mut ChaCha8Rng,
    a: &[usize],
    b: &[usize],
    need: usize,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let first: Vec<usize> = sample(rng, a.len(), need)
        .into_iter()
        .map(|i| a[i])
        .collect();
    let taken: HashSet<usize> = first.iter().copied().collect();
    let rest: Vec<usize> = b.iter().copied().filter(|i| !taken.contains(i)).collect();
    if rest.len() < need {
        return None;
    }
    let second = sample(rng, rest.len(), need)
        .into_iter()
        .map(|i| rest[i])
        .collect();
    Some((first, second))
}

fn masking_task(
    corpus: &[Example],
    k: usize,
    q: usize,
    seed: u64,
    names: bool,
) -> Result<Task, TaskError> {
    let need = k + q;
    let cands: Vec<_> = mask_candidates(corpus, names, need).into_iter().collect();
    if cands.len() < 2 {
        return Err(TaskError::NoViableTokens(cands.len()));
    }
    let mut rng = rng_for(seed, &[]);
    for _ in 0..MAX_DRAWS {
        let pick = sample(&mut rng, cands.len(), 2).into_vec();
        let (ta, ha) = &cands[pick[0]];
        let (tb, hb) = &cands[pick[1]];
        let Some((pa, pb)) = disjoint_pools(&mut rng, ha, hb, need) else {
            continue;
        };
        let pool = |idx: Vec<usize>, target: &(TokenKind, String)| {
            idx.into_iter()
                .map(|i| Example {
                    key: corpus[i].key.clone(),
                    tokens: masked(&corpus[i].tokens, target),
                })
                .collect::<Vec<_>>()
        };
        let (origin, rubric) = if names {
            (TaskOrigin::Smlmt, "smlmt")
        } else {
            (TaskOrigin::Cloze, "cloze")
        };
        return Ok(Task {
            task_id: format!("{rubric}-{seed:016x}"),
            origin,
            class_labels: vec![ta.1.clone(), tb.1.clone()],
            pools: vec![pool(pa, ta), pool(pb, tb)],
            side: SideText {
                prompt: "predict the masked token".into(),
                rubric: rubric.into(),
            },
            question_id: None,
            rubric_item_id: None,
            exam_id: None,
        });
    }
    Err(TaskError::NoViableTokens(cands.len()))
}

/// Binary task over two keyword or symbol tokens; every occurrence of the
/// chosen token is masked. Names are never candidates.
pub fn make_cloze_task(
    corpus: &[Example],
    k: usize,
    q: usize,
    seed: u64,
) -> Result<Task, TaskError> {
    masking_task(corpus, k, q, seed, false)
}

/// Like [`make_cloze_task`] but names may be masked as well.
pub fn make_smlmt_task(
    corpus: &[Example],
    k: usize,
    q: usize,
    seed: u64,
) -> Result<Task, TaskError> {
    masking_task(corpus, k, q, seed, true)
}

/// Binary task over two static-check outcomes, each backed by `k + q` programs.
pub fn make_compile_task(
    corpus: &[Example],
    k: usize,
    q: usize,
    seed: u64,
) -> Result<Task, TaskError> {
    let need = k + q;
    let mut by_class: BTreeMap<OutcomeClass, Vec<usize>> = BTreeMap::new();
    for (i, ex) in corpus.iter().enumerate() {
        by_class
            .entry(check_syntax(&ex.tokens))
            .or_default()
            .push(i);
    }
    by_class.retain(|_, v| v.len() >= need);
    let viable: Vec<_> = by_class.into_iter().collect();
    if viable.len() < 2 {
        return Err(TaskError::NoViableOutcomes(viable.len()));
    }
    let mut rng = rng_for(seed, &[]);
    let pick = sample(&mut rng, viable.len(), 2).into_vec();
    let pools = pick
        .iter()
        .map(|&c| {
            let members = &viable[c].1;
            sample(&mut rng, members.len(), need)
                .into_iter()
                .map(|i| corpus[members[i]].clone())
                .collect()
        })
        .collect();
    Ok(Task {
        task_id: format!("compile-{seed:016x}"),
        origin: TaskOrigin::Compile,
        class_labels: pick
            .iter()
            .map(|&c| viable[c].0.label().to_string())
            .collect(),
        pools,
        side: SideText {
            prompt: "predict the compile outcome".into(),
            rubric: "compile".into(),
        },
        question_id: None,
        rubric_item_id: None,
        exam_id: None,
    })
}

/// Appends `round(ratio * tasks.len())` synthetic tasks, half cloze and half
/// compile with any odd one going to cloze.
pub fn mix_augmented(
    tasks: &[Task],
    corpus: &[Example],
    ratio: f64,
    k: usize,
    q: usize,
    seed: u64,
) -> Result<Vec<Task>, TaskError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(TaskError::Data(format!(
            "augmentation ratio {ratio} outside [0, 1]"
        )));
    }
    let extra = (ratio * tasks.len() as f64).round() as usize;
    let cloze = extra.div_ceil(2);
    let mut out = tasks.to_vec();
    for i in 0..extra {
        let mut t = if i < cloze {
            make_cloze_task(corpus, k, q, rng_for(seed, &[0, i as u64]).random())?
        } else {
            make_compile_task(corpus, k, q, rng_for(seed, &[1, i as u64]).random())?
        };
        t.task_id = if i < cloze {
            format!("aug-cloze-{i}")
        } else {
            format!("aug-compile-{}", i - cloze)
        };
        out.push(t);
    }
    Ok(out)
}

/// Outcome-class histogram of a corpus, in class-table order.
pub fn outcome_histogram(corpus: &[Example]) -> Vec<(OutcomeClass, usize)> {
    let mut counts: BTreeMap<OutcomeClass, usize> =
        OutcomeClass::ALL.iter().map(|c| (*c, 0)).collect();
    for ex in corpus {
        *counts.get_mut(&check_syntax(&ex.tokens)).unwrap() += 1;
    }
    counts.into_iter().collect()
}

/// Distinct candidate token texts for masking tasks, sorted.
pub fn cloze_candidates(corpus: &[Example], k: usize, q: usize, names: bool) -> BTreeSet<String> {
    mask_candidates(corpus, names, k + q)
        .into_keys()
        .map(|(_, t)| t)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexnorm::{lex_normalize, LexConfig};

    fn corpus(sources: &[&str]) -> Vec<Example> {
        sources
            .iter()
            .enumerate()
            .map(|(i, s)| Example {
                key: format!("c{i}"),
                tokens: lex_normalize(s, &LexConfig::default()).unwrap(),
            })
            .collect()
    }

    #[test]
    fn masking_replaces_every_instance() {
        let seq = lex_normalize("def f():\n    return 1\n", &LexConfig::default()).unwrap();
        let m = masked(&seq, &(TokenKind::Keyword, "return".into()));
        let kinds: Vec<_> = m.iter().map(|t| t.kind).collect();
        assert_eq!(kinds[6], TokenKind::ScopeEnter);
        assert_eq!(kinds[7], TokenKind::Mask);
        let seq = lex_normalize("x = x + 1", &LexConfig::default()).unwrap();
        let m = masked(&seq, &(TokenKind::Name, "x".into()));
        assert_eq!(m.iter().filter(|t| t.kind == TokenKind::Mask).count(), 2);
    }

    #[test]
    fn cloze_never_masks_names() {
        let srcs: Vec<String> = (0..30)
            .map(|i| format!("x{} = y + {}\nz = x{} * 2\n", i % 3, i, i % 3))
            .collect();
        let c = corpus(&srcs.iter().map(String::as_str).collect::<Vec<_>>());
        for seed in 0..20 {
            let t = make_cloze_task(&c, 2, 2, seed).unwrap();
            for pool in &t.pools {
                for ex in pool {
                    let orig = c.iter().find(|o| o.key == ex.key).unwrap();
                    for (a, b) in orig.tokens.iter().zip(ex.tokens.iter()) {
                        if b.kind == TokenKind::Mask {
                            assert_ne!(a.kind, TokenKind::Name);
                        }
                    }
                }
            }
        }
        let names = cloze_candidates(&c, 2, 2, true);
        let plain = cloze_candidates(&c, 2, 2, false);
        assert!(plain.is_subset(&names));
        assert!(names.contains("y") && !plain.contains("y"));
    }

    #[test]
    fn one_candidate_is_not_enough() {
        let c = corpus(&["a", "b", "c", "d"]);
        assert!(matches!(
            make_cloze_task(&c, 1, 1, 0),
            Err(TaskError::NoViableTokens(0))
        ));
        let c = corpus(&["a = 1", "b = 2", "c = 3", "d = 4"]);
        assert!(matches!(
            make_cloze_task(&c, 1, 1, 0),
            Err(TaskError::NoViableTokens(1))
        ));
    }

    #[test]
    fn smlmt_equals_cloze_without_names() {
        let srcs: Vec<String> = (0..24)
            .map(|i| format!("{} + {} * {}\n", i, i + 1, i % 4))
            .collect();
        let c = corpus(&srcs.iter().map(String::as_str).collect::<Vec<_>>());
        for seed in 0..10 {
            let a = make_cloze_task(&c, 3, 3, seed).unwrap();
            let b = make_smlmt_task(&c, 3, 3, seed).unwrap();
            assert_eq!(a.pools, b.pools);
            assert_eq!(a.class_labels, b.class_labels);
        }
    }

    #[test]
    fn compile_tasks_pick_two_distinct_outcomes() {
        let mut srcs = Vec::new();
        for i in 0..6 {
            srcs.push(format!("x = {i}"));
            srcs.push(format!("x = f({i}"));
            srcs.push(format!("x = = {i}"));
        }
        let c = corpus(&srcs.iter().map(String::as_str).collect::<Vec<_>>());
        for seed in 0..20 {
            let t = make_compile_task(&c, 3, 3, seed).unwrap();
            assert_ne!(t.class_labels[0], t.class_labels[1]);
            for (label, pool) in t.class_labels.iter().zip(&t.pools) {
                assert_eq!(pool.len(), 6);
                assert!(pool
                    .iter()
                    .all(|e| check_syntax(&e.tokens).label() == label));
            }
        }
        let ok = corpus(&["x = 1"; 10]);
        assert!(matches!(
            make_compile_task(&ok, 2, 2, 0),
            Err(TaskError::NoViableOutcomes(1))
        ));
    }

    #[test]
    fn mixing_counts() {
        let mut srcs = Vec::new();
        for i in 0..12 {
            srcs.push(format!("if x > {i}:\n    return x\n"));
            srcs.push(format!("while y < {i}:\n    y = f(y\n"));
        }
        let c = corpus(&srcs.iter().map(String::as_str).collect::<Vec<_>>());
        let base = make_compile_task(&c, 2, 2, 0).unwrap();
        let three = vec![base.clone(); 3];
        assert_eq!(mix_augmented(&three, &c, 0.0, 2, 2, 1).unwrap(), three);
        let out = mix_augmented(&three, &c, 1.0, 2, 2, 1).unwrap();
        let origins: Vec<_> = out[3..].iter().map(|t| t.origin).collect();
        assert_eq!(
            origins,
            vec![TaskOrigin::Cloze, TaskOrigin::Cloze, TaskOrigin::Compile]
        );
        assert_eq!(out[..3], three[..]);
        let hundred = vec![base; 100];
        let out = mix_augmented(&hundred, &c, 0.1, 2, 2, 1).unwrap();
        assert_eq!(out.len(), 110);
        assert_eq!(
            out.iter().filter(|t| t.origin == TaskOrigin::Cloze).count(),
            5
        );
        assert_eq!(mix_augmented(&hundred, &c, 0.1, 2, 2, 1).unwrap(), out);
    }
}
