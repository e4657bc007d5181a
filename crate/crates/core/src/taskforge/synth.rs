//! Synthetic graded programs.
//!
//! Every question is a small function built from reusable pieces: a loop, an
//! optional comparison guard, an optional divisibility guard, an accumulator
//! (a number or a dictionary of counts) and a final return. Each rubric item
//! corresponds to one misconception family that can corrupt one of those
//! pieces; its options are the concrete variants. A student commits at most
//! one option per item, drawn from long-tailed rates, so options of one item
//! are mutually exclusive while different items co-occur freely.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RubricDataset, RubricRecord};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    WrongComparison,
    OffByOne,
    MissingReturn,
    IntDivForMod,
    UncheckedKey,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::WrongComparison,
        Family::OffByOne,
        Family::MissingReturn,
        Family::IntDivForMod,
        Family::UncheckedKey,
    ];

    pub fn item_text(self) -> &'static str {
        match self {
            Family::WrongComparison => "compares values with the correct operator",
            Family::OffByOne => "loop covers the correct range",
            Family::MissingReturn => "returns the computed result",
            Family::IntDivForMod => "checks divisibility with the remainder operator",
            Family::UncheckedKey => "handles missing dictionary keys",
        }
    }

    pub fn option_texts(self) -> &'static [&'static str] {
        match self {
            Family::WrongComparison => &[
                "strict and inclusive comparison confused",
                "comparison direction reversed",
                "equality used instead of an ordering comparison",
            ],
            Family::OffByOne => &[
                "loop stops one iteration early",
                "loop starts one step late",
            ],
            Family::MissingReturn => &[
                "missing return statement",
                "prints the result instead of returning it",
                "returns from inside the loop",
            ],
            Family::IntDivForMod => &[
                "floor division used instead of modulo",
                "true division used instead of modulo",
            ],
            Family::UncheckedKey => &[
                "updates a key without checking membership",
                "overwrites the count instead of accumulating",
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_questions: usize,
    pub students_per_question: usize,
    pub num_exams: usize,
    /// Rubric items per question, at most the number of families.
    pub items_per_question: usize,
    /// Probability that a submission also carries one syntax slip.
    pub slip_rate: f64,
    /// Per-item probability of any misconception, drawn uniformly from this range.
    pub error_rate_min: f64,
    pub error_rate_max: f64,
    /// Option `j` of an item gets weight `1 / (j + 1)^tail_exponent`.
    pub tail_exponent: f64,
    /// Probability of each optional surface variation.
    pub noise: f64,
    /// Upper bound on unused filler statements added to a submission.
    pub max_filler: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            num_questions: 12,
            students_per_question: 120,
            num_exams: 3,
            items_per_question: 3,
            slip_rate: 0.15,
            error_rate_min: 0.35,
            error_rate_max: 0.6,
            tail_exponent: 2.5,
            noise: 0.3,
            max_filler: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_questions == 0 || self.students_per_question == 0 || self.num_exams == 0 {
            return Err("synth sizes must be at least 1".into());
        }
        if !(1..=Family::ALL.len()).contains(&self.items_per_question) {
            return Err(format!(
                "synth.items_per_question must be in 1..={}",
                Family::ALL.len()
            ));
        }
        for (name, v) in [("slip_rate", self.slip_rate), ("noise", self.noise)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("synth.{name} must lie in [0, 1]"));
            }
        }
        if !(0.0 <= self.error_rate_min
            && self.error_rate_min <= self.error_rate_max
            && self.error_rate_max < 1.0)
        {
            return Err("synth error rates must satisfy 0 <= min <= max < 1".into());
        }
        Ok(())
    }
}

/// One rubric item of a generated question with its option rates.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemPlan {
    pub family: Family,
    /// Variant index (into [`Family::option_texts`]) of each option.
    pub variants: Vec<usize>,
    /// Probability of each option; the remainder is the correct variant.
    pub rates: Vec<f64>,
}

impl ItemPlan {
    /// Draws an option index, or `None` for a correct submission.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Option<usize> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, r) in self.rates.iter().enumerate() {
            acc += r;
            if u < acc {
                return Some(i);
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    fn text(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        }
    }

    fn toggle_strict(self) -> Cmp {
        match self {
            Cmp::Lt => Cmp::Le,
            Cmp::Le => Cmp::Lt,
            Cmp::Gt => Cmp::Ge,
            Cmp::Ge => Cmp::Gt,
        }
    }

    fn reverse(self) -> Cmp {
        match self {
            Cmp::Lt => Cmp::Gt,
            Cmp::Le => Cmp::Ge,
            Cmp::Gt => Cmp::Lt,
            Cmp::Ge => Cmp::Le,
        }
    }
}

/// Fixed structure of one question.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionPlan {
    pub question_id: String,
    pub exam_id: String,
    pub function: String,
    pub prompt: String,
    pub items: Vec<ItemPlan>,
    cmp: Cmp,
    range_start: u32,
    modulus: u32,
    remainder: u32,
}

impl QuestionPlan {
    fn has(&self, f: Family) -> bool {
        self.items.iter().any(|i| i.family == f)
    }
}

const FUNCTION_NAMES: [&str; 12] = [
    "tally",
    "score",
    "collect",
    "measure",
    "summarize",
    "count_hits",
    "total_up",
    "scan",
    "accumulate",
    "gather",
    "inspect",
    "compute",
];
const ACC_NAMES: [&str; 8] = [
    "total",
    "count",
    "result",
    "acc",
    "answer",
    "runningSum",
    "s",
    "out",
];
const LIST_NAMES: [&str; 6] = ["nums", "values", "items", "data", "xs", "numberList"];
const ITEM_NAMES: [&str; 6] = ["x", "v", "item", "num", "elem", "val"];
const INDEX_NAMES: [&str; 5] = ["i", "k", "idx", "step", "j"];
const BOUND_NAMES: [&str; 4] = ["n", "limit", "upTo", "top"];
const DICT_NAMES: [&str; 5] = ["counts", "seen", "table", "freq", "tallyMap"];
const THRESH_NAMES: [&str; 4] = ["t", "cutoff", "threshold", "minVal"];
const FILLER_NAMES: [&str; 5] = ["tmp", "flag", "unused", "helperVal", "z"];

/// Builds the plan of question `index`.
pub fn plan_question(cfg: &SynthConfig, index: usize) -> QuestionPlan {
    let mut rng = rng_for(cfg.seed, &[0x51, index as u64]);
    let mut families = Family::ALL.to_vec();
    families.shuffle(&mut rng);
    families.truncate(cfg.items_per_question);
    // Canonical order keeps item ids stable regardless of the draw order.
    families.sort_by_key(|f| Family::ALL.iter().position(|g| g == f));

    let items = families
        .into_iter()
        .map(|family| {
            let mut variants: Vec<usize> = (0..family.option_texts().len()).collect();
            variants.shuffle(&mut rng);
            let total = rng.random_range(cfg.error_rate_min..=cfg.error_rate_max);
            let weights: Vec<f64> = (0..variants.len())
                .map(|j| 1.0 / ((j + 1) as f64).powf(cfg.tail_exponent))
                .collect();
            let norm: f64 = weights.iter().sum();
            ItemPlan {
                family,
                variants,
                rates: weights.iter().map(|w| total * w / norm).collect(),
            }
        })
        .collect::<Vec<_>>();

    let cmp = *[Cmp::Lt, Cmp::Le, Cmp::Gt, Cmp::Ge]
        .choose(&mut rng)
        .unwrap();
    let function = format!(
        "{}_{}",
        FUNCTION_NAMES[index % FUNCTION_NAMES.len()],
        index / FUNCTION_NAMES.len() + 1
    );
    let mut plan = QuestionPlan {
        question_id: format!("q{index:02}"),
        exam_id: format!("e{}", index % cfg.num_exams),
        function,
        prompt: String::new(),
        items,
        cmp,
        range_start: rng.random_range(0..=1),
        modulus: rng.random_range(2..=5),
        remainder: 0,
    };
    plan.remainder = rng.random_range(0..plan.modulus);
    plan.prompt = describe(&plan);
    plan
}

fn describe(p: &QuestionPlan) -> String {
    let mut words = vec![format!("write a function {} that", p.function)];
    words.push(if p.has(Family::OffByOne) {
        format!("loops over the numbers from {} to n", p.range_start)
    } else {
        "loops over a list of numbers".into()
    });
    if p.has(Family::WrongComparison) {
        let rel = match p.cmp {
            Cmp::Lt => "below",
            Cmp::Le => "at most",
            Cmp::Gt => "above",
            Cmp::Ge => "at least",
        };
        words.push(format!("keeps values {rel} a threshold"));
    }
    if p.has(Family::IntDivForMod) {
        words.push(format!(
            "with remainder {} modulo {}",
            p.remainder, p.modulus
        ));
    }
    words.push(if p.has(Family::UncheckedKey) {
        "and counts them in a dictionary".into()
    } else {
        "and adds them up".into()
    });
    words.join(" ")
}

struct Names {
    acc: String,
    list: String,
    item: String,
    index: String,
    bound: String,
    dict: String,
    thresh: String,
    filler: String,
}

fn pick(rng: &mut ChaCha8Rng, pool: &[&str]) -> String {
    pool.choose(rng).unwrap().to_string()
}

/// Renders one submission. `choice[i]` is the committed option of item `i`.
fn render(
    p: &QuestionPlan,
    choice: &[Option<usize>],
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> String {
    let variant = |f: Family| -> Option<usize> {
        p.items
            .iter()
            .zip(choice)
            .find(|(it, _)| it.family == f)
            .and_then(|(it, c)| c.map(|o| it.variants[o]))
    };
    let n = Names {
        acc: pick(rng, &ACC_NAMES),
        list: pick(rng, &LIST_NAMES),
        item: pick(rng, &ITEM_NAMES),
        index: pick(rng, &INDEX_NAMES),
        bound: pick(rng, &BOUND_NAMES),
        dict: pick(rng, &DICT_NAMES),
        thresh: pick(rng, &THRESH_NAMES),
        filler: pick(rng, &FILLER_NAMES),
    };
    let noisy = |rng: &mut ChaCha8Rng| rng.random_bool(cfg.noise);
    let ranged = p.has(Family::OffByOne);
    let dict = p.has(Family::UncheckedKey);
    let target = if dict { &n.dict } else { &n.acc };

    let mut lines: Vec<(usize, String)> = Vec::new();
    let mut params = vec![if ranged {
        n.bound.clone()
    } else {
        n.list.clone()
    }];
    if p.has(Family::WrongComparison) {
        params.push(n.thresh.clone());
    }
    lines.push((0, format!("def {}({}):", p.function, params.join(", "))));
    if noisy(rng) {
        lines.push((1, format!("# {}", p.prompt)));
    }
    let fillers = rng.random_range(0..=cfg.max_filler);
    for _ in 0..fillers {
        if noisy(rng) {
            lines.push((1, format!("{} = {}", n.filler, rng.random_range(0..10))));
        }
    }
    lines.push((
        1,
        if dict {
            format!("{} = {{}}", n.dict)
        } else {
            format!("{} = 0", n.acc)
        },
    ));

    let var = if ranged {
        n.index.clone()
    } else {
        n.item.clone()
    };
    if ranged {
        let s = p.range_start;
        let (lo, hi) = match variant(Family::OffByOne) {
            Some(0) => (s.to_string(), n.bound.clone()),
            Some(_) => ((s + 1).to_string(), format!("{} + 1", n.bound)),
            None => (s.to_string(), format!("{} + 1", n.bound)),
        };
        lines.push((1, format!("for {var} in range({lo}, {hi}):")));
    } else {
        lines.push((1, format!("for {var} in {}:", n.list)));
    }
    let mut depth = 2;

    if p.has(Family::WrongComparison) {
        let cmp = match variant(Family::WrongComparison) {
            Some(0) => p.cmp.toggle_strict().text(),
            Some(1) => p.cmp.reverse().text(),
            Some(_) => "==",
            None => p.cmp.text(),
        };
        let cond = format!("{var} {cmp} {}", n.thresh);
        let cond = if noisy(rng) {
            format!("({cond})")
        } else {
            cond
        };
        lines.push((depth, format!("if {cond}:")));
        depth += 1;
    }
    if p.has(Family::IntDivForMod) {
        let op = match variant(Family::IntDivForMod) {
            Some(0) => "//",
            Some(_) => "/",
            None => "%",
        };
        lines.push((
            depth,
            format!("if {var} {op} {} == {}:", p.modulus, p.remainder),
        ));
        depth += 1;
    }
    if dict {
        let key = var.clone();
        match variant(Family::UncheckedKey) {
            Some(0) => lines.push((depth, format!("{}[{key}] += 1", n.dict))),
            Some(_) => lines.push((depth, format!("{}[{key}] = 1", n.dict))),
            None => {
                if noisy(rng) {
                    lines.push((depth, format!("if {key} not in {}:", n.dict)));
                    lines.push((depth + 1, format!("{}[{key}] = 1", n.dict)));
                    lines.push((depth, "else:".into()));
                    lines.push((depth + 1, format!("{}[{key}] += 1", n.dict)));
                } else {
                    lines.push((depth, format!("if {key} in {}:", n.dict)));
                    lines.push((depth + 1, format!("{}[{key}] += 1", n.dict)));
                    lines.push((depth, "else:".into()));
                    lines.push((depth + 1, format!("{}[{key}] = 1", n.dict)));
                }
            }
        }
    } else if noisy(rng) {
        lines.push((depth, format!("{} = {} + {var}", n.acc, n.acc)));
    } else {
        lines.push((depth, format!("{} += {var}", n.acc)));
    }

    match variant(Family::MissingReturn) {
        Some(0) => {}
        Some(1) => lines.push((1, format!("print({target})"))),
        Some(_) => lines.push((2, format!("return {target}"))),
        None => lines.push((1, format!("return {target}"))),
    }

    if rng.random_bool(cfg.slip_rate) {
        slip(&mut lines, rng);
    }
    let mut src = String::new();
    for (d, l) in lines {
        src.push_str(&"    ".repeat(d));
        src.push_str(&l);
        src.push('\n');
    }
    src
}

fn is_header(line: &str) -> bool {
    ["def ", "if ", "elif ", "else", "for ", "while "]
        .iter()
        .any(|h| line.starts_with(h))
}

/// Injects one syntax error of a random kind.
fn slip(lines: &mut [(usize, String)], rng: &mut ChaCha8Rng) {
    match rng.random_range(0..5) {
        0 => {
            // Drop the last closing parenthesis of the header.
            let l = &mut lines[0].1;
            if let Some(i) = l.rfind(')') {
                l.remove(i);
            }
        }
        1 => {
            let headers: Vec<usize> = (0..lines.len())
                .filter(|&i| is_header(&lines[i].1))
                .collect();
            let i = *headers.choose(rng).unwrap();
            lines[i].1.pop();
        }
        2 => {
            // Indent a statement that sits level with the previous statement,
            // so the lexer opens a scope that no header asked for.
            let code: Vec<usize> = (0..lines.len())
                .filter(|&i| !lines[i].1.starts_with('#'))
                .collect();
            let body: Vec<usize> = code
                .windows(2)
                .filter(|w| {
                    let (prev, cur) = (&lines[w[0]], &lines[w[1]]);
                    !is_header(&prev.1) && !is_header(&cur.1) && prev.0 == cur.0
                })
                .map(|w| w[1])
                .collect();
            if let Some(&i) = body.choose(rng) {
                lines[i].0 += 1;
            } else {
                lines[0].1.pop();
            }
        }
        3 => {
            let assigns: Vec<usize> = (0..lines.len())
                .filter(|&i| lines[i].1.contains(" = "))
                .collect();
            let i = *assigns.choose(rng).unwrap();
            lines[i].1 = lines[i].1.replacen(" = ", " = = ", 1);
        }
        _ => {
            let l = &mut lines[0].1;
            let open = l.find('(').unwrap();
            let close = l.find(')').unwrap();
            let first = l[open + 1..close].split(", ").next().unwrap().to_string();
            l.insert_str(open + 1, &format!("{first}, "));
        }
    }
}

/// Generates a dataset with the default knobs.
pub fn synth_corpus(
    seed: u64,
    num_questions: usize,
    students_per_question: usize,
) -> RubricDataset {
    synth_corpus_with(&SynthConfig {
        seed,
        num_questions,
        students_per_question,
        ..SynthConfig::default()
    })
}

/// Generates `students_per_question` distinct submissions per question and
/// one record per (submission, rubric option).
pub fn synth_corpus_with(cfg: &SynthConfig) -> RubricDataset {
    let mut records = Vec::new();
    for qi in 0..cfg.num_questions {
        let plan = plan_question(cfg, qi);
        let mut seen = HashSet::new();
        for s in 0..cfg.students_per_question {
            let mut rng = rng_for(cfg.seed, &[0x53, qi as u64, s as u64]);
            // Re-draw duplicates a bounded number of times; program identity is
            // (question, source).
            let mut drawn = None;
            for _ in 0..16 {
                let choice: Vec<Option<usize>> =
                    plan.items.iter().map(|it| it.draw(&mut rng)).collect();
                let src = render(&plan, &choice, cfg, &mut rng);
                if seen.insert(src.clone()) {
                    drawn = Some((choice, src));
                    break;
                }
            }
            let Some((choice, src)) = drawn else { continue };
            for (ii, item) in plan.items.iter().enumerate() {
                for (oi, &v) in item.variants.iter().enumerate() {
                    records.push(RubricRecord {
                        exam_id: plan.exam_id.clone(),
                        question_id: plan.question_id.clone(),
                        prompt_text: plan.prompt.clone(),
                        rubric_item_id: format!("{}-i{ii}", plan.question_id),
                        rubric_item_text: item.family.item_text().into(),
                        rubric_option_id: format!("{}-i{ii}-o{oi}", plan.question_id),
                        rubric_option_text: item.family.option_texts()[v].into(),
                        program: src.clone(),
                        label: u8::from(choice[ii] == Some(oi)),
                    });
                }
            }
        }
    }
    RubricDataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexnorm::{lex_normalize, LexConfig};
    use crate::taskforge::{check_syntax, OutcomeClass};

    #[test]
    fn same_seed_same_bytes() {
        let a = synth_corpus(5, 3, 20).to_jsonl();
        assert_eq!(a, synth_corpus(5, 3, 20).to_jsonl());
        assert_ne!(a, synth_corpus(6, 3, 20).to_jsonl());
    }

    #[test]
    fn one_option_per_item_and_valid_structure() {
        let d = synth_corpus(1, 4, 40);
        d.validate().unwrap();
        let mut per: std::collections::HashMap<(&str, &str), u32> = Default::default();
        for r in &d.records {
            *per.entry((r.program.as_str(), r.rubric_item_id.as_str()))
                .or_default() += r.label as u32;
        }
        assert!(per.values().all(|&c| c <= 1));
    }

    #[test]
    fn programs_lex_and_clean_ones_pass_the_checker() {
        let cfg = SynthConfig {
            seed: 3,
            num_questions: 10,
            students_per_question: 30,
            slip_rate: 0.0,
            ..Default::default()
        };
        for (_, progs) in synth_corpus_with(&cfg).programs_by_question() {
            for p in progs {
                let seq = lex_normalize(&p, &LexConfig::default()).unwrap();
                assert_eq!(check_syntax(&seq), OutcomeClass::Ok, "{p}");
            }
        }
    }

    #[test]
    fn slips_cover_every_error_class() {
        let cfg = SynthConfig {
            seed: 4,
            num_questions: 6,
            students_per_question: 60,
            slip_rate: 1.0,
            ..Default::default()
        };
        let mut found = HashSet::new();
        for (_, progs) in synth_corpus_with(&cfg).programs_by_question() {
            for p in progs {
                let seq = lex_normalize(&p, &LexConfig::default()).unwrap();
                let c = check_syntax(&seq);
                assert_ne!(c, OutcomeClass::Ok, "{p}");
                found.insert(c);
            }
        }
        assert_eq!(found.len(), 5);
    }

    #[test]
    fn option_rates_are_long_tailed() {
        let cfg = SynthConfig::default();
        let mut rng = rng_for(9, &[]);
        for q in 0..cfg.num_questions {
            let plan = plan_question(&cfg, q);
            for item in &plan.items {
                let samples = 10_000;
                let mut counts = vec![0usize; item.rates.len()];
                for _ in 0..samples {
                    if let Some(o) = item.draw(&mut rng) {
                        counts[o] += 1;
                    }
                }
                let freqs: Vec<f64> = counts.iter().map(|c| *c as f64 / samples as f64).collect();
                for (f, r) in freqs.iter().zip(&item.rates) {
                    assert!((f - r).abs() < 0.02);
                }
                assert!(freqs.windows(2).all(|w| w[0] >= w[1] - 0.02));
                assert!(*freqs.last().unwrap() <= 0.1, "{freqs:?}");
            }
        }
    }
}
