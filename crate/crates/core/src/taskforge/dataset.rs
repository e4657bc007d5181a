use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::TaskError;

/// One graded (program, rubric option) pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RubricRecord {
    pub exam_id: String,
    pub question_id: String,
    pub prompt_text: String,
    pub rubric_item_id: String,
    pub rubric_item_text: String,
    pub rubric_option_id: String,
    pub rubric_option_text: String,
    /// Raw program source; lexed on load.
    pub program: String,
    pub label: u8,
}

/// Rubric-annotated programs, one record per line on disk.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RubricDataset {
    pub records: Vec<RubricRecord>,
}

/// Everything known about one rubric option.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OptionInfo {
    pub option_id: String,
    pub option_text: String,
    pub item_id: String,
    pub item_text: String,
    pub question_id: String,
    pub prompt_text: String,
    pub exam_id: String,
}

impl RubricDataset {
    pub fn new(records: Vec<RubricRecord>) -> Self {
        RubricDataset { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses line-delimited records and checks the dataset invariants.
    pub fn from_jsonl(text: &str) -> Result<Self, TaskError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: RubricRecord = serde_json::from_str(line)
                .map_err(|e| TaskError::Data(format!("record on line {}: {e}", i + 1)))?;
            records.push(r);
        }
        let data = RubricDataset { records };
        data.validate()?;
        Ok(data)
    }

    /// Checks label values, triple uniqueness, and that every option belongs
    /// to one item and one question, and every question to one exam.
    pub fn validate(&self) -> Result<(), TaskError> {
        let mut triples = HashSet::new();
        let mut option_home: HashMap<&str, (&str, &str)> = HashMap::new();
        let mut item_home: HashMap<&str, &str> = HashMap::new();
        let mut exam_of: HashMap<&str, &str> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let at = |m: String| TaskError::Data(format!("record {}: {m}", i + 1));
            if r.label > 1 {
                return Err(at(format!("label {} is not 0 or 1", r.label)));
            }
            if !triples.insert((&r.question_id, &r.rubric_option_id, &r.program)) {
                return Err(at(format!(
                    "duplicate program for question {} option {}",
                    r.question_id, r.rubric_option_id
                )));
            }
            let home = (r.rubric_item_id.as_str(), r.question_id.as_str());
            if *option_home.entry(&r.rubric_option_id).or_insert(home) != home {
                return Err(at(format!(
                    "option {} appears under two items",
                    r.rubric_option_id
                )));
            }
            if *item_home.entry(&r.rubric_item_id).or_insert(&r.question_id) != r.question_id {
                return Err(at(format!(
                    "item {} appears under two questions",
                    r.rubric_item_id
                )));
            }
            if *exam_of.entry(&r.question_id).or_insert(&r.exam_id) != r.exam_id {
                return Err(at(format!(
                    "question {} appears under two exams",
                    r.question_id
                )));
            }
        }
        Ok(())
    }

    /// Options in first-appearance order.
    pub fn options(&self) -> Vec<OptionInfo> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.rubric_option_id.as_str()) {
                out.push(OptionInfo {
                    option_id: r.rubric_option_id.clone(),
                    option_text: r.rubric_option_text.clone(),
                    item_id: r.rubric_item_id.clone(),
                    item_text: r.rubric_item_text.clone(),
                    question_id: r.question_id.clone(),
                    prompt_text: r.prompt_text.clone(),
                    exam_id: r.exam_id.clone(),
                });
            }
        }
        out
    }

    /// Distinct programs of each question, in first-appearance order.
    pub fn programs_by_question(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut seen = HashSet::new();
        for r in &self.records {
            if seen.insert((r.question_id.as_str(), r.program.as_str())) {
                out.entry(r.question_id.clone())
                    .or_default()
                    .push(r.program.clone());
            }
        }
        out
    }

    /// Programs labeled 1 for each option.
    pub fn positives_by_option(&self) -> HashMap<String, HashSet<String>> {
        let mut out: HashMap<String, HashSet<String>> = HashMap::new();
        for r in &self.records {
            let e = out.entry(r.rubric_option_id.clone()).or_default();
            if r.label == 1 {
                e.insert(r.program.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: &str, item: &str, opt: &str, prog: &str, label: u8) -> RubricRecord {
        RubricRecord {
            exam_id: "e1".into(),
            question_id: q.into(),
            prompt_text: "sum a list".into(),
            rubric_item_id: item.into(),
            rubric_item_text: "loop bounds".into(),
            rubric_option_id: opt.into(),
            rubric_option_text: "stops early".into(),
            program: prog.into(),
            label,
        }
    }

    #[test]
    fn jsonl_round_trip_keeps_field_order() {
        let d = RubricDataset::new(vec![
            rec("q1", "i1", "o1", "x = 1\n", 1),
            rec("q1", "i1", "o2", "x = 1\n", 0),
        ]);
        let text = d.to_jsonl();
        assert!(text.starts_with("{\"exam_id\":\"e1\",\"question_id\":\"q1\",\"prompt_text\""));
        assert_eq!(RubricDataset::from_jsonl(&text).unwrap(), d);
    }

    #[test]
    fn invariants_are_enforced() {
        let dup = RubricDataset::new(vec![
            rec("q1", "i1", "o1", "p", 1),
            rec("q1", "i1", "o1", "p", 0),
        ]);
        assert!(dup.validate().is_err());
        let split = RubricDataset::new(vec![
            rec("q1", "i1", "o1", "p", 1),
            rec("q1", "i2", "o1", "r", 0),
        ]);
        assert!(split.validate().is_err());
        let bad = RubricDataset::new(vec![rec("q1", "i1", "o1", "p", 2)]);
        assert!(bad.validate().is_err());
        let err = RubricDataset::from_jsonl("{\"nope\": 1}\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
