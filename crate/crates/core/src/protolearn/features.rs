use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ProtoError;
use crate::encoder::{SIDE_PAD, SIDE_UNK};
use crate::lexnorm::{
    bpe_train, obfuscate, LexConfig, MergeTable, ObfuscationMode, TokenId, TokenSequence,
};
use crate::rng::derive_seed;
use crate::taskforge::{Episode, Task};

/// Word-level vocabulary for prompt and rubric text. Ids 0 and 1 are pad and
/// unknown; known words start at 2.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideVocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Lowercased alphanumeric runs.
pub fn side_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl SideVocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(side_words).collect();
        Self::from_words(words.into_iter().collect())
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 2))
            .collect();
        SideVocab { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Number of ids including pad and unknown.
    pub fn size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        side_words(text)
            .map(|w| self.index.get(&w).copied().unwrap_or(SIDE_UNK))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObfuscationPolicy {
    /// Names are kept as lexed.
    Off,
    /// Sequential slots everywhere.
    Sequential,
    /// Random slots for training examples, sequential slots otherwise.
    RandomTrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizerConfig {
    pub num_merges: usize,
    pub obfuscation: ObfuscationPolicy,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            num_merges: 200,
            obfuscation: ObfuscationPolicy::RandomTrain,
        }
    }
}

/// Serializable form of a [`Featurizer`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturizerState {
    pub lex: LexConfig,
    pub obfuscation: ObfuscationPolicy,
    pub max_ids: usize,
    pub merges: String,
    pub side_words: Vec<String>,
}

/// Turns token sequences and side text into encoder inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Featurizer {
    pub lex: LexConfig,
    pub merges: MergeTable,
    pub side: SideVocab,
    pub obfuscation: ObfuscationPolicy,
    /// Longest id sequence handed to the encoder.
    pub max_ids: usize,
}

/// Ids and labels for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBatch {
    pub task_id: String,
    pub n_classes: usize,
    pub support: Vec<Vec<TokenId>>,
    pub support_labels: Vec<usize>,
    pub query: Vec<Vec<TokenId>>,
    pub query_labels: Vec<usize>,
    pub prompt: Vec<usize>,
    pub rubric: Vec<usize>,
}

impl Featurizer {
    /// Learns merges from the distinct programs of `tasks` and a side
    /// vocabulary from their texts.
    pub fn fit(
        tasks: &[Task],
        lex: &LexConfig,
        cfg: &FeaturizerConfig,
        max_ids: usize,
    ) -> Result<Self, ProtoError> {
        let mut seen = BTreeSet::new();
        let mut corpus = Vec::new();
        for ex in tasks.iter().flat_map(|t| t.pools.iter().flatten()) {
            if seen.insert(ex.key.as_str()) {
                corpus.push(match cfg.obfuscation {
                    ObfuscationPolicy::Off => ex.tokens.clone(),
                    _ => obfuscate(
                        &ex.tokens,
                        ObfuscationMode::TestSequential,
                        lex.num_vars,
                        lex.num_funcs,
                    )?,
                });
            }
        }
        let merges = bpe_train(&corpus, cfg.num_merges, lex);
        let side = SideVocab::build(
            tasks
                .iter()
                .flat_map(|t| [t.side.prompt.as_str(), t.side.rubric.as_str()]),
        );
        Ok(Featurizer {
            lex: lex.clone(),
            merges,
            side,
            obfuscation: cfg.obfuscation,
            max_ids,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.merges.vocab_size()
    }

    pub fn state(&self) -> FeaturizerState {
        FeaturizerState {
            lex: self.lex.clone(),
            obfuscation: self.obfuscation,
            max_ids: self.max_ids,
            merges: self.merges.to_text(),
            side_words: self.side.words().to_vec(),
        }
    }

    pub fn from_state(s: &FeaturizerState) -> Result<Self, ProtoError> {
        Ok(Featurizer {
            lex: s.lex.clone(),
            merges: MergeTable::from_text(&s.merges)?,
            side: SideVocab::from_words(s.side_words.clone()),
            obfuscation: s.obfuscation,
            max_ids: s.max_ids,
        })
    }

    /// Obfuscates (randomly when `train_seed` is given and the policy allows
    /// it), subword-encodes and truncates one program.
    pub fn program_ids(
        &self,
        tokens: &TokenSequence,
        train_seed: Option<u64>,
    ) -> Result<Vec<TokenId>, ProtoError> {
        let mode = match (self.obfuscation, train_seed) {
            (ObfuscationPolicy::Off, _) => None,
            (ObfuscationPolicy::RandomTrain, Some(s)) => Some(ObfuscationMode::TrainRandom(s)),
            _ => Some(ObfuscationMode::TestSequential),
        };
        let seq = match mode {
            Some(m) => obfuscate(tokens, m, self.lex.num_vars, self.lex.num_funcs)?,
            None => tokens.clone(),
        };
        let mut ids = self.merges.encode(&seq)?;
        ids.truncate(self.max_ids);
        Ok(ids)
    }

    pub fn side_ids(&self, prompt: &str, rubric: &str) -> (Vec<usize>, Vec<usize>) {
        let p = self.side.encode(prompt);
        let r = self.side.encode(rubric);
        debug_assert!(!p.contains(&SIDE_PAD) && !r.contains(&SIDE_PAD));
        (p, r)
    }

    pub fn episode_batch(
        &self,
        ep: &Episode,
        train_seed: Option<u64>,
    ) -> Result<EpisodeBatch, ProtoError> {
        let (sup, support_labels) = ep.support_flat();
        let (qry, query_labels) = ep.query_flat();
        let encode_all = |examples: Vec<&crate::taskforge::Example>, offset: u64| {
            examples
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    self.program_ids(
                        &e.tokens,
                        train_seed.map(|s| derive_seed(s, &[offset + i as u64])),
                    )
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let support = encode_all(sup, 0)?;
        let query = encode_all(qry, 1 << 32)?;
        let (prompt, rubric) = self.side_ids(&ep.side.prompt, &ep.side.rubric);
        Ok(EpisodeBatch {
            task_id: ep.task_id.clone(),
            n_classes: ep.support.len(),
            support,
            support_labels,
            query,
            query_labels,
            prompt,
            rubric,
        })
    }
}
