//! Subword vocabulary learned by byte-pair merging over token texts.
//!
//! Ids are dense and start at 1. The low ids are reserved, in this order, for
//! the markers (`<pad>`, `<newline>`, `<scope>`, `</scope>`, `<mask>`,
//! `<task>`), the variable slots, the function slots and, when byte fallback
//! is on, the 256 raw bytes. Single characters seen in training come next,
//! followed by one id per merge result.

use std::collections::{BTreeSet, HashMap};

use super::token::{classify_word, Token, TokenKind, TokenSequence};
use super::{LexConfig, LexError};

pub type TokenId = u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Piece {
    Marker(TokenKind),
    Byte(u8),
    Sub(String),
}

const FIXED_MARKERS: [TokenKind; 6] = [
    TokenKind::Pad,
    TokenKind::NewlineMark,
    TokenKind::ScopeEnter,
    TokenKind::ScopeExit,
    TokenKind::Mask,
    TokenKind::TaskToken,
];

pub const PAD_ID: TokenId = 1;

#[derive(Clone, Debug)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    /// `vocab[id - 1]` is the piece for `id`.
    vocab: Vec<Piece>,
    sub_ids: HashMap<String, TokenId>,
    marker_ids: HashMap<TokenKind, TokenId>,
    byte_base: Option<TokenId>,
    ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl PartialEq for MergeTable {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges && self.vocab == other.vocab
    }
}

/// Learns up to `num_merges` merge rules from the text tokens of `corpus`.
///
/// At every step the most frequent adjacent pair (summed over all token
/// occurrences) is merged; ties go to the lexicographically smallest
/// `(left, right)`. Merges never cross token boundaries, and training stops
/// early when no pair is left.
pub fn bpe_train(corpus: &[TokenSequence], num_merges: usize, config: &LexConfig) -> MergeTable {
    bpe_train_with(corpus, num_merges, config, true)
}

pub fn bpe_train_with(
    corpus: &[TokenSequence],
    num_merges: usize,
    config: &LexConfig,
    byte_fallback: bool,
) -> MergeTable {
    let mut word_counts: HashMap<&str, usize> = HashMap::new();
    for seq in corpus {
        for t in seq.iter().filter(|t| !t.kind.is_marker()) {
            *word_counts.entry(t.text.as_str()).or_default() += 1;
        }
    }
    // Sorted for a deterministic symbol numbering.
    let mut words: Vec<(&str, usize)> = word_counts.into_iter().collect();
    words.sort_unstable();

    let alphabet: BTreeSet<char> = words.iter().flat_map(|(w, _)| w.chars()).collect();
    let mut symbols: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let mut symbol_of: HashMap<String, usize> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    let mut segs: Vec<(Vec<usize>, usize)> = words
        .iter()
        .map(|(w, n)| (w.chars().map(|c| symbol_of[&c.to_string()]).collect(), *n))
        .collect();

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for (seg, n) in &segs {
            for pair in seg.windows(2) {
                *counts.entry((pair[0], pair[1])).or_default() += n;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&symbols[pa.0], &symbols[pa.1]);
                let kb = (&symbols[pb.0], &symbols[pb.1]);
                kb.cmp(&ka)
            })
        });
        let Some(((left, right), _)) = best else {
            break;
        };
        let joined = format!("{}{}", symbols[left], symbols[right]);
        let merged = *symbol_of.entry(joined.clone()).or_insert_with(|| {
            symbols.push(joined);
            symbols.len() - 1
        });
        for (seg, _) in &mut segs {
            apply_merge(seg, left, right, merged);
        }
        merges.push((symbols[left].clone(), symbols[right].clone()));
    }

    MergeTable::assemble(
        merges,
        alphabet.into_iter().collect(),
        config,
        byte_fallback,
    )
}

fn apply_merge<T: Copy + PartialEq>(seg: &mut Vec<T>, left: T, right: T, merged: T) {
    let mut out = Vec::with_capacity(seg.len());
    let mut i = 0;
    while i < seg.len() {
        if i + 1 < seg.len() && seg[i] == left && seg[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(seg[i]);
            i += 1;
        }
    }
    *seg = out;
}

impl MergeTable {
    fn assemble(
        merges: Vec<(String, String)>,
        alphabet: Vec<char>,
        config: &LexConfig,
        byte_fallback: bool,
    ) -> MergeTable {
        let mut vocab: Vec<Piece> = FIXED_MARKERS.iter().map(|k| Piece::Marker(*k)).collect();
        vocab.extend((1..=config.num_vars).map(|i| Piece::Marker(TokenKind::VarSlot(i))));
        vocab.extend((1..=config.num_funcs).map(|i| Piece::Marker(TokenKind::FuncSlot(i))));
        if byte_fallback {
            vocab.extend((0..=255u8).map(Piece::Byte));
        }
        vocab.extend(alphabet.iter().map(|c| Piece::Sub(c.to_string())));
        let mut seen: BTreeSet<String> = alphabet.iter().map(|c| c.to_string()).collect();
        for (l, r) in &merges {
            let s = format!("{l}{r}");
            if seen.insert(s.clone()) {
                vocab.push(Piece::Sub(s));
            }
        }
        Self::from_parts(merges, vocab).expect("freshly assembled table is consistent")
    }

    fn from_parts(
        merges: Vec<(String, String)>,
        vocab: Vec<Piece>,
    ) -> Result<MergeTable, LexError> {
        let mut sub_ids = HashMap::new();
        let mut marker_ids = HashMap::new();
        let mut byte_base = None;
        for (i, p) in vocab.iter().enumerate() {
            let id = i as TokenId + 1;
            match p {
                Piece::Marker(k) => {
                    marker_ids.insert(*k, id);
                }
                Piece::Byte(b) => {
                    if *b == 0 {
                        byte_base = Some(id);
                    } else if byte_base.map(|base| base + *b as TokenId) != Some(id) {
                        return Err(LexError::MalformedTable(
                            "byte ids are not contiguous".into(),
                        ));
                    }
                }
                Piece::Sub(s) => {
                    if sub_ids.insert(s.clone(), id).is_some() {
                        return Err(LexError::MalformedTable(format!("duplicate subword {s:?}")));
                    }
                }
            }
        }
        let mut ranks = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                sub_ids.get(s).copied().ok_or_else(|| {
                    LexError::MalformedTable(format!("merge refers to unknown {s:?}"))
                })
            };
            let key = (lookup(l)?, lookup(r)?);
            let merged = lookup(&format!("{l}{r}"))?;
            ranks.entry(key).or_insert((rank, merged));
        }
        Ok(MergeTable {
            merges,
            vocab,
            sub_ids,
            marker_ids,
            byte_base,
            ranks,
        })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Largest id in use; ids run over `1..=vocab_size()`.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn piece(&self, id: TokenId) -> Option<&Piece> {
        self.vocab.get((id as usize).checked_sub(1)?)
    }

    pub fn marker_id(&self, kind: TokenKind) -> Option<TokenId> {
        self.marker_ids.get(&kind).copied()
    }

    /// Splits one token text into subword ids.
    pub fn encode_text(&self, text: &str) -> Result<Vec<TokenId>, LexError> {
        let mut seg: Vec<TokenId> = Vec::with_capacity(text.len());
        let mut buf = [0u8; 4];
        for c in text.chars() {
            let s = c.encode_utf8(&mut buf);
            match self.sub_ids.get(&*s) {
                Some(id) => seg.push(*id),
                None => match self.byte_base {
                    Some(base) => seg.extend(s.bytes().map(|b| base + b as TokenId)),
                    None => return Err(LexError::UnknownSymbol(c)),
                },
            }
        }
        // Lowest-rank-first is equivalent to applying rules in table order,
        // since a merge result only takes part in later rules.
        loop {
            let best = seg
                .windows(2)
                .filter_map(|p| {
                    self.ranks
                        .get(&(p[0], p[1]))
                        .map(|r| (r.0, p[0], p[1], r.1))
                })
                .min();
            let Some((_, l, r, merged)) = best else {
                break;
            };
            apply_merge(&mut seg, l, r, merged);
        }
        Ok(seg)
    }

    /// Maps a token stream to vocabulary ids; markers take their reserved ids.
    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<TokenId>, LexError> {
        let mut out = Vec::with_capacity(seq.len() * 2);
        for t in seq {
            if t.kind.is_marker() {
                let id = self
                    .marker_id(t.kind)
                    .ok_or_else(|| LexError::UnknownMarker(t.surface()))?;
                out.push(id);
            } else {
                out.extend(self.encode_text(&t.text)?);
            }
        }
        Ok(out)
    }

    /// Subword strings for each id (markers spelled out, bytes as `<0xHH>`).
    pub fn pieces(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|id| match self.piece(*id) {
                Some(Piece::Marker(k)) => Token::marker(*k).surface(),
                Some(Piece::Byte(b)) => format!("<0x{b:02X}>"),
                Some(Piece::Sub(s)) => s.clone(),
                None => "<?>".to_string(),
            })
            .collect()
    }

    /// Rebuilds a token stream with one token per subword id. Runs of byte
    /// ids are joined into a single token.
    pub fn decode(&self, ids: &[TokenId], keywords: &[String]) -> TokenSequence {
        let mut tokens = Vec::new();
        let mut bytes: Vec<u8> = Vec::new();
        let flush = |bytes: &mut Vec<u8>, tokens: &mut Vec<Token>| {
            if !bytes.is_empty() {
                let text = String::from_utf8_lossy(bytes).into_owned();
                tokens.push(Token::new(classify_word(&text, keywords), text));
                bytes.clear();
            }
        };
        for id in ids {
            match self.piece(*id) {
                Some(Piece::Byte(b)) => bytes.push(*b),
                Some(Piece::Marker(k)) => {
                    flush(&mut bytes, &mut tokens);
                    tokens.push(Token::marker(*k));
                }
                Some(Piece::Sub(s)) => {
                    flush(&mut bytes, &mut tokens);
                    tokens.push(Token::new(classify_word(s, keywords), s.clone()));
                }
                None => flush(&mut bytes, &mut tokens),
            }
        }
        flush(&mut bytes, &mut tokens);
        TokenSequence::new(tokens)
    }

    /// Text form: one escaped `left right` merge per line, a blank line, then
    /// `piece<TAB>id` for every vocabulary entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(&format!("{} {}\n", escape(l), escape(r)));
        }
        out.push('\n');
        for (i, p) in self.vocab.iter().enumerate() {
            let text = match p {
                Piece::Marker(k) => Token::marker(*k).surface(),
                Piece::Byte(b) => format!("<0x{b:02X}>"),
                Piece::Sub(s) => escape(s),
            };
            out.push_str(&format!("{}\t{}\n", text, i + 1));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<MergeTable, LexError> {
        let bad = |m: String| LexError::MalformedTable(m);
        let (merge_block, vocab_block) = text
            .split_once("\n\n")
            .or_else(|| text.strip_prefix('\n').map(|v| ("", v)))
            .ok_or_else(|| bad("missing blank line before vocabulary block".into()))?;
        let mut merges = Vec::new();
        for line in merge_block.lines() {
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("bad merge line {line:?}")))?;
            merges.push((unescape(l)?, unescape(r)?));
        }
        let mut vocab = Vec::new();
        for line in vocab_block.lines() {
            let (piece, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(format!("bad vocabulary line {line:?}")))?;
            let id: usize = id.parse().map_err(|_| bad(format!("bad id in {line:?}")))?;
            if id != vocab.len() + 1 {
                return Err(bad(format!("ids must be dense, found {id}")));
            }
            let p = if let Some(hex) = piece.strip_prefix("<0x").and_then(|h| h.strip_suffix('>')) {
                Piece::Byte(
                    u8::from_str_radix(hex, 16).map_err(|_| bad(format!("bad byte {piece}")))?,
                )
            } else if let Some(t) = Token::parse_marker(piece) {
                Piece::Marker(t.kind)
            } else {
                Piece::Sub(unescape(piece)?)
            };
            vocab.push(p);
        }
        MergeTable::from_parts(merges, vocab)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for (i, c) in s.chars().enumerate() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '<' if i == 0 => out.push_str("\\<"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, LexError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('\\') => out.push('\\'),
                Some('s') => out.push(' '),
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('<') => out.push('<'),
                other => {
                    return Err(LexError::MalformedTable(format!(
                        "bad escape \\{}",
                        other.map(String::from).unwrap_or_default()
                    )))
                }
            }
        } else {
            out.push(c);
        }
    }
    Ok(out)
}
