use serde::{Deserialize, Serialize};

use super::token::{Token, TokenKind, TokenSequence};
use super::LexError;

pub const DEFAULT_KEYWORDS: [&str; 14] = [
    "def", "return", "if", "elif", "else", "for", "while", "in", "and", "or", "not", "pass",
    "break", "continue",
];

/// Longest operators first so that the scanner can take the first prefix match.
const OPERATORS: [&str; 19] = [
    "**=", "//=", "==", "!=", "<=", ">=", "//", "**", "+=", "-=", "*=", "/=", "%=", "->", "<<",
    ">>", "&=", "|=", "^=",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LexConfig {
    pub keywords: Vec<String>,
    pub indent_width: usize,
    /// Maximum sequence length T.
    pub max_len: usize,
    /// Variable slot budget N_v.
    pub num_vars: u16,
    /// Function slot budget N_f.
    pub num_funcs: u16,
}

impl Default for LexConfig {
    fn default() -> Self {
        LexConfig {
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            indent_width: 4,
            max_len: 256,
            num_vars: 100,
            num_funcs: 10,
        }
    }
}

impl LexConfig {
    pub fn is_keyword(&self, word: &str) -> bool {
        self.keywords.iter().any(|k| k == word)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.indent_width == 0 {
            return Err("lex.indent_width must be positive".into());
        }
        if self.max_len < 2 {
            return Err("lex.max_len must be at least 2".into());
        }
        if self.num_vars == 0 || self.num_funcs == 0 {
            return Err("lex.num_vars and lex.num_funcs must be positive".into());
        }
        Ok(())
    }
}

/// Rewrites `camelCase` as `camel_case`: an underscore goes before every
/// uppercase letter that follows a lowercase letter or digit, then the whole
/// name is lowercased.
pub fn camel_to_snake(name: &str) -> String {
    let mut out = String::with_capacity(name.len() + 4);
    let mut prev: Option<char> = None;
    for c in name.chars() {
        if c.is_ascii_uppercase() {
            if let Some(p) = prev {
                if p.is_ascii_lowercase() || p.is_ascii_digit() {
                    out.push('_');
                }
            }
        }
        out.push(c.to_ascii_lowercase());
        prev = Some(c);
    }
    out
}

/// Tokenizes and normalizes one program.
///
/// Comments are dropped, names are snake-cased, each non-blank line ends in a
/// `NewlineMark`, and indentation changes become `ScopeEnter`/`ScopeExit`
/// pairs. Over-length output is cut to `max_len` and re-balanced.
pub fn lex_normalize(source: &str, config: &LexConfig) -> Result<TokenSequence, LexError> {
    let mut tokens = Vec::new();
    let mut indents: Vec<usize> = vec![0];

    for (lineno, raw_line) in source.split('\n').enumerate() {
        let mut width = 0usize;
        let mut body_start = raw_line.len();
        for (i, c) in raw_line.char_indices() {
            if c == '\t' {
                return Err(LexError::Indent {
                    line: lineno + 1,
                    message: "tab in indentation".into(),
                });
            }
            if !c.is_whitespace() {
                body_start = i;
                break;
            }
            width += 1;
        }
        let line_tokens = scan_line(&raw_line[body_start..], config);
        if line_tokens.is_empty() {
            continue;
        }

        let top = *indents.last().unwrap();
        if width > top {
            indents.push(width);
            tokens.push(Token::marker(TokenKind::ScopeEnter));
        } else if width < top {
            while *indents.last().unwrap() > width {
                indents.pop();
                tokens.push(Token::marker(TokenKind::ScopeExit));
            }
            if *indents.last().unwrap() != width {
                return Err(LexError::Indent {
                    line: lineno + 1,
                    message: format!("dedent to column {width} matches no enclosing scope"),
                });
            }
        }
        tokens.extend(line_tokens);
        tokens.push(Token::marker(TokenKind::NewlineMark));
    }
    for _ in 1..indents.len() {
        tokens.push(Token::marker(TokenKind::ScopeExit));
    }

    Ok(TokenSequence::new(truncate_balanced(
        tokens,
        config.max_len,
    )))
}

/// Cuts a scope-balanced token list to at most `max_len` tokens, closing any
/// scopes left open by the cut.
pub fn truncate_balanced(mut tokens: Vec<Token>, max_len: usize) -> Vec<Token> {
    if tokens.len() <= max_len {
        return tokens;
    }
    let mut depth = 0usize;
    let mut keep = 0usize;
    for (i, t) in tokens.iter().enumerate() {
        match t.kind {
            TokenKind::ScopeEnter => depth += 1,
            TokenKind::ScopeExit => depth = depth.saturating_sub(1),
            _ => {}
        }
        if i + 1 + depth <= max_len {
            keep = i + 1;
        }
    }
    tokens.truncate(keep);
    let open = tokens.iter().fold(0usize, |d, t| match t.kind {
        TokenKind::ScopeEnter => d + 1,
        TokenKind::ScopeExit => d.saturating_sub(1),
        _ => d,
    });
    tokens.extend((0..open).map(|_| Token::marker(TokenKind::ScopeExit)));
    tokens
}

fn scan_line(line: &str, config: &LexConfig) -> Vec<Token> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            break;
        } else if c == '\'' || c == '"' {
            // Unterminated literals run to the end of the line.
            let end = chars[i + 1..]
                .iter()
                .position(|&d| d == c)
                .map(|p| i + 1 + p + 1)
                .unwrap_or(chars.len());
            out.push(Token::new(
                TokenKind::String,
                chars[i..end].iter().collect::<String>(),
            ));
            i = end;
        } else if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            out.push(Token::new(
                TokenKind::Number,
                chars[i..j].iter().collect::<String>(),
            ));
            i = j;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            if config.is_keyword(&word) {
                out.push(Token::new(TokenKind::Keyword, word));
            } else {
                let mut name = camel_to_snake(&word);
                while config.is_keyword(&name) {
                    name.push('_');
                }
                out.push(Token::new(TokenKind::Name, name));
            }
            i = j;
        } else {
            let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
            let op = OPERATORS.iter().find(|op| rest.starts_with(*op));
            match op {
                Some(op) => {
                    out.push(Token::new(TokenKind::Symbol, *op));
                    i += op.chars().count();
                }
                None => {
                    out.push(Token::new(TokenKind::Symbol, c.to_string()));
                    i += 1;
                }
            }
        }
    }
    out
}
