use std::fmt;

use serde::{Deserialize, Serialize};

use super::LexError;

/// Lexical category of a normalized token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenKind {
    Keyword,
    Name,
    Number,
    String,
    Symbol,
    NewlineMark,
    ScopeEnter,
    ScopeExit,
    Mask,
    VarSlot(u16),
    FuncSlot(u16),
    Pad,
    TaskToken,
}

impl TokenKind {
    /// Markers carry no surface text and bypass subword encoding.
    pub fn is_marker(self) -> bool {
        !matches!(
            self,
            TokenKind::Keyword
                | TokenKind::Name
                | TokenKind::Number
                | TokenKind::String
                | TokenKind::Symbol
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

impl Token {
    pub fn new(kind: TokenKind, text: impl Into<String>) -> Self {
        Token {
            kind,
            text: text.into(),
        }
    }

    pub fn marker(kind: TokenKind) -> Self {
        debug_assert!(kind.is_marker());
        Token {
            kind,
            text: String::new(),
        }
    }

    pub fn keyword(text: &str) -> Self {
        Token::new(TokenKind::Keyword, text)
    }

    pub fn name(text: &str) -> Self {
        Token::new(TokenKind::Name, text)
    }

    pub fn number(text: &str) -> Self {
        Token::new(TokenKind::Number, text)
    }

    pub fn symbol(text: &str) -> Self {
        Token::new(TokenKind::Symbol, text)
    }

    /// Surface form used by the whitespace-separated serialization.
    pub fn surface(&self) -> String {
        match self.kind {
            TokenKind::NewlineMark => "<newline>".to_string(),
            TokenKind::ScopeEnter => "<scope>".to_string(),
            TokenKind::ScopeExit => "</scope>".to_string(),
            TokenKind::Mask => "<mask>".to_string(),
            TokenKind::Pad => "<pad>".to_string(),
            TokenKind::TaskToken => "<task>".to_string(),
            TokenKind::VarSlot(i) => format!("<var:{i}>"),
            TokenKind::FuncSlot(i) => format!("<func:{i}>"),
            _ => self.text.clone(),
        }
    }

    /// Inverse of [`Token::surface`] for marker spellings; `None` for plain text.
    pub fn parse_marker(s: &str) -> Option<Token> {
        let kind = match s {
            "<newline>" => TokenKind::NewlineMark,
            "<scope>" => TokenKind::ScopeEnter,
            "</scope>" => TokenKind::ScopeExit,
            "<mask>" => TokenKind::Mask,
            "<pad>" => TokenKind::Pad,
            "<task>" => TokenKind::TaskToken,
            _ => {
                let inner = s.strip_prefix('<')?.strip_suffix('>')?;
                if let Some(i) = inner.strip_prefix("var:") {
                    TokenKind::VarSlot(i.parse().ok()?)
                } else {
                    let i = inner.strip_prefix("func:")?;
                    TokenKind::FuncSlot(i.parse().ok()?)
                }
            }
        };
        Some(Token::marker(kind))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface())
    }
}

/// A normalized lexical stream for one program.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        TokenSequence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }

    /// True when every `ScopeExit` closes an earlier `ScopeEnter` and none stay open.
    pub fn scopes_balanced(&self) -> bool {
        let mut depth = 0i64;
        for t in &self.tokens {
            match t.kind {
                TokenKind::ScopeEnter => depth += 1,
                TokenKind::ScopeExit => {
                    depth -= 1;
                    if depth < 0 {
                        return false;
                    }
                }
                _ => {}
            }
        }
        depth == 0
    }

    /// Whitespace-separated serialization with spelled-out markers.
    pub fn to_marked_string(&self) -> String {
        let parts: Vec<String> = self.tokens.iter().map(Token::surface).collect();
        parts.join(" ")
    }

    /// Parses the output of [`TokenSequence::to_marked_string`].
    ///
    /// Plain words are classified with the lexer rules. String literals that
    /// contain spaces do not survive this format; use [`TokenSequence::to_source`]
    /// when the stream must be re-lexed.
    pub fn from_marked_string(s: &str, keywords: &[String]) -> Result<Self, LexError> {
        let mut tokens = Vec::new();
        for word in s.split_whitespace() {
            match Token::parse_marker(word) {
                Some(t) => tokens.push(t),
                None => tokens.push(Token::new(classify_word(word, keywords), word)),
            }
        }
        Ok(TokenSequence { tokens })
    }

    /// Renders the stream back into indented source text (4 spaces per scope).
    pub fn to_source(&self) -> String {
        self.to_source_with_indent(4)
    }

    pub fn to_source_with_indent(&self, indent_width: usize) -> String {
        let mut out = String::new();
        let mut depth = 0usize;
        let mut line: Vec<String> = Vec::new();
        let flush = |out: &mut String, line: &mut Vec<String>, depth: usize| {
            if !line.is_empty() {
                out.push_str(&" ".repeat(depth * indent_width));
                out.push_str(&line.join(" "));
                out.push('\n');
                line.clear();
            }
        };
        for t in &self.tokens {
            match t.kind {
                TokenKind::NewlineMark => flush(&mut out, &mut line, depth),
                TokenKind::ScopeEnter => {
                    flush(&mut out, &mut line, depth);
                    depth += 1;
                }
                TokenKind::ScopeExit => {
                    flush(&mut out, &mut line, depth);
                    depth = depth.saturating_sub(1);
                }
                _ => line.push(t.surface()),
            }
        }
        flush(&mut out, &mut line, depth);
        out
    }
}

impl FromIterator<Token> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = Token>>(iter: I) -> Self {
        TokenSequence {
            tokens: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a TokenSequence {
    type Item = &'a Token;
    type IntoIter = std::slice::Iter<'a, Token>;

    fn into_iter(self) -> Self::IntoIter {
        self.tokens.iter()
    }
}

pub(crate) fn classify_word(word: &str, keywords: &[String]) -> TokenKind {
    let first = word.chars().next().unwrap_or(' ');
    if first.is_ascii_digit() {
        TokenKind::Number
    } else if first == '\'' || first == '"' {
        TokenKind::String
    } else if first.is_ascii_alphabetic() || first == '_' {
        if keywords.iter().any(|k| k == word) {
            TokenKind::Keyword
        } else {
            TokenKind::Name
        }
    } else {
        TokenKind::Symbol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_spellings_round_trip() {
        for kind in [
            TokenKind::NewlineMark,
            TokenKind::ScopeEnter,
            TokenKind::ScopeExit,
            TokenKind::Mask,
            TokenKind::Pad,
            TokenKind::TaskToken,
            TokenKind::VarSlot(7),
            TokenKind::FuncSlot(2),
        ] {
            let t = Token::marker(kind);
            assert_eq!(Token::parse_marker(&t.surface()), Some(t));
        }
        assert_eq!(Token::parse_marker("<var:x>"), None);
        assert_eq!(Token::parse_marker("<"), None);
    }

    #[test]
    fn balance_detects_stray_exit() {
        let seq = TokenSequence::new(vec![
            Token::marker(TokenKind::ScopeExit),
            Token::marker(TokenKind::ScopeEnter),
        ]);
        assert!(!seq.scopes_balanced());
    }
}
