//! Lexing, normalization, name obfuscation and subword encoding of programs.

mod bpe;
mod lexer;
mod obfuscate;
mod token;

pub use bpe::{bpe_train, bpe_train_with, MergeTable, Piece, TokenId, PAD_ID};
pub use lexer::{camel_to_snake, lex_normalize, truncate_balanced, LexConfig, DEFAULT_KEYWORDS};
pub use obfuscate::{obfuscate, ObfuscationMode};
pub use token::{Token, TokenKind, TokenSequence};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LexError {
    #[error("indentation error on line {line}: {message}")]
    Indent { line: usize, message: String },
    #[error("{needed} distinct {kind} names exceed the slot budget of {budget}")]
    SlotExhausted {
        kind: &'static str,
        needed: usize,
        budget: usize,
    },
    #[error("character {0:?} is outside the vocabulary and byte fallback is off")]
    UnknownSymbol(char),
    #[error("marker {0} has no reserved id")]
    UnknownMarker(String),
    #[error("malformed merge table: {0}")]
    MalformedTable(String),
}
