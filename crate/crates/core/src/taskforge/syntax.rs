//! A static checker that sorts programs into coarse compile outcomes.
//!
//! Checks run in a fixed order and the first failing check names the class:
//! bracket balance per line, header colons, indentation structure,
//! expression shape, then function arity.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lexnorm::{Token, TokenKind, TokenSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeClass {
    Ok,
    SyntaxParen,
    SyntaxColon,
    SyntaxExpr,
    Indentation,
    NameArity,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 6] = [
        OutcomeClass::Ok,
        OutcomeClass::SyntaxParen,
        OutcomeClass::SyntaxColon,
        OutcomeClass::SyntaxExpr,
        OutcomeClass::Indentation,
        OutcomeClass::NameArity,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OutcomeClass::Ok => "ok",
            OutcomeClass::SyntaxParen => "syntax-paren",
            OutcomeClass::SyntaxColon => "syntax-colon",
            OutcomeClass::SyntaxExpr => "syntax-expr",
            OutcomeClass::Indentation => "indentation",
            OutcomeClass::NameArity => "name-arity",
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

const HEADERS: [&str; 6] = ["def", "if", "elif", "else", "for", "while"];

fn is_content(kind: TokenKind) -> bool {
    !matches!(
        kind,
        TokenKind::NewlineMark
            | TokenKind::ScopeEnter
            | TokenKind::ScopeExit
            | TokenKind::Pad
            | TokenKind::TaskToken
    )
}

fn is_kw(t: &Token, word: &str) -> bool {
    t.kind == TokenKind::Keyword && t.text == word
}

fn is_sym(t: &Token, sym: &str) -> bool {
    t.kind == TokenKind::Symbol && t.text == sym
}

fn is_header(line: &[&Token]) -> bool {
    line.first()
        .is_some_and(|t| t.kind == TokenKind::Keyword && HEADERS.contains(&t.text.as_str()))
}

fn lines(seq: &TokenSequence) -> Vec<Vec<&Token>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for t in &seq.tokens {
        if t.kind == TokenKind::NewlineMark {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if is_content(t.kind) {
            cur.push(t);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Classifies a normalized program. Total and deterministic.
pub fn check_syntax(seq: &TokenSequence) -> OutcomeClass {
    let lines = lines(seq);
    if !lines.iter().all(|l| brackets_balanced(l)) {
        return OutcomeClass::SyntaxParen;
    }
    if lines
        .iter()
        .any(|l| is_header(l) != l.last().is_some_and(|t| is_sym(t, ":")))
    {
        return OutcomeClass::SyntaxColon;
    }
    if !indentation_ok(seq) {
        return OutcomeClass::Indentation;
    }
    if !lines.iter().all(|l| expression_ok(l)) {
        return OutcomeClass::SyntaxExpr;
    }
    if !arity_ok(&lines) {
        return OutcomeClass::NameArity;
    }
    OutcomeClass::Ok
}

fn brackets_balanced(line: &[&Token]) -> bool {
    let mut stack = Vec::new();
    for t in line.iter().filter(|t| t.kind == TokenKind::Symbol) {
        match t.text.as_str() {
            "(" => stack.push(")"),
            "[" => stack.push("]"),
            "{" => stack.push("}"),
            ")" | "]" | "}" if stack.pop() != Some(t.text.as_str()) => {
                return false;
            }
            _ => {}
        }
    }
    stack.is_empty()
}

/// Scopes open only right after a header line, every header opens exactly
/// one scope, and scopes close in order.
fn indentation_ok(seq: &TokenSequence) -> bool {
    let mut depth = 0usize;
    let mut line: Vec<&Token> = Vec::new();
    // Whether the last completed line was a header still waiting for its body.
    let mut pending_header = false;
    let mut after_newline = false;
    for t in &seq.tokens {
        match t.kind {
            TokenKind::NewlineMark => {
                if !line.is_empty() {
                    if pending_header {
                        return false;
                    }
                    pending_header = is_header(&line);
                    line.clear();
                }
                after_newline = true;
            }
            TokenKind::ScopeEnter => {
                if !(pending_header && after_newline) {
                    return false;
                }
                pending_header = false;
                depth += 1;
            }
            TokenKind::ScopeExit => {
                if depth == 0 || pending_header {
                    return false;
                }
                depth -= 1;
            }
            k if is_content(k) => {
                line.push(t);
                after_newline = false;
            }
            _ => {}
        }
    }
    if !line.is_empty() {
        if pending_header {
            return false;
        }
        pending_header = is_header(&line);
    }
    depth == 0 && !pending_header
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Prev {
    Start,
    Operand,
    Open,
    Close,
    Sep,
    Op,
    Stmt,
}

const STATEMENTS: [&str; 10] = [
    "def", "return", "if", "elif", "else", "for", "while", "pass", "break", "continue",
];

/// Operands and operators must alternate; no operator may dangle.
fn expression_ok(line: &[&Token]) -> bool {
    let mut prev = Prev::Start;
    let mut prev_tok: Option<&Token> = None;
    for &t in line {
        let next = match t.kind {
            TokenKind::Name
            | TokenKind::Number
            | TokenKind::String
            | TokenKind::VarSlot(_)
            | TokenKind::FuncSlot(_)
            | TokenKind::Mask => {
                if matches!(prev, Prev::Operand | Prev::Close) {
                    return false;
                }
                Prev::Operand
            }
            TokenKind::Keyword => match t.text.as_str() {
                "not" => Prev::Op,
                "and" | "or" | "in" => {
                    let not_in = t.text == "in" && prev_tok.is_some_and(|p| is_kw(p, "not"));
                    if !not_in && !matches!(prev, Prev::Operand | Prev::Close) {
                        return false;
                    }
                    Prev::Op
                }
                w if STATEMENTS.contains(&w) => {
                    if prev != Prev::Start {
                        return false;
                    }
                    Prev::Stmt
                }
                _ => return false,
            },
            TokenKind::Symbol => match t.text.as_str() {
                "(" | "[" | "{" => Prev::Open,
                ")" | "]" | "}" => {
                    if prev == Prev::Op {
                        return false;
                    }
                    Prev::Close
                }
                "," => {
                    if matches!(prev, Prev::Start | Prev::Stmt | Prev::Open | Prev::Op) {
                        return false;
                    }
                    Prev::Sep
                }
                ":" => {
                    if prev == Prev::Op {
                        return false;
                    }
                    Prev::Sep
                }
                "-" | "+" | "~" => Prev::Op,
                s if is_binary_operator(s) => {
                    if !matches!(prev, Prev::Operand | Prev::Close) {
                        return false;
                    }
                    Prev::Op
                }
                _ => return false,
            },
            _ => prev,
        };
        prev = next;
        prev_tok = Some(t);
    }
    prev != Prev::Op
}

fn is_binary_operator(s: &str) -> bool {
    matches!(
        s,
        "=" | "=="
            | "!="
            | "<"
            | ">"
            | "<="
            | ">="
            | "*"
            | "/"
            | "//"
            | "%"
            | "**"
            | "."
            | "&"
            | "|"
            | "^"
            | "<<"
            | ">>"
            | "->"
            | "+="
            | "-="
            | "*="
            | "/="
            | "//="
            | "%="
            | "**="
            | "&="
            | "|="
            | "^="
    )
}

fn callee_key(t: &Token) -> Option<String> {
    match t.kind {
        TokenKind::Name => Some(t.text.clone()),
        TokenKind::FuncSlot(i) => Some(format!("<func:{i}>")),
        TokenKind::VarSlot(i) => Some(format!("<var:{i}>")),
        _ => None,
    }
}

/// Comma-separated groups at the top level of the bracket opened at `open`,
/// with the index of the matching close.
fn arguments<'a>(line: &[&'a Token], open: usize) -> (Vec<Vec<&'a Token>>, usize) {
    let mut groups: Vec<Vec<&Token>> = vec![Vec::new()];
    let mut depth = 0usize;
    let mut i = open;
    while i < line.len() {
        let t = line[i];
        if t.kind == TokenKind::Symbol && matches!(t.text.as_str(), "(" | "[" | "{") {
            depth += 1;
            if depth > 1 {
                groups.last_mut().unwrap().push(t);
            }
        } else if t.kind == TokenKind::Symbol && matches!(t.text.as_str(), ")" | "]" | "}") {
            depth -= 1;
            if depth == 0 {
                break;
            }
            groups.last_mut().unwrap().push(t);
        } else if depth == 1 && is_sym(t, ",") {
            groups.push(Vec::new());
        } else {
            groups.last_mut().unwrap().push(t);
        }
        i += 1;
    }
    if groups.len() == 1 && groups[0].is_empty() {
        groups.clear();
    }
    (groups, i)
}

/// Calls to functions defined in the program use a declared argument count,
/// and no definition repeats a parameter.
fn arity_ok(lines: &[Vec<&Token>]) -> bool {
    let mut arities: HashMap<String, HashSet<usize>> = HashMap::new();
    for line in lines {
        if line.len() >= 3 && is_kw(line[0], "def") && is_sym(line[2], "(") {
            let Some(name) = callee_key(line[1]) else {
                continue;
            };
            let (params, _) = arguments(line, 2);
            let mut seen = HashSet::new();
            for p in &params {
                if let Some(k) = p.first().and_then(|t| callee_key(t)) {
                    if !seen.insert(k) {
                        return false;
                    }
                }
            }
            arities.entry(name).or_default().insert(params.len());
        }
    }
    for line in lines {
        for i in 0..line.len().saturating_sub(1) {
            if !is_sym(line[i + 1], "(") || (i > 0 && is_kw(line[i - 1], "def")) {
                continue;
            }
            let Some(known) = callee_key(line[i]).and_then(|k| arities.get(&k)) else {
                continue;
            };
            let (args, _) = arguments(line, i + 1);
            if !known.contains(&args.len()) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexnorm::{lex_normalize, LexConfig};

    fn class(src: &str) -> OutcomeClass {
        check_syntax(&lex_normalize(src, &LexConfig::default()).unwrap())
    }

    #[test]
    fn documented_cases() {
        assert_eq!(class("x = 1"), OutcomeClass::Ok);
        assert_eq!(class("def f(:"), OutcomeClass::SyntaxParen);
        let mut seq = lex_normalize("x = 1", &LexConfig::default()).unwrap();
        seq.tokens.push(Token::marker(TokenKind::ScopeExit));
        assert_eq!(check_syntax(&seq), OutcomeClass::Indentation);
    }

    #[test]
    fn each_class_is_reachable() {
        let ok = "def f(a, b):\n    if a % b == 0:\n        return -a\n    else:\n        return f(b, a)\n";
        assert_eq!(class(ok), OutcomeClass::Ok);
        assert_eq!(
            class("def f(a):\n    return g(a\n"),
            OutcomeClass::SyntaxParen
        );
        assert_eq!(class("if x > 1\n    y = 2\n"), OutcomeClass::SyntaxColon);
        assert_eq!(class("y = 2:\n"), OutcomeClass::SyntaxColon);
        assert_eq!(class("x = 1\n    y = 2\n"), OutcomeClass::Indentation);
        assert_eq!(class("if x:\ny = 2\n"), OutcomeClass::Indentation);
        assert_eq!(class("x = = 1"), OutcomeClass::SyntaxExpr);
        assert_eq!(class("x = 1 +"), OutcomeClass::SyntaxExpr);
        assert_eq!(class("x = a b"), OutcomeClass::SyntaxExpr);
        assert_eq!(
            class("def f(a, a):\n    return a\n"),
            OutcomeClass::NameArity
        );
        assert_eq!(
            class("def f(a):\n    return a\nx = f(1, 2)\n"),
            OutcomeClass::NameArity
        );
        assert_eq!(class("x = len(a, b)"), OutcomeClass::Ok);
        assert_eq!(class("if a not in b:\n    pass\n"), OutcomeClass::Ok);
    }

    #[test]
    fn precedence_follows_check_order() {
        // Both an unclosed bracket and a missing colon: the bracket wins.
        assert_eq!(class("if f(x\n    y = 1\n"), OutcomeClass::SyntaxParen);
        // Missing colon and an expression error: the colon wins.
        assert_eq!(
            class("while x = = 1\n    pass\n"),
            OutcomeClass::SyntaxColon
        );
    }
}
