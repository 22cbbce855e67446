use std::fmt;

use thiserror::Error;

use super::ast::SourceSpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Name,
    Int,
    Float,
    Str,
    Op,
    Keyword,
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenKind::Name => "NAME",
            TokenKind::Int => "INT",
            TokenKind::Float => "FLOAT",
            TokenKind::Str => "STRING",
            TokenKind::Op => "OP",
            TokenKind::Keyword => "KEYWORD",
            TokenKind::Newline => "NEWLINE",
            TokenKind::Indent => "INDENT",
            TokenKind::Dedent => "DEDENT",
            TokenKind::Eof => "EOF",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Raw lexeme as written (quotes and escapes included for strings).
    pub text: String,
    pub span: SourceSpan,
}

impl Token {
    pub fn is_op(&self, op: &str) -> bool {
        self.kind == TokenKind::Op && self.text == op
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == kw
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at {}:{}", span.line, span.column)]
pub struct LexError {
    pub span: SourceSpan,
    pub message: String,
}

pub const KEYWORDS: &[&str] = &[
    "if", "else", "for", "in", "del", "import", "and", "or", "not", "True", "False", "None",
];

const TWO_CHAR_OPS: &[&str] = &["==", "!=", "<=", ">=", "+=", "-=", "*=", "/="];
const ONE_CHAR_OPS: &str = "+-*/%<>=()[]{},:.";

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

/// `[A-Za-z_][A-Za-z0-9_]*`, excluding keywords.
pub fn is_identifier(text: &str) -> bool {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !is_keyword(text)
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
    indents: Vec<usize>,
    depth: usize,
    tokens: Vec<Token>,
}

impl Lexer {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.chars.get(self.pos + n).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn mark(&self) -> (usize, u32, u32) {
        (self.pos, self.line, self.col)
    }

    fn span_from(&self, mark: (usize, u32, u32)) -> SourceSpan {
        SourceSpan {
            start: mark.0,
            end: self.pos,
            line: mark.1,
            column: mark.2,
            end_line: self.line,
            end_column: self.col,
        }
    }

    fn error(&self, mark: (usize, u32, u32), message: impl Into<String>) -> LexError {
        LexError {
            span: self.span_from(mark),
            message: message.into(),
        }
    }

    fn push(&mut self, kind: TokenKind, mark: (usize, u32, u32)) {
        let text: String = self.chars[mark.0..self.pos].iter().collect();
        let span = self.span_from(mark);
        self.tokens.push(Token { kind, text, span });
    }

    fn push_empty(&mut self, kind: TokenKind) {
        let mark = self.mark();
        self.push(kind, mark);
    }

    fn line_has_tokens(&self) -> bool {
        !matches!(
            self.tokens.last().map(|t| t.kind),
            None | Some(TokenKind::Newline | TokenKind::Indent | TokenKind::Dedent)
        )
    }

    /// Handles indentation at the start of a physical line. Returns false
    /// once input is exhausted.
    fn start_line(&mut self) -> Result<bool, LexError> {
        loop {
            let mark = self.mark();
            let mut width = 0;
            while let Some(c) = self.peek() {
                match c {
                    ' ' => {
                        width += 1;
                        self.bump();
                    }
                    '\t' => {
                        self.bump();
                        return Err(self.error(mark, "tab in indentation"));
                    }
                    _ => break,
                }
            }
            match self.peek() {
                None => return Ok(false),
                Some('\n') => {
                    self.bump();
                    continue;
                }
                Some('\r') if self.peek_at(1) == Some('\n') => {
                    self.bump();
                    self.bump();
                    continue;
                }
                Some('#') => {
                    self.skip_comment();
                    continue;
                }
                Some(_) => {}
            }
            let current = *self.indents.last().expect("indent stack never empty");
            if width > current {
                self.indents.push(width);
                self.push_empty(TokenKind::Indent);
            } else if width < current {
                while *self.indents.last().expect("non-empty") > width {
                    self.indents.pop();
                    self.push_empty(TokenKind::Dedent);
                }
                if *self.indents.last().expect("non-empty") != width {
                    return Err(self.error(mark, "unindent does not match any outer indentation level"));
                }
            }
            return Ok(true);
        }
    }

    fn skip_comment(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    fn run(mut self) -> Result<Vec<Token>, LexError> {
        let mut at_line_start = true;
        loop {
            if at_line_start {
                if !self.start_line()? {
                    break;
                }
                at_line_start = false;
            }
            let Some(c) = self.peek() else { break };
            let mark = self.mark();
            match c {
                ' ' => {
                    self.bump();
                }
                '\r' if self.peek_at(1) == Some('\n') => {
                    self.bump();
                }
                '\n' => {
                    self.bump();
                    if self.depth == 0 {
                        self.push(TokenKind::Newline, mark);
                        at_line_start = true;
                    }
                }
                '#' => self.skip_comment(),
                '"' | '\'' => self.string(c)?,
                c if c.is_ascii_digit() => self.number()?,
                c if c.is_ascii_alphabetic() || c == '_' => {
                    while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                        self.bump();
                    }
                    let word: String = self.chars[mark.0..self.pos].iter().collect();
                    let kind = if is_keyword(&word) {
                        TokenKind::Keyword
                    } else {
                        TokenKind::Name
                    };
                    self.push(kind, mark);
                }
                _ => {
                    let two: String = self.chars[self.pos..(self.pos + 2).min(self.chars.len())]
                        .iter()
                        .collect();
                    if TWO_CHAR_OPS.contains(&two.as_str()) {
                        self.bump();
                        self.bump();
                    } else if ONE_CHAR_OPS.contains(c) {
                        self.bump();
                        match c {
                            '(' | '[' | '{' => self.depth += 1,
                            ')' | ']' | '}' => self.depth = self.depth.saturating_sub(1),
                            _ => {}
                        }
                    } else {
                        self.bump();
                        return Err(self.error(mark, format!("illegal character {c:?}")));
                    }
                    self.push(TokenKind::Op, mark);
                }
            }
        }
        if self.line_has_tokens() {
            self.push_empty(TokenKind::Newline);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push_empty(TokenKind::Dedent);
        }
        self.push_empty(TokenKind::Eof);
        Ok(self.tokens)
    }

    fn string(&mut self, quote: char) -> Result<(), LexError> {
        let mark = self.mark();
        self.bump();
        loop {
            match self.peek() {
                None | Some('\n') => return Err(self.error(mark, "unterminated string")),
                Some('\\') => {
                    self.bump();
                    match self.peek() {
                        None | Some('\n') => return Err(self.error(mark, "unterminated string")),
                        Some(_) => {
                            self.bump();
                        }
                    }
                }
                Some(c) if c == quote => {
                    self.bump();
                    break;
                }
                Some(_) => {
                    self.bump();
                }
            }
        }
        self.push(TokenKind::Str, mark);
        Ok(())
    }

    fn number(&mut self) -> Result<(), LexError> {
        let mark = self.mark();
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        let is_float = self.peek() == Some('.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit());
        if is_float {
            self.bump();
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
        }
        let text: String = self.chars[mark.0..self.pos].iter().collect();
        if is_float {
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => {}
                _ => return Err(self.error(mark, "float literal out of range")),
            }
            self.push(TokenKind::Float, mark);
        } else {
            if text.parse::<i64>().is_err() {
                return Err(self.error(mark, "integer literal out of range"));
            }
            self.push(TokenKind::Int, mark);
        }
        Ok(())
    }
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, LexError> {
    Lexer {
        chars: text.chars().collect(),
        pos: 0,
        line: 1,
        col: 1,
        indents: vec![0],
        depth: 0,
        tokens: Vec::new(),
    }
    .run()
}

/// Decodes a string token's raw lexeme. Unknown escapes are kept verbatim.
pub fn decode_string(raw: &str) -> String {
    let inner = &raw[1..raw.len() - 1];
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('0') => out.push('\0'),
            Some('\\') => out.push('\\'),
            Some('"') => out.push('"'),
            Some('\'') => out.push('\''),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Quotes `text` as a double-quoted literal that decodes back to itself.
pub fn encode_string(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '\0' => out.push_str("\\0"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src).unwrap().into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn simple_assignment() {
        use TokenKind::*;
        assert_eq!(
            kinds("x = 1"),
            vec![
                (Name, "x".into()),
                (Op, "=".into()),
                (Int, "1".into()),
                (Newline, "".into()),
                (Eof, "".into())
            ]
        );
    }

    #[test]
    fn block_emits_indent_and_dedent() {
        let toks = tokenize("if x:\n    y = 1").unwrap();
        let indents = toks.iter().filter(|t| t.kind == TokenKind::Indent).count();
        let dedents = toks.iter().filter(|t| t.kind == TokenKind::Dedent).count();
        assert_eq!((indents, dedents), (1, 1));
    }

    #[test]
    fn dedent_to_unknown_level() {
        let err = tokenize("if x:\n   y\n  z").unwrap_err();
        assert_eq!(err.span.line, 3);
    }

    #[test]
    fn errors() {
        assert!(tokenize("x = \"abc").is_err());
        assert!(tokenize("x = 1 $ 2").is_err());
        assert!(tokenize("if x:\n\ty = 1").is_err());
        assert!(tokenize("x = 99999999999999999999").is_err());
    }

    #[test]
    fn blank_lines_comments_and_brackets() {
        use TokenKind::*;
        let toks = kinds("# note\n\nx = [1,\n  2]  # trailing\n\n");
        let k: Vec<_> = toks.iter().map(|(k, _)| *k).collect();
        assert_eq!(k, vec![Name, Op, Op, Int, Op, Int, Op, Newline, Eof]);
    }

    #[test]
    fn spans_are_code_points() {
        let toks = tokenize("s = \"é\"\ny").unwrap();
        let y = toks.iter().find(|t| t.text == "y").unwrap();
        assert_eq!((y.span.start, y.span.line, y.span.column), (8, 2, 1));
    }

    #[test]
    fn string_codec() {
        for s in ["", "a\"b", "back\\slash\n", "\\w+ @x", "tab\there"] {
            assert_eq!(decode_string(&encode_string(s)), s);
        }
        assert_eq!(decode_string(r#""@\w+""#), "@\\w+");
    }

    #[test]
    fn identifiers() {
        assert!(is_identifier("_plel"));
        assert!(is_identifier("df2"));
        assert!(!is_identifier("2df"));
        assert!(!is_identifier("for"));
        assert!(!is_identifier(""));
    }
}
