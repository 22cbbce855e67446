//! NBScript: the small indentation-sensitive language notebook cells are
//! written in.
//!
//! ```text
//! df = load_table("tweets")
//! for t in df.col("text"):
//!     if t.starts_with("@"):
//!         print(t)
//! ```
//!
//! The front end is a hand-written lexer (with an indentation stack that
//! produces INDENT/DEDENT tokens) feeding a recursive-descent parser. All
//! AST nodes carry code-point spans so that client highlighting and effect
//! reports can point back into the cell text.

mod ast;
mod lexer;
mod parser;
mod unparse;

pub use ast::*;
pub use lexer::{
    decode_string, encode_string, is_identifier, is_keyword, tokenize, LexError, Token, TokenKind, KEYWORDS,
};
pub use parser::{parse, parse_expr, ParseError};
pub use unparse::{format_float, unparse, unparse_expr};

/// Spans of every `Name` node equal to `name`, in source order.
pub fn spans_of_name(ast: &ModuleAst, name: &str) -> Vec<SourceSpan> {
    ast.name_occurrences()
        .into_iter()
        .filter(|(n, _)| *n == name)
        .map(|(_, span)| span)
        .collect()
}
