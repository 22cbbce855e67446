use thiserror::Error;

use super::ast::*;
use super::lexer::{decode_string, tokenize, LexError, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("expected {expected}, found {found} at {}:{}", span.line, span.column)]
pub struct ParseError {
    pub span: SourceSpan,
    pub expected: String,
    pub found: String,
}

impl From<LexError> for ParseError {
    fn from(e: LexError) -> Self {
        ParseError {
            span: e.span,
            expected: "valid token".to_string(),
            found: e.message,
        }
    }
}

/// Bound on the depth of the syntax tree, so that evaluation and analysis
/// of any accepted program stay within a small stack.
pub const MAX_NESTING: usize = 200;
const REENTRY_WEIGHT: usize = 8;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    /// Sum over open constructs of their nesting contribution; bounds the
    /// depth of any node built so far.
    depth: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if tok.kind != TokenKind::Eof {
            self.pos += 1;
        }
        tok
    }

    fn prev_span(&self) -> SourceSpan {
        self.tokens[self.pos.saturating_sub(1)].span
    }

    fn error(&self, expected: &str) -> ParseError {
        let tok = self.peek();
        let found = match tok.kind {
            TokenKind::Newline => "end of line".to_string(),
            TokenKind::Eof => "end of input".to_string(),
            TokenKind::Indent => "indent".to_string(),
            TokenKind::Dedent => "dedent".to_string(),
            _ => format!("'{}'", tok.text),
        };
        ParseError {
            span: tok.span,
            expected: expected.to_string(),
            found,
        }
    }

    fn deeper(&mut self) -> PResult<()> {
        self.deeper_by(1)
    }

    /// Re-entering the expression grammar costs a dozen parser frames, so
    /// it is charged more than one step of an operator chain.
    fn deeper_by(&mut self, weight: usize) -> PResult<()> {
        self.depth += weight;
        if self.depth > MAX_NESTING {
            return Err(ParseError {
                span: self.peek().span,
                expected: "shallower nesting".to_string(),
                found: format!("more than {MAX_NESTING} nested levels"),
            });
        }
        Ok(())
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.peek().is_op(op) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> PResult<Token> {
        if self.peek().is_op(op) {
            Ok(self.advance())
        } else {
            Err(self.error(&format!("'{op}'")))
        }
    }

    fn expect_kind(&mut self, kind: TokenKind, what: &str) -> PResult<Token> {
        if self.peek().kind == kind {
            Ok(self.advance())
        } else {
            Err(self.error(what))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> PResult<Token> {
        if self.peek().is_keyword(kw) {
            Ok(self.advance())
        } else {
            Err(self.error(&format!("'{kw}'")))
        }
    }

    fn ident(&mut self) -> PResult<Ident> {
        let tok = self.expect_kind(TokenKind::Name, "name")?;
        Ok(Ident {
            name: tok.text,
            span: tok.span,
        })
    }

    fn end_of_statement(&mut self) -> PResult<()> {
        self.expect_kind(TokenKind::Newline, "end of line").map(|_| ())
    }

    fn module(&mut self) -> PResult<ModuleAst> {
        let mut statements = Vec::new();
        while self.peek().kind != TokenKind::Eof {
            statements.push(self.statement()?);
        }
        Ok(ModuleAst { statements })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_kind(TokenKind::Newline, "end of line")?;
        self.expect_kind(TokenKind::Indent, "indented block")?;
        self.deeper_by(REENTRY_WEIGHT)?;
        let mut body = vec![self.statement()?];
        while self.peek().kind != TokenKind::Dedent {
            body.push(self.statement()?);
        }
        self.advance();
        self.depth -= REENTRY_WEIGHT;
        Ok(body)
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let start = self.peek().span;
        let tok = self.peek().clone();
        if tok.kind == TokenKind::Keyword {
            match tok.text.as_str() {
                "if" => return self.if_statement(),
                "for" => {
                    self.advance();
                    let var = self.ident()?;
                    self.expect_keyword("in")?;
                    let iterable = self.expr()?;
                    self.expect_op(":")?;
                    let header_end = self.prev_span();
                    let body = self.block()?;
                    let end = body.last().map(|s| s.span).unwrap_or(header_end);
                    return Ok(Stmt {
                        kind: StmtKind::For { var, iterable, body },
                        span: start.to(end),
                    });
                }
                "del" | "import" => {
                    self.advance();
                    let name = self.ident()?;
                    let span = start.to(name.span);
                    self.end_of_statement()?;
                    let kind = if tok.text == "del" {
                        StmtKind::Del { name }
                    } else {
                        StmtKind::Import { name }
                    };
                    return Ok(Stmt { kind, span });
                }
                _ => {}
            }
        }
        let lhs = self.expr()?;
        let aug = [
            ("+=", AugOp::Add),
            ("-=", AugOp::Sub),
            ("*=", AugOp::Mul),
            ("/=", AugOp::Div),
        ]
        .into_iter()
        .find(|(sym, _)| self.peek().is_op(sym));
        let kind = if self.peek().is_op("=") {
            let eq = self.advance();
            let target = to_target(lhs).map_err(|found| ParseError {
                span: eq.span,
                expected: "assignment target".to_string(),
                found,
            })?;
            let value = self.expr()?;
            StmtKind::Assign { target, value }
        } else if let Some((_, op)) = aug {
            let eq = self.advance();
            let target = to_target(lhs).map_err(|found| ParseError {
                span: eq.span,
                expected: "assignment target".to_string(),
                found,
            })?;
            let value = self.expr()?;
            StmtKind::AugAssign { target, op, value }
        } else {
            StmtKind::Expr(lhs)
        };
        let span = start.to(self.prev_span());
        self.end_of_statement()?;
        Ok(Stmt { kind, span })
    }

    fn if_statement(&mut self) -> PResult<Stmt> {
        let start = self.expect_keyword("if")?.span;
        let cond = self.expr()?;
        self.expect_op(":")?;
        let then_block = self.block()?;
        let mut end = then_block.last().expect("non-empty").span;
        let else_block = if self.peek().is_keyword("else") {
            self.advance();
            self.expect_op(":")?;
            let block = self.block()?;
            end = block.last().expect("non-empty").span;
            Some(block)
        } else {
            None
        };
        Ok(Stmt {
            kind: StmtKind::If {
                cond,
                then_block,
                else_block,
            },
            span: start.to(end),
        })
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        self.deeper_by(REENTRY_WEIGHT)?;
        let e = self.binary_level(1)?;
        self.depth -= REENTRY_WEIGHT;
        Ok(e)
    }

    fn binary_level(&mut self, level: u8) -> PResult<Expr> {
        match level {
            1 | 2 => {
                let kw = if level == 1 { "or" } else { "and" };
                let entry = self.depth;
                let mut lhs = self.binary_level(level + 1)?;
                while self.peek().is_keyword(kw) {
                    self.advance();
                    self.deeper()?;
                    let rhs = self.binary_level(level + 1)?;
                    let op = if level == 1 { BinOp::Or } else { BinOp::And };
                    lhs = binary(op, lhs, rhs);
                }
                self.depth = entry;
                Ok(lhs)
            }
            3 => {
                if self.peek().is_keyword("not") {
                    let start = self.advance().span;
                    self.deeper()?;
                    let operand = self.binary_level(3)?;
                    self.depth -= 1;
                    let span = start.to(operand.span);
                    Ok(Expr {
                        kind: ExprKind::Unary {
                            op: UnaryOp::Not,
                            operand: Box::new(operand),
                        },
                        span,
                    })
                } else {
                    self.binary_level(4)
                }
            }
            4..=6 => {
                let ops: &[(&str, BinOp)] = match level {
                    4 => &[
                        ("==", BinOp::Eq),
                        ("!=", BinOp::Ne),
                        ("<=", BinOp::Le),
                        (">=", BinOp::Ge),
                        ("<", BinOp::Lt),
                        (">", BinOp::Gt),
                    ],
                    5 => &[("+", BinOp::Add), ("-", BinOp::Sub)],
                    _ => &[("*", BinOp::Mul), ("/", BinOp::Div), ("%", BinOp::Mod)],
                };
                let entry = self.depth;
                let mut lhs = self.binary_level(level + 1)?;
                while let Some(&(_, op)) = ops.iter().find(|(sym, _)| self.peek().is_op(sym)) {
                    self.advance();
                    self.deeper()?;
                    let rhs = self.binary_level(level + 1)?;
                    lhs = binary(op, lhs, rhs);
                }
                self.depth = entry;
                Ok(lhs)
            }
            _ => self.unary(),
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.peek().is_op("-") {
            let start = self.advance().span;
            self.deeper()?;
            let operand = self.unary()?;
            self.depth -= 1;
            let span = start.to(operand.span);
            return Ok(Expr {
                kind: ExprKind::Unary {
                    op: UnaryOp::Neg,
                    operand: Box::new(operand),
                },
                span,
            });
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let entry = self.depth;
        let mut expr = self.atom()?;
        loop {
            if ["(", ".", "["].iter().any(|op| self.peek().is_op(op)) {
                self.deeper()?;
            }
            if self.eat_op("(") {
                let args = self.comma_list(")", |p| p.expr())?;
                let end = self.prev_span();
                let span = expr.span.to(end);
                expr = Expr {
                    kind: ExprKind::Call {
                        callee: Box::new(expr),
                        args,
                    },
                    span,
                };
            } else if self.eat_op(".") {
                let attr = self.ident()?;
                let span = expr.span.to(attr.span);
                expr = Expr {
                    kind: ExprKind::Attr {
                        base: Box::new(expr),
                        attr,
                    },
                    span,
                };
            } else if self.eat_op("[") {
                let index = self.expr()?;
                let end = self.expect_op("]")?.span;
                let span = expr.span.to(end);
                expr = Expr {
                    kind: ExprKind::Index {
                        base: Box::new(expr),
                        index: Box::new(index),
                    },
                    span,
                };
            } else {
                self.depth = entry;
                return Ok(expr);
            }
        }
    }

    /// Parses `item (, item)* [,]` up to and including `close`.
    fn comma_list<T>(&mut self, close: &str, mut item: impl FnMut(&mut Self) -> PResult<T>) -> PResult<Vec<T>> {
        let mut items = Vec::new();
        loop {
            if self.eat_op(close) {
                return Ok(items);
            }
            items.push(item(self)?);
            if !self.eat_op(",") {
                self.expect_op(close)?;
                return Ok(items);
            }
        }
    }

    fn atom(&mut self) -> PResult<Expr> {
        let tok = self.peek().clone();
        let kind = match tok.kind {
            TokenKind::Name => ExprKind::Name(tok.text.clone()),
            TokenKind::Int => ExprKind::Int(tok.text.parse().expect("lexer validated")),
            TokenKind::Float => ExprKind::Float(tok.text.parse().expect("lexer validated")),
            TokenKind::Str => ExprKind::Text(decode_string(&tok.text)),
            TokenKind::Keyword if tok.text == "True" => ExprKind::Bool(true),
            TokenKind::Keyword if tok.text == "False" => ExprKind::Bool(false),
            TokenKind::Keyword if tok.text == "None" => ExprKind::None,
            TokenKind::Op if tok.text == "(" => {
                self.advance();
                let mut inner = self.expr()?;
                let end = self.expect_op(")")?.span;
                inner.span = tok.span.to(end);
                return Ok(inner);
            }
            TokenKind::Op if tok.text == "[" => {
                self.advance();
                let items = self.comma_list("]", |p| p.expr())?;
                return Ok(Expr {
                    kind: ExprKind::Array(items),
                    span: tok.span.to(self.prev_span()),
                });
            }
            TokenKind::Op if tok.text == "{" => {
                self.advance();
                let entries = self.comma_list("}", |p| {
                    let key = p.expect_kind(TokenKind::Str, "string key")?;
                    p.expect_op(":")?;
                    Ok((decode_string(&key.text), p.expr()?))
                })?;
                return Ok(Expr {
                    kind: ExprKind::Mapping(entries),
                    span: tok.span.to(self.prev_span()),
                });
            }
            _ => return Err(self.error("expression")),
        };
        self.advance();
        Ok(Expr { kind, span: tok.span })
    }
}

fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
    let span = lhs.span.to(rhs.span);
    Expr {
        kind: ExprKind::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        },
        span,
    }
}

fn to_target(expr: Expr) -> Result<Target, String> {
    match expr.kind {
        ExprKind::Name(name) => Ok(Target::Name(Ident { name, span: expr.span })),
        ExprKind::Attr { base, attr } => Ok(Target::Attr { base, attr }),
        ExprKind::Index { base, index } => Ok(Target::Index { base, index }),
        _ => Err("non-assignable expression".to_string()),
    }
}

pub fn parse(text: &str) -> Result<ModuleAst, ParseError> {
    let tokens = tokenize(text)?;
    Parser {
        tokens,
        pos: 0,
        depth: 0,
    }
    .module()
}

/// Parses a single expression (used for literal expectations in scenarios).
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        depth: 0,
    };
    let expr = parser.expr()?;
    if parser.peek().kind == TokenKind::Newline {
        parser.advance();
    }
    parser.expect_kind(TokenKind::Eof, "end of input")?;
    Ok(expr)
}
