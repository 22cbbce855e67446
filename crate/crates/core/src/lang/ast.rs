use std::fmt;

use serde::{Deserialize, Serialize};

/// A region of source text. Offsets are code-point indices; lines and
/// columns are 1-based, the end position is exclusive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub column: u32,
    pub end_line: u32,
    pub end_column: u32,
}

impl SourceSpan {
    /// Smallest span covering both.
    pub fn to(self, other: SourceSpan) -> SourceSpan {
        SourceSpan {
            start: self.start,
            end: other.end,
            line: self.line,
            column: self.column,
            end_line: other.end_line,
            end_column: other.end_column,
        }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}-{}:{}", self.line, self.column, self.end_line, self.end_column)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleAst {
    pub statements: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl AugOp {
    pub fn binop(self) -> BinOp {
        match self {
            AugOp::Add => BinOp::Add,
            AugOp::Sub => BinOp::Sub,
            AugOp::Mul => BinOp::Mul,
            AugOp::Div => BinOp::Div,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            AugOp::Add => "+=",
            AugOp::Sub => "-=",
            AugOp::Mul => "*=",
            AugOp::Div => "/=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Assign {
        target: Target,
        value: Expr,
    },
    AugAssign {
        target: Target,
        op: AugOp,
        value: Expr,
    },
    Del {
        name: Ident,
    },
    Expr(Expr),
    If {
        cond: Expr,
        then_block: Vec<Stmt>,
        else_block: Option<Vec<Stmt>>,
    },
    For {
        var: Ident,
        iterable: Expr,
        body: Vec<Stmt>,
    },
    Import {
        name: Ident,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ident {
    pub name: String,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Name(Ident),
    Attr { base: Box<Expr>, attr: Ident },
    Index { base: Box<Expr>, index: Box<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 6,
        }
    }
}

pub(crate) const PREC_NOT: u8 = 3;
pub(crate) const PREC_NEG: u8 = 7;
pub(crate) const PREC_POSTFIX: u8 = 8;
pub(crate) const PREC_ATOM: u8 = 9;

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
    None,
    Name(String),
    Array(Vec<Expr>),
    Mapping(Vec<(String, Expr)>),
    Unary { op: UnaryOp, operand: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call { callee: Box<Expr>, args: Vec<Expr> },
    Attr { base: Box<Expr>, attr: Ident },
    Index { base: Box<Expr>, index: Box<Expr> },
}

impl ExprKind {
    pub(crate) fn precedence(&self) -> u8 {
        match self {
            ExprKind::Unary { op: UnaryOp::Not, .. } => PREC_NOT,
            ExprKind::Unary { op: UnaryOp::Neg, .. } => PREC_NEG,
            ExprKind::Binary { op, .. } => op.precedence(),
            ExprKind::Call { .. } | ExprKind::Attr { .. } | ExprKind::Index { .. } => PREC_POSTFIX,
            _ => PREC_ATOM,
        }
    }
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Expr {
            kind,
            span: SourceSpan::default(),
        }
    }

    /// The root variable of an access chain like `df.a[0].b`.
    pub fn root_name(&self) -> Option<&str> {
        match &self.kind {
            ExprKind::Name(n) => Some(n),
            ExprKind::Attr { base, .. } | ExprKind::Index { base, .. } => base.root_name(),
            ExprKind::Call { callee, .. } => match &callee.kind {
                ExprKind::Attr { base, .. } => base.root_name(),
                _ => None,
            },
            _ => None,
        }
    }
}

impl Target {
    pub fn root_name(&self) -> Option<&str> {
        match self {
            Target::Name(id) => Some(&id.name),
            Target::Attr { base, .. } | Target::Index { base, .. } => base.root_name(),
        }
    }
}

impl Ident {
    pub fn new(name: impl Into<String>) -> Self {
        Ident {
            name: name.into(),
            span: SourceSpan::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Traversal helpers
// ---------------------------------------------------------------------------

impl ModuleAst {
    /// A copy with every span reset, for shape comparisons.
    pub fn without_spans(&self) -> ModuleAst {
        let mut ast = self.clone();
        for stmt in &mut ast.statements {
            strip_stmt(stmt);
        }
        ast
    }

    /// Calls `f` for every `Name` occurrence (reads, assignment targets,
    /// loop variables, `del` and `import` names), in source order.
    pub fn name_occurrences(&self) -> Vec<(&str, SourceSpan)> {
        let mut out = Vec::new();
        for stmt in &self.statements {
            stmt_names(stmt, &mut out);
        }
        out.sort_by_key(|(_, span)| span.start);
        out
    }
}

fn stmt_names<'a>(stmt: &'a Stmt, out: &mut Vec<(&'a str, SourceSpan)>) {
    match &stmt.kind {
        StmtKind::Assign { target, value } | StmtKind::AugAssign { target, value, .. } => {
            target_names(target, out);
            expr_names(value, out);
        }
        StmtKind::Del { name } | StmtKind::Import { name } => out.push((&name.name, name.span)),
        StmtKind::Expr(e) => expr_names(e, out),
        StmtKind::If {
            cond,
            then_block,
            else_block,
        } => {
            expr_names(cond, out);
            for s in then_block.iter().chain(else_block.iter().flatten()) {
                stmt_names(s, out);
            }
        }
        StmtKind::For { var, iterable, body } => {
            out.push((&var.name, var.span));
            expr_names(iterable, out);
            for s in body {
                stmt_names(s, out);
            }
        }
    }
}

fn target_names<'a>(target: &'a Target, out: &mut Vec<(&'a str, SourceSpan)>) {
    match target {
        Target::Name(id) => out.push((&id.name, id.span)),
        Target::Attr { base, .. } => expr_names(base, out),
        Target::Index { base, index } => {
            expr_names(base, out);
            expr_names(index, out);
        }
    }
}

fn expr_names<'a>(expr: &'a Expr, out: &mut Vec<(&'a str, SourceSpan)>) {
    match &expr.kind {
        ExprKind::Name(n) => out.push((n, expr.span)),
        ExprKind::Array(items) => items.iter().for_each(|e| expr_names(e, out)),
        ExprKind::Mapping(entries) => entries.iter().for_each(|(_, e)| expr_names(e, out)),
        ExprKind::Unary { operand, .. } => expr_names(operand, out),
        ExprKind::Binary { lhs, rhs, .. } => {
            expr_names(lhs, out);
            expr_names(rhs, out);
        }
        ExprKind::Call { callee, args } => {
            expr_names(callee, out);
            args.iter().for_each(|e| expr_names(e, out));
        }
        ExprKind::Attr { base, .. } => expr_names(base, out),
        ExprKind::Index { base, index } => {
            expr_names(base, out);
            expr_names(index, out);
        }
        _ => {}
    }
}

fn strip_stmt(stmt: &mut Stmt) {
    stmt.span = SourceSpan::default();
    match &mut stmt.kind {
        StmtKind::Assign { target, value } | StmtKind::AugAssign { target, value, .. } => {
            strip_target(target);
            strip_expr(value);
        }
        StmtKind::Del { name } | StmtKind::Import { name } => name.span = SourceSpan::default(),
        StmtKind::Expr(e) => strip_expr(e),
        StmtKind::If {
            cond,
            then_block,
            else_block,
        } => {
            strip_expr(cond);
            then_block.iter_mut().for_each(strip_stmt);
            if let Some(block) = else_block {
                block.iter_mut().for_each(strip_stmt);
            }
        }
        StmtKind::For { var, iterable, body } => {
            var.span = SourceSpan::default();
            strip_expr(iterable);
            body.iter_mut().for_each(strip_stmt);
        }
    }
}

fn strip_target(target: &mut Target) {
    match target {
        Target::Name(id) => id.span = SourceSpan::default(),
        Target::Attr { base, attr } => {
            strip_expr(base);
            attr.span = SourceSpan::default();
        }
        Target::Index { base, index } => {
            strip_expr(base);
            strip_expr(index);
        }
    }
}

fn strip_expr(expr: &mut Expr) {
    expr.span = SourceSpan::default();
    match &mut expr.kind {
        ExprKind::Array(items) => items.iter_mut().for_each(strip_expr),
        ExprKind::Mapping(entries) => entries.iter_mut().for_each(|(_, e)| strip_expr(e)),
        ExprKind::Unary { operand, .. } => strip_expr(operand),
        ExprKind::Binary { lhs, rhs, .. } => {
            strip_expr(lhs);
            strip_expr(rhs);
        }
        ExprKind::Call { callee, args } => {
            strip_expr(callee);
            args.iter_mut().for_each(strip_expr);
        }
        ExprKind::Attr { base, attr } => {
            strip_expr(base);
            attr.span = SourceSpan::default();
        }
        ExprKind::Index { base, index } => {
            strip_expr(base);
            strip_expr(index);
        }
        _ => {}
    }
}
