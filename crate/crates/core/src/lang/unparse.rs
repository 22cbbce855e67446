use super::ast::*;
use super::lexer::encode_string;

/// Renders `ast` in canonical form: four-space indents, single spaces
/// around binary operators, minimal parentheses.
pub fn unparse(ast: &ModuleAst) -> String {
    let mut out = String::new();
    for stmt in &ast.statements {
        write_stmt(&mut out, stmt, 0);
    }
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn write_block(out: &mut String, block: &[Stmt], depth: usize) {
    for stmt in block {
        write_stmt(out, stmt, depth);
    }
}

fn write_stmt(out: &mut String, stmt: &Stmt, depth: usize) {
    indent(out, depth);
    match &stmt.kind {
        StmtKind::Assign { target, value } => {
            write_target(out, target);
            out.push_str(" = ");
            out.push_str(&unparse_expr(value));
        }
        StmtKind::AugAssign { target, op, value } => {
            write_target(out, target);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            out.push_str(&unparse_expr(value));
        }
        StmtKind::Del { name } => {
            out.push_str("del ");
            out.push_str(&name.name);
        }
        StmtKind::Import { name } => {
            out.push_str("import ");
            out.push_str(&name.name);
        }
        StmtKind::Expr(e) => out.push_str(&unparse_expr(e)),
        StmtKind::If {
            cond,
            then_block,
            else_block,
        } => {
            out.push_str("if ");
            out.push_str(&unparse_expr(cond));
            out.push_str(":\n");
            write_block(out, then_block, depth + 1);
            if let Some(block) = else_block {
                indent(out, depth);
                out.push_str("else:\n");
                write_block(out, block, depth + 1);
            }
            return;
        }
        StmtKind::For { var, iterable, body } => {
            out.push_str("for ");
            out.push_str(&var.name);
            out.push_str(" in ");
            out.push_str(&unparse_expr(iterable));
            out.push_str(":\n");
            write_block(out, body, depth + 1);
            return;
        }
    }
    out.push('\n');
}

fn write_target(out: &mut String, target: &Target) {
    match target {
        Target::Name(id) => out.push_str(&id.name),
        Target::Attr { base, attr } => {
            out.push_str(&wrap(base, PREC_POSTFIX));
            out.push('.');
            out.push_str(&attr.name);
        }
        Target::Index { base, index } => {
            out.push_str(&wrap(base, PREC_POSTFIX));
            out.push('[');
            out.push_str(&unparse_expr(index));
            out.push(']');
        }
    }
}

fn wrap(expr: &Expr, min_prec: u8) -> String {
    let text = unparse_expr(expr);
    if expr.kind.precedence() < min_prec {
        format!("({text})")
    } else {
        text
    }
}

pub fn format_float(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

pub fn unparse_expr(expr: &Expr) -> String {
    match &expr.kind {
        ExprKind::Int(v) => v.to_string(),
        ExprKind::Float(v) => format_float(*v),
        ExprKind::Text(s) => encode_string(s),
        ExprKind::Bool(true) => "True".into(),
        ExprKind::Bool(false) => "False".into(),
        ExprKind::None => "None".into(),
        ExprKind::Name(n) => n.clone(),
        ExprKind::Array(items) => {
            let parts: Vec<_> = items.iter().map(unparse_expr).collect();
            format!("[{}]", parts.join(", "))
        }
        ExprKind::Mapping(entries) => {
            let parts: Vec<_> = entries
                .iter()
                .map(|(k, v)| format!("{}: {}", encode_string(k), unparse_expr(v)))
                .collect();
            format!("{{{}}}", parts.join(", "))
        }
        ExprKind::Unary { op, operand } => match op {
            UnaryOp::Neg => format!("-{}", wrap(operand, PREC_NEG)),
            UnaryOp::Not => format!("not {}", wrap(operand, PREC_NOT)),
        },
        ExprKind::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            format!("{} {} {}", wrap(lhs, p), op.symbol(), wrap(rhs, p + 1))
        }
        ExprKind::Call { callee, args } => {
            let parts: Vec<_> = args.iter().map(unparse_expr).collect();
            format!("{}({})", wrap(callee, PREC_POSTFIX), parts.join(", "))
        }
        ExprKind::Attr { base, attr } => format!("{}.{}", wrap(base, PREC_POSTFIX), attr.name),
        ExprKind::Index { base, index } => {
            format!("{}[{}]", wrap(base, PREC_POSTFIX), unparse_expr(index))
        }
    }
}
