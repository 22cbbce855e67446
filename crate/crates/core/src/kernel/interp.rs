use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;

use super::heap::{Obj, Val, MAX_NESTING};
use super::{ErrorKind, ExecResult, Kernel, RuntimeError, ScopeRef};
use crate::lang::{AugOp, BinOp, Expr, ExprKind, ModuleAst, SourceSpan, Stmt, StmtKind, Target, UnaryOp};
use crate::model::{Output, TabId};

pub(super) type RResult<T> = Result<T, RuntimeError>;

pub(super) fn err<T>(kind: ErrorKind, message: impl Into<String>) -> RResult<T> {
    Err(RuntimeError::new(kind, message))
}

/// State of one running execution.
pub(super) struct Exec<'k> {
    pub(super) k: &'k mut Kernel,
    scope: ScopeRef,
    pub(super) outputs: Vec<Output>,
    fuel: u64,
    changed: BTreeSet<String>,
    /// Number of randomized calls so far, mixed into their seeds.
    pub(super) rng_calls: u64,
}

pub(super) fn run(k: &mut Kernel, scope: &ScopeRef, ast: &ModuleAst) -> ExecResult {
    let fuel = k.step_limit;
    let mut ex = Exec {
        k,
        scope: scope.clone(),
        outputs: Vec::new(),
        fuel,
        changed: BTreeSet::new(),
        rng_calls: 0,
    };
    let mut error = None;
    let count = ast.statements.len();
    for (i, stmt) in ast.statements.iter().enumerate() {
        let outcome = match &stmt.kind {
            StmtKind::Expr(e) if i + 1 == count => ex.eval(e).map(|v| {
                if v != Val::Null {
                    let repr = ex.k.heap.export(&v).repr();
                    ex.outputs.push(Output::Value { repr });
                }
            }),
            _ => ex.stmt(stmt),
        };
        if let Err(e) = outcome {
            let e = e.at(stmt.span);
            ex.outputs.push(Output::Error {
                kind: e.kind.to_string(),
                message: e.message.clone(),
            });
            error = Some(e);
            break;
        }
    }
    let mut changed = std::mem::take(&mut ex.changed);
    let outputs = std::mem::take(&mut ex.outputs);
    let heap = &ex.k.heap;
    match scope {
        ScopeRef::Global => {
            for (name, val) in &ex.k.global {
                if heap.reaches_dirty(val) {
                    changed.insert(name.clone());
                }
            }
        }
        ScopeRef::Tab { group, tab } => {
            if let Some(env) = ex.k.tabs.get(&(group.clone(), tab.clone())) {
                for (name, val) in &env.overlay {
                    if val.as_ref().is_some_and(|v| heap.reaches_dirty(v)) {
                        changed.insert(name.clone());
                    }
                }
            }
        }
    }
    ExecResult {
        outputs,
        error,
        changed,
    }
}

pub(super) fn type_name(k: &Kernel, v: &Val) -> &'static str {
    match v {
        Val::Null => "Null",
        Val::Bool(_) => "Bool",
        Val::Int(_) => "Int",
        Val::Float(_) => "Float",
        Val::Text(_) => "Text",
        Val::Obj(id) => k.heap.get(*id).type_tag(),
        Val::Handle(_) => "ScopeHandle",
        Val::Module(_) => "Module",
    }
}

impl Exec<'_> {
    pub(super) fn charge(&mut self, steps: u64) -> RResult<()> {
        match self.fuel.checked_sub(steps) {
            Some(rest) => {
                self.fuel = rest;
                Ok(())
            }
            None => {
                self.fuel = 0;
                err(
                    ErrorKind::StepLimit,
                    format!("execution exceeded {} steps", self.k.step_limit),
                )
            }
        }
    }

    pub(super) fn type_name(&self, v: &Val) -> &'static str {
        type_name(self.k, v)
    }

    pub(super) fn emit(&mut self, text: &str) {
        if let Some(Output::Stream { text: last }) = self.outputs.last_mut() {
            last.push_str(text);
        } else {
            self.outputs.push(Output::Stream { text: text.to_string() });
        }
    }

    pub(super) fn alloc(&mut self, obj: Obj) -> RResult<Val> {
        let v = self.k.heap.alloc(obj);
        if self.k.heap.depth(&v) > MAX_NESTING {
            return err(ErrorKind::ValueError, "containers are nested too deeply");
        }
        Ok(v)
    }

    pub(super) fn store_check(&mut self, container: u32, val: &Val) -> RResult<()> {
        self.k
            .heap
            .check_store(container, val)
            .or_else(|m| err(ErrorKind::ValueError, m))
    }

    // ---- names ---------------------------------------------------------

    fn group_of_handle(&self, name: &str) -> Option<String> {
        let group = name.strip_prefix('_')?;
        self.k.groups.contains_key(group).then(|| group.to_string())
    }

    fn tab_key(&self) -> Option<(String, TabId)> {
        match &self.scope {
            ScopeRef::Global => None,
            ScopeRef::Tab { group, tab } => Some((group.clone(), tab.clone())),
        }
    }

    fn resolve(&self, name: &str) -> Option<Val> {
        let found = match self.tab_key() {
            None => self.k.global.get(name).cloned(),
            Some(key) => self.k.tabs.get(&key).and_then(|env| env.resolve(name).cloned()),
        };
        found.or_else(|| self.group_of_handle(name).map(Val::Handle))
    }

    fn lookup(&self, name: &str) -> RResult<Val> {
        self.resolve(name)
            .ok_or_else(|| RuntimeError::new(ErrorKind::NameError, format!("name {name} is not defined")))
    }

    fn bind(&mut self, name: &str, val: Val) -> RResult<()> {
        if self.group_of_handle(name).is_some() {
            return err(
                ErrorKind::TypeError,
                format!("{name} is a scope handle and cannot be rebound"),
            );
        }
        let old = self.resolve(name);
        if old.as_ref() != Some(&val) {
            self.changed.insert(name.to_string());
        }
        match self.tab_key() {
            None => {
                self.k.global.insert(name.to_string(), val);
            }
            Some(key) => {
                let env = self.k.tabs.get_mut(&key).expect("scope checked before run");
                env.overlay.insert(name.to_string(), Some(val));
            }
        }
        Ok(())
    }

    fn unbind(&mut self, name: &str) -> RResult<()> {
        if self.group_of_handle(name).is_some() {
            return err(
                ErrorKind::TypeError,
                format!("{name} is a scope handle and cannot be deleted"),
            );
        }
        let present = match self.tab_key() {
            None => self.k.global.remove(name).is_some(),
            Some(key) => {
                let env = self.k.tabs.get_mut(&key).expect("scope checked before run");
                let present = env.resolve(name).is_some();
                if present {
                    env.overlay.insert(name.to_string(), None);
                }
                present
            }
        };
        if !present {
            return err(ErrorKind::NameError, format!("name {name} is not defined"));
        }
        self.changed.insert(name.to_string());
        Ok(())
    }

    /// `_group.name`: a private copy of the value in the group's main tab.
    fn cross_ref(&mut self, group: &str, name: &str) -> RResult<Val> {
        let main = self
            .k
            .groups
            .get(group)
            .cloned()
            .flatten()
            .ok_or_else(|| RuntimeError::new(ErrorKind::NoMainTab, format!("group {group} has no main tab")))?;
        let val = self
            .k
            .tabs
            .get(&(group.to_string(), main))
            .and_then(|env| env.resolve(name).cloned())
            .ok_or_else(|| {
                RuntimeError::new(
                    ErrorKind::NameError,
                    format!("name {name} is not defined in group {group}"),
                )
            })?;
        Ok(self.k.heap.deep_copy(&val, &mut HashMap::new()))
    }

    // ---- statements ----------------------------------------------------

    fn block(&mut self, stmts: &[Stmt]) -> RResult<()> {
        for s in stmts {
            self.stmt(s).map_err(|e| e.at(s.span))?;
        }
        Ok(())
    }

    fn stmt(&mut self, stmt: &Stmt) -> RResult<()> {
        self.charge(1)?;
        match &stmt.kind {
            StmtKind::Assign { target, value } => {
                let v = self.eval(value)?;
                self.assign(target, v)
            }
            StmtKind::AugAssign { target, op, value } => self.aug_assign(target, *op, value, stmt.span),
            StmtKind::Del { name } => self.unbind(&name.name).map_err(|e| e.at(name.span)),
            StmtKind::Expr(e) => self.eval(e).map(|_| ()),
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                let c = self.eval(cond)?;
                if self.truthy(&c) {
                    self.block(then_block)
                } else if let Some(block) = else_block {
                    self.block(block)
                } else {
                    Ok(())
                }
            }
            StmtKind::For { var, iterable, body } => {
                let it = self.eval(iterable)?;
                let items = self.iterate(&it).map_err(|e| e.at(iterable.span))?;
                for item in items {
                    self.charge(1)?;
                    self.bind(&var.name, item).map_err(|e| e.at(var.span))?;
                    self.block(body)?;
                }
                Ok(())
            }
            StmtKind::Import { name } => {
                if !super::MODULES.contains(&name.name.as_str()) {
                    return err(ErrorKind::ImportError, format!("no module named {}", name.name));
                }
                self.bind(&name.name, Val::Module(name.name.clone()))
            }
        }
    }

    fn assign(&mut self, target: &Target, v: Val) -> RResult<()> {
        match target {
            Target::Name(id) => self.bind(&id.name, v).map_err(|e| e.at(id.span)),
            Target::Attr { base, attr } => {
                let recv = self.eval(base)?;
                self.set_attr(&recv, &attr.name, v).map_err(|e| e.at(attr.span))
            }
            Target::Index { base, index } => {
                let recv = self.eval(base)?;
                let idx = self.eval(index)?;
                self.set_index(&recv, &idx, v).map_err(|e| e.at(index.span))
            }
        }
    }

    fn aug_assign(&mut self, target: &Target, op: AugOp, value: &Expr, span: SourceSpan) -> RResult<()> {
        let op = op.binop();
        match target {
            Target::Name(id) => {
                let cur = self.lookup(&id.name).map_err(|e| e.at(id.span))?;
                let rhs = self.eval(value)?;
                let new = self.binop(op, &cur, &rhs).map_err(|e| e.at(span))?;
                self.bind(&id.name, new)
            }
            Target::Attr { base, attr } => {
                let recv = self.eval(base)?;
                let cur = self.get_attr(&recv, &attr.name).map_err(|e| e.at(attr.span))?;
                let rhs = self.eval(value)?;
                let new = self.binop(op, &cur, &rhs).map_err(|e| e.at(span))?;
                self.set_attr(&recv, &attr.name, new)
            }
            Target::Index { base, index } => {
                let recv = self.eval(base)?;
                let idx = self.eval(index)?;
                let cur = self.index(&recv, &idx).map_err(|e| e.at(index.span))?;
                let rhs = self.eval(value)?;
                let new = self.binop(op, &cur, &rhs).map_err(|e| e.at(span))?;
                self.set_index(&recv, &idx, new)
            }
        }
    }

    // ---- expressions ---------------------------------------------------

    pub(super) fn eval(&mut self, expr: &Expr) -> RResult<Val> {
        self.eval_inner(expr).map_err(|e| e.at(expr.span))
    }

    fn eval_inner(&mut self, expr: &Expr) -> RResult<Val> {
        self.charge(1)?;
        match &expr.kind {
            ExprKind::Int(v) => Ok(Val::Int(*v)),
            ExprKind::Float(v) => Ok(Val::Float(*v)),
            ExprKind::Text(s) => Ok(Val::Text(s.clone())),
            ExprKind::Bool(b) => Ok(Val::Bool(*b)),
            ExprKind::None => Ok(Val::Null),
            ExprKind::Name(n) => self.lookup(n),
            ExprKind::Array(items) => {
                let mut vals = Vec::with_capacity(items.len());
                for item in items {
                    vals.push(self.eval(item)?);
                }
                self.alloc(Obj::Array(vals))
            }
            ExprKind::Mapping(entries) => {
                let mut m = IndexMap::with_capacity(entries.len());
                for (k, item) in entries {
                    let v = self.eval(item)?;
                    m.insert(k.clone(), v);
                }
                self.alloc(Obj::Mapping(m))
            }
            ExprKind::Unary { op, operand } => {
                let v = self.eval(operand)?;
                match op {
                    UnaryOp::Not => Ok(Val::Bool(!self.truthy(&v))),
                    UnaryOp::Neg => match v {
                        Val::Int(i) => i
                            .checked_neg()
                            .map(Val::Int)
                            .ok_or_else(|| RuntimeError::new(ErrorKind::Overflow, "integer overflow")),
                        Val::Float(f) => Ok(Val::Float(-f)),
                        other => err(
                            ErrorKind::TypeError,
                            format!("cannot negate {}", self.type_name(&other)),
                        ),
                    },
                }
            }
            ExprKind::Binary { op, lhs, rhs } => match op {
                BinOp::And => {
                    let l = self.eval(lhs)?;
                    if !self.truthy(&l) {
                        return Ok(Val::Bool(false));
                    }
                    let r = self.eval(rhs)?;
                    Ok(Val::Bool(self.truthy(&r)))
                }
                BinOp::Or => {
                    let l = self.eval(lhs)?;
                    if self.truthy(&l) {
                        return Ok(Val::Bool(true));
                    }
                    let r = self.eval(rhs)?;
                    Ok(Val::Bool(self.truthy(&r)))
                }
                _ => {
                    let l = self.eval(lhs)?;
                    let r = self.eval(rhs)?;
                    self.binop(*op, &l, &r)
                }
            },
            ExprKind::Call { callee, args } => match &callee.kind {
                ExprKind::Attr { base, attr } => {
                    let recv = self.eval(base)?;
                    let args = self.eval_args(args)?;
                    self.call_method(&recv, &attr.name, args).map_err(|e| e.at(attr.span))
                }
                ExprKind::Name(n) => {
                    if let Some(v) = self.resolve(n) {
                        return err(
                            ErrorKind::TypeError,
                            format!("{n} is a {} and cannot be called", self.type_name(&v)),
                        );
                    }
                    if !super::BUILTINS.contains(&n.as_str()) {
                        return err(ErrorKind::NameError, format!("name {n} is not defined"));
                    }
                    let args = self.eval_args(args)?;
                    self.call_builtin(n, args)
                }
                _ => {
                    let v = self.eval(callee)?;
                    err(
                        ErrorKind::TypeError,
                        format!("a {} cannot be called", self.type_name(&v)),
                    )
                }
            },
            ExprKind::Attr { base, attr } => {
                let recv = self.eval(base)?;
                self.get_attr(&recv, &attr.name)
            }
            ExprKind::Index { base, index } => {
                let recv = self.eval(base)?;
                let idx = self.eval(index)?;
                self.index(&recv, &idx)
            }
        }
    }

    fn eval_args(&mut self, args: &[Expr]) -> RResult<Vec<Val>> {
        args.iter().map(|a| self.eval(a)).collect()
    }

    pub(super) fn truthy(&self, v: &Val) -> bool {
        match v {
            Val::Null => false,
            Val::Bool(b) => *b,
            Val::Int(i) => *i != 0,
            Val::Float(f) => *f != 0.0,
            Val::Text(s) => !s.is_empty(),
            Val::Obj(id) => match self.k.heap.get(*id) {
                Obj::Array(items) => !items.is_empty(),
                Obj::Mapping(m) => !m.is_empty(),
                Obj::Table(t) => t.rows() > 0,
            },
            Val::Handle(_) | Val::Module(_) => true,
        }
    }

    fn iterate(&mut self, v: &Val) -> RResult<Vec<Val>> {
        match v {
            Val::Text(s) => {
                self.charge(s.len() as u64)?;
                Ok(s.chars().map(|c| Val::Text(c.to_string())).collect())
            }
            Val::Obj(id) => match self.k.heap.get(*id).clone() {
                Obj::Array(items) => Ok(items),
                Obj::Mapping(m) => Ok(m.keys().map(|k| Val::Text(k.clone())).collect()),
                Obj::Table(t) => {
                    self.charge((t.rows() * t.width().max(1)) as u64)?;
                    let mut rows = Vec::with_capacity(t.rows());
                    for r in 0..t.rows() {
                        let row = t.row(r).expect("in range");
                        let vals = row
                            .into_iter()
                            .map(|(k, v)| {
                                let val = self.k.heap.import(&v);
                                (k, val)
                            })
                            .collect();
                        rows.push(self.alloc(Obj::Mapping(vals))?);
                    }
                    Ok(rows)
                }
            },
            other => err(
                ErrorKind::TypeError,
                format!("cannot iterate over {}", self.type_name(other)),
            ),
        }
    }

    // ---- operators -----------------------------------------------------

    pub(super) fn binop(&mut self, op: BinOp, l: &Val, r: &Val) -> RResult<Val> {
        use BinOp::*;
        match op {
            Eq => return Ok(Val::Bool(self.k.heap.deep_equal(l, r))),
            Ne => return Ok(Val::Bool(!self.k.heap.deep_equal(l, r))),
            Lt | Le | Gt | Ge => return self.compare(op, l, r),
            And | Or => unreachable!("short-circuit operators are evaluated lazily"),
            _ => {}
        }
        match (l, r) {
            (Val::Int(a), Val::Int(b)) => int_arith(op, *a, *b),
            (Val::Int(_) | Val::Float(_), Val::Int(_) | Val::Float(_)) => float_arith(op, as_f64(l), as_f64(r)),
            (Val::Text(a), Val::Text(b)) if op == Add => {
                self.charge((a.len() + b.len()) as u64 / 8)?;
                Ok(Val::Text(format!("{a}{b}")))
            }
            (Val::Text(s), Val::Int(n)) | (Val::Int(n), Val::Text(s)) if op == Mul => {
                let n = (*n).max(0) as u64;
                self.charge(n.saturating_mul(s.len() as u64))?;
                Ok(Val::Text(s.repeat(n as usize)))
            }
            (Val::Obj(a), Val::Obj(b)) if op == Add => match (self.k.heap.get(*a), self.k.heap.get(*b)) {
                (Obj::Array(x), Obj::Array(y)) => {
                    let joined: Vec<Val> = x.iter().chain(y).cloned().collect();
                    self.charge(joined.len() as u64)?;
                    self.alloc(Obj::Array(joined))
                }
                _ => self.bad_operands(op, l, r),
            },
            (Val::Obj(a), Val::Int(n)) | (Val::Int(n), Val::Obj(a)) if op == Mul => {
                let Obj::Array(items) = self.k.heap.get(*a) else {
                    return self.bad_operands(op, l, r);
                };
                let items = items.clone();
                let n = (*n).max(0) as u64;
                self.charge(n.saturating_mul(items.len() as u64))?;
                let repeated: Vec<Val> = (0..n).flat_map(|_| items.iter().cloned()).collect();
                self.alloc(Obj::Array(repeated))
            }
            _ => self.bad_operands(op, l, r),
        }
    }

    fn bad_operands(&self, op: BinOp, l: &Val, r: &Val) -> RResult<Val> {
        err(
            ErrorKind::TypeError,
            format!(
                "unsupported operands for {}: {} and {}",
                op.symbol(),
                self.type_name(l),
                self.type_name(r)
            ),
        )
    }

    fn compare(&self, op: BinOp, l: &Val, r: &Val) -> RResult<Val> {
        use std::cmp::Ordering;
        let ord = match (l, r) {
            (Val::Int(a), Val::Int(b)) => a.cmp(b),
            (Val::Int(_) | Val::Float(_), Val::Int(_) | Val::Float(_)) => {
                as_f64(l).partial_cmp(&as_f64(r)).unwrap_or(Ordering::Equal)
            }
            (Val::Text(a), Val::Text(b)) => a.cmp(b),
            _ => return self.bad_operands(op, l, r),
        };
        Ok(Val::Bool(match op {
            BinOp::Lt => ord.is_lt(),
            BinOp::Le => ord.is_le(),
            BinOp::Gt => ord.is_gt(),
            _ => ord.is_ge(),
        }))
    }

    // ---- attributes and indexing ---------------------------------------

    pub(super) fn get_attr(&mut self, recv: &Val, attr: &str) -> RResult<Val> {
        match recv {
            Val::Handle(group) => {
                let group = group.clone();
                self.cross_ref(&group, attr)
            }
            Val::Obj(id) => match self.k.heap.get(*id) {
                Obj::Table(t) => {
                    let col = t
                        .column(attr)
                        .map(<[_]>::to_vec)
                        .ok_or_else(|| RuntimeError::new(ErrorKind::KeyError, format!("no column {attr}")))?;
                    self.column_array(&col)
                }
                other => err(
                    ErrorKind::TypeError,
                    format!("{} has no attribute {attr}", other.type_tag()),
                ),
            },
            Val::Module(m) => err(
                ErrorKind::TypeError,
                format!("{m}.{attr} is a function and must be called"),
            ),
            other => err(
                ErrorKind::TypeError,
                format!("{} has no attribute {attr}", self.type_name(other)),
            ),
        }
    }

    fn set_attr(&mut self, recv: &Val, attr: &str, v: Val) -> RResult<()> {
        match recv {
            Val::Obj(id) if matches!(self.k.heap.get(*id), Obj::Table(_)) => self.set_column(*id, attr, &v),
            other => err(
                ErrorKind::TypeError,
                format!("cannot set attribute {attr} on {}", self.type_name(other)),
            ),
        }
    }

    pub(super) fn column_array(&mut self, col: &[super::Value]) -> RResult<Val> {
        self.charge(col.len() as u64)?;
        let vals = col.iter().map(|v| self.k.heap.import(v)).collect();
        self.alloc(Obj::Array(vals))
    }

    /// Replaces a table column with the scalars in `v`.
    pub(super) fn set_column(&mut self, table: u32, name: &str, v: &Val) -> RResult<()> {
        let values = match v {
            Val::Obj(id) => match self.k.heap.get(*id) {
                Obj::Array(items) => items.iter().map(|i| self.k.heap.export(i)).collect::<Vec<_>>(),
                other => {
                    return err(
                        ErrorKind::TypeError,
                        format!("a column must be an Array, not {}", other.type_tag()),
                    )
                }
            },
            other => {
                return err(
                    ErrorKind::TypeError,
                    format!("a column must be an Array, not {}", self.type_name(other)),
                )
            }
        };
        self.charge(values.len() as u64)?;
        let Obj::Table(t) = self.k.heap.get_mut(table) else {
            unreachable!("caller checked the receiver")
        };
        t.set_column(name.to_string(), values)
            .or_else(|m| err(ErrorKind::ValueError, m))
    }

    fn index(&mut self, recv: &Val, idx: &Val) -> RResult<Val> {
        match (recv, idx) {
            (Val::Text(s), Val::Int(i)) => {
                let chars: Vec<char> = s.chars().collect();
                let pos = normalize(*i, chars.len())?;
                Ok(Val::Text(chars[pos].to_string()))
            }
            (Val::Obj(id), _) => match (self.k.heap.get(*id), idx) {
                (Obj::Array(items), Val::Int(i)) => {
                    let pos = normalize(*i, items.len())?;
                    Ok(items[pos].clone())
                }
                (Obj::Mapping(m), Val::Text(k)) => m.get(k).cloned().ok_or_else(|| {
                    RuntimeError::new(ErrorKind::KeyError, format!("no key {}", crate::lang::encode_string(k)))
                }),
                (Obj::Table(t), Val::Text(name)) => {
                    let col = t
                        .column(name)
                        .map(<[_]>::to_vec)
                        .ok_or_else(|| RuntimeError::new(ErrorKind::KeyError, format!("no column {name}")))?;
                    self.column_array(&col)
                }
                (Obj::Table(t), Val::Int(i)) => {
                    let pos = normalize(*i, t.rows())?;
                    let row = t.row(pos).expect("in range");
                    let vals = row
                        .into_iter()
                        .map(|(k, v)| {
                            let val = self.k.heap.import(&v);
                            (k, val)
                        })
                        .collect();
                    self.alloc(Obj::Mapping(vals))
                }
                (obj, _) => err(
                    ErrorKind::TypeError,
                    format!("cannot index {} with {}", obj.type_tag(), self.type_name(idx)),
                ),
            },
            _ => err(
                ErrorKind::TypeError,
                format!("cannot index {} with {}", self.type_name(recv), self.type_name(idx)),
            ),
        }
    }

    fn set_index(&mut self, recv: &Val, idx: &Val, v: Val) -> RResult<()> {
        let Val::Obj(id) = recv else {
            return err(
                ErrorKind::TypeError,
                format!("cannot assign into {}", self.type_name(recv)),
            );
        };
        let id = *id;
        match (self.k.heap.get(id), idx) {
            (Obj::Array(items), Val::Int(i)) => {
                let pos = normalize(*i, items.len())?;
                self.store_check(id, &v)?;
                if let Obj::Array(items) = self.k.heap.get_mut(id) {
                    items[pos] = v;
                }
                Ok(())
            }
            (Obj::Mapping(_), Val::Text(k)) => {
                let k = k.clone();
                self.store_check(id, &v)?;
                if let Obj::Mapping(m) = self.k.heap.get_mut(id) {
                    m.insert(k, v);
                }
                Ok(())
            }
            (Obj::Table(_), Val::Text(name)) => {
                let name = name.clone();
                self.set_column(id, &name, &v)
            }
            (obj, _) => err(
                ErrorKind::TypeError,
                format!(
                    "cannot assign into {} with {} index",
                    obj.type_tag(),
                    self.type_name(idx)
                ),
            ),
        }
    }
}

fn normalize(i: i64, len: usize) -> RResult<usize> {
    let len_i = len as i64;
    let pos = if i < 0 { i + len_i } else { i };
    if pos < 0 || pos >= len_i {
        return err(
            ErrorKind::IndexError,
            format!("index {i} out of range for length {len}"),
        );
    }
    Ok(pos as usize)
}

pub(super) fn as_f64(v: &Val) -> f64 {
    match v {
        Val::Int(i) => *i as f64,
        Val::Float(f) => *f,
        _ => f64::NAN,
    }
}

fn int_arith(op: BinOp, a: i64, b: i64) -> RResult<Val> {
    let overflow = || RuntimeError::new(ErrorKind::Overflow, "integer overflow");
    Ok(match op {
        BinOp::Add => Val::Int(a.checked_add(b).ok_or_else(overflow)?),
        BinOp::Sub => Val::Int(a.checked_sub(b).ok_or_else(overflow)?),
        BinOp::Mul => Val::Int(a.checked_mul(b).ok_or_else(overflow)?),
        BinOp::Div => {
            if b == 0 {
                return err(ErrorKind::ZeroDivision, "division by zero");
            }
            return float_result(a as f64 / b as f64);
        }
        BinOp::Mod => {
            if b == 0 {
                return err(ErrorKind::ZeroDivision, "modulo by zero");
            }
            let r = a.checked_rem(b).ok_or_else(overflow)?;
            Val::Int(if r != 0 && (r < 0) != (b < 0) { r + b } else { r })
        }
        _ => unreachable!("comparisons handled by caller"),
    })
}

fn float_arith(op: BinOp, a: f64, b: f64) -> RResult<Val> {
    match op {
        BinOp::Add => float_result(a + b),
        BinOp::Sub => float_result(a - b),
        BinOp::Mul => float_result(a * b),
        BinOp::Div => {
            if b == 0.0 {
                return err(ErrorKind::ZeroDivision, "division by zero");
            }
            float_result(a / b)
        }
        BinOp::Mod => {
            if b == 0.0 {
                return err(ErrorKind::ZeroDivision, "modulo by zero");
            }
            let r = a % b;
            float_result(if r != 0.0 && (r < 0.0) != (b < 0.0) { r + b } else { r })
        }
        _ => unreachable!("comparisons handled by caller"),
    }
}

pub(super) fn float_result(f: f64) -> RResult<Val> {
    if f.is_finite() {
        Ok(Val::Float(f))
    } else {
        err(ErrorKind::Overflow, "float result is not finite")
    }
}
