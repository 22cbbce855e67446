//! Static effect analysis: which variables a cell reads, writes, mutates or
//! deletes, computed from the AST alone so execution can be gated up front.
//!
//! The analysis over-approximates. Method calls count as mutations of their
//! receiver unless the method is known to be pure, both branches of an `if`
//! contribute, and aliases created inside the cell (`b = df`) are traced so
//! that `b.drop_na()` reports `df` as mutated. Aliases that already exist
//! between variables bound by earlier cells are not visible here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lang::{Expr, ExprKind, ModuleAst, SourceSpan, Stmt, StmtKind, Target};
use crate::model::VariableAclTable;

/// A variable as seen by the analysis: either a name in the executing scope
/// or a name inside a parallel group, reached through its `_group` handle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QualifiedName {
    Plain(String),
    Group { group: String, name: String },
}

impl QualifiedName {
    pub fn plain(name: impl Into<String>) -> Self {
        QualifiedName::Plain(name.into())
    }

    pub fn as_plain(&self) -> Option<&str> {
        match self {
            QualifiedName::Plain(n) => Some(n),
            QualifiedName::Group { .. } => None,
        }
    }

    /// The variable name without the group qualifier.
    pub fn name(&self) -> &str {
        match self {
            QualifiedName::Plain(n) => n,
            QualifiedName::Group { name, .. } => name,
        }
    }
}

impl fmt::Display for QualifiedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QualifiedName::Plain(n) => f.write_str(n),
            QualifiedName::Group { group, name } => write!(f, "{group}::{name}"),
        }
    }
}

impl Serialize for QualifiedName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QualifiedName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Ok(match text.split_once("::") {
            Some((group, name)) => QualifiedName::Group {
                group: group.to_string(),
                name: name.to_string(),
            },
            None => QualifiedName::Plain(text),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectSet {
    pub reads: BTreeSet<QualifiedName>,
    pub writes: BTreeSet<String>,
    pub mutates: BTreeSet<String>,
    pub deletes: BTreeSet<String>,
}

impl EffectSet {
    /// Names whose value the program may change.
    pub fn impact(&self) -> BTreeSet<String> {
        let mut out = self.writes.clone();
        out.extend(self.mutates.iter().cloned());
        out.extend(self.deletes.iter().cloned());
        out
    }

    pub fn is_empty(&self) -> bool {
        self.reads.is_empty() && self.writes.is_empty() && self.mutates.is_empty() && self.deletes.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuiltinSignature {
    pub pure: bool,
    pub mutates_args: BTreeSet<usize>,
    /// The result never shares structure with the arguments.
    pub returns_fresh: bool,
}

/// What the analysis knows about the kernel's callables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PurityTable {
    pub pure_methods: BTreeSet<String>,
    /// Pure methods whose result shares nothing with the receiver.
    pub fresh_methods: BTreeSet<String>,
    pub builtin_signatures: BTreeMap<String, BuiltinSignature>,
}

const PURE_FRESH_METHODS: &[&str] = &[
    // tables
    "head",
    "count",
    "col",
    "cols",
    "copy",
    "sample",
    // text
    "lower",
    "upper",
    "replace",
    "split",
    "starts_with",
    "contains",
    "strip",
    "join",
    // containers
    "keys",
    "len",
    // module functions
    "mean",
    "sum",
    "max",
    "min",
    "median",
    "sub",
    "search",
];

/// Pure, but the result may be part of the receiver.
const PURE_ALIASING_METHODS: &[&str] = &["get", "values"];

impl PurityTable {
    /// The table matching the built-in kernel.
    pub fn standard() -> Self {
        let mut pure_methods: BTreeSet<String> = PURE_FRESH_METHODS.iter().map(|s| s.to_string()).collect();
        pure_methods.extend(PURE_ALIASING_METHODS.iter().map(|s| s.to_string()));
        let fresh_methods = PURE_FRESH_METHODS.iter().map(|s| s.to_string()).collect();
        let sig = |pure| BuiltinSignature {
            pure,
            mutates_args: BTreeSet::new(),
            returns_fresh: true,
        };
        let builtin_signatures = [
            ("print", sig(false)),
            ("len", sig(true)),
            ("range", sig(true)),
            ("str", sig(true)),
            ("copy", sig(true)),
            ("load_table", sig(true)),
            ("table", sig(true)),
        ]
        .into_iter()
        .map(|(n, s)| (n.to_string(), s))
        .collect();
        PurityTable {
            pure_methods,
            fresh_methods,
            builtin_signatures,
        }
    }

    pub fn is_builtin(&self, name: &str) -> bool {
        self.builtin_signatures.contains_key(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Read,
    Write,
    Mutate,
    Delete,
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectKind::Read => "READ",
            EffectKind::Write => "WRITE",
            EffectKind::Mutate => "MUTATE",
            EffectKind::Delete => "DELETE",
        })
    }
}

/// One effect together with the source location that causes it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct EffectSite {
    pub kind: EffectKind,
    pub name: QualifiedName,
    pub span: SourceSpan,
}

impl fmt::Display for EffectSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} @ {}", self.kind, self.name, self.span)
    }
}

pub fn analyze(ast: &ModuleAst, purity: &PurityTable) -> EffectSet {
    analyze_in(ast, purity, &BTreeSet::new())
}

/// Like [`analyze`], with knowledge of which parallel groups exist so that
/// `_group.x` is reported as a read of `group::x`.
pub fn analyze_in(ast: &ModuleAst, purity: &PurityTable, groups: &BTreeSet<String>) -> EffectSet {
    collapse(&analyze_detailed(ast, purity, groups))
}

/// Every effect with its span, sorted by position.
pub fn analyze_detailed(ast: &ModuleAst, purity: &PurityTable, groups: &BTreeSet<String>) -> Vec<EffectSite> {
    let mut walker = Walker {
        purity,
        groups,
        aliases: Aliases::default(),
        touched: BTreeSet::new(),
        sites: BTreeSet::new(),
    };
    for stmt in &ast.statements {
        walker.collect_aliases(stmt);
    }
    walker.block(&ast.statements);
    let mut sites: Vec<EffectSite> = walker.sites.into_iter().collect();
    sites.sort_by(|a, b| (a.span.start, a.kind, &a.name).cmp(&(b.span.start, b.kind, &b.name)));
    sites
}

pub fn collapse(sites: &[EffectSite]) -> EffectSet {
    let mut set = EffectSet::default();
    for site in sites {
        match site.kind {
            EffectKind::Read => {
                set.reads.insert(site.name.clone());
            }
            EffectKind::Write => {
                set.writes.insert(site.name.name().to_string());
            }
            EffectKind::Mutate => {
                set.mutates.insert(site.name.name().to_string());
            }
            EffectKind::Delete => {
                set.deletes.insert(site.name.name().to_string());
            }
        }
    }
    set
}

/// Alias classes over variable names, merged flow-insensitively.
#[derive(Debug, Default)]
struct Aliases {
    parent: BTreeMap<String, String>,
}

impl Aliases {
    fn find(&self, name: &str) -> String {
        let mut cur = name.to_string();
        while let Some(p) = self.parent.get(&cur) {
            if *p == cur {
                break;
            }
            cur = p.clone();
        }
        cur
    }

    fn union(&mut self, a: &str, b: &str) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent.insert(hi, lo);
        }
    }

    fn union_all(&mut self, names: &BTreeSet<String>) {
        let mut iter = names.iter();
        if let Some(first) = iter.next() {
            for n in iter {
                self.union(first, n);
            }
        }
    }

    /// All names sharing a class with any of `names`.
    fn expand(&self, names: &BTreeSet<String>) -> BTreeSet<String> {
        let roots: BTreeSet<String> = names.iter().map(|n| self.find(n)).collect();
        let mut out = names.clone();
        out.extend(roots.iter().cloned());
        for member in self.parent.keys() {
            if roots.contains(&self.find(member)) {
                out.insert(member.clone());
            }
        }
        out
    }
}

struct Walker<'a> {
    purity: &'a PurityTable,
    groups: &'a BTreeSet<String>,
    aliases: Aliases,
    /// Names already written or deleted on every path to the current point.
    touched: BTreeSet<String>,
    sites: BTreeSet<EffectSite>,
}

impl Walker<'_> {
    fn is_cross_ref(&self, base: &Expr) -> Option<String> {
        match &base.kind {
            ExprKind::Name(n) => {
                let group = n.strip_prefix('_')?;
                self.groups.contains(group).then(|| group.to_string())
            }
            _ => None,
        }
    }

    /// Variables whose objects the value of `expr` may share structure with.
    fn alias_roots(&self, expr: &Expr) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.alias_roots_into(expr, &mut out);
        out
    }

    fn alias_roots_into(&self, expr: &Expr, out: &mut BTreeSet<String>) {
        use crate::lang::BinOp;
        match &expr.kind {
            ExprKind::Name(n) => {
                out.insert(n.clone());
            }
            ExprKind::Array(items) => items.iter().for_each(|e| self.alias_roots_into(e, out)),
            ExprKind::Mapping(entries) => entries.iter().for_each(|(_, e)| self.alias_roots_into(e, out)),
            ExprKind::Binary {
                op: BinOp::Add | BinOp::Mul,
                lhs,
                rhs,
            } => {
                self.alias_roots_into(lhs, out);
                self.alias_roots_into(rhs, out);
            }
            ExprKind::Call { callee, args } => match &callee.kind {
                ExprKind::Name(n) if self.purity.is_builtin(n) => {
                    if !self.purity.builtin_signatures[n].returns_fresh {
                        args.iter().for_each(|e| self.alias_roots_into(e, out));
                    }
                }
                ExprKind::Attr { base, attr } => {
                    if self.purity.fresh_methods.contains(&attr.name) || self.is_cross_ref(base).is_some() {
                        return;
                    }
                    self.alias_roots_into(base, out);
                    args.iter().for_each(|e| self.alias_roots_into(e, out));
                }
                _ => {
                    self.alias_roots_into(callee, out);
                    args.iter().for_each(|e| self.alias_roots_into(e, out));
                }
            },
            ExprKind::Attr { base, .. } => {
                if self.is_cross_ref(base).is_none() {
                    self.alias_roots_into(base, out);
                }
            }
            ExprKind::Index { base, .. } => self.alias_roots_into(base, out),
            _ => {}
        }
    }

    fn target_base_roots(&self, target: &Target) -> BTreeSet<String> {
        match target {
            Target::Name(id) => BTreeSet::from([id.name.clone()]),
            Target::Attr { base, .. } | Target::Index { base, .. } => {
                let mut roots = self.alias_roots(base);
                roots.extend(target.root_name().map(str::to_string));
                roots
            }
        }
    }

    // Pass 1: alias classes.

    fn collect_aliases(&mut self, stmt: &Stmt) {
        match &stmt.kind {
            StmtKind::Assign { target, value } | StmtKind::AugAssign { target, value, .. } => {
                let mut names = self.target_base_roots(target);
                names.extend(self.alias_roots(value));
                self.aliases.union_all(&names);
                self.collect_expr_aliases(value);
                if let Target::Attr { base, .. } | Target::Index { base, .. } = target {
                    self.collect_expr_aliases(base);
                }
                if let Target::Index { index, .. } = target {
                    self.collect_expr_aliases(index);
                }
            }
            StmtKind::Expr(e) => self.collect_expr_aliases(e),
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                self.collect_expr_aliases(cond);
                for s in then_block.iter().chain(else_block.iter().flatten()) {
                    self.collect_aliases(s);
                }
            }
            StmtKind::For { var, iterable, body } => {
                let mut names = self.alias_roots(iterable);
                names.insert(var.name.clone());
                self.aliases.union_all(&names);
                self.collect_expr_aliases(iterable);
                for s in body {
                    self.collect_aliases(s);
                }
            }
            StmtKind::Del { .. } | StmtKind::Import { .. } => {}
        }
    }

    /// Mutating calls may store their arguments inside the receiver.
    fn collect_expr_aliases(&mut self, expr: &Expr) {
        match &expr.kind {
            ExprKind::Call { callee, args } => {
                if let ExprKind::Attr { base, attr } = &callee.kind {
                    if !self.purity.pure_methods.contains(&attr.name) {
                        let mut names = self.alias_roots(base);
                        names.extend(base.root_name().map(str::to_string));
                        for a in args {
                            names.extend(self.alias_roots(a));
                        }
                        self.aliases.union_all(&names);
                    }
                }
                self.collect_expr_aliases(callee);
                args.iter().for_each(|a| self.collect_expr_aliases(a));
            }
            ExprKind::Array(items) => items.iter().for_each(|e| self.collect_expr_aliases(e)),
            ExprKind::Mapping(entries) => entries.iter().for_each(|(_, e)| self.collect_expr_aliases(e)),
            ExprKind::Unary { operand, .. } => self.collect_expr_aliases(operand),
            ExprKind::Binary { lhs, rhs, .. } => {
                self.collect_expr_aliases(lhs);
                self.collect_expr_aliases(rhs);
            }
            ExprKind::Attr { base, .. } => self.collect_expr_aliases(base),
            ExprKind::Index { base, index } => {
                self.collect_expr_aliases(base);
                self.collect_expr_aliases(index);
            }
            _ => {}
        }
    }

    // Pass 2: effects.

    fn site(&mut self, kind: EffectKind, name: QualifiedName, span: SourceSpan) {
        self.sites.insert(EffectSite { kind, name, span });
    }

    fn read(&mut self, name: &str, span: SourceSpan) {
        if !self.touched.contains(name) {
            self.site(EffectKind::Read, QualifiedName::plain(name), span);
        }
    }

    fn write(&mut self, name: &str, span: SourceSpan) {
        self.site(EffectKind::Write, QualifiedName::plain(name), span);
        self.touched.insert(name.to_string());
    }

    fn mutate(&mut self, roots: BTreeSet<String>, span: SourceSpan) {
        for name in self.aliases.expand(&roots) {
            self.site(EffectKind::Mutate, QualifiedName::Plain(name), span);
        }
    }

    fn block(&mut self, stmts: &[Stmt]) {
        for stmt in stmts {
            self.stmt(stmt);
        }
    }

    fn stmt(&mut self, stmt: &Stmt) {
        match &stmt.kind {
            StmtKind::Assign { target, value } => {
                self.expr(value);
                match target {
                    Target::Name(id) => self.write(&id.name, id.span),
                    _ => self.mutate_target(target),
                }
            }
            StmtKind::AugAssign { target, value, .. } => {
                self.expr(value);
                match target {
                    Target::Name(id) => {
                        self.read(&id.name, id.span);
                        self.write(&id.name, id.span);
                    }
                    _ => self.mutate_target(target),
                }
            }
            StmtKind::Del { name } => {
                self.site(EffectKind::Delete, QualifiedName::plain(&name.name), name.span);
                self.touched.insert(name.name.clone());
            }
            StmtKind::Import { name } => self.write(&name.name, name.span),
            StmtKind::Expr(e) => self.expr(e),
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                self.expr(cond);
                let before = self.touched.clone();
                self.block(then_block);
                let after_then = std::mem::replace(&mut self.touched, before);
                if let Some(block) = else_block {
                    self.block(block);
                }
                self.touched = self.touched.intersection(&after_then).cloned().collect();
            }
            StmtKind::For { var, iterable, body } => {
                self.expr(iterable);
                let before = self.touched.clone();
                self.write(&var.name, var.span);
                self.block(body);
                self.touched = before;
            }
        }
    }

    fn mutate_target(&mut self, target: &Target) {
        let (base, span) = match target {
            Target::Attr { base, .. } => (base, base.span),
            Target::Index { base, index } => {
                self.expr(index);
                (base, base.span)
            }
            Target::Name(_) => unreachable!("plain names are writes"),
        };
        self.expr(base);
        let roots = self.target_base_roots(target);
        self.mutate(roots, span);
    }

    fn expr(&mut self, expr: &Expr) {
        match &expr.kind {
            ExprKind::Name(n) => self.read(n, expr.span),
            ExprKind::Array(items) => items.iter().for_each(|e| self.expr(e)),
            ExprKind::Mapping(entries) => entries.iter().for_each(|(_, e)| self.expr(e)),
            ExprKind::Unary { operand, .. } => self.expr(operand),
            ExprKind::Binary { lhs, rhs, .. } => {
                self.expr(lhs);
                self.expr(rhs);
            }
            ExprKind::Call { callee, args } => {
                match &callee.kind {
                    ExprKind::Name(n) if self.purity.is_builtin(n) && !self.touched.contains(n) => {
                        let sig = self.purity.builtin_signatures[n].clone();
                        args.iter().for_each(|a| self.expr(a));
                        for p in sig.mutates_args {
                            if let Some(arg) = args.get(p) {
                                let mut roots = self.alias_roots(arg);
                                roots.extend(arg.root_name().map(str::to_string));
                                self.mutate(roots, arg.span);
                            }
                        }
                        return;
                    }
                    ExprKind::Attr { base, attr } => {
                        self.expr(base);
                        if !self.purity.pure_methods.contains(&attr.name) && self.is_cross_ref(base).is_none() {
                            let mut roots = self.alias_roots(base);
                            roots.extend(
                                base.root_name()
                                    .filter(|_| !self.is_cross_ref_chain(base))
                                    .map(str::to_string),
                            );
                            self.mutate(roots, base.span);
                        }
                    }
                    _ => self.expr(callee),
                }
                args.iter().for_each(|a| self.expr(a));
            }
            ExprKind::Attr { base, attr } => match self.is_cross_ref(base) {
                Some(group) if !self.touched.contains(&format!("_{group}")) => {
                    self.site(
                        EffectKind::Read,
                        QualifiedName::Group {
                            group,
                            name: attr.name.clone(),
                        },
                        expr.span,
                    );
                }
                _ => self.expr(base),
            },
            ExprKind::Index { base, index } => {
                self.expr(base);
                self.expr(index);
            }
            _ => {}
        }
    }

    /// `_g.x...`: values reached through a group handle are private copies.
    fn is_cross_ref_chain(&self, expr: &Expr) -> bool {
        match &expr.kind {
            ExprKind::Attr { base, .. } => self.is_cross_ref(base).is_some() || self.is_cross_ref_chain(base),
            ExprKind::Index { base, .. } => self.is_cross_ref_chain(base),
            ExprKind::Call { callee, .. } => self.is_cross_ref_chain(callee),
            _ => false,
        }
    }
}

/// The scope an execution would run in, as far as ACL checks care.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AclScope {
    Global,
    /// A tab; `overlay` holds the names the tab has already bound locally.
    Tab {
        overlay: BTreeSet<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny { reason: String, names: Vec<String> },
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

pub const VARIABLE_PROTECTED: &str = "VARIABLE_PROTECTED";

/// Decides whether `user` may run code with `effects` in `scope`.
///
/// In the global scope, any impact on a write-protected name or any read of
/// a read-protected name is denied. In a tab, changes only ever land in the
/// tab's overlay, so only reads that fall through to the global snapshot
/// are checked. Reads through a group handle are checked in both scopes.
pub fn check_against_acl(effects: &EffectSet, acl: &VariableAclTable, user: &str, scope: &AclScope) -> Decision {
    let mut denied = BTreeSet::new();
    if *scope == AclScope::Global {
        for name in effects.impact() {
            if !acl.effective(&name, user).write {
                denied.insert(name);
            }
        }
    }
    for read in &effects.reads {
        let name = read.name();
        let checked = match (read, scope) {
            (QualifiedName::Group { .. }, _) => true,
            (QualifiedName::Plain(_), AclScope::Global) => true,
            (QualifiedName::Plain(n), AclScope::Tab { overlay }) => !overlay.contains(n),
        };
        if checked && !acl.effective(name, user).read {
            denied.insert(name.to_string());
        }
    }
    if denied.is_empty() {
        Decision::Allow
    } else {
        Decision::Deny {
            reason: VARIABLE_PROTECTED.to_string(),
            names: denied.into_iter().collect(),
        }
    }
}

/// Occurrences of protected names, for highlighting.
pub fn protected_spans(ast: &ModuleAst, protected: &BTreeSet<String>) -> Vec<(String, SourceSpan)> {
    ast.name_occurrences()
        .into_iter()
        .filter(|(n, _)| protected.contains(*n))
        .map(|(n, span)| (n.to_string(), span))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;
    use crate::model::AclTarget;

    fn effects(src: &str) -> EffectSet {
        analyze(&parse(src).unwrap(), &PurityTable::standard())
    }

    fn names(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn reads(items: &[&str]) -> BTreeSet<QualifiedName> {
        items.iter().map(|s| QualifiedName::plain(*s)).collect()
    }

    #[test]
    fn plain_assignment() {
        let e = effects("x = 1");
        assert_eq!(e.writes, names(&["x"]));
        assert!(e.reads.is_empty() && e.mutates.is_empty() && e.deletes.is_empty());
    }

    #[test]
    fn mutating_method() {
        let e = effects("df.drop_na()");
        assert_eq!(e.reads, reads(&["df"]));
        assert_eq!(e.mutates, names(&["df"]));
        assert!(e.writes.is_empty());
    }

    #[test]
    fn pure_method_does_not_mutate() {
        let e = effects("n = df.count()");
        assert_eq!(e.reads, reads(&["df"]));
        assert!(e.mutates.is_empty());
        assert_eq!(e.writes, names(&["n"]));
    }

    #[test]
    fn cross_reference_is_qualified() {
        let ast = parse("y = _plel.x").unwrap();
        let e = analyze_in(&ast, &PurityTable::standard(), &names(&["plel"]));
        assert_eq!(
            e.reads,
            BTreeSet::from([QualifiedName::Group {
                group: "plel".into(),
                name: "x".into()
            }])
        );
        assert_eq!(e.writes, names(&["y"]));
        // Without the group registered it is an ordinary read.
        assert_eq!(effects("y = _plel.x").reads, reads(&["_plel"]));
    }

    #[test]
    fn attribute_and_index_targets_mutate_the_root() {
        let e = effects("df.score = 2\nm[\"k\"] = 1\na[0][1] = 0");
        assert_eq!(e.mutates, names(&["a", "df", "m"]));
        assert_eq!(e.reads, reads(&["a", "df", "m"]));
        // A stored value becomes reachable from the container, so the
        // container's later mutations may reach it.
        let e = effects("df.score = s\nm[\"k\"] = 1\na[0][1] = i");
        assert_eq!(e.mutates, names(&["a", "df", "i", "m", "s"]));
        assert_eq!(e.reads, reads(&["a", "df", "i", "m", "s"]));
        assert!(e.writes.is_empty());
    }

    #[test]
    fn aug_assign() {
        let e = effects("n += 1");
        assert_eq!(e.reads, reads(&["n"]));
        assert_eq!(e.writes, names(&["n"]));
        let e = effects("a[0] -= 1");
        assert_eq!(e.mutates, names(&["a"]));
    }

    #[test]
    fn delete_and_import() {
        let e = effects("del x\nimport stats");
        assert_eq!(e.deletes, names(&["x"]));
        assert_eq!(e.writes, names(&["stats"]));
    }

    #[test]
    fn cell_local_temporaries_are_not_reads() {
        let e = effects("t = 1\nu = t + v");
        assert_eq!(e.writes, names(&["t", "u"]));
        assert_eq!(e.reads, reads(&["v"]));
    }

    #[test]
    fn read_before_write_is_a_read() {
        let e = effects("x = x + 1");
        assert_eq!(e.reads, reads(&["x"]));
        assert_eq!(e.writes, names(&["x"]));
    }

    #[test]
    fn branch_writes_do_not_cover_later_reads() {
        let e = effects("if c:\n    t = 1\ny = t");
        assert_eq!(e.reads, reads(&["c", "t"]));
        let e = effects("if c:\n    t = 1\nelse:\n    t = 2\ny = t");
        assert_eq!(e.reads, reads(&["c"]));
    }

    #[test]
    fn loop_body_writes_do_not_cover_later_reads() {
        let e = effects("for i in xs:\n    t = i\ny = t\nz = i");
        assert_eq!(e.reads, reads(&["i", "t", "xs"]));
        assert_eq!(e.writes, names(&["i", "t", "y", "z"]));
    }

    #[test]
    fn both_branches_contribute() {
        let e = effects("if c:\n    a.append(1)\nelse:\n    b = 2");
        assert_eq!(e.mutates, names(&["a"]));
        assert_eq!(e.writes, names(&["b"]));
    }

    #[test]
    fn builtins_are_not_reads() {
        let e = effects("print(len(xs))");
        assert_eq!(e.reads, reads(&["xs"]));
        assert!(e.impact().is_empty());
    }

    #[test]
    fn alias_in_same_cell_is_traced() {
        let e = effects("b = df\nb.drop_na()");
        assert_eq!(e.mutates, names(&["b", "df"]));
        let e = effects("rows = [df]\nrows[0].drop_na()");
        assert!(e.mutates.contains("df"));
        let e = effects("for t in tables:\n    t.drop_na()");
        assert!(e.mutates.contains("tables"));
        let e = effects("a.append(b)\na[0].append(1)");
        assert!(e.mutates.contains("b"));
    }

    #[test]
    fn fresh_results_do_not_alias() {
        let e = effects("b = df.copy()\nb.drop_na()");
        assert_eq!(e.mutates, names(&["b"]));
        let e = effects("b = copy(df)\nb.drop_na()");
        assert_eq!(e.mutates, names(&["b"]));
        let e = effects("b = df.drop_na()\nb.set_col(\"x\", [])");
        assert_eq!(e.mutates, names(&["b", "df"]));
    }

    #[test]
    fn alias_from_an_earlier_cell_is_not_traced() {
        // `b` may have been bound to `df` by a previous cell; that link is
        // invisible to a single-cell analysis.
        let e = effects("b.drop_na()");
        assert_eq!(e.mutates, names(&["b"]));
    }

    #[test]
    fn detailed_sites_carry_spans() {
        let ast = parse("df = load_table(\"t\")\ndf.drop_na()").unwrap();
        let sites = analyze_detailed(&ast, &PurityTable::standard(), &BTreeSet::new());
        let lines: Vec<String> = sites.iter().map(|s| s.to_string()).collect();
        assert_eq!(lines, vec!["WRITE df @ 1:1-1:3", "MUTATE df @ 2:1-2:3"]);
    }

    fn locked(name: &str, read: bool, write: bool) -> VariableAclTable {
        let mut acl = VariableAclTable::default();
        acl.set(name, &AclTarget::Default, read, write);
        acl.set(name, &AclTarget::User("alice".into()), true, true);
        acl
    }

    #[test]
    fn write_lock_denies_global_mutation() {
        let acl = locked("df", true, false);
        let e = effects("df.drop_na()");
        assert_eq!(
            check_against_acl(&e, &acl, "bob", &AclScope::Global),
            Decision::Deny {
                reason: VARIABLE_PROTECTED.into(),
                names: vec!["df".into()]
            }
        );
        assert!(check_against_acl(&e, &acl, "alice", &AclScope::Global).is_allow());
    }

    #[test]
    fn tab_scope_allows_writes() {
        let acl = locked("df", true, false);
        let e = effects("df = df.drop_na()");
        let tab = AclScope::Tab {
            overlay: BTreeSet::new(),
        };
        assert!(check_against_acl(&e, &acl, "bob", &tab).is_allow());
    }

    #[test]
    fn read_lock_applies_to_fall_through_reads_only() {
        let acl = locked("secret", false, false);
        let e = effects("y = secret");
        assert!(!check_against_acl(&e, &acl, "bob", &AclScope::Global).is_allow());
        let fresh_tab = AclScope::Tab {
            overlay: BTreeSet::new(),
        };
        assert!(!check_against_acl(&e, &acl, "bob", &fresh_tab).is_allow());
        let own = AclScope::Tab {
            overlay: names(&["secret"]),
        };
        assert!(check_against_acl(&e, &acl, "bob", &own).is_allow());
    }

    #[test]
    fn empty_effects_allowed() {
        let acl = locked("df", false, false);
        assert!(check_against_acl(&EffectSet::default(), &acl, "bob", &AclScope::Global).is_allow());
    }

    #[test]
    fn protected_spans_examples() {
        let ps = |src: &str| protected_spans(&parse(src).unwrap(), &names(&["df"]));
        assert_eq!(ps("df = df.copy()").len(), 2);
        assert!(ps("x = 1").is_empty());
        let spans = ps("df.drop_na()\nn = df.count() + len(df)");
        assert_eq!(spans.len(), 3);
        assert!(spans.windows(2).all(|w| w[0].1.start < w[1].1.start));
    }

    #[test]
    fn qualified_name_serde() {
        let q = QualifiedName::Group {
            group: "plel".into(),
            name: "x".into(),
        };
        let json = serde_json::to_string(&q).unwrap();
        assert_eq!(json, "\"plel::x\"");
        assert_eq!(serde_json::from_str::<QualifiedName>(&json).unwrap(), q);
    }
}
