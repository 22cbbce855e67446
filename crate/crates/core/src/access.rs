//! Who may do what: cell permissions, variable permissions checked against
//! a cell's static effects, and redaction of cells a user may not read.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::codes::ErrorCode;
use crate::effects::{analyze_in, check_against_acl, protected_spans, AclScope, Decision, EffectSet, PurityTable};
use crate::kernel::{ExecResult, Kernel, ScopeRef};
use crate::lang::{parse, ModuleAst, SourceSpan};
use crate::model::{
    AclTarget, Cell, CellAcl, CellId, CellKind, CellPerm, Location, Notebook, UserId, VariableAcl, VariableAclTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    ReadCell,
    EditCell,
    SetCellAcl,
    Execute,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRoles {
    pub hosts: BTreeSet<UserId>,
    pub collaborators: BTreeSet<UserId>,
}

impl SessionRoles {
    pub fn with_host(host: impl Into<UserId>) -> Self {
        SessionRoles {
            hosts: BTreeSet::from([host.into()]),
            collaborators: BTreeSet::new(),
        }
    }

    pub fn is_host(&self, user: &str) -> bool {
        self.hosts.contains(user)
    }

    pub fn is_participant(&self, user: &str) -> bool {
        self.hosts.contains(user) || self.collaborators.contains(user)
    }

    pub fn participants(&self) -> BTreeSet<UserId> {
        self.hosts.union(&self.collaborators).cloned().collect()
    }
}

/// Why a request was refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denial {
    pub code: ErrorCode,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<(String, SourceSpan)>,
}

impl Denial {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Denial {
            code,
            detail: detail.into(),
            names: Vec::new(),
            spans: Vec::new(),
        }
    }
}

pub fn can(user: &str, cell: &Cell, cap: Capability, roles: &SessionRoles) -> bool {
    let perm = cell.acl.effective(user);
    match cap {
        Capability::ReadCell => perm.read,
        Capability::EditCell | Capability::Execute => perm.read && perm.edit,
        Capability::SetCellAcl => roles.is_host(user) || (perm.read && perm.edit),
    }
}

/// The ACL a cell (or, with `cell: None`, the template for new cells)
/// would have after `actor` sets `target`'s flags. Only hosts may change
/// the template. A non-host changing a default keeps the access they had
/// through a personal override, so a lock never locks out its author.
pub fn cell_acl_after(
    nb: &Notebook,
    actor: &str,
    cell: Option<&CellId>,
    target: &AclTarget,
    read: bool,
    edit: bool,
    roles: &SessionRoles,
) -> Result<CellAcl, Denial> {
    let Some(id) = cell else {
        if !roles.is_host(actor) {
            return Err(Denial::new(
                ErrorCode::PermissionDeniedAcl,
                "only hosts may change the template for new cells",
            ));
        }
        let mut acl = nb.default_cell_acl.clone();
        acl.set(target, read, edit);
        return Ok(acl);
    };
    let c = nb
        .cell(id)
        .ok_or_else(|| Denial::new(ErrorCode::UnknownId, format!("no cell {id}")))?;
    if !can(actor, c, Capability::SetCellAcl, roles) {
        return Err(Denial::new(
            ErrorCode::PermissionDeniedAcl,
            format!("{actor} may not change access to {id}"),
        ));
    }
    let mut acl = c.acl.clone();
    let keep = !roles.is_host(actor) && *target == AclTarget::Default && !acl.per_user.contains_key(actor);
    let before = acl.effective(actor);
    acl.set(target, read, edit);
    if keep {
        acl.per_user.insert(actor.to_string(), before);
    }
    Ok(acl)
}

/// Applies [`cell_acl_after`].
pub fn set_cell_acl(
    nb: &mut Notebook,
    actor: &str,
    cell: Option<&CellId>,
    target: &AclTarget,
    read: bool,
    edit: bool,
    roles: &SessionRoles,
) -> Result<CellAcl, Denial> {
    let acl = cell_acl_after(nb, actor, cell, target, read, edit, roles)?;
    match cell {
        None => nb.default_cell_acl = acl.clone(),
        Some(id) => nb.cell_mut(id).expect("checked").acl = acl.clone(),
    }
    Ok(acl)
}

/// The entry `name` would have after the change; `None` means fully open.
pub fn variable_acl_after(
    table: &VariableAclTable,
    actor: &str,
    name: &str,
    target: &AclTarget,
    read: bool,
    write: bool,
    roles: &SessionRoles,
) -> Result<Option<VariableAcl>, Denial> {
    if !(roles.is_host(actor) || table.effective(name, actor).write) {
        return Err(Denial::new(
            ErrorCode::PermissionDeniedAcl,
            format!("{actor} may not change access to {name}"),
        ));
    }
    let mut next = VariableAclTable::default();
    if let Some(acl) = table.get(name) {
        next.per_variable.insert(name.to_string(), acl.clone());
    }
    let had_override = table.get(name).is_some_and(|acl| acl.per_user.contains_key(actor));
    let before = table.effective(name, actor);
    next.set(name, target, read, write);
    if !roles.is_host(actor) && *target == AclTarget::Default && !had_override {
        next.set(name, &AclTarget::User(actor.to_string()), before.read, before.write);
    }
    Ok(next.get(name).cloned())
}

/// Applies [`variable_acl_after`].
pub fn set_variable_acl(
    nb: &mut Notebook,
    actor: &str,
    name: &str,
    target: &AclTarget,
    read: bool,
    write: bool,
    roles: &SessionRoles,
) -> Result<(), Denial> {
    match variable_acl_after(&nb.variable_acl, actor, name, target, read, write, roles)? {
        Some(acl) => nb.variable_acl.per_variable.insert(name.to_string(), acl),
        None => nb.variable_acl.per_variable.remove(name),
    };
    Ok(())
}

/// What a user who may not read a cell gets instead of it: enough to draw
/// a blurred block of the right size, nothing of the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactedCell {
    pub id: CellId,
    pub kind: CellKind,
    pub line_shape: Vec<usize>,
    pub acl: CellPerm,
    pub exec_count: u64,
    pub redacted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellView<'a> {
    Visible(&'a Cell),
    Hidden(RedactedCell),
}

pub fn redact_for<'a>(user: &str, cell: &'a Cell, roles: &SessionRoles) -> CellView<'a> {
    if cell.is_group() || can(user, cell, Capability::ReadCell, roles) {
        return CellView::Visible(cell);
    }
    CellView::Hidden(RedactedCell {
        id: cell.id.clone(),
        kind: cell.kind,
        line_shape: cell.line_shape(),
        acl: cell.acl.effective(user),
        exec_count: cell.exec_count,
        redacted: true,
    })
}

/// The cell as JSON for `user`: the file form when readable, otherwise a
/// [`RedactedCell`]. Group cells are always shown as containers; the cells
/// in their tabs are projected one by one.
pub fn project_cell(user: &str, cell: &Cell, roles: &SessionRoles) -> serde_json::Value {
    match redact_for(user, cell, roles) {
        CellView::Hidden(r) => serde_json::to_value(r).expect("redacted cell serializes"),
        CellView::Visible(c) => {
            let mut value = c.to_json_value();
            if let Some(group) = &c.group {
                let tabs = value["tabs"].as_array_mut().expect("group cells have tabs");
                for (tab_json, tab) in tabs.iter_mut().zip(&group.tabs) {
                    tab_json["cells"] = tab.cells.iter().map(|inner| project_cell(user, inner, roles)).collect();
                }
            }
            value
        }
    }
}

/// The whole notebook as `user` may see it.
pub fn project_notebook(user: &str, nb: &Notebook, roles: &SessionRoles) -> serde_json::Value {
    let mut value = nb.to_json_value();
    value["cells"] = nb.cells.iter().map(|c| project_cell(user, c, roles)).collect();
    value
}

/// Where a cell's code runs.
pub fn cell_scope(nb: &Notebook, id: &CellId) -> Option<ScopeRef> {
    match nb.locate(id)? {
        Location::Top(_) => Some(ScopeRef::Global),
        Location::InTab { group, tab, .. } => {
            let g = nb.cells[group].group.as_ref()?;
            Some(ScopeRef::tab(g.name.clone(), g.tabs[tab].id.clone()))
        }
    }
}

/// A cleared execution request.
#[derive(Debug, Clone, PartialEq)]
pub struct Grant {
    pub ast: ModuleAst,
    pub scope: ScopeRef,
    pub effects: EffectSet,
}

/// Permission, parse, effect analysis and variable check, in that order.
/// Nothing here touches the kernel.
pub fn gate_execution(
    nb: &Notebook,
    kernel: &Kernel,
    user: &str,
    cell_id: &CellId,
    roles: &SessionRoles,
) -> Result<Grant, Denial> {
    let cell = nb
        .cell(cell_id)
        .ok_or_else(|| Denial::new(ErrorCode::UnknownId, format!("no cell {cell_id}")))?;
    if cell.kind != CellKind::Code {
        return Err(Denial::new(
            ErrorCode::InvalidKind,
            format!("{cell_id} is not a code cell"),
        ));
    }
    if !can(user, cell, Capability::ReadCell, roles) {
        return Err(Denial::new(
            ErrorCode::PermissionDeniedCellRead,
            format!("{user} may not read {cell_id}"),
        ));
    }
    if !can(user, cell, Capability::Execute, roles) {
        return Err(Denial::new(
            ErrorCode::PermissionDeniedCellEdit,
            format!("{user} may not edit {cell_id}"),
        ));
    }
    let ast = parse(&cell.source).map_err(|e| Denial::new(ErrorCode::ParseError, e.to_string()))?;
    let scope = cell_scope(nb, cell_id).expect("cell was found");
    let acl_scope = match &scope {
        ScopeRef::Global => AclScope::Global,
        ScopeRef::Tab { group, tab } => AclScope::Tab {
            overlay: kernel.overlay_names(group, tab).unwrap_or_default(),
        },
    };
    let effects = analyze_in(&ast, &PurityTable::standard(), &kernel.group_names());
    match check_against_acl(&effects, &nb.variable_acl, user, &acl_scope) {
        Decision::Allow => Ok(Grant { ast, scope, effects }),
        Decision::Deny { reason: _, names } => {
            let protected: BTreeSet<String> = names.iter().cloned().collect();
            Err(Denial {
                code: ErrorCode::VariableProtected,
                detail: format!("execution would touch protected variables: {}", names.join(", ")),
                spans: protected_spans(&ast, &protected),
                names,
            })
        }
    }
}

/// Merging a main tab writes its overlay into global, so every name in the
/// overlay needs write access.
pub fn gate_merge(nb: &Notebook, kernel: &Kernel, user: &str, group: &str) -> Result<BTreeSet<String>, Denial> {
    if nb.group_by_name(group).is_none() {
        return Err(Denial::new(ErrorCode::UnknownId, format!("no group {group}")));
    }
    let pending = kernel.pending_merge(group).map_err(|e| {
        let code = if e.kind == crate::kernel::ErrorKind::NoMainTab {
            ErrorCode::NoMainTab
        } else {
            ErrorCode::UnknownId
        };
        Denial::new(code, e.message)
    })?;
    let names: Vec<String> = pending
        .iter()
        .filter(|n| !nb.variable_acl.effective(n, user).write)
        .cloned()
        .collect();
    if names.is_empty() {
        return Ok(pending);
    }
    Err(Denial {
        code: ErrorCode::VariableProtected,
        detail: format!("merge would overwrite protected variables: {}", names.join(", ")),
        names,
        spans: Vec::new(),
    })
}

/// Runs a granted cell and records its outputs on the notebook.
pub fn run_cell(nb: &mut Notebook, kernel: &mut Kernel, cell_id: &CellId, grant: &Grant) -> ExecResult {
    let result = kernel.execute(&grant.scope, &grant.ast);
    if let Some(cell) = nb.cell_mut(cell_id) {
        cell.exec_count = kernel.exec_counter();
        cell.outputs = result.outputs.clone();
    }
    result
}

/// One executed cell in a [`LockReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct LockedRun {
    pub cell: CellId,
    pub effects: EffectSet,
    pub result: ExecResult,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LockReport {
    pub executed: Vec<LockedRun>,
    pub locked_cells: Vec<CellId>,
    pub locked_variables: Vec<String>,
    /// Set when a cell failed; nothing is locked then.
    pub failure: Option<(CellId, String)>,
}

/// Runs top-level code cells `0..=index` in order, then takes edit away
/// from everyone but `actor` on those cells and write away on every global
/// variable. Stops at the first failing cell without locking anything.
pub fn run_and_lock_above(
    nb: &mut Notebook,
    kernel: &mut Kernel,
    actor: &str,
    index: i64,
    roles: &SessionRoles,
) -> Result<LockReport, Denial> {
    if !roles.is_host(actor) {
        return Err(Denial::new(
            ErrorCode::PermissionDeniedAcl,
            "only hosts may run and lock",
        ));
    }
    if index < -1 || index >= nb.cells.len() as i64 {
        return Err(Denial::new(
            ErrorCode::InvalidRange,
            format!("no top-level cell at index {index}"),
        ));
    }
    let mut report = LockReport::default();
    let upto = (index + 1) as usize;
    let ids: Vec<CellId> = nb.cells[..upto].iter().map(|c| c.id.clone()).collect();
    for id in &ids {
        if nb.cell(id).map(|c| c.kind) != Some(CellKind::Code) {
            continue;
        }
        let grant = match gate_execution(nb, kernel, actor, id, roles) {
            Ok(g) => g,
            Err(d) => {
                report.failure = Some((id.clone(), format!("{}: {}", d.code, d.detail)));
                return Ok(report);
            }
        };
        let result = run_cell(nb, kernel, id, &grant);
        let failed = result.error.clone();
        report.executed.push(LockedRun {
            cell: id.clone(),
            effects: grant.effects,
            result,
        });
        if let Some(e) = failed {
            report.failure = Some((id.clone(), e.to_string()));
            return Ok(report);
        }
    }
    let me = AclTarget::User(actor.to_string());
    for id in &ids {
        let cell = nb.cell_mut(id).expect("top-level cell");
        if cell.is_group() {
            continue;
        }
        let mine = cell.acl.effective(actor);
        cell.acl.per_user.insert(
            actor.to_string(),
            CellPerm {
                read: mine.read,
                edit: true,
            },
        );
        cell.acl.default_edit = false;
        report.locked_cells.push(id.clone());
    }
    for info in kernel.list_variables(&ScopeRef::Global).expect("global exists") {
        let default_read = nb.variable_acl.get(&info.name).is_none_or(|acl| acl.default_read);
        nb.variable_acl
            .set(&info.name, &AclTarget::Default, default_read, false);
        nb.variable_acl.set(&info.name, &me, true, true);
        report.locked_variables.push(info.name);
    }
    Ok(report)
}

/// One line of the decision audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub time: String,
    pub user: UserId,
    pub cell: Option<CellId>,
    pub decision: String,
    pub reason: Option<String>,
    pub names: Vec<String>,
}

impl AuditEntry {
    pub fn allow(time: String, user: &str, cell: &CellId, effects: &EffectSet) -> Self {
        AuditEntry {
            time,
            user: user.to_string(),
            cell: Some(cell.clone()),
            decision: "allow".into(),
            reason: None,
            names: effects.impact().into_iter().collect(),
        }
    }

    pub fn deny(time: String, user: &str, cell: Option<&CellId>, denial: &Denial) -> Self {
        AuditEntry {
            time,
            user: user.to_string(),
            cell: cell.cloned(),
            decision: "deny".into(),
            reason: Some(denial.code.to_string()),
            names: denial.names.clone(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("audit entries serialize")
    }
}

/// Current UTC time in ISO-8601, for audit lines.
pub fn now_iso8601() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
