//! The shared notebook document: cells, parallel cell groups, ACL metadata,
//! structural edits and the `.pnb.json` file format.
//!
//! Every operation here is a plain value transformation. The session layer
//! decides *who* may apply an edit; this module only decides whether the edit
//! is structurally valid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::is_identifier;

/// Current on-disk format version.
pub const FORMAT_VERSION: u32 = 1;

pub type UserId = String;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub String);

impl CellId {
    pub fn new(id: impl Into<String>) -> Self {
        CellId(id.into())
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TabId(pub String);

impl TabId {
    pub fn new(id: impl Into<String>) -> Self {
        TabId(id.into())
    }
}

impl fmt::Display for TabId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Who an ACL change applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AclTarget {
    Default,
    User(UserId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPerm {
    pub read: bool,
    pub edit: bool,
}

/// Per-user read/edit flags on a cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellAcl {
    pub default_read: bool,
    pub default_edit: bool,
    #[serde(default)]
    pub per_user: BTreeMap<UserId, CellPerm>,
}

impl Default for CellAcl {
    fn default() -> Self {
        Self::everyone()
    }
}

impl CellAcl {
    /// Everyone may read and edit.
    pub fn everyone() -> Self {
        CellAcl {
            default_read: true,
            default_edit: true,
            per_user: BTreeMap::new(),
        }
    }

    pub fn effective(&self, user: &str) -> CellPerm {
        self.per_user.get(user).copied().unwrap_or(CellPerm {
            read: self.default_read,
            edit: self.default_edit,
        })
    }

    /// Sets flags for `target`. Read removal always implies edit removal.
    pub fn set(&mut self, target: &AclTarget, read: bool, edit: bool) {
        let edit = edit && read;
        match target {
            AclTarget::Default => {
                self.default_read = read;
                self.default_edit = edit;
            }
            AclTarget::User(u) => {
                self.per_user.insert(u.clone(), CellPerm { read, edit });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarPerm {
    pub read: bool,
    pub write: bool,
}

/// Access flags for one runtime variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableAcl {
    pub default_read: bool,
    pub default_write: bool,
    #[serde(default)]
    pub per_user: BTreeMap<UserId, VarPerm>,
}

impl Default for VariableAcl {
    fn default() -> Self {
        VariableAcl {
            default_read: true,
            default_write: true,
            per_user: BTreeMap::new(),
        }
    }
}

impl VariableAcl {
    pub fn effective(&self, user: &str) -> VarPerm {
        self.per_user.get(user).copied().unwrap_or(VarPerm {
            read: self.default_read,
            write: self.default_write,
        })
    }

    pub fn set(&mut self, target: &AclTarget, read: bool, write: bool) {
        let write = write && read;
        match target {
            AclTarget::Default => {
                self.default_read = read;
                self.default_write = write;
            }
            AclTarget::User(u) => {
                self.per_user.insert(u.clone(), VarPerm { read, write });
            }
        }
    }

    fn is_permissive(&self) -> bool {
        *self == VariableAcl::default()
    }
}

/// Variable name → access flags. Absent names are open to everyone.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariableAclTable {
    pub per_variable: BTreeMap<String, VariableAcl>,
}

impl VariableAclTable {
    pub fn effective(&self, name: &str, user: &str) -> VarPerm {
        match self.per_variable.get(name) {
            Some(acl) => acl.effective(user),
            None => VarPerm {
                read: true,
                write: true,
            },
        }
    }

    pub fn get(&self, name: &str) -> Option<&VariableAcl> {
        self.per_variable.get(name)
    }

    /// Updates the flags for `name`; entries that end up fully permissive are
    /// dropped so that an unlock restores the "absent" state.
    pub fn set(&mut self, name: &str, target: &AclTarget, read: bool, write: bool) {
        let entry = self.per_variable.entry(name.to_string()).or_default();
        entry.set(target, read, write);
        if entry.is_permissive() {
            self.per_variable.remove(name);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Code,
    Markdown,
    Group,
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Code => "code",
            CellKind::Markdown => "markdown",
            CellKind::Group => "group",
        })
    }
}

/// One piece of execution output attached to a cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Output {
    Stream { text: String },
    Value { repr: String },
    Error { kind: String, message: String },
}

impl Output {
    pub fn text(&self) -> &str {
        match self {
            Output::Stream { text } => text,
            Output::Value { repr } => repr,
            Output::Error { message, .. } => message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub id: CellId,
    pub kind: CellKind,
    pub source: String,
    pub acl: CellAcl,
    pub exec_count: u64,
    pub outputs: Vec<Output>,
    /// Bumped by every accepted splice; splices must name the version they
    /// were computed against.
    pub text_version: u64,
    pub group: Option<ParallelGroup>,
}

impl Cell {
    pub fn new_text(id: CellId, kind: CellKind, acl: CellAcl) -> Self {
        Cell {
            id,
            kind,
            source: String::new(),
            acl,
            exec_count: 0,
            outputs: Vec::new(),
            text_version: 0,
            group: None,
        }
    }

    pub fn is_group(&self) -> bool {
        self.kind == CellKind::Group
    }

    /// Code-point counts of each source line; an empty source has one empty line.
    pub fn line_shape(&self) -> Vec<usize> {
        line_shape(&self.source)
    }
}

pub fn line_shape(source: &str) -> Vec<usize> {
    source.split('\n').map(|l| l.chars().count()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelGroup {
    pub name: String,
    pub tabs: Vec<Tab>,
    pub main_tab: Option<TabId>,
}

impl ParallelGroup {
    pub fn tab(&self, id: &TabId) -> Option<&Tab> {
        self.tabs.iter().find(|t| &t.id == id)
    }

    pub fn main(&self) -> Option<&Tab> {
        self.main_tab.as_ref().and_then(|id| self.tab(id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tab {
    pub id: TabId,
    pub label: String,
    pub cells: Vec<Cell>,
}

/// Next numeric suffix to hand out for cell (`c<n>`) and tab (`t<n>`) ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdCounters {
    pub cell: u64,
    pub tab: u64,
}

impl Default for IdCounters {
    fn default() -> Self {
        IdCounters { cell: 1, tab: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notebook {
    pub version: u32,
    pub cells: Vec<Cell>,
    /// Template copied into every newly inserted cell ("lock future cells").
    pub default_cell_acl: CellAcl,
    pub variable_acl: VariableAclTable,
    pub next_ids: IdCounters,
}

impl Default for Notebook {
    fn default() -> Self {
        Self::new()
    }
}

/// Where a tab lives: the group cell id plus the tab id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TabRef {
    pub group: CellId,
    pub tab: TabId,
}

/// An insertion point: top level when `tab` is absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tab: Option<TabRef>,
}

impl Position {
    pub fn top(index: usize) -> Self {
        Position { index, tab: None }
    }

    pub fn in_tab(group: CellId, tab: TabId, index: usize) -> Self {
        Position {
            index,
            tab: Some(TabRef { group, tab }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StructuralEdit {
    InsertCell {
        position: Position,
        kind: CellKind,
    },
    DeleteCell {
        id: CellId,
    },
    MoveCell {
        id: CellId,
        position: Position,
    },
    SpliceText {
        id: CellId,
        offset: usize,
        delete_len: usize,
        insert_text: String,
        base_version: u64,
    },
    IndentToGroup {
        id: CellId,
        group_name: String,
    },
    AddTab {
        group_id: CellId,
        label: String,
    },
    RemoveTab {
        group_id: CellId,
        tab_id: TabId,
    },
    SetMainTab {
        group_id: CellId,
        tab_id: TabId,
    },
    Unindent {
        group_id: CellId,
    },
}

impl StructuralEdit {
    /// The cell whose edit permission governs this edit, if any.
    pub fn subject(&self) -> Option<&CellId> {
        match self {
            StructuralEdit::InsertCell { position, .. } => position.tab.as_ref().map(|t| &t.group),
            StructuralEdit::DeleteCell { id }
            | StructuralEdit::MoveCell { id, .. }
            | StructuralEdit::SpliceText { id, .. }
            | StructuralEdit::IndentToGroup { id, .. } => Some(id),
            StructuralEdit::AddTab { group_id, .. }
            | StructuralEdit::RemoveTab { group_id, .. }
            | StructuralEdit::SetMainTab { group_id, .. }
            | StructuralEdit::Unindent { group_id } => Some(group_id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("UNKNOWN_ID")]
    UnknownId,
    #[error("STALE_VERSION")]
    StaleVersion,
    #[error("NO_MAIN_TAB")]
    NoMainTab,
    #[error("NESTING_FORBIDDEN")]
    NestingForbidden,
    #[error("INVALID_RANGE")]
    InvalidRange,
    #[error("INVALID_KIND")]
    InvalidKind,
    #[error("INVALID_NAME")]
    InvalidName,
    #[error("LAST_TAB")]
    LastTab,
}

impl StructureError {
    pub fn code(&self) -> &'static str {
        match self {
            StructureError::UnknownId => "UNKNOWN_ID",
            StructureError::StaleVersion => "STALE_VERSION",
            StructureError::NoMainTab => "NO_MAIN_TAB",
            StructureError::NestingForbidden => "NESTING_FORBIDDEN",
            StructureError::InvalidRange => "INVALID_RANGE",
            StructureError::InvalidKind => "INVALID_KIND",
            StructureError::InvalidName => "INVALID_NAME",
            StructureError::LastTab => "LAST_TAB",
        }
    }
}

/// Facts produced by an edit that the runtime side needs to mirror.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOutcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_cell: Option<CellId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_tab: Option<TabId>,
    /// Final (possibly suffixed) name of a newly created group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_name: Option<String>,
    /// Group dissolved by this edit (unindent or deletion).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed_group: Option<String>,
}

/// Where a cell sits in the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Top(usize),
    InTab { group: usize, tab: usize, index: usize },
}

impl Notebook {
    pub fn new() -> Self {
        Notebook {
            version: FORMAT_VERSION,
            cells: Vec::new(),
            default_cell_acl: CellAcl::everyone(),
            variable_acl: VariableAclTable::default(),
            next_ids: IdCounters::default(),
        }
    }

    /// Equality ignoring id counters.
    pub fn same_content(&self, other: &Notebook) -> bool {
        self.version == other.version
            && self.cells == other.cells
            && self.default_cell_acl == other.default_cell_acl
            && self.variable_acl == other.variable_acl
    }

    pub fn locate(&self, id: &CellId) -> Option<Location> {
        for (i, cell) in self.cells.iter().enumerate() {
            if &cell.id == id {
                return Some(Location::Top(i));
            }
            if let Some(group) = &cell.group {
                for (t, tab) in group.tabs.iter().enumerate() {
                    if let Some(index) = tab.cells.iter().position(|c| &c.id == id) {
                        return Some(Location::InTab {
                            group: i,
                            tab: t,
                            index,
                        });
                    }
                }
            }
        }
        None
    }

    pub fn cell(&self, id: &CellId) -> Option<&Cell> {
        match self.locate(id)? {
            Location::Top(i) => self.cells.get(i),
            Location::InTab { group, tab, index } => self.cells[group].group.as_ref()?.tabs[tab].cells.get(index),
        }
    }

    pub fn cell_mut(&mut self, id: &CellId) -> Option<&mut Cell> {
        match self.locate(id)? {
            Location::Top(i) => self.cells.get_mut(i),
            Location::InTab { group, tab, index } => self.cells[group].group.as_mut()?.tabs[tab].cells.get_mut(index),
        }
    }

    /// The group cell and tab enclosing `id`, when it lives inside a tab.
    pub fn enclosing_tab(&self, id: &CellId) -> Option<(&Cell, &Tab)> {
        match self.locate(id)? {
            Location::Top(_) => None,
            Location::InTab { group, tab, .. } => {
                let g = &self.cells[group];
                Some((g, &g.group.as_ref()?.tabs[tab]))
            }
        }
    }

    pub fn group_cell(&self, id: &CellId) -> Option<&Cell> {
        self.cells.iter().find(|c| &c.id == id && c.is_group())
    }

    pub fn group_by_name(&self, name: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.group.as_ref().is_some_and(|g| g.name == name))
    }

    pub fn group_names(&self) -> BTreeSet<String> {
        self.cells
            .iter()
            .filter_map(|c| c.group.as_ref().map(|g| g.name.clone()))
            .collect()
    }

    /// All cells in document order, descending into tabs.
    pub fn all_cells(&self) -> Vec<&Cell> {
        let mut out = Vec::new();
        for cell in &self.cells {
            out.push(cell);
            if let Some(group) = &cell.group {
                for tab in &group.tabs {
                    out.extend(tab.cells.iter());
                }
            }
        }
        out
    }

    fn fresh_cell_id(&mut self) -> CellId {
        let id = CellId(format!("c{}", self.next_ids.cell));
        self.next_ids.cell += 1;
        id
    }

    fn fresh_tab_id(&mut self) -> TabId {
        let id = TabId(format!("t{}", self.next_ids.tab));
        self.next_ids.tab += 1;
        id
    }

    fn container_len(&self, pos: &Position) -> Result<usize, StructureError> {
        match &pos.tab {
            None => Ok(self.cells.len()),
            Some(r) => {
                let group = self
                    .group_cell(&r.group)
                    .and_then(|c| c.group.as_ref())
                    .ok_or(StructureError::UnknownId)?;
                group
                    .tab(&r.tab)
                    .map(|t| t.cells.len())
                    .ok_or(StructureError::UnknownId)
            }
        }
    }

    fn container_mut(&mut self, pos: &Position) -> &mut Vec<Cell> {
        match &pos.tab {
            None => &mut self.cells,
            Some(r) => {
                let cell = self
                    .cells
                    .iter_mut()
                    .find(|c| c.id == r.group)
                    .expect("container checked");
                let group = cell.group.as_mut().expect("container checked");
                &mut group
                    .tabs
                    .iter_mut()
                    .find(|t| t.id == r.tab)
                    .expect("container checked")
                    .cells
            }
        }
    }

    fn group_mut(&mut self, id: &CellId) -> Result<&mut ParallelGroup, StructureError> {
        self.cells
            .iter_mut()
            .find(|c| &c.id == id)
            .and_then(|c| c.group.as_mut())
            .ok_or(StructureError::UnknownId)
    }

    fn unique_group_name(&self, wanted: &str) -> String {
        let taken = self.group_names();
        if !taken.contains(wanted) {
            return wanted.to_string();
        }
        (2..)
            .map(|n| format!("{wanted}_{n}"))
            .find(|candidate| !taken.contains(candidate))
            .expect("unbounded suffix search")
    }

    /// Applies `edit` in place. On error the notebook is left untouched.
    pub fn apply_edit(&mut self, edit: &StructuralEdit) -> Result<EditOutcome, StructureError> {
        let mut outcome = EditOutcome::default();
        match edit {
            StructuralEdit::InsertCell { position, kind } => {
                if *kind == CellKind::Group {
                    return Err(StructureError::InvalidKind);
                }
                if position.index > self.container_len(position)? {
                    return Err(StructureError::InvalidRange);
                }
                let id = self.fresh_cell_id();
                let cell = Cell::new_text(id.clone(), *kind, self.default_cell_acl.clone());
                self.container_mut(position).insert(position.index, cell);
                outcome.created_cell = Some(id);
            }
            StructuralEdit::DeleteCell { id } => {
                let loc = self.locate(id).ok_or(StructureError::UnknownId)?;
                let removed = self.remove_at(loc);
                if let Some(group) = removed.group {
                    outcome.removed_group = Some(group.name);
                }
            }
            StructuralEdit::MoveCell { id, position } => {
                let loc = self.locate(id).ok_or(StructureError::UnknownId)?;
                let cell = self.cell(id).expect("located");
                if cell.is_group() && position.tab.is_some() {
                    return Err(StructureError::NestingForbidden);
                }
                if position.tab.as_ref().is_some_and(|t| &t.group == id) {
                    return Err(StructureError::NestingForbidden);
                }
                let len = self.container_len(position)?;
                let same_container = match (&loc, &position.tab) {
                    (Location::Top(_), None) => true,
                    (Location::InTab { group, tab, .. }, Some(r)) => {
                        let g = &self.cells[*group];
                        g.id == r.group && g.group.as_ref().expect("group").tabs[*tab].id == r.tab
                    }
                    _ => false,
                };
                let max = if same_container { len - 1 } else { len };
                if position.index > max {
                    return Err(StructureError::InvalidRange);
                }
                let cell = self.remove_at(loc);
                self.container_mut(position).insert(position.index, cell);
            }
            StructuralEdit::SpliceText {
                id,
                offset,
                delete_len,
                insert_text,
                base_version,
            } => {
                let cell = self.cell_mut(id).ok_or(StructureError::UnknownId)?;
                if cell.is_group() {
                    return Err(StructureError::InvalidKind);
                }
                if cell.text_version != *base_version {
                    return Err(StructureError::StaleVersion);
                }
                cell.source = splice(&cell.source, *offset, *delete_len, insert_text)?;
                cell.text_version += 1;
            }
            StructuralEdit::IndentToGroup { id, group_name } => {
                let loc = self.locate(id).ok_or(StructureError::UnknownId)?;
                let index = match loc {
                    Location::Top(i) => i,
                    Location::InTab { .. } => return Err(StructureError::NestingForbidden),
                };
                match self.cells[index].kind {
                    CellKind::Code => {}
                    CellKind::Group => return Err(StructureError::NestingForbidden),
                    CellKind::Markdown => return Err(StructureError::InvalidKind),
                }
                if !is_identifier(group_name) {
                    return Err(StructureError::InvalidName);
                }
                let name = self.unique_group_name(group_name);
                let group_id = self.fresh_cell_id();
                let tab_id = self.fresh_tab_id();
                let original = self.cells.remove(index);
                let acl = original.acl.clone();
                let mut group_cell = Cell::new_text(group_id.clone(), CellKind::Group, acl);
                group_cell.group = Some(ParallelGroup {
                    name: name.clone(),
                    tabs: vec![Tab {
                        id: tab_id.clone(),
                        label: "main".to_string(),
                        cells: vec![original],
                    }],
                    main_tab: Some(tab_id.clone()),
                });
                self.cells.insert(index, group_cell);
                outcome.created_cell = Some(group_id);
                outcome.created_tab = Some(tab_id);
                outcome.group_name = Some(name);
            }
            StructuralEdit::AddTab { group_id, label } => {
                self.group_mut(group_id)?;
                let tab_id = self.fresh_tab_id();
                self.group_mut(group_id)?.tabs.push(Tab {
                    id: tab_id.clone(),
                    label: label.clone(),
                    cells: Vec::new(),
                });
                outcome.created_tab = Some(tab_id);
            }
            StructuralEdit::RemoveTab { group_id, tab_id } => {
                let group = self.group_mut(group_id)?;
                let index = group
                    .tabs
                    .iter()
                    .position(|t| &t.id == tab_id)
                    .ok_or(StructureError::UnknownId)?;
                if group.tabs.len() == 1 {
                    return Err(StructureError::LastTab);
                }
                group.tabs.remove(index);
                if group.main_tab.as_ref() == Some(tab_id) {
                    group.main_tab = None;
                }
            }
            StructuralEdit::SetMainTab { group_id, tab_id } => {
                let group = self.group_mut(group_id)?;
                if group.tab(tab_id).is_none() {
                    return Err(StructureError::UnknownId);
                }
                group.main_tab = Some(tab_id.clone());
            }
            StructuralEdit::Unindent { group_id } => {
                let index = self
                    .cells
                    .iter()
                    .position(|c| &c.id == group_id && c.is_group())
                    .ok_or(StructureError::UnknownId)?;
                let group = self.cells[index].group.as_ref().expect("group cell");
                if group.main().is_none() {
                    return Err(StructureError::NoMainTab);
                }
                let group_cell = self.cells.remove(index);
                let group = group_cell.group.expect("group cell");
                let main_id = group.main_tab.clone().expect("checked");
                let main = group.tabs.into_iter().find(|t| t.id == main_id).expect("checked");
                for (offset, cell) in main.cells.into_iter().enumerate() {
                    self.cells.insert(index + offset, cell);
                }
                outcome.removed_group = Some(group.name);
            }
        }
        Ok(outcome)
    }

    fn remove_at(&mut self, loc: Location) -> Cell {
        match loc {
            Location::Top(i) => self.cells.remove(i),
            Location::InTab { group, tab, index } => self.cells[group].group.as_mut().expect("group").tabs[tab]
                .cells
                .remove(index),
        }
    }
}

/// Replaces `delete_len` code points at `offset` with `insert`.
pub fn splice(source: &str, offset: usize, delete_len: usize, insert: &str) -> Result<String, StructureError> {
    let len = source.chars().count();
    let end = offset.checked_add(delete_len).ok_or(StructureError::InvalidRange)?;
    if offset > len || end > len {
        return Err(StructureError::InvalidRange);
    }
    let byte_at = |cp: usize| source.char_indices().nth(cp).map(|(b, _)| b).unwrap_or(source.len());
    let (start_b, end_b) = (byte_at(offset), byte_at(end));
    let mut out = String::with_capacity(source.len() + insert.len());
    out.push_str(&source[..start_b]);
    out.push_str(insert);
    out.push_str(&source[end_b..]);
    Ok(out)
}

/// Functional form of [`Notebook::apply_edit`].
pub fn apply_structural_edit(nb: &Notebook, edit: &StructuralEdit) -> Result<Notebook, StructureError> {
    let mut next = nb.clone();
    next.apply_edit(edit)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateCellId(CellId),
    DuplicateTabId(TabId),
    DuplicateGroupName(String),
    InvalidGroupName(String),
    DanglingMainTab {
        group: CellId,
        tab: TabId,
    },
    EmptyGroup(CellId),
    NestedGroup(CellId),
    /// kind=group, group payload and empty source disagree.
    GroupShape(CellId),
    /// `None` cell means the notebook's default template.
    EditWithoutRead {
        cell: Option<CellId>,
        user: Option<UserId>,
    },
    WriteWithoutRead {
        variable: String,
        user: Option<UserId>,
    },
    InvalidVariableName(String),
    StaleIdCounter,
    UnsupportedVersion(u32),
}

pub fn validate(nb: &Notebook) -> Vec<Violation> {
    let mut out = Vec::new();
    if nb.version != FORMAT_VERSION {
        out.push(Violation::UnsupportedVersion(nb.version));
    }
    check_cell_acl(&nb.default_cell_acl, None, &mut out);
    for (name, acl) in &nb.variable_acl.per_variable {
        if !is_identifier(name) {
            out.push(Violation::InvalidVariableName(name.clone()));
        }
        if acl.default_write && !acl.default_read {
            out.push(Violation::WriteWithoutRead {
                variable: name.clone(),
                user: None,
            });
        }
        for (user, perm) in &acl.per_user {
            if perm.write && !perm.read {
                out.push(Violation::WriteWithoutRead {
                    variable: name.clone(),
                    user: Some(user.clone()),
                });
            }
        }
    }

    let mut cell_ids = BTreeSet::new();
    let mut tab_ids = BTreeSet::new();
    let mut group_names = BTreeSet::new();
    let mut max_cell = 0u64;
    let mut max_tab = 0u64;
    let mut visit = |cell: &Cell, nested: bool, out: &mut Vec<Violation>| {
        if !cell_ids.insert(cell.id.clone()) {
            out.push(Violation::DuplicateCellId(cell.id.clone()));
        }
        if let Some(n) = numeric_suffix(&cell.id.0, 'c') {
            max_cell = max_cell.max(n);
        }
        check_cell_acl(&cell.acl, Some(&cell.id), out);
        let shape_ok = (cell.kind == CellKind::Group) == cell.group.is_some()
            && (cell.kind != CellKind::Group
                || (cell.source.is_empty() && cell.outputs.is_empty() && cell.exec_count == 0));
        if !shape_ok {
            out.push(Violation::GroupShape(cell.id.clone()));
        }
        if nested && cell.is_group() {
            out.push(Violation::NestedGroup(cell.id.clone()));
        }
    };
    for cell in &nb.cells {
        visit(cell, false, &mut out);
        let Some(group) = &cell.group else { continue };
        if !is_identifier(&group.name) {
            out.push(Violation::InvalidGroupName(group.name.clone()));
        }
        if !group_names.insert(group.name.clone()) {
            out.push(Violation::DuplicateGroupName(group.name.clone()));
        }
        if group.tabs.is_empty() {
            out.push(Violation::EmptyGroup(cell.id.clone()));
        }
        if let Some(main) = &group.main_tab {
            if group.tab(main).is_none() {
                out.push(Violation::DanglingMainTab {
                    group: cell.id.clone(),
                    tab: main.clone(),
                });
            }
        }
        for tab in &group.tabs {
            if !tab_ids.insert(tab.id.clone()) {
                out.push(Violation::DuplicateTabId(tab.id.clone()));
            }
            if let Some(n) = numeric_suffix(&tab.id.0, 't') {
                max_tab = max_tab.max(n);
            }
            for inner in &tab.cells {
                visit(inner, true, &mut out);
            }
        }
    }
    if nb.next_ids.cell <= max_cell || nb.next_ids.tab <= max_tab {
        out.push(Violation::StaleIdCounter);
    }
    out
}

fn check_cell_acl(acl: &CellAcl, cell: Option<&CellId>, out: &mut Vec<Violation>) {
    if acl.default_edit && !acl.default_read {
        out.push(Violation::EditWithoutRead {
            cell: cell.cloned(),
            user: None,
        });
    }
    for (user, perm) in &acl.per_user {
        if perm.edit && !perm.read {
            out.push(Violation::EditWithoutRead {
                cell: cell.cloned(),
                user: Some(user.clone()),
            });
        }
    }
}

fn numeric_suffix(id: &str, prefix: char) -> Option<u64> {
    id.strip_prefix(prefix)?.parse().ok()
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("format error at {path}: {message}")]
pub struct FormatError {
    pub path: String,
    pub message: String,
}

#[derive(Serialize)]
struct NotebookRepr {
    version: u32,
    default_cell_acl: CellAcl,
    variable_acl: VariableAclTable,
    cells: Vec<CellRepr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    next_ids: Option<IdCounters>,
}

/// Read side: cells stay raw so that each can be decoded with a precise path.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NotebookFile {
    version: u32,
    default_cell_acl: CellAcl,
    variable_acl: VariableAclTable,
    cells: Vec<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next_ids: Option<IdCounters>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CellRepr {
    Code(TextCellRepr),
    Markdown(TextCellRepr),
    Group(GroupCellRepr<TabRepr>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupCellRepr<T> {
    id: CellId,
    acl: CellAcl,
    name: String,
    main_tab: Option<TabId>,
    tabs: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextCellRepr {
    id: CellId,
    source: String,
    acl: CellAcl,
    exec_count: u64,
    #[serde(default)]
    outputs: Vec<Output>,
    #[serde(default)]
    text_version: u64,
}

#[derive(Serialize)]
struct TabRepr {
    id: TabId,
    label: String,
    cells: Vec<CellRepr>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TabFile {
    id: TabId,
    label: String,
    cells: Vec<serde_json::Value>,
}

impl From<&Cell> for CellRepr {
    fn from(cell: &Cell) -> Self {
        match &cell.group {
            Some(group) => CellRepr::Group(GroupCellRepr {
                id: cell.id.clone(),
                acl: cell.acl.clone(),
                name: group.name.clone(),
                main_tab: group.main_tab.clone(),
                tabs: group
                    .tabs
                    .iter()
                    .map(|t| TabRepr {
                        id: t.id.clone(),
                        label: t.label.clone(),
                        cells: t.cells.iter().map(CellRepr::from).collect(),
                    })
                    .collect(),
            }),
            None => {
                let text = TextCellRepr {
                    id: cell.id.clone(),
                    source: cell.source.clone(),
                    acl: cell.acl.clone(),
                    exec_count: cell.exec_count,
                    outputs: cell.outputs.clone(),
                    text_version: cell.text_version,
                };
                if cell.kind == CellKind::Markdown {
                    CellRepr::Markdown(text)
                } else {
                    CellRepr::Code(text)
                }
            }
        }
    }
}

fn decode_at<T: serde::de::DeserializeOwned>(value: serde_json::Value, prefix: &str) -> Result<T, FormatError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        FormatError {
            path: if inner == "." {
                prefix.to_string()
            } else {
                format!("{prefix}.{inner}")
            },
            message: e.inner().to_string(),
        }
    })
}

fn decode_cell(mut value: serde_json::Value, path: &str) -> Result<Cell, FormatError> {
    let kind = value
        .as_object_mut()
        .and_then(|o| o.remove("kind"))
        .ok_or_else(|| FormatError {
            path: format!("{path}.kind"),
            message: "missing field `kind`".to_string(),
        })?;
    let kind: CellKind = decode_at(kind, &format!("{path}.kind"))?;
    if kind == CellKind::Group {
        let repr: GroupCellRepr<TabFile> = decode_at(value, path)?;
        let mut tabs = Vec::with_capacity(repr.tabs.len());
        for (t, tab) in repr.tabs.into_iter().enumerate() {
            let mut cells = Vec::with_capacity(tab.cells.len());
            for (i, raw) in tab.cells.into_iter().enumerate() {
                cells.push(decode_cell(raw, &format!("{path}.tabs[{t}].cells[{i}]"))?);
            }
            tabs.push(Tab {
                id: tab.id,
                label: tab.label,
                cells,
            });
        }
        let mut cell = Cell::new_text(repr.id, CellKind::Group, repr.acl);
        cell.group = Some(ParallelGroup {
            name: repr.name,
            main_tab: repr.main_tab,
            tabs,
        });
        return Ok(cell);
    }
    let t: TextCellRepr = decode_at(value, path)?;
    Ok(Cell {
        id: t.id,
        kind,
        source: t.source,
        acl: t.acl,
        exec_count: t.exec_count,
        outputs: t.outputs,
        text_version: t.text_version,
        group: None,
    })
}

impl Cell {
    /// The cell as it appears in a notebook file, tabs and all.
    pub fn to_json_value(&self) -> serde_json::Value {
        canonicalize(serde_json::to_value(CellRepr::from(self)).expect("cell serializes"))
    }
}

impl Notebook {
    pub fn to_json_value(&self) -> serde_json::Value {
        let repr = NotebookRepr {
            version: self.version,
            default_cell_acl: self.default_cell_acl.clone(),
            variable_acl: self.variable_acl.clone(),
            cells: self.cells.iter().map(CellRepr::from).collect(),
            next_ids: Some(self.next_ids),
        };
        canonicalize(serde_json::to_value(repr).expect("notebook serializes"))
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Notebook, FormatError> {
        let file: NotebookFile = serde_path_to_error::deserialize(value).map_err(|e| FormatError {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        notebook_from_file(file)
    }
}

fn notebook_from_file(repr: NotebookFile) -> Result<Notebook, FormatError> {
    if repr.version != FORMAT_VERSION {
        return Err(FormatError {
            path: "version".to_string(),
            message: format!("unsupported version {}", repr.version),
        });
    }
    let mut cells = Vec::with_capacity(repr.cells.len());
    for (i, raw) in repr.cells.into_iter().enumerate() {
        cells.push(decode_cell(raw, &format!("cells[{i}]"))?);
    }
    let mut nb = Notebook {
        version: repr.version,
        cells,
        default_cell_acl: repr.default_cell_acl,
        variable_acl: repr.variable_acl,
        next_ids: IdCounters::default(),
    };
    // Stored counters never go below the ids in use, or fresh ids would
    // collide.
    let derived = derive_counters(&nb);
    nb.next_ids = match repr.next_ids {
        Some(ids) => IdCounters {
            cell: ids.cell.max(derived.cell),
            tab: ids.tab.max(derived.tab),
        },
        None => derived,
    };
    match validate(&nb).first() {
        Some(v) => Err(describe(&nb, v)),
        None => Ok(nb),
    }
}

/// Where a violation sits in the file, and what is wrong.
fn describe(nb: &Notebook, v: &Violation) -> FormatError {
    let path_of = |id: &CellId| {
        for (i, cell) in nb.cells.iter().enumerate() {
            if &cell.id == id {
                return format!("cells[{i}]");
            }
            for (t, tab) in cell.group.iter().flat_map(|g| g.tabs.iter()).enumerate() {
                if let Some(j) = tab.cells.iter().position(|c| &c.id == id) {
                    return format!("cells[{i}].tabs[{t}].cells[{j}]");
                }
            }
        }
        "cells".to_string()
    };
    let (path, message) = match v {
        Violation::DuplicateCellId(id) => (format!("{}.id", path_of(id)), format!("duplicate cell id {id}")),
        Violation::DuplicateTabId(id) => ("cells".into(), format!("duplicate tab id {id}")),
        Violation::DuplicateGroupName(n) => ("cells".into(), format!("duplicate group name {n}")),
        Violation::InvalidGroupName(n) => ("cells".into(), format!("invalid group name {n:?}")),
        Violation::DanglingMainTab { group, tab } => (format!("{}.main_tab", path_of(group)), format!("no tab {tab}")),
        Violation::EmptyGroup(id) => (format!("{}.tabs", path_of(id)), "a group needs at least one tab".into()),
        Violation::NestedGroup(id) => (path_of(id), "groups cannot be nested".into()),
        Violation::GroupShape(id) => (path_of(id), "group cells carry no source or outputs".into()),
        Violation::EditWithoutRead { cell, user } => (
            cell.as_ref()
                .map_or("default_cell_acl".into(), |c| format!("{}.acl", path_of(c))),
            format!("edit without read for {}", user.as_deref().unwrap_or("default")),
        ),
        Violation::WriteWithoutRead { variable, user } => (
            format!("variable_acl.{variable}"),
            format!("write without read for {}", user.as_deref().unwrap_or("default")),
        ),
        Violation::InvalidVariableName(n) => (format!("variable_acl.{n}"), "not an identifier".into()),
        Violation::StaleIdCounter => ("next_ids".into(), "counter below an id in use".into()),
        Violation::UnsupportedVersion(n) => ("version".into(), format!("unsupported version {n}")),
    };
    FormatError { path, message }
}

fn derive_counters(nb: &Notebook) -> IdCounters {
    let mut ids = IdCounters::default();
    for cell in nb.all_cells() {
        if let Some(n) = numeric_suffix(&cell.id.0, 'c') {
            ids.cell = ids.cell.max(n + 1);
        }
        if let Some(group) = &cell.group {
            for tab in &group.tabs {
                if let Some(n) = numeric_suffix(&tab.id.0, 't') {
                    ids.tab = ids.tab.max(n + 1);
                }
            }
        }
    }
    ids
}

/// Rebuilds every object with lexicographically sorted keys.
pub(crate) fn canonicalize(value: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

/// Serializes to the canonical `.pnb.json` form: sorted keys, two-space
/// indentation, trailing newline.
pub fn save(nb: &Notebook) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&nb.to_json_value()).expect("notebook serializes");
    bytes.push(b'\n');
    bytes
}

pub fn load(bytes: &[u8]) -> Result<Notebook, FormatError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let file: NotebookFile = serde_path_to_error::deserialize(&mut de).map_err(|e| FormatError {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| FormatError {
        path: ".".to_string(),
        message: e.to_string(),
    })?;
    notebook_from_file(file)
}
