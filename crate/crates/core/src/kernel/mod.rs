//! The NBScript runtime: one global environment shared by the whole
//! notebook, plus an isolated environment for every tab of every parallel
//! group.
//!
//! A tab environment is a private snapshot of global taken when the tab is
//! created (or synced) with an overlay of the tab's own bindings on top.
//! Nothing a tab does can reach a global object, and global changes are not
//! visible to a tab until it syncs. Marking a tab as main lets the rest of
//! the notebook read its values through the group handle (`_plel.x`), and
//! merging copies its overlay back into global.

mod builtins;
mod fixtures;
mod heap;
mod interp;
mod value;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{parse, ModuleAst, ParseError, SourceSpan};
use crate::model::{Output, TabId};

pub use builtins::{
    ARRAY_METHODS, BUILTINS, MAPPING_METHODS, MODULES, MODULE_FUNCTIONS, MUTATING_METHODS, TABLE_METHODS, TEXT_METHODS,
};
pub use fixtures::{FixtureError, Fixtures};
pub use value::{Table, Value};

use heap::{Heap, Val};

/// Where code runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum ScopeRef {
    Global,
    Tab { group: String, tab: TabId },
}

impl ScopeRef {
    pub fn tab(group: impl Into<String>, tab: TabId) -> Self {
        ScopeRef::Tab {
            group: group.into(),
            tab,
        }
    }
}

impl fmt::Display for ScopeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScopeRef::Global => f.write_str("global"),
            ScopeRef::Tab { group, tab } => write!(f, "{group}/{tab}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    NameError,
    TypeError,
    IndexError,
    KeyError,
    ValueError,
    ZeroDivision,
    Overflow,
    ImportError,
    StepLimit,
    #[serde(rename = "NO_MAIN_TAB")]
    NoMainTab,
    #[serde(rename = "UNKNOWN_SCOPE")]
    UnknownScope,
    #[serde(rename = "DUPLICATE_TAB")]
    DuplicateTab,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::NameError => "NameError",
            ErrorKind::TypeError => "TypeError",
            ErrorKind::IndexError => "IndexError",
            ErrorKind::KeyError => "KeyError",
            ErrorKind::ValueError => "ValueError",
            ErrorKind::ZeroDivision => "ZeroDivision",
            ErrorKind::Overflow => "Overflow",
            ErrorKind::ImportError => "ImportError",
            ErrorKind::StepLimit => "StepLimit",
            ErrorKind::NoMainTab => "NO_MAIN_TAB",
            ErrorKind::UnknownScope => "UNKNOWN_SCOPE",
            ErrorKind::DuplicateTab => "DUPLICATE_TAB",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind}: {message}")]
pub struct RuntimeError {
    pub kind: ErrorKind,
    pub message: String,
    pub span: Option<SourceSpan>,
}

impl RuntimeError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        RuntimeError {
            kind,
            message: message.into(),
            span: None,
        }
    }

    pub(crate) fn at(mut self, span: SourceSpan) -> Self {
        self.span.get_or_insert(span);
        self
    }
}

/// What one execution produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecResult {
    pub outputs: Vec<Output>,
    pub error: Option<RuntimeError>,
    /// Names in the executed scope whose binding or reachable state changed.
    pub changed: BTreeSet<String>,
}

impl ExecResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// All output text concatenated, as a notebook would show it.
    pub fn text(&self) -> String {
        render_outputs(&self.outputs)
    }
}

/// Renders outputs the way they appear under a cell.
pub fn render_outputs(outputs: &[Output]) -> String {
    let mut text = String::new();
    for out in outputs {
        match out {
            Output::Stream { text: t } => text.push_str(t),
            Output::Value { repr } => {
                text.push_str(repr);
                text.push('\n');
            }
            Output::Error { kind, message } => {
                text.push_str(&format!("{kind}: {message}\n"));
            }
        }
    }
    text
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableInfo {
    pub name: String,
    pub type_tag: String,
    pub summary: String,
}

#[derive(Debug, Clone, Default)]
struct TabEnv {
    base: BTreeMap<String, Val>,
    /// Local bindings; `None` records a `del` of a base name.
    overlay: BTreeMap<String, Option<Val>>,
}

impl TabEnv {
    fn resolve(&self, name: &str) -> Option<&Val> {
        match self.overlay.get(name) {
            Some(binding) => binding.as_ref(),
            None => self.base.get(name),
        }
    }
}

/// Deep-equality view of a kernel, for comparing replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSnapshot {
    pub global: BTreeMap<String, Value>,
    pub tabs: BTreeMap<(String, TabId), TabSnapshot>,
    pub groups: BTreeMap<String, Option<TabId>>,
    pub exec_counter: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabSnapshot {
    pub base: BTreeMap<String, Value>,
    pub overlay: BTreeMap<String, Option<Value>>,
}

pub const DEFAULT_STEP_LIMIT: u64 = 2_000_000;
pub const DEFAULT_RNG_SEED: u64 = 0x5eed;

#[derive(Debug, Clone)]
pub struct Kernel {
    heap: Heap,
    global: BTreeMap<String, Val>,
    tabs: BTreeMap<(String, TabId), TabEnv>,
    /// Registered groups and their main tab.
    groups: BTreeMap<String, Option<TabId>>,
    exec_counter: u64,
    rng_seed: u64,
    step_limit: u64,
    fixtures: Fixtures,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::new()
    }
}

pub fn handle_name(group: &str) -> String {
    format!("_{group}")
}

impl Kernel {
    pub fn new() -> Self {
        Kernel {
            heap: Heap::default(),
            global: BTreeMap::new(),
            tabs: BTreeMap::new(),
            groups: BTreeMap::new(),
            exec_counter: 0,
            rng_seed: DEFAULT_RNG_SEED,
            step_limit: DEFAULT_STEP_LIMIT,
            fixtures: Fixtures::default(),
        }
    }

    pub fn with_fixtures(fixtures: Fixtures) -> Self {
        Kernel {
            fixtures,
            ..Kernel::new()
        }
    }

    pub fn fixtures(&self) -> &Fixtures {
        &self.fixtures
    }

    pub fn set_step_limit(&mut self, limit: u64) {
        self.step_limit = limit;
    }

    pub fn exec_counter(&self) -> u64 {
        self.exec_counter
    }

    /// Parses and runs `source`.
    pub fn execute_source(&mut self, scope: &ScopeRef, source: &str) -> Result<ExecResult, ParseError> {
        let ast = parse(source)?;
        Ok(self.execute(scope, &ast))
    }

    pub fn execute(&mut self, scope: &ScopeRef, ast: &ModuleAst) -> ExecResult {
        if let ScopeRef::Tab { group, tab } = scope {
            if !self.tabs.contains_key(&(group.clone(), tab.clone())) {
                return ExecResult {
                    error: Some(RuntimeError::new(ErrorKind::UnknownScope, format!("no scope {scope}"))),
                    ..ExecResult::default()
                };
            }
        }
        self.exec_counter += 1;
        self.heap.next_epoch();
        let mut result = interp::run(self, scope, ast);
        if let ScopeRef::Tab { group, tab } = scope {
            self.promote_dirty(&(group.clone(), tab.clone()), &mut result.changed);
        }
        if self.heap.should_collect() {
            self.collect_garbage();
        }
        result
    }

    /// Moves base bindings that reach objects mutated in this epoch into the
    /// overlay, so local changes survive a sync and take part in a merge.
    fn promote_dirty(&mut self, key: &(String, TabId), changed: &mut BTreeSet<String>) {
        let Some(env) = self.tabs.get(key) else {
            return;
        };
        let promoted: Vec<(String, Val)> = env
            .base
            .iter()
            .filter(|(name, val)| !env.overlay.contains_key(*name) && self.heap.reaches_dirty(val))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect();
        let env = self.tabs.get_mut(key).expect("checked above");
        for (name, val) in promoted {
            changed.insert(name.clone());
            env.overlay.insert(name, Some(val));
        }
    }

    fn collect_garbage(&mut self) {
        let roots = self.global.values_mut().chain(
            self.tabs
                .values_mut()
                .flat_map(|env| env.base.values_mut().chain(env.overlay.values_mut().flatten())),
        );
        self.heap.collect(roots);
    }

    /// Registers a group, binding its handle `_name` in global. Registering
    /// an existing group is a no-op.
    pub fn register_group(&mut self, group: &str) {
        if self.groups.contains_key(group) {
            return;
        }
        self.groups.insert(group.to_string(), None);
        self.global.insert(handle_name(group), Val::Handle(group.to_string()));
    }

    /// Forgets a group, its handle and all of its tab environments.
    pub fn unregister_group(&mut self, group: &str) {
        self.groups.remove(group);
        if matches!(self.global.get(&handle_name(group)), Some(Val::Handle(_))) {
            self.global.remove(&handle_name(group));
        }
        self.tabs.retain(|(g, _), _| g != group);
    }

    pub fn has_group(&self, group: &str) -> bool {
        self.groups.contains_key(group)
    }

    pub fn group_names(&self) -> BTreeSet<String> {
        self.groups.keys().cloned().collect()
    }

    pub fn set_main_tab(&mut self, group: &str, tab: Option<TabId>) -> Result<(), RuntimeError> {
        let entry = self.groups.get_mut(group).ok_or_else(|| unknown_group(group))?;
        *entry = tab;
        Ok(())
    }

    pub fn main_tab(&self, group: &str) -> Option<&TabId> {
        self.groups.get(group).and_then(Option::as_ref)
    }

    /// Deep copy of global without scope handles, sharing one copy memo so
    /// aliasing between names is kept.
    fn snapshot_global(&mut self) -> BTreeMap<String, Val> {
        let mut memo = HashMap::new();
        let entries: Vec<(String, Val)> = self
            .global
            .iter()
            .filter(|(_, v)| !matches!(v, Val::Handle(_)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        entries
            .into_iter()
            .map(|(k, v)| {
                let copy = self.heap.deep_copy(&v, &mut memo);
                (k, copy)
            })
            .collect()
    }

    pub fn create_tab_env(&mut self, group: &str, tab: &TabId) -> Result<(), RuntimeError> {
        if !self.groups.contains_key(group) {
            return Err(unknown_group(group));
        }
        let key = (group.to_string(), tab.clone());
        if self.tabs.contains_key(&key) {
            return Err(RuntimeError::new(
                ErrorKind::DuplicateTab,
                format!("tab {tab} already exists in {group}"),
            ));
        }
        let base = self.snapshot_global();
        self.tabs.insert(
            key,
            TabEnv {
                base,
                overlay: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn drop_tab_env(&mut self, group: &str, tab: &TabId) {
        self.tabs.remove(&(group.to_string(), tab.clone()));
        if let Some(main) = self.groups.get_mut(group) {
            if main.as_ref() == Some(tab) {
                *main = None;
            }
        }
    }

    /// Tabs with an environment in `group`.
    pub fn tab_ids(&self, group: &str) -> Vec<TabId> {
        self.tabs
            .keys()
            .filter(|(g, _)| g == group)
            .map(|(_, t)| t.clone())
            .collect()
    }

    pub fn has_tab(&self, group: &str, tab: &TabId) -> bool {
        self.tabs.contains_key(&(group.to_string(), tab.clone()))
    }

    fn tab_env(&self, group: &str, tab: &TabId) -> Result<&TabEnv, RuntimeError> {
        self.tabs
            .get(&(group.to_string(), tab.clone()))
            .ok_or_else(|| RuntimeError::new(ErrorKind::UnknownScope, format!("no tab {tab} in {group}")))
    }

    /// Names bound locally in a tab (including deletions).
    pub fn overlay_names(&self, group: &str, tab: &TabId) -> Result<BTreeSet<String>, RuntimeError> {
        Ok(self.tab_env(group, tab)?.overlay.keys().cloned().collect())
    }

    /// Refreshes a tab's snapshot of global. Local bindings win. Returns the
    /// names whose resolved value changed.
    pub fn sync_tab(&mut self, group: &str, tab: &TabId) -> Result<BTreeSet<String>, RuntimeError> {
        self.tab_env(group, tab)?;
        let new_base = self.snapshot_global();
        let key = (group.to_string(), tab.clone());
        let env = self.tabs.get(&key).expect("checked above");
        let names: BTreeSet<&String> = env.base.keys().chain(new_base.keys()).collect();
        let mut changed = BTreeSet::new();
        for name in names {
            if env.overlay.contains_key(name) {
                continue;
            }
            let same = match (env.base.get(name), new_base.get(name)) {
                (Some(a), Some(b)) => self.heap.deep_equal(a, b),
                (None, None) => true,
                _ => false,
            };
            if !same {
                changed.insert(name.clone());
            }
        }
        self.tabs.get_mut(&key).expect("checked above").base = new_base;
        Ok(changed)
    }

    /// Copies the main tab's overlay into global: bindings are deep-copied,
    /// local deletions delete. The overlay is kept. Returns the overlay's
    /// names.
    pub fn merge_main_tab(&mut self, group: &str) -> Result<BTreeSet<String>, RuntimeError> {
        let main = self
            .groups
            .get(group)
            .ok_or_else(|| unknown_group(group))?
            .clone()
            .ok_or_else(|| no_main_tab(group))?;
        let overlay: Vec<(String, Option<Val>)> = self
            .tab_env(group, &main)?
            .overlay
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut memo = HashMap::new();
        let mut merged = BTreeSet::new();
        for (name, binding) in overlay {
            match binding {
                Some(val) => {
                    let copy = self.heap.deep_copy(&val, &mut memo);
                    self.global.insert(name.clone(), copy);
                }
                None => {
                    self.global.remove(&name);
                }
            }
            merged.insert(name);
        }
        Ok(merged)
    }

    /// The overlay a merge of `group` would write, for permission checks.
    pub fn pending_merge(&self, group: &str) -> Result<BTreeSet<String>, RuntimeError> {
        let main = self
            .groups
            .get(group)
            .ok_or_else(|| unknown_group(group))?
            .clone()
            .ok_or_else(|| no_main_tab(group))?;
        self.overlay_names(group, &main)
    }

    fn scope_bindings(&self, scope: &ScopeRef) -> Result<BTreeMap<&String, &Val>, RuntimeError> {
        Ok(match scope {
            ScopeRef::Global => self.global.iter().collect(),
            ScopeRef::Tab { group, tab } => {
                let env = self.tab_env(group, tab)?;
                let mut out: BTreeMap<&String, &Val> = env.base.iter().collect();
                for (name, binding) in &env.overlay {
                    match binding {
                        Some(v) => out.insert(name, v),
                        None => out.remove(name),
                    };
                }
                out
            }
        })
    }

    /// Variables visible in `scope`, sorted by name, without scope handles.
    pub fn list_variables(&self, scope: &ScopeRef) -> Result<Vec<VariableInfo>, RuntimeError> {
        Ok(self
            .scope_bindings(scope)?
            .into_iter()
            .filter(|(_, v)| !matches!(v, Val::Handle(_)))
            .map(|(name, val)| {
                let value = self.heap.export(val);
                VariableInfo {
                    name: name.clone(),
                    type_tag: value.type_tag().to_string(),
                    summary: value.summary(),
                }
            })
            .collect())
    }

    /// The value `name` resolves to in `scope`.
    pub fn get(&self, scope: &ScopeRef, name: &str) -> Option<Value> {
        let val = match scope {
            ScopeRef::Global => self.global.get(name),
            ScopeRef::Tab { group, tab } => self.tab_env(group, tab).ok()?.resolve(name),
        }?;
        Some(self.heap.export(val))
    }

    pub fn global(&self, name: &str) -> Option<Value> {
        self.get(&ScopeRef::Global, name)
    }

    /// Binds `name` in global to a copy of `value`.
    pub fn set_global(&mut self, name: &str, value: &Value) {
        let val = self.heap.import(value);
        self.global.insert(name.to_string(), val);
    }

    /// Global variables as owned values, handles included.
    pub fn global_values(&self) -> BTreeMap<String, Value> {
        self.global
            .iter()
            .map(|(k, v)| (k.clone(), self.heap.export(v)))
            .collect()
    }

    pub fn snapshot(&self) -> KernelSnapshot {
        let export_map = |m: &BTreeMap<String, Val>| -> BTreeMap<String, Value> {
            m.iter().map(|(k, v)| (k.clone(), self.heap.export(v))).collect()
        };
        KernelSnapshot {
            global: export_map(&self.global),
            tabs: self
                .tabs
                .iter()
                .map(|(key, env)| {
                    (
                        key.clone(),
                        TabSnapshot {
                            base: export_map(&env.base),
                            overlay: env
                                .overlay
                                .iter()
                                .map(|(k, v)| (k.clone(), v.as_ref().map(|v| self.heap.export(v))))
                                .collect(),
                        },
                    )
                })
                .collect(),
            groups: self.groups.clone(),
            exec_counter: self.exec_counter,
        }
    }

    /// Clears every environment and group. The execution counter keeps
    /// counting so that randomized builtins never repeat a seed.
    pub fn restart(&mut self) {
        self.heap = Heap::default();
        self.global.clear();
        self.tabs.clear();
        self.groups.clear();
    }
}

fn unknown_group(group: &str) -> RuntimeError {
    RuntimeError::new(ErrorKind::UnknownScope, format!("no group named {group}"))
}

fn no_main_tab(group: &str) -> RuntimeError {
    RuntimeError::new(ErrorKind::NoMainTab, format!("group {group} has no main tab"))
}
