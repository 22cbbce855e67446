//! Object storage with reference semantics. Containers live in an arena and
//! are referred to by index, so two variables can share one array the way
//! notebook users expect, while the kernel itself stays a plain owned value.

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;

use super::value::{Table, Value};

pub(crate) type ObjId = u32;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Val {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Obj(ObjId),
    Handle(String),
    Module(String),
}

impl Val {
    pub(crate) fn obj(&self) -> Option<ObjId> {
        match self {
            Val::Obj(id) => Some(*id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Obj {
    Array(Vec<Val>),
    Mapping(IndexMap<String, Val>),
    Table(Table),
}

impl Obj {
    pub(crate) fn type_tag(&self) -> &'static str {
        match self {
            Obj::Array(_) => "Array",
            Obj::Mapping(_) => "Mapping",
            Obj::Table(_) => "Table",
        }
    }

    fn children(&self) -> Vec<ObjId> {
        match self {
            Obj::Array(items) => items.iter().filter_map(Val::obj).collect(),
            Obj::Mapping(m) => m.values().filter_map(Val::obj).collect(),
            Obj::Table(_) => Vec::new(),
        }
    }

    fn children_mut(&mut self) -> Box<dyn Iterator<Item = &mut ObjId> + '_> {
        fn pick(v: &mut Val) -> Option<&mut ObjId> {
            match v {
                Val::Obj(id) => Some(id),
                _ => None,
            }
        }
        match self {
            Obj::Array(items) => Box::new(items.iter_mut().filter_map(pick)),
            Obj::Mapping(m) => Box::new(m.values_mut().filter_map(pick)),
            Obj::Table(_) => Box::new(std::iter::empty()),
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    obj: Obj,
    /// Epoch of the last mutation.
    dirty: u64,
    /// Nesting depth as known when the object was last written. Containers
    /// of this object are not updated, so this is a lower bound.
    depth: u32,
}

/// Deepest container nesting a store may produce.
pub(crate) const MAX_NESTING: u32 = 100;

const MIN_GC_THRESHOLD: usize = 4096;

#[derive(Debug, Clone)]
pub(crate) struct Heap {
    slots: Vec<Slot>,
    epoch: u64,
    gc_threshold: usize,
}

impl Default for Heap {
    fn default() -> Self {
        Heap {
            slots: Vec::new(),
            epoch: 1,
            gc_threshold: MIN_GC_THRESHOLD,
        }
    }
}

impl Heap {
    #[cfg(test)]
    pub(crate) fn len(&self) -> usize {
        self.slots.len()
    }

    /// Starts a new mutation epoch; [`Heap::reaches_dirty`] then only sees
    /// mutations made after this call.
    pub(crate) fn next_epoch(&mut self) {
        self.epoch += 1;
    }

    pub(crate) fn alloc(&mut self, obj: Obj) -> Val {
        let id = ObjId::try_from(self.slots.len()).expect("heap exhausted");
        let depth = 1 + obj
            .children()
            .into_iter()
            .map(|c| self.slots[c as usize].depth)
            .max()
            .unwrap_or(0);
        self.slots.push(Slot {
            obj,
            dirty: self.epoch,
            depth,
        });
        Val::Obj(id)
    }

    pub(crate) fn depth(&self, val: &Val) -> u32 {
        val.obj().map_or(0, |id| self.slots[id as usize].depth)
    }

    /// Records that `val` is about to be stored inside `container`. Fails if
    /// that would make the container contain itself or nest too deeply.
    pub(crate) fn check_store(&mut self, container: ObjId, val: &Val) -> Result<(), &'static str> {
        if self.reaches(val, container) {
            return Err("a container cannot contain itself");
        }
        let depth = self.depth(val) + 1;
        if depth > MAX_NESTING {
            return Err("containers are nested too deeply");
        }
        let slot = &mut self.slots[container as usize];
        slot.depth = slot.depth.max(depth);
        Ok(())
    }

    pub(crate) fn get(&self, id: ObjId) -> &Obj {
        &self.slots[id as usize].obj
    }

    /// Mutable access; marks the object as changed in this epoch.
    pub(crate) fn get_mut(&mut self, id: ObjId) -> &mut Obj {
        let slot = &mut self.slots[id as usize];
        slot.dirty = self.epoch;
        &mut slot.obj
    }

    pub(crate) fn deep_copy(&mut self, val: &Val, memo: &mut HashMap<ObjId, ObjId>) -> Val {
        let Val::Obj(id) = val else {
            return val.clone();
        };
        if let Some(&copied) = memo.get(id) {
            return Val::Obj(copied);
        }
        let placeholder = self.alloc(Obj::Array(Vec::new()));
        let new_id = placeholder.obj().expect("fresh object");
        memo.insert(*id, new_id);
        let obj = match self.get(*id).clone() {
            Obj::Array(items) => Obj::Array(items.iter().map(|v| self.deep_copy(v, memo)).collect()),
            Obj::Mapping(m) => Obj::Mapping(m.iter().map(|(k, v)| (k.clone(), self.deep_copy(v, memo))).collect()),
            Obj::Table(t) => Obj::Table(t),
        };
        self.slots[new_id as usize].depth = self.slots[*id as usize].depth;
        self.slots[new_id as usize].obj = obj;
        placeholder
    }

    pub(crate) fn export(&self, val: &Val) -> Value {
        match val {
            Val::Null => Value::Null,
            Val::Bool(b) => Value::Bool(*b),
            Val::Int(i) => Value::Int(*i),
            Val::Float(f) => Value::Float(*f),
            Val::Text(s) => Value::Text(s.clone()),
            Val::Handle(g) => Value::ScopeHandle(g.clone()),
            Val::Module(m) => Value::Module(m.clone()),
            Val::Obj(id) => match self.get(*id) {
                Obj::Array(items) => Value::Array(items.iter().map(|v| self.export(v)).collect()),
                Obj::Mapping(m) => Value::Mapping(m.iter().map(|(k, v)| (k.clone(), self.export(v))).collect()),
                Obj::Table(t) => Value::Table(t.clone()),
            },
        }
    }

    /// Copies an owned value in; handles cannot be imported.
    pub(crate) fn import(&mut self, value: &Value) -> Val {
        match value {
            Value::Null | Value::ScopeHandle(_) => Val::Null,
            Value::Bool(b) => Val::Bool(*b),
            Value::Int(i) => Val::Int(*i),
            Value::Float(f) => Val::Float(*f),
            Value::Text(s) => Val::Text(s.clone()),
            Value::Module(m) => Val::Module(m.clone()),
            Value::Array(items) => {
                let items = items.iter().map(|v| self.import(v)).collect();
                self.alloc(Obj::Array(items))
            }
            Value::Mapping(m) => {
                let m = m.iter().map(|(k, v)| (k.clone(), self.import(v))).collect();
                self.alloc(Obj::Mapping(m))
            }
            Value::Table(t) => self.alloc(Obj::Table(t.clone())),
        }
    }

    /// Structural equality, following references.
    pub(crate) fn deep_equal(&self, a: &Val, b: &Val) -> bool {
        match (a, b) {
            (Val::Obj(x), Val::Obj(y)) => {
                if x == y {
                    return true;
                }
                match (self.get(*x), self.get(*y)) {
                    (Obj::Array(p), Obj::Array(q)) => {
                        p.len() == q.len() && p.iter().zip(q).all(|(u, v)| self.deep_equal(u, v))
                    }
                    (Obj::Mapping(p), Obj::Mapping(q)) => {
                        p.len() == q.len()
                            && p.iter()
                                .zip(q)
                                .all(|((k1, u), (k2, v))| k1 == k2 && self.deep_equal(u, v))
                    }
                    (Obj::Table(p), Obj::Table(q)) => p == q,
                    _ => false,
                }
            }
            (Val::Int(x), Val::Float(y)) | (Val::Float(y), Val::Int(x)) => (*x as f64) == *y,
            _ => a == b,
        }
    }

    fn visit(&self, val: &Val, seen: &mut HashSet<ObjId>, f: &mut impl FnMut(ObjId) -> bool) -> bool {
        let Some(id) = val.obj() else {
            return false;
        };
        let mut stack = vec![id];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if f(id) {
                return true;
            }
            stack.extend(self.get(id).children());
        }
        false
    }

    /// Whether `target` can be reached from `val`.
    pub(crate) fn reaches(&self, val: &Val, target: ObjId) -> bool {
        self.visit(val, &mut HashSet::new(), &mut |id| id == target)
    }

    /// Whether anything reachable from `val` changed in the current epoch.
    pub(crate) fn reaches_dirty(&self, val: &Val) -> bool {
        let epoch = self.epoch;
        self.visit(val, &mut HashSet::new(), &mut |id| {
            self.slots[id as usize].dirty == epoch
        })
    }

    pub(crate) fn should_collect(&self) -> bool {
        self.slots.len() > self.gc_threshold
    }

    /// Compacts the heap, keeping only objects reachable from `roots` and
    /// rewriting the roots to the new indices.
    pub(crate) fn collect<'a>(&mut self, roots: impl Iterator<Item = &'a mut Val>) {
        let mut old: Vec<Option<Slot>> = std::mem::take(&mut self.slots).into_iter().map(Some).collect();
        let mut remap: Vec<Option<ObjId>> = vec![None; old.len()];
        let mut new: Vec<Slot> = Vec::new();

        fn forward(id: ObjId, old: &mut [Option<Slot>], remap: &mut [Option<ObjId>], new: &mut Vec<Slot>) -> ObjId {
            if let Some(n) = remap[id as usize] {
                return n;
            }
            let n = new.len() as ObjId;
            remap[id as usize] = Some(n);
            new.push(old[id as usize].take().expect("object moved twice"));
            n
        }

        for root in roots {
            if let Val::Obj(id) = root {
                *id = forward(*id, &mut old, &mut remap, &mut new);
            }
        }
        let mut scan = 0;
        while scan < new.len() {
            let mut obj = std::mem::replace(&mut new[scan].obj, Obj::Array(Vec::new()));
            for child in obj.children_mut() {
                *child = forward(*child, &mut old, &mut remap, &mut new);
            }
            new[scan].obj = obj;
            scan += 1;
        }
        self.gc_threshold = (new.len() * 2).max(MIN_GC_THRESHOLD);
        self.slots = new;
    }
}
