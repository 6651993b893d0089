//! Block-based memory shared by the source and target semantics.
//!
//! Every block has an owning compartment fixed at allocation. Accesses name
//! the acting compartment and fail unless it owns the block; the only
//! exception is [`Memory::load_arg`], the privileged read a callee uses to
//! fetch spilled arguments from its caller's read-only spill frame.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::lang::{GlobalDecl, Ident};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub usize);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A symbolic code address: instruction `idx` of `comp.proc`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CodeAddr {
    pub comp: Ident,
    pub proc: Ident,
    pub idx: usize,
}

impl fmt::Display for CodeAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}:{}", self.comp, self.proc, self.idx)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub enum Value {
    Int(i64),
    Ptr(BlockId, usize),
    #[default]
    Undef,
    /// Return addresses. Never a legal event payload.
    Code(CodeAddr),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn is_int(&self) -> bool {
        matches!(self, Value::Int(_))
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Value {
        Value::Int(i)
    }
}

/// `7`, `undef`, `ptr:3:0`, `code:C0.main:4`.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Ptr(b, o) => write!(f, "ptr:{}:{o}", b.0),
            Value::Undef => f.write_str("undef"),
            Value::Code(a) => write!(f, "code:{a}"),
        }
    }
}

impl FromStr for Value {
    type Err = String;
    fn from_str(s: &str) -> Result<Value, String> {
        let bad = || format!("malformed value `{s}`");
        if s == "undef" {
            return Ok(Value::Undef);
        }
        if let Some(rest) = s.strip_prefix("ptr:") {
            let (b, o) = rest.split_once(':').ok_or_else(bad)?;
            return Ok(Value::Ptr(
                BlockId(b.parse().map_err(|_| bad())?),
                o.parse().map_err(|_| bad())?,
            ));
        }
        if let Some(rest) = s.strip_prefix("code:") {
            let (cp, idx) = rest.rsplit_once(':').ok_or_else(bad)?;
            let (c, p) = cp.split_once('.').ok_or_else(bad)?;
            return Ok(Value::Code(CodeAddr {
                comp: Ident::parse(c).ok_or_else(bad)?,
                proc: Ident::parse(p).ok_or_else(bad)?,
                idx: idx.parse().map_err(|_| bad())?,
            }));
        }
        s.parse().map(Value::Int).map_err(|_| bad())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Perm {
    ReadWrite,
    ReadOnly,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub owner: Ident,
    pub slots: Vec<Value>,
    pub perm: Perm,
    pub live: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("{actor} accessed block {block} owned by {owner}")]
    NotOwner {
        block: BlockId,
        owner: Ident,
        actor: Ident,
    },
    #[error("block {0} is not live")]
    DeadBlock(BlockId),
    #[error("offset {offset} out of bounds for block {block} of size {size}")]
    OutOfBounds {
        block: BlockId,
        offset: i64,
        size: usize,
    },
    #[error("block {0} is read-only")]
    ReadOnlyViolation(BlockId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
    Free,
    /// Privileged read of a caller's spill frame.
    ArgRead,
}

/// A recorded attempt by one compartment to touch another's block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditEntry {
    pub actor: Ident,
    pub owner: Ident,
    pub block: BlockId,
    pub kind: AccessKind,
    /// Whether the access went through. Only sanctioned argument reads do.
    pub granted: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Memory {
    blocks: Vec<Block>,
    audit: Vec<AuditEntry>,
}

impl Memory {
    pub fn new() -> Self {
        Memory::default()
    }

    /// Fresh block, all slots `Undef`, read-write. Ids are never reused.
    pub fn alloc(&mut self, owner: &Ident, size: usize) -> BlockId {
        let id = BlockId(self.blocks.len());
        self.blocks.push(Block {
            id,
            owner: owner.clone(),
            slots: vec![Value::Undef; size],
            perm: Perm::ReadWrite,
            live: true,
        });
        id
    }

    pub fn block(&self, b: BlockId) -> Option<&Block> {
        self.blocks.get(b.0)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// The next id `alloc` will hand out.
    pub fn next_id(&self) -> BlockId {
        BlockId(self.blocks.len())
    }

    fn check(&mut self, actor: &Ident, b: BlockId, kind: AccessKind) -> Result<usize, MemError> {
        let blk = self.blocks.get(b.0).ok_or(MemError::DeadBlock(b))?;
        if &blk.owner != actor {
            let owner = blk.owner.clone();
            self.audit.push(AuditEntry {
                actor: actor.clone(),
                owner: owner.clone(),
                block: b,
                kind,
                granted: false,
            });
            return Err(MemError::NotOwner {
                block: b,
                owner,
                actor: actor.clone(),
            });
        }
        if !blk.live {
            return Err(MemError::DeadBlock(b));
        }
        Ok(blk.slots.len())
    }

    fn index(b: BlockId, off: i64, size: usize) -> Result<usize, MemError> {
        if off < 0 || off as u64 >= size as u64 {
            return Err(MemError::OutOfBounds {
                block: b,
                offset: off,
                size,
            });
        }
        Ok(off as usize)
    }

    pub fn load(&mut self, actor: &Ident, b: BlockId, off: i64) -> Result<Value, MemError> {
        let size = self.check(actor, b, AccessKind::Load)?;
        let i = Self::index(b, off, size)?;
        Ok(self.blocks[b.0].slots[i].clone())
    }

    pub fn store(&mut self, actor: &Ident, b: BlockId, off: i64, v: Value) -> Result<(), MemError> {
        let size = self.check(actor, b, AccessKind::Store)?;
        let i = Self::index(b, off, size)?;
        let blk = &mut self.blocks[b.0];
        if blk.perm == Perm::ReadOnly {
            return Err(MemError::ReadOnlyViolation(b));
        }
        blk.slots[i] = v;
        Ok(())
    }

    pub fn free(&mut self, actor: &Ident, b: BlockId) -> Result<(), MemError> {
        self.check(actor, b, AccessKind::Free)?;
        let blk = &mut self.blocks[b.0];
        blk.live = false;
        blk.slots = Vec::new();
        Ok(())
    }

    /// Semantics-internal; never reachable from program code.
    pub fn set_perm(&mut self, b: BlockId, perm: Perm) -> Result<(), MemError> {
        match self.blocks.get_mut(b.0) {
            Some(blk) if blk.live => {
                blk.perm = perm;
                Ok(())
            }
            _ => Err(MemError::DeadBlock(b)),
        }
    }

    /// Read of a spilled argument by the callee `actor`. Ownership is not
    /// required; a foreign read is logged as a sanctioned audit entry.
    pub fn load_arg(&mut self, actor: &Ident, b: BlockId, off: i64) -> Result<Value, MemError> {
        let blk = self.blocks.get(b.0).ok_or(MemError::DeadBlock(b))?;
        if !blk.live {
            return Err(MemError::DeadBlock(b));
        }
        let i = Self::index(b, off, blk.slots.len())?;
        let v = blk.slots[i].clone();
        if &blk.owner != actor {
            self.audit.push(AuditEntry {
                actor: actor.clone(),
                owner: blk.owner.clone(),
                block: b,
                kind: AccessKind::ArgRead,
                granted: true,
            });
        }
        Ok(v)
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Granted cross-compartment accesses other than argument reads. Zero in
    /// every run of a correct implementation.
    pub fn isolation_breaches(&self) -> usize {
        self.audit
            .iter()
            .filter(|e| e.granted && e.kind != AccessKind::ArgRead)
            .count()
    }
}

/// Where each compartment's globals live. Both semantics allocate globals the
/// same way: compartments in name order, globals in declaration order, slots
/// zero-initialized, so block ids agree across levels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GlobalEnv {
    by_name: HashMap<(Ident, Ident), BlockId>,
    syms: Vec<GlobalSym>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalSym {
    pub comp: Ident,
    pub decl: GlobalDecl,
    pub block: BlockId,
}

impl GlobalEnv {
    /// Allocates every global in `decls` (already in canonical order).
    pub fn alloc<'a>(
        mem: &mut Memory,
        decls: impl IntoIterator<Item = (&'a Ident, &'a GlobalDecl)>,
    ) -> GlobalEnv {
        let mut env = GlobalEnv::default();
        for (comp, decl) in decls {
            let b = mem.alloc(comp, decl.size);
            for i in 0..decl.size {
                mem.store(comp, b, i as i64, Value::Int(0)).unwrap();
            }
            env.by_name.insert((comp.clone(), decl.name.clone()), b);
            env.syms.push(GlobalSym {
                comp: comp.clone(),
                decl: decl.clone(),
                block: b,
            });
        }
        env
    }

    pub fn lookup(&self, comp: &Ident, name: &Ident) -> Option<BlockId> {
        self.by_name.get(&(comp.clone(), name.clone())).copied()
    }

    pub fn symbol_of(&self, b: BlockId) -> Option<&GlobalSym> {
        // Globals are allocated first and contiguously.
        let first = self.syms.first()?.block.0;
        self.syms.get(b.0.checked_sub(first)?).filter(|s| s.block == b)
    }

    pub fn symbols(&self) -> &[GlobalSym] {
        &self.syms
    }

    pub fn is_global(&self, b: BlockId) -> bool {
        self.symbol_of(b).is_some()
    }

    /// True iff every public global of `comp` holds only `Int`s.
    pub fn public_scalar(&self, mem: &Memory, comp: &Ident) -> bool {
        self.syms
            .iter()
            .filter(|s| &s.comp == comp && s.decl.public)
            .all(|s| mem.blocks[s.block.0].slots.iter().all(Value::is_int))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> Ident {
        Ident::from(s)
    }

    #[test]
    fn alloc_is_monotone_and_undef() {
        let mut m = Memory::new();
        let a = m.alloc(&c("C0"), 2);
        let b = m.alloc(&c("C0"), 0);
        assert_eq!((a, b), (BlockId(0), BlockId(1)));
        assert_eq!(m.block(a).unwrap().slots, vec![Value::Undef, Value::Undef]);
        assert!(matches!(m.load(&c("C0"), b, 0), Err(MemError::OutOfBounds { .. })));
    }

    #[test]
    fn ownership_is_enforced_and_audited() {
        let mut m = Memory::new();
        let b = m.alloc(&c("C0"), 1);
        m.store(&c("C0"), b, 0, Value::Int(7)).unwrap();
        assert_eq!(m.load(&c("C0"), b, 0), Ok(Value::Int(7)));
        assert!(matches!(m.load(&c("C1"), b, 0), Err(MemError::NotOwner { .. })));
        assert!(matches!(m.store(&c("C1"), b, 0, 1.into()), Err(MemError::NotOwner { .. })));
        assert!(matches!(m.free(&c("C1"), b), Err(MemError::NotOwner { .. })));
        assert_eq!(m.audit().len(), 3);
        assert_eq!(m.isolation_breaches(), 0);
    }

    #[test]
    fn bounds_and_free() {
        let mut m = Memory::new();
        let b = m.alloc(&c("C0"), 2);
        assert!(matches!(m.load(&c("C0"), b, 2), Err(MemError::OutOfBounds { .. })));
        assert!(matches!(m.load(&c("C0"), b, -1), Err(MemError::OutOfBounds { .. })));
        m.free(&c("C0"), b).unwrap();
        assert_eq!(m.free(&c("C0"), b), Err(MemError::DeadBlock(b)));
        assert_eq!(m.load(&c("C0"), b, 0), Err(MemError::DeadBlock(b)));
        assert_eq!(m.alloc(&c("C0"), 1), BlockId(1));
    }

    #[test]
    fn permissions_round_trip() {
        let mut m = Memory::new();
        let b = m.alloc(&c("C0"), 1);
        m.set_perm(b, Perm::ReadOnly).unwrap();
        assert_eq!(m.store(&c("C0"), b, 0, 5.into()), Err(MemError::ReadOnlyViolation(b)));
        m.set_perm(b, Perm::ReadWrite).unwrap();
        m.store(&c("C0"), b, 0, 5.into()).unwrap();
        m.free(&c("C0"), b).unwrap();
        assert_eq!(m.set_perm(b, Perm::ReadOnly), Err(MemError::DeadBlock(b)));
    }

    #[test]
    fn load_arg_is_sanctioned() {
        let mut m = Memory::new();
        let b = m.alloc(&c("C0"), 1);
        m.store(&c("C0"), b, 0, 9.into()).unwrap();
        m.set_perm(b, Perm::ReadOnly).unwrap();
        assert_eq!(m.load_arg(&c("C1"), b, 0), Ok(Value::Int(9)));
        assert_eq!(m.audit()[0].kind, AccessKind::ArgRead);
        assert_eq!(m.isolation_breaches(), 0);
    }

    #[test]
    fn value_text_round_trip() {
        for v in [
            Value::Int(-3),
            Value::Undef,
            Value::Ptr(BlockId(4), 2),
            Value::Code(CodeAddr {
                comp: c("C1"),
                proc: c("g"),
                idx: 12,
            }),
        ] {
            assert_eq!(v.to_string().parse::<Value>(), Ok(v));
        }
    }

    #[test]
    fn globals_are_distinct_blocks_per_compartment() {
        let mut m = Memory::new();
        let g = GlobalDecl {
            name: c("buf"),
            size: 4,
            public: true,
        };
        let env = GlobalEnv::alloc(&mut m, [(&c("C0"), &g), (&c("C1"), &g)]);
        let b0 = env.lookup(&c("C0"), &c("buf")).unwrap();
        let b1 = env.lookup(&c("C1"), &c("buf")).unwrap();
        assert_ne!(b0, b1);
        assert_eq!(m.block(b0).unwrap().slots, vec![Value::Int(0); 4]);
        assert_eq!(env.symbol_of(b1).unwrap().comp, c("C1"));
        assert!(env.public_scalar(&m, &c("C0")));
    }
}
