//! Well-formedness of informative traces and their back-translation into
//! source compartments.
//!
//! A well-formed trace is replayed by a [`BtState`]: the current compartment
//! and procedure, the global memory, and a stack of suspended cross-compartment
//! callers. Back-translation then turns every compartment into a program that
//! re-enacts exactly its share of the trace. Each compartment keeps a private
//! event counter; every exported procedure loops, reading the counter and
//! dispatching to the code for that event.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::lang::{
    BinOp, CallTarget, CompartmentDecl, Expr, GlobalDecl, Ident, Interface, ProcBody, Program,
    Signature, Stmt,
};
use crate::memory::{GlobalEnv, Memory, Value};
use crate::sys;
use crate::trace::{Event, InformativeEvent, ItraceFile, MemDelta, IO_CAP};

pub const DEFAULT_MAX_TRACE_LENGTH: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BtError {
    #[error("delta mismatch: {0}")]
    DeltaMismatch(String),
    #[error("public global of {0} holds a non-scalar at a syscall")]
    NonScalarGlobal(Ident),
    #[error("interface violation: {0}")]
    InterfaceViolation(String),
    #[error("return with no pending cross-compartment call")]
    StackUnderflow,
    #[error("inconsistent event: {0}")]
    EventMismatch(String),
    #[error("event {index} is not well formed: {cause}")]
    NotWellFormed { index: usize, cause: Box<BtError> },
    #[error("unknown compartment {0}")]
    UnknownCompartment(Ident),
    #[error("trace has {len} events, more than the limit of {max}")]
    TraceTooLong { len: usize, max: usize },
}

/// What back-translation needs besides the trace itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BtEnv {
    pub interface: Interface,
    /// In allocation order.
    pub globals: Vec<(Ident, GlobalDecl)>,
    pub entry: (Ident, Ident),
    pub max_trace_length: usize,
}

impl BtEnv {
    pub fn new(interface: Interface, globals: Vec<(Ident, GlobalDecl)>, entry: (Ident, Ident)) -> Self {
        BtEnv {
            interface,
            globals,
            entry,
            max_trace_length: DEFAULT_MAX_TRACE_LENGTH,
        }
    }

    /// Takes globals and entry point from the header of an informative-trace file.
    pub fn from_itrace(interface: Interface, file: &ItraceFile) -> Result<Self, BtError> {
        let entry = file
            .entry
            .clone()
            .ok_or_else(|| BtError::EventMismatch("trace file has no ENTRY line".into()))?;
        Ok(BtEnv::new(interface, file.globals.clone(), entry))
    }

    pub fn init_state(&self) -> BtState {
        let mut mem = Memory::new();
        let genv = GlobalEnv::alloc(&mut mem, self.globals.iter().map(|(c, g)| (c, g)));
        BtState {
            cur: self.entry.clone(),
            mem,
            genv,
            stack: Vec::new(),
        }
    }

    fn globals_of<'a>(&'a self, k: &'a Ident) -> impl Iterator<Item = &'a GlobalDecl> + 'a {
        self.globals.iter().filter(move |(c, _)| c == k).map(|(_, g)| g)
    }
}

#[derive(Clone, Debug)]
pub struct BtState {
    pub cur: (Ident, Ident),
    /// Only global blocks are ever allocated here.
    pub mem: Memory,
    pub genv: GlobalEnv,
    /// Suspended callers with the signature of the call they made.
    pub stack: Vec<((Ident, Ident), Signature)>,
}

fn mismatch(msg: String) -> BtError {
    BtError::EventMismatch(msg)
}

fn apply_delta(s: &mut BtState, d: &MemDelta) -> Result<(), BtError> {
    let comp = &s.cur.0;
    if d.comp() != comp {
        return Err(BtError::DeltaMismatch(format!(
            "delta by {} while {comp} is running",
            d.comp()
        )));
    }
    let owned = |b| s.genv.symbol_of(b).is_some_and(|sym| &sym.comp == comp);
    match d {
        MemDelta::Store {
            block,
            offset,
            value,
            ..
        } => {
            if !owned(*block) {
                return Err(BtError::DeltaMismatch(format!("store to {block}, not a global of {comp}")));
            }
            s.mem
                .store(comp, *block, *offset as i64, value.clone())
                .map_err(|e| BtError::DeltaMismatch(e.to_string()))
        }
        MemDelta::Bytes {
            block,
            offset,
            values,
            ..
        } => {
            if !owned(*block) {
                return Err(BtError::DeltaMismatch(format!("bytes to {block}, not a global of {comp}")));
            }
            for (i, v) in values.iter().enumerate() {
                s.mem
                    .store(comp, *block, (offset + i) as i64, Value::Int(*v))
                    .map_err(|e| BtError::DeltaMismatch(e.to_string()))?;
            }
            Ok(())
        }
        MemDelta::Alloc { .. } => Ok(()),
        MemDelta::Free { block, .. } => {
            if s.genv.is_global(*block) {
                return Err(BtError::DeltaMismatch(format!("free of global block {block}")));
            }
            Ok(())
        }
    }
}

/// One step of the well-formedness relation.
pub fn wf_step(env: &BtEnv, s: &mut BtState, e: &InformativeEvent) -> Result<(), BtError> {
    let (fc, fp) = e.f();
    if fc != &s.cur.0 {
        return Err(mismatch(format!("event in {fc} while {} is running", s.cur.0)));
    }
    s.cur.1 = fp.clone();
    for d in e.deltas() {
        apply_delta(s, d)?;
    }
    let cur = s.cur.0.clone();
    if e.event().actor() != &cur {
        return Err(mismatch(format!("event by {} while {cur} is running", e.event().actor())));
    }
    match e {
        InformativeEvent::Icall {
            event,
            callee,
            args,
            sig,
            ..
        } => {
            let Event::Call {
                callee: c,
                proc,
                args: eargs,
                ..
            } = event
            else {
                return Err(mismatch("Icall without a call event".into()));
            };
            if (c, proc) != (&callee.0, &callee.1) || eargs != args {
                return Err(mismatch("Icall disagrees with its call event".into()));
            }
            if c == &cur {
                return Err(BtError::InterfaceViolation(format!("{cur} calls itself across a boundary")));
            }
            match env.interface.allowed_call(&cur, c, proc) {
                Some(allowed) if allowed == *sig && sig.params == args.len() => {}
                _ => {
                    return Err(BtError::InterfaceViolation(format!(
                        "{cur} may not call {c}.{proc} with {} arguments",
                        args.len()
                    )))
                }
            }
            s.stack.push((s.cur.clone(), *sig));
            s.cur = callee.clone();
        }
        InformativeEvent::Ireturn { event, value, .. } => {
            let Event::Return {
                caller,
                value: v,
                ..
            } = event
            else {
                return Err(mismatch("Ireturn without a return event".into()));
            };
            if v != value {
                return Err(mismatch("Ireturn disagrees with its return event".into()));
            }
            let (back, sig) = s.stack.pop().ok_or(BtError::StackUnderflow)?;
            if caller != &back.0 {
                return Err(BtError::InterfaceViolation(format!(
                    "return to {caller} but the pending caller is {}",
                    back.0
                )));
            }
            if value.is_some() != sig.returns {
                return Err(BtError::InterfaceViolation("return value does not fit the signature".into()));
            }
            s.cur = back;
        }
        InformativeEvent::Isys {
            event,
            name,
            buffer,
            args,
            ..
        } => {
            let Event::Syscall {
                name: ename,
                args: eargs,
                read_bytes,
                ret,
                written_bytes,
                ..
            } = event
            else {
                return Err(mismatch("Isys without a syscall event".into()));
            };
            if ename != name || eargs != args {
                return Err(mismatch("Isys disagrees with its syscall event".into()));
            }
            let allowed = env
                .interface
                .get(&cur)
                .is_some_and(|ci| ci.syscalls.contains(name));
            if !allowed {
                return Err(BtError::InterfaceViolation(format!("{cur} may not use {name}")));
            }
            let block = s
                .genv
                .lookup(&cur, buffer)
                .filter(|b| s.genv.symbol_of(*b).is_some_and(|g| g.decl.public))
                .ok_or_else(|| mismatch(format!("{buffer} is not a public global of {cur}")))?;
            let size = s.genv.symbol_of(block).unwrap().decl.size;
            let [n] = args[..] else {
                return Err(mismatch("syscalls take one argument".into()));
            };
            if n < 0 || n as u64 > size as u64 || n as usize > IO_CAP {
                return Err(mismatch(format!("count {n} outside buffer {buffer}")));
            }
            if !s.genv.public_scalar(&s.mem, &cur) {
                return Err(BtError::NonScalarGlobal(cur));
            }
            match name {
                crate::lang::Syscall::Read => {
                    if !written_bytes.is_empty()
                        || *ret != read_bytes.len() as i64
                        || read_bytes.len() as i64 > n
                        || read_bytes.iter().any(|b| !(0..=255).contains(b))
                    {
                        return Err(mismatch("read result does not fit its count".into()));
                    }
                    for (i, b) in read_bytes.iter().enumerate() {
                        s.mem
                            .store(&cur, block, i as i64, Value::Int(*b))
                            .map_err(|e| BtError::DeltaMismatch(e.to_string()))?;
                    }
                }
                crate::lang::Syscall::Write => {
                    let image = sys::written_bytes(&mut s.mem, &cur, block, n as usize);
                    if !read_bytes.is_empty() || image.as_ref() != Some(written_bytes) {
                        return Err(BtError::DeltaMismatch(format!(
                            "written bytes differ from the contents of {buffer}"
                        )));
                    }
                    if !(0..=n).contains(ret) {
                        return Err(mismatch("write acknowledgment out of range".into()));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Threads [`wf_step`] through `it` from the initial state of `env`.
pub fn check_wf(env: &BtEnv, it: &[InformativeEvent]) -> Result<BtState, BtError> {
    let mut s = env.init_state();
    for (index, e) in it.iter().enumerate() {
        wf_step(env, &mut s, e).map_err(|cause| BtError::NotWellFormed {
            index,
            cause: Box::new(cause),
        })?;
    }
    Ok(s)
}

pub fn is_wf(env: &BtEnv, it: &[InformativeEvent]) -> bool {
    check_wf(env, it).is_ok()
}

/// Replays one memory change as source code, if it affects a public global
/// of `c` with a scalar.
pub fn bt_delta(genv: &GlobalEnv, c: &Ident, d: &MemDelta) -> Stmt {
    let public = |b| {
        genv.symbol_of(b)
            .filter(|s| &s.comp == c && s.decl.public)
            .map(|s| s.decl.name.clone())
    };
    match d {
        MemDelta::Store {
            block,
            offset,
            value: Value::Int(v),
            comp,
        } if comp == c => match public(*block) {
            Some(g) => Stmt::gstore(g, Expr::Const(*offset as i64), Expr::Const(*v)),
            None => Stmt::Skip,
        },
        MemDelta::Bytes {
            block,
            offset,
            values,
            comp,
        } if comp == c => match public(*block) {
            Some(g) => Stmt::seq(
                values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        Stmt::gstore(g.clone(), Expr::Const((offset + i) as i64), Expr::Const(*v))
                    })
                    .collect(),
            ),
            None => Stmt::Skip,
        },
        _ => Stmt::Skip,
    }
}

fn local(s: &str) -> Ident {
    Ident::from(s)
}

/// The plain action of an event, with the return adapted to `returns`.
fn bt_action(e: &InformativeEvent, returns: bool) -> Stmt {
    match e {
        InformativeEvent::Icall {
            callee, args, sig, ..
        } => Stmt::Call {
            dest: sig.returns.then(|| local("r")),
            target: CallTarget::Cross(callee.0.clone(), callee.1.clone()),
            args: args.iter().map(|a| Expr::Const(*a)).collect(),
        },
        InformativeEvent::Isys {
            name, buffer, args, ..
        } => Stmt::Call {
            dest: Some(local("r")),
            target: CallTarget::Sys(*name, buffer.clone()),
            args: args.iter().map(|a| Expr::Const(*a)).collect(),
        },
        InformativeEvent::Ireturn { value, .. } => {
            Stmt::Return(returns.then(|| Expr::Const(value.unwrap_or(0))))
        }
    }
}

/// Code for one event performed by `c`: its memory changes, then the action.
pub fn bt_event(genv: &GlobalEnv, c: &Ident, e: &InformativeEvent, returns: bool) -> Stmt {
    let mut ss: Vec<Stmt> = e
        .deltas()
        .iter()
        .map(|d| bt_delta(genv, c, d))
        .filter(|s| *s != Stmt::Skip)
        .collect();
    ss.push(bt_action(e, returns));
    Stmt::seq(ss)
}

fn counter_name(env: &BtEnv, k: &Ident) -> Ident {
    let taken = |n: &Ident| env.globals_of(k).any(|g| &g.name == n);
    let base = local("__ctr");
    if !taken(&base) {
        return base;
    }
    (1..)
        .map(|i| Ident::from(format!("__ctr{i}").as_str()))
        .find(|n| !taken(n))
        .unwrap()
}

/// Binary search over the counter snapshot for cases `lo..hi`.
fn dispatch(ctr: &Ident, cases: &[Stmt], lo: usize, hi: usize) -> Stmt {
    let snap = || Expr::Local(local("snap"));
    if hi - lo == 1 {
        return Stmt::seq(vec![
            Stmt::gstore(
                ctr.clone(),
                Expr::Const(0),
                Expr::bin(BinOp::Add, snap(), Expr::Const(1)),
            ),
            cases[lo].clone(),
        ]);
    }
    let mid = lo + (hi - lo) / 2;
    Stmt::if_(
        Expr::bin(BinOp::Lt, snap(), Expr::Const(mid as i64)),
        dispatch(ctr, cases, lo, mid),
        dispatch(ctr, cases, mid, hi),
    )
}

fn proc_body(ctr: &Ident, cases: &[Stmt], params: usize, returns: bool) -> ProcBody {
    let done = Stmt::Return(returns.then_some(Expr::Const(0)));
    let params = (0..params)
        .map(|i| Ident::from(format!("arg{i}").as_str()))
        .collect();
    if cases.is_empty() {
        return ProcBody {
            params,
            locals: vec![],
            body: done,
        };
    }
    let n = cases.len() as i64;
    let body = Stmt::While(
        Expr::Const(1),
        Box::new(Stmt::seq(vec![
            Stmt::Assign(local("snap"), Expr::gload(ctr.clone(), Expr::Const(0))),
            Stmt::if_(
                Expr::bin(BinOp::Le, Expr::Const(n), Expr::Local(local("snap"))),
                done,
                Stmt::Skip,
            ),
            dispatch(ctr, cases, 0, cases.len()),
        ])),
    );
    ProcBody {
        params,
        locals: vec![local("snap"), local("r")],
        body,
    }
}

fn translate_checked(
    env: &BtEnv,
    genv: &GlobalEnv,
    it: &[InformativeEvent],
    k: &Ident,
) -> Result<CompartmentDecl, BtError> {
    let ci = env
        .interface
        .get(k)
        .ok_or_else(|| BtError::UnknownCompartment(k.clone()))?;
    let mine: Vec<&InformativeEvent> = it.iter().filter(|e| e.event().actor() == k).collect();
    let ctr = counter_name(env, k);
    let mut by_kind: BTreeMap<bool, Vec<Stmt>> = BTreeMap::new();
    let mut cases = |returns: bool| -> Vec<Stmt> {
        by_kind
            .entry(returns)
            .or_insert_with(|| mine.iter().map(|e| bt_event(genv, k, e, returns)).collect())
            .clone()
    };
    let mut c = CompartmentDecl::new(k.clone());
    c.exports = ci.exports.clone();
    c.imports = ci.imports.clone();
    c.syscalls = ci.syscalls.clone();
    c.globals = env.globals_of(k).cloned().collect();
    c.globals.push(GlobalDecl {
        name: ctr.clone(),
        size: 1,
        public: false,
    });
    for (name, sig) in &ci.exports {
        c.procs
            .insert(name.clone(), proc_body(&ctr, &cases(sig.returns), sig.params, sig.returns));
    }
    let (ec, ep) = &env.entry;
    if ec == k && !c.procs.contains_key(ep) {
        c.procs.insert(ep.clone(), proc_body(&ctr, &cases(true), 0, true));
    }
    Ok(c)
}

fn precheck(env: &BtEnv, it: &[InformativeEvent]) -> Result<GlobalEnv, BtError> {
    if it.len() > env.max_trace_length {
        return Err(BtError::TraceTooLong {
            len: it.len(),
            max: env.max_trace_length,
        });
    }
    Ok(check_wf(env, it)?.genv)
}

/// The back-translation of compartment `k`. Its interface is exactly `k`'s
/// part of `env.interface`.
pub fn back_translate(env: &BtEnv, it: &[InformativeEvent], k: &Ident) -> Result<CompartmentDecl, BtError> {
    if env.interface.get(k).is_none() {
        return Err(BtError::UnknownCompartment(k.clone()));
    }
    let genv = precheck(env, it)?;
    translate_checked(env, &genv, it, k)
}

/// Every compartment of the interface back-translated and linked, with the
/// entry point of `env`.
pub fn back_translate_all(env: &BtEnv, it: &[InformativeEvent]) -> Result<Program, BtError> {
    let genv = precheck(env, it)?;
    let comps = env
        .interface
        .comps
        .keys()
        .map(|k| translate_checked(env, &genv, it, k))
        .collect::<Result<Vec<_>, _>>()?;
    if !env.interface.comps.contains_key(&env.entry.0) {
        return Err(BtError::UnknownCompartment(env.entry.0.clone()));
    }
    Ok(Program::from_compartments(comps, Some(env.entry.clone())))
}
