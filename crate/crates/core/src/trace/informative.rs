//! Informative events: plain events enriched with the current procedure and
//! the chronological list of memory changes since the previous event.

use std::fmt::Write;

use super::wire::{event_from_tokens, write_event, TraceParseError};
use super::Event;
use crate::lang::{GlobalDecl, Ident, Signature, Syscall};
use crate::memory::{BlockId, GlobalEnv, Memory, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MemDelta {
    Store {
        block: BlockId,
        offset: usize,
        value: Value,
        comp: Ident,
    },
    /// A run of byte values written by `read`.
    Bytes {
        block: BlockId,
        offset: usize,
        values: Vec<i64>,
        comp: Ident,
    },
    Alloc {
        comp: Ident,
        size: usize,
    },
    Free {
        block: BlockId,
        comp: Ident,
    },
}

impl MemDelta {
    pub fn comp(&self) -> &Ident {
        match self {
            MemDelta::Store { comp, .. }
            | MemDelta::Bytes { comp, .. }
            | MemDelta::Alloc { comp, .. }
            | MemDelta::Free { comp, .. } => comp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InformativeEvent {
    Icall {
        f: (Ident, Ident),
        event: Event,
        callee: (Ident, Ident),
        args: Vec<i64>,
        sig: Signature,
        deltas: Vec<MemDelta>,
    },
    Ireturn {
        f: (Ident, Ident),
        event: Event,
        value: Option<i64>,
        deltas: Vec<MemDelta>,
    },
    Isys {
        f: (Ident, Ident),
        event: Event,
        name: Syscall,
        /// The global buffer the syscall operated on.
        buffer: Ident,
        args: Vec<i64>,
        deltas: Vec<MemDelta>,
    },
}

impl InformativeEvent {
    pub fn event(&self) -> &Event {
        match self {
            InformativeEvent::Icall { event, .. }
            | InformativeEvent::Ireturn { event, .. }
            | InformativeEvent::Isys { event, .. } => event,
        }
    }

    pub fn deltas(&self) -> &[MemDelta] {
        match self {
            InformativeEvent::Icall { deltas, .. }
            | InformativeEvent::Ireturn { deltas, .. }
            | InformativeEvent::Isys { deltas, .. } => deltas,
        }
    }

    pub fn f(&self) -> &(Ident, Ident) {
        match self {
            InformativeEvent::Icall { f, .. }
            | InformativeEvent::Ireturn { f, .. }
            | InformativeEvent::Isys { f, .. } => f,
        }
    }

    /// Builds a call record from its plain event.
    pub fn call(f: (Ident, Ident), event: Event, sig: Signature, deltas: Vec<MemDelta>) -> Self {
        let Event::Call {
            callee, proc, args, ..
        } = &event
        else {
            panic!("InformativeEvent::call on {event:?}");
        };
        InformativeEvent::Icall {
            f,
            callee: (callee.clone(), proc.clone()),
            args: args.clone(),
            sig,
            event,
            deltas,
        }
    }

    pub fn ret(f: (Ident, Ident), event: Event, deltas: Vec<MemDelta>) -> Self {
        let Event::Return { value, .. } = &event else {
            panic!("InformativeEvent::ret on {event:?}");
        };
        InformativeEvent::Ireturn {
            f,
            value: *value,
            event,
            deltas,
        }
    }

    pub fn sys(f: (Ident, Ident), event: Event, buffer: Ident, deltas: Vec<MemDelta>) -> Self {
        let Event::Syscall { name, args, .. } = &event else {
            panic!("InformativeEvent::sys on {event:?}");
        };
        InformativeEvent::Isys {
            f,
            name: *name,
            args: args.clone(),
            buffer,
            event,
            deltas,
        }
    }
}

/// Drops the informative data.
pub fn project(it: &[InformativeEvent]) -> Vec<Event> {
    it.iter().map(|e| e.event().clone()).collect()
}

/// An informative trace together with what is needed to interpret its
/// deltas: the entry point and the global layout.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ItraceFile {
    pub entry: Option<(Ident, Ident)>,
    /// In allocation order.
    pub globals: Vec<(Ident, GlobalDecl)>,
    pub events: Vec<InformativeEvent>,
}

impl ItraceFile {
    pub fn global_env(&self) -> GlobalEnv {
        let mut mem = Memory::new();
        GlobalEnv::alloc(&mut mem, self.globals.iter().map(|(c, g)| (c, g)))
    }
}

fn loc(out: &mut String, env: &GlobalEnv, comp: &Ident, b: BlockId) {
    match env.symbol_of(b) {
        Some(sym) if &sym.comp == comp => out.push_str(sym.decl.name.as_str()),
        _ => write!(out, "{b}").unwrap(),
    }
}

/// Header lines `ENTRY` / `GLOBAL`, then one `I <event> @<comp>.<proc> ...`
/// line per event, each followed by its `DELTA` lines.
pub fn serialize_itrace(file: &ItraceFile) -> String {
    let env = file.global_env();
    let mut out = String::new();
    if let Some((c, p)) = &file.entry {
        writeln!(out, "ENTRY {c} {p}").unwrap();
    }
    for (c, g) in &file.globals {
        let vis = if g.public { "public" } else { "private" };
        writeln!(out, "GLOBAL {c} {} {} {vis}", g.name, g.size).unwrap();
    }
    for ie in &file.events {
        out.push_str("I ");
        write_event(&mut out, ie.event());
        let (fc, fp) = ie.f();
        write!(out, " @{fc}.{fp}").unwrap();
        match ie {
            InformativeEvent::Icall { sig, .. } => {
                let r = if sig.returns { "ret" } else { "void" };
                write!(out, " {}:{r}", sig.params).unwrap();
            }
            InformativeEvent::Isys { buffer, .. } => write!(out, " {buffer}").unwrap(),
            InformativeEvent::Ireturn { .. } => {}
        }
        out.push('\n');
        for d in ie.deltas() {
            out.push_str("DELTA ");
            match d {
                MemDelta::Store {
                    block,
                    offset,
                    value,
                    comp,
                } => {
                    write!(out, "store {comp} ").unwrap();
                    loc(&mut out, &env, comp, *block);
                    write!(out, " {offset} {value}").unwrap();
                }
                MemDelta::Bytes {
                    block,
                    offset,
                    values,
                    comp,
                } => {
                    write!(out, "bytes {comp} ").unwrap();
                    loc(&mut out, &env, comp, *block);
                    write!(out, " {offset} (").unwrap();
                    for (i, v) in values.iter().enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        write!(out, "{v}").unwrap();
                    }
                    out.push(')');
                }
                MemDelta::Alloc { comp, size } => write!(out, "alloc {comp} {size}").unwrap(),
                MemDelta::Free { block, comp } => {
                    write!(out, "free {comp} ").unwrap();
                    loc(&mut out, &env, comp, *block);
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_itrace(text: &str) -> Result<ItraceFile, TraceParseError> {
    let mut file = ItraceFile::default();
    let mut env: Option<GlobalEnv> = None;
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        let err = |m: String| TraceParseError::new(line, m);
        let id = |t: &str| Ident::parse(t).ok_or_else(|| err(format!("bad name `{t}`")));
        let num = |t: &str| t.parse::<usize>().map_err(|_| err(format!("bad count `{t}`")));
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.first().copied() {
            None => {}
            Some("ENTRY") => {
                if toks.len() != 3 {
                    return Err(err("expected ENTRY <comp> <proc>".into()));
                }
                file.entry = Some((id(toks[1])?, id(toks[2])?));
            }
            Some("GLOBAL") => {
                if env.is_some() {
                    return Err(err("GLOBAL after the first event".into()));
                }
                if toks.len() != 5 {
                    return Err(err("expected GLOBAL <comp> <name> <size> public|private".into()));
                }
                let public = match toks[4] {
                    "public" => true,
                    "private" => false,
                    other => return Err(err(format!("bad visibility `{other}`"))),
                };
                file.globals.push((id(toks[1])?, GlobalDecl {
                    name: id(toks[2])?,
                    size: num(toks[3])?,
                    public,
                }));
            }
            Some("I") => {
                if env.is_none() {
                    env = Some(file.global_env());
                }
                let at = toks
                    .iter()
                    .position(|t| t.starts_with('@'))
                    .ok_or_else(|| err("missing @<comp>.<proc>".into()))?;
                let event = event_from_tokens(&toks[1..at], line)?;
                let (fc, fp) = toks[at][1..]
                    .split_once('.')
                    .ok_or_else(|| err("expected @<comp>.<proc>".into()))?;
                let f = (id(fc)?, id(fp)?);
                let extra = &toks[at + 1..];
                let ie = match &event {
                    Event::Call { .. } => {
                        let [sig] = extra else {
                            return Err(err("call needs <arity>:ret|void".into()));
                        };
                        let (n, r) = sig
                            .split_once(':')
                            .ok_or_else(|| err("expected <arity>:ret|void".into()))?;
                        let returns = match r {
                            "ret" => true,
                            "void" => false,
                            other => return Err(err(format!("bad signature `{other}`"))),
                        };
                        InformativeEvent::call(f, event, Signature::new(num(n)?, returns), vec![])
                    }
                    Event::Return { .. } => {
                        if !extra.is_empty() {
                            return Err(err("trailing fields".into()));
                        }
                        InformativeEvent::ret(f, event, vec![])
                    }
                    Event::Syscall { .. } => {
                        let [buf] = extra else {
                            return Err(err("syscall needs its buffer".into()));
                        };
                        InformativeEvent::sys(f, event, id(buf)?, vec![])
                    }
                    Event::Undef(_) => {
                        return Err(err("Undef is not an informative event".into()))
                    }
                };
                file.events.push(ie);
            }
            Some("DELTA") => {
                let env = env.get_or_insert_with(|| file.global_env());
                let Some(last) = file.events.last_mut() else {
                    return Err(err("DELTA before any event".into()));
                };
                if toks.len() < 3 {
                    return Err(err("truncated DELTA".into()));
                }
                let comp = id(toks[2])?;
                let block = |t: &str| -> Result<BlockId, TraceParseError> {
                    if let Some(n) = t.strip_prefix('#') {
                        return Ok(BlockId(num(n)?));
                    }
                    env.lookup(&comp, &id(t)?)
                        .ok_or_else(|| err(format!("unknown global `{t}` of {comp}")))
                };
                let arity = |n: usize| {
                    if toks.len() == n {
                        Ok(())
                    } else {
                        Err(err(format!("DELTA {} expects {} fields", toks[1], n - 2)))
                    }
                };
                let d = match toks[1] {
                    "store" => {
                        arity(6)?;
                        MemDelta::Store {
                            block: block(toks[3])?,
                            offset: num(toks[4])?,
                            value: toks[5].parse().map_err(err)?,
                            comp: comp.clone(),
                        }
                    }
                    "bytes" => {
                        arity(6)?;
                        let inner = toks[5]
                            .strip_prefix('(')
                            .and_then(|t| t.strip_suffix(')'))
                            .ok_or_else(|| err("expected (<values>)".into()))?;
                        let values = if inner.is_empty() {
                            Vec::new()
                        } else {
                            inner
                                .split(',')
                                .map(|v| v.parse::<i64>().map_err(|_| err(format!("bad byte `{v}`"))))
                                .collect::<Result<_, _>>()?
                        };
                        MemDelta::Bytes {
                            block: block(toks[3])?,
                            offset: num(toks[4])?,
                            values,
                            comp: comp.clone(),
                        }
                    }
                    "alloc" => {
                        arity(4)?;
                        MemDelta::Alloc {
                            comp: comp.clone(),
                            size: num(toks[3])?,
                        }
                    }
                    "free" => {
                        arity(4)?;
                        MemDelta::Free {
                            block: block(toks[3])?,
                            comp: comp.clone(),
                        }
                    }
                    other => return Err(err(format!("unknown delta `{other}`"))),
                };
                match last {
                    InformativeEvent::Icall { deltas, .. }
                    | InformativeEvent::Ireturn { deltas, .. }
                    | InformativeEvent::Isys { deltas, .. } => deltas.push(d),
                }
            }
            Some(other) => return Err(err(format!("unknown line kind `{other}`"))),
        }
    }
    Ok(file)
}
