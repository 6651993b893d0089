//! Line formats for traces and IO scripts.

use std::fmt::Write;

use thiserror::Error;

use super::{Event, IoScript};
use crate::lang::Ident;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct TraceParseError {
    pub line: usize,
    pub msg: String,
}

impl TraceParseError {
    pub(crate) fn new(line: usize, msg: impl Into<String>) -> Self {
        TraceParseError {
            line,
            msg: msg.into(),
        }
    }
}

fn list(out: &mut String, open: char, xs: &[i64], close: char) {
    out.push(open);
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{x}").unwrap();
    }
    out.push(close);
}

pub(crate) fn write_event(out: &mut String, e: &Event) {
    match e {
        Event::Call {
            caller,
            callee,
            proc,
            args,
        } => {
            write!(out, "CALL {caller} {callee}.{proc} ").unwrap();
            list(out, '(', args, ')');
        }
        Event::Return {
            callee,
            caller,
            value,
        } => {
            write!(out, "RET {callee} {caller} ").unwrap();
            match value {
                Some(v) => write!(out, "{v}").unwrap(),
                None => out.push_str("void"),
            }
        }
        Event::Syscall {
            comp,
            name,
            args,
            read_bytes,
            ret,
            written_bytes,
        } => {
            write!(out, "SYS {comp} {name} ").unwrap();
            list(out, '(', args, ')');
            out.push(' ');
            list(out, '[', read_bytes, ']');
            write!(out, " -> {ret} ").unwrap();
            list(out, '[', written_bytes, ']');
        }
        Event::Undef(k) => write!(out, "UB {k}").unwrap(),
    }
}

/// One event per line, each line newline-terminated.
pub fn serialize_trace(t: &[Event]) -> String {
    let mut out = String::new();
    for e in t {
        write_event(&mut out, e);
        out.push('\n');
    }
    out
}

fn ident(tok: &str, line: usize) -> Result<Ident, TraceParseError> {
    Ident::parse(tok).ok_or_else(|| TraceParseError::new(line, format!("bad name `{tok}`")))
}

fn int(tok: &str, line: usize) -> Result<i64, TraceParseError> {
    tok.parse()
        .map_err(|_| TraceParseError::new(line, format!("bad integer `{tok}`")))
}

fn int_list(tok: &str, open: char, close: char, line: usize) -> Result<Vec<i64>, TraceParseError> {
    let inner = tok
        .strip_prefix(open)
        .and_then(|t| t.strip_suffix(close))
        .ok_or_else(|| TraceParseError::new(line, format!("expected {open}...{close}, got `{tok}`")))?;
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|x| int(x, line)).collect()
}

/// Parses one event from already-split tokens.
pub(crate) fn event_from_tokens(toks: &[&str], line: usize) -> Result<Event, TraceParseError> {
    let arity = |n: usize| {
        if toks.len() == n {
            Ok(())
        } else {
            Err(TraceParseError::new(line, format!("`{}` expects {} fields", toks[0], n - 1)))
        }
    };
    match toks.first().copied() {
        Some("CALL") => {
            arity(4)?;
            let (c, p) = toks[2]
                .split_once('.')
                .ok_or_else(|| TraceParseError::new(line, "expected <callee>.<proc>"))?;
            Ok(Event::Call {
                caller: ident(toks[1], line)?,
                callee: ident(c, line)?,
                proc: ident(p, line)?,
                args: int_list(toks[3], '(', ')', line)?,
            })
        }
        Some("RET") => {
            arity(4)?;
            Ok(Event::Return {
                callee: ident(toks[1], line)?,
                caller: ident(toks[2], line)?,
                value: match toks[3] {
                    "void" => None,
                    v => Some(int(v, line)?),
                },
            })
        }
        Some("SYS") => {
            arity(8)?;
            if toks[5] != "->" {
                return Err(TraceParseError::new(line, "expected `->`"));
            }
            Ok(Event::Syscall {
                comp: ident(toks[1], line)?,
                name: toks[2]
                    .parse()
                    .map_err(|_| TraceParseError::new(line, format!("bad syscall `{}`", toks[2])))?,
                args: int_list(toks[3], '(', ')', line)?,
                read_bytes: int_list(toks[4], '[', ']', line)?,
                ret: int(toks[6], line)?,
                written_bytes: int_list(toks[7], '[', ']', line)?,
            })
        }
        Some("UB") => {
            arity(2)?;
            Ok(Event::Undef(ident(toks[1], line)?))
        }
        Some(other) => Err(TraceParseError::new(line, format!("unknown event `{other}`"))),
        None => Err(TraceParseError::new(line, "empty line")),
    }
}

pub fn parse_event(text: &str) -> Result<Event, TraceParseError> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    event_from_tokens(&toks, 1)
}

/// Inverse of [`serialize_trace`]. Blank lines are ignored.
pub fn parse_trace(text: &str) -> Result<Vec<Event>, TraceParseError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        out.push(event_from_tokens(&toks, i + 1)?);
    }
    Ok(out)
}

/// `READ <bytes...>` lines, then `WRITEACK <int>` lines.
pub fn serialize_io(io: &IoScript) -> String {
    let mut out = String::new();
    for chunk in &io.reads {
        out.push_str("READ");
        for b in chunk {
            write!(out, " {b}").unwrap();
        }
        out.push('\n');
    }
    for a in &io.acks {
        writeln!(out, "WRITEACK {a}").unwrap();
    }
    out
}

pub fn parse_io(text: &str) -> Result<IoScript, TraceParseError> {
    let mut reads = Vec::new();
    let mut acks = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        let mut toks = l.split_whitespace();
        match toks.next() {
            None => {}
            Some("READ") => {
                let chunk = toks.map(|t| int(t, line)).collect::<Result<Vec<_>, _>>()?;
                if chunk.iter().any(|b| !(0..=255).contains(b)) {
                    return Err(TraceParseError::new(line, "read bytes must be in 0..=255"));
                }
                reads.push(chunk);
            }
            Some("WRITEACK") => {
                let a = toks
                    .next()
                    .ok_or_else(|| TraceParseError::new(line, "WRITEACK needs a count"))?;
                acks.push(int(a, line)?);
                if toks.next().is_some() {
                    return Err(TraceParseError::new(line, "trailing fields"));
                }
            }
            Some(other) => {
                return Err(TraceParseError::new(line, format!("unknown directive `{other}`")))
            }
        }
    }
    Ok(IoScript::new(reads, acks))
}
