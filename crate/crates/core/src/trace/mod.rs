//! Observable events, finite trace prefixes and the relations between them,
//! the scripted IO oracle, and the informative events of the intermediate
//! trace language.

mod informative;
mod wire;

pub use informative::{
    parse_itrace, project, serialize_itrace, InformativeEvent, ItraceFile, MemDelta,
};
pub use wire::{parse_event, parse_io, parse_trace, serialize_io, serialize_trace, TraceParseError};

use crate::lang::{Ident, Syscall};

/// Byte arguments and results of syscalls are Ints in `0..=255`; a single
/// `read` or `write` moves at most this many of them.
pub const IO_CAP: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Event {
    Call {
        caller: Ident,
        callee: Ident,
        proc: Ident,
        args: Vec<i64>,
    },
    Return {
        callee: Ident,
        caller: Ident,
        value: Option<i64>,
    },
    Syscall {
        comp: Ident,
        name: Syscall,
        args: Vec<i64>,
        read_bytes: Vec<i64>,
        ret: i64,
        written_bytes: Vec<i64>,
    },
    Undef(Ident),
}

impl Event {
    pub fn is_undef(&self) -> bool {
        matches!(self, Event::Undef(_))
    }

    /// The compartment performing the event: the caller of a call, the
    /// returning callee, the compartment issuing a syscall, the blamed one.
    pub fn actor(&self) -> &Ident {
        match self {
            Event::Call { caller, .. } => caller,
            Event::Return { callee, .. } => callee,
            Event::Syscall { comp, .. } => comp,
            Event::Undef(k) => k,
        }
    }
}

pub type Trace = Vec<Event>;

/// `Undef` may appear only as the last event.
pub fn undef_terminal(t: &[Event]) -> bool {
    t.iter().rev().skip(1).all(|e| !e.is_undef())
}

/// `m1 ≼ m2`: equal when `m1` is Undef-free, otherwise `m1 = m0·Undef(k)`
/// with `m0` a prefix of `m2`.
pub fn prefix_rel(m1: &[Event], m2: &[Event]) -> bool {
    match m1.split_last() {
        Some((Event::Undef(_), m0)) => {
            m0.iter().all(|e| !e.is_undef()) && m2.len() >= m0.len() && &m2[..m0.len()] == m0
        }
        _ => m1.iter().all(|e| !e.is_undef()) && m1 == m2,
    }
}

/// `m1 ≼_good m2`: [`prefix_rel`] where a trailing `Undef(k)` also needs
/// `k ∈ good`.
pub fn blame_rel<'a>(
    m1: &[Event],
    m2: &[Event],
    good: impl IntoIterator<Item = &'a Ident>,
) -> bool {
    if !prefix_rel(m1, m2) {
        return false;
    }
    match m1.last() {
        Some(Event::Undef(k)) => good.into_iter().any(|g| g == k),
        _ => true,
    }
}

/// Every `Return` matches the innermost open `Call` (same compartment pair),
/// up to the first `Undef`. Open calls at the end are allowed: traces are
/// prefixes.
pub fn well_bracketed(t: &[Event]) -> bool {
    let mut open: Vec<(&Ident, &Ident)> = Vec::new();
    for e in t {
        match e {
            Event::Call { caller, callee, .. } => open.push((caller, callee)),
            Event::Return { callee, caller, .. } => match open.pop() {
                Some((c, k)) if c == caller && k == callee => {}
                _ => return false,
            },
            Event::Syscall { .. } => {}
            Event::Undef(_) => break,
        }
    }
    true
}

/// Scripted results for syscalls: each `read` consumes the next chunk, each
/// `write` the next acknowledgement. An exhausted script reads nothing and
/// acknowledges zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IoScript {
    pub reads: Vec<Vec<i64>>,
    pub acks: Vec<i64>,
    read_pos: usize,
    ack_pos: usize,
}

impl IoScript {
    pub fn new(reads: Vec<Vec<i64>>, acks: Vec<i64>) -> Self {
        IoScript {
            reads,
            acks,
            read_pos: 0,
            ack_pos: 0,
        }
    }

    pub fn next_read(&mut self) -> Vec<i64> {
        let chunk = self.reads.get(self.read_pos).cloned().unwrap_or_default();
        self.read_pos += 1;
        chunk
    }

    pub fn next_ack(&mut self) -> i64 {
        let ack = self.acks.get(self.ack_pos).copied().unwrap_or(0);
        self.ack_pos += 1;
        ack
    }

    /// The same script, rewound.
    pub fn rewound(&self) -> IoScript {
        IoScript::new(self.reads.clone(), self.acks.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(a: &str, b: &str) -> Event {
        Event::Call {
            caller: Ident::from(a),
            callee: Ident::from(b),
            proc: Ident::from("g"),
            args: vec![1],
        }
    }

    fn ret(b: &str, a: &str) -> Event {
        Event::Return {
            callee: Ident::from(b),
            caller: Ident::from(a),
            value: Some(0),
        }
    }

    fn ub(k: &str) -> Event {
        Event::Undef(Ident::from(k))
    }

    #[test]
    fn prefix_relation_cases() {
        let m = vec![call("C0", "C1"), ret("C1", "C0")];
        assert!(prefix_rel(&m, &m));
        assert!(prefix_rel(&[call("C0", "C1"), ub("C0")], &m));
        assert!(prefix_rel(&[ub("C0")], &m));
        assert!(prefix_rel(&[ub("C0")], &[]));
        assert!(!prefix_rel(&[call("C0", "C1")], &[call("C0", "C2")]));
        assert!(!prefix_rel(&m[..1], &m));
        assert!(!prefix_rel(&[call("C0", "C2"), ub("C0")], &m));
    }

    #[test]
    fn blame_relation_cases() {
        let m = vec![call("C0", "C1"), ret("C1", "C0")];
        let c1 = Ident::from("C1");
        let c2 = Ident::from("C2");
        assert!(blame_rel(&m, &m, []));
        let m1 = vec![call("C0", "C1"), ub("C1")];
        assert!(blame_rel(&m1, &m, [&c1]));
        assert!(!blame_rel(&m1, &m, [&c2]));
        assert!(blame_rel(&m1, &m, [&c2, &c1]));
    }

    #[test]
    fn bracketing() {
        assert!(well_bracketed(&[call("C0", "C1"), call("C1", "C2"), ret("C2", "C1")]));
        assert!(!well_bracketed(&[call("C0", "C1"), ret("C2", "C1")]));
        assert!(!well_bracketed(&[ret("C1", "C0")]));
        assert!(well_bracketed(&[call("C0", "C1"), ub("C1"), ret("C2", "C0")]));
    }

    #[test]
    fn io_script_exhaustion() {
        let mut io = IoScript::new(vec![vec![7, 8]], vec![3]);
        assert_eq!(io.next_read(), vec![7, 8]);
        assert_eq!(io.next_read(), Vec::<i64>::new());
        assert_eq!(io.next_ack(), 3);
        assert_eq!(io.next_ack(), 0);
        assert_eq!(io.rewound().next_ack(), 3);
    }

    #[test]
    fn undef_only_last() {
        assert!(undef_terminal(&[call("C0", "C1"), ub("C1")]));
        assert!(!undef_terminal(&[ub("C1"), call("C0", "C1")]));
        assert!(undef_terminal(&[]));
    }
}
