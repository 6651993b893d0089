//! The compartmentalized source language: programs are sets of compartments,
//! each with an interface (exports, imports, allowed syscalls), global scalar
//! buffers, and procedures over 64-bit scalars.

mod check;
mod parse;
mod print;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::sexp::{Pos, SexpError};

pub use check::{always_returns, check_interfaces, check_partial};
pub use parse::{parse_interface, parse_program};
pub use print::{print_compartment, print_interface, print_program};

/// Procedures take at most this many parameters.
pub const MAX_PARAMS: usize = 16;
/// Arguments beyond this many are spilled to a caller-allocated frame.
pub const REG_ARGS: usize = 8;

/// A name token over `[A-Za-z0-9_]`. Cheap to clone.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ident(Arc<str>);

impl Ident {
    pub fn parse(s: &str) -> Option<Ident> {
        let ok = !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        ok.then(|| Ident(Arc::from(s)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Ident {
    fn from(s: &str) -> Ident {
        Ident::parse(s).unwrap_or_else(|| panic!("invalid identifier `{s}`"))
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature {
    pub params: usize,
    pub returns: bool,
}

impl Signature {
    pub const fn new(params: usize, returns: bool) -> Self {
        Signature { params, returns }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.params, if self.returns { "ret" } else { "void" })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Syscall {
    Read,
    Write,
}

impl Syscall {
    pub const ALL: [Syscall; 2] = [Syscall::Read, Syscall::Write];

    pub fn name(self) -> &'static str {
        match self {
            Syscall::Read => "read",
            Syscall::Write => "write",
        }
    }
}

impl fmt::Display for Syscall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Syscall {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "read" => Ok(Syscall::Read),
            "write" => Ok(Syscall::Write),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Eq,
    Ne,
    Le,
    And,
    Or,
}

impl BinOp {
    pub const ALL: [BinOp; 11] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::Lt,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Le,
        BinOp::And,
        BinOp::Or,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Le => "<=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// Wrap-around arithmetic; `None` is undefined behavior (division or
    /// remainder by zero).
    pub fn eval(self, a: i64, b: i64) -> Option<i64> {
        Some(match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return None;
                }
                a.wrapping_div(b)
            }
            BinOp::Rem => {
                if b == 0 {
                    return None;
                }
                a.wrapping_rem(b)
            }
            BinOp::Lt => (a < b) as i64,
            BinOp::Eq => (a == b) as i64,
            BinOp::Ne => (a != b) as i64,
            BinOp::Le => (a <= b) as i64,
            BinOp::And => (a != 0 && b != 0) as i64,
            BinOp::Or => (a != 0 || b != 0) as i64,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Not,
    Neg,
}

impl UnOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnOp::Not => "not",
            UnOp::Neg => "neg",
        }
    }

    pub fn eval(self, a: i64) -> i64 {
        match self {
            UnOp::Not => (a == 0) as i64,
            UnOp::Neg => a.wrapping_neg(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Const(i64),
    Local(Ident),
    GLoad(Ident, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Un(UnOp, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn gload(g: Ident, off: Expr) -> Expr {
        Expr::GLoad(g, Box::new(off))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CallTarget {
    /// A procedure of the enclosing compartment.
    Internal(Ident),
    /// `COMP.PROC` in another compartment.
    Cross(Ident, Ident),
    /// `sys.read` / `sys.write` on a global buffer of the caller; the single
    /// argument is the element count.
    Sys(Syscall, Ident),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stmt {
    Skip,
    Seq(Vec<Stmt>),
    Assign(Ident, Expr),
    GStore {
        global: Ident,
        offset: Expr,
        value: Expr,
    },
    If(Expr, Box<Stmt>, Box<Stmt>),
    While(Expr, Box<Stmt>),
    Call {
        dest: Option<Ident>,
        target: CallTarget,
        args: Vec<Expr>,
    },
    Return(Option<Expr>),
}

impl Stmt {
    pub fn seq(mut stmts: Vec<Stmt>) -> Stmt {
        match stmts.len() {
            0 => Stmt::Skip,
            1 => stmts.pop().unwrap(),
            _ => Stmt::Seq(stmts),
        }
    }

    pub fn if_(c: Expr, t: Stmt, e: Stmt) -> Stmt {
        Stmt::If(c, Box::new(t), Box::new(e))
    }

    pub fn gstore(global: Ident, offset: Expr, value: Expr) -> Stmt {
        Stmt::GStore {
            global,
            offset,
            value,
        }
    }

    /// Visits this statement and every nested statement, parents first.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Stmt)) {
        let mut work = vec![self];
        while let Some(s) = work.pop() {
            f(s);
            match s {
                Stmt::Seq(ss) => work.extend(ss.iter().rev()),
                Stmt::If(_, a, b) => {
                    work.push(b);
                    work.push(a);
                }
                Stmt::While(_, b) => work.push(b),
                _ => {}
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalDecl {
    pub name: Ident,
    /// Number of 64-bit slots.
    pub size: usize,
    pub public: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcBody {
    pub params: Vec<Ident>,
    pub locals: Vec<Ident>,
    pub body: Stmt,
}

impl ProcBody {
    fn has_value_return(&self) -> bool {
        let mut found = false;
        self.body.walk(&mut |s| {
            if let Stmt::Return(Some(_)) = s {
                found = true;
            }
        });
        found
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompartmentDecl {
    pub name: Ident,
    pub exports: BTreeMap<Ident, Signature>,
    /// Keyed by (compartment, procedure).
    pub imports: BTreeMap<(Ident, Ident), Signature>,
    pub syscalls: BTreeSet<Syscall>,
    pub globals: Vec<GlobalDecl>,
    pub procs: BTreeMap<Ident, ProcBody>,
}

impl CompartmentDecl {
    pub fn new(name: Ident) -> Self {
        CompartmentDecl {
            name,
            exports: BTreeMap::new(),
            imports: BTreeMap::new(),
            syscalls: BTreeSet::new(),
            globals: Vec::new(),
            procs: BTreeMap::new(),
        }
    }

    pub fn global(&self, name: &Ident) -> Option<&GlobalDecl> {
        self.globals.iter().find(|g| &g.name == name)
    }

    /// The declared signature for exported procedures; for internal ones the
    /// arity of the body, returning a value iff some `return` carries one.
    pub fn proc_signature(&self, name: &Ident) -> Option<Signature> {
        if let Some(sig) = self.exports.get(name) {
            return Some(*sig);
        }
        let body = self.procs.get(name)?;
        Some(Signature::new(body.params.len(), body.has_value_return()))
    }

    pub fn interface(&self) -> CompInterface {
        CompInterface {
            exports: self.exports.clone(),
            imports: self.imports.clone(),
            syscalls: self.syscalls.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub compartments: BTreeMap<Ident, CompartmentDecl>,
    /// Entry point; absent for partial programs.
    pub main: Option<(Ident, Ident)>,
}

impl Program {
    pub fn empty() -> Self {
        Program {
            compartments: BTreeMap::new(),
            main: None,
        }
    }

    pub fn from_compartments(
        comps: impl IntoIterator<Item = CompartmentDecl>,
        main: Option<(Ident, Ident)>,
    ) -> Self {
        Program {
            compartments: comps.into_iter().map(|c| (c.name.clone(), c)).collect(),
            main,
        }
    }

    pub fn interface(&self) -> Interface {
        Interface {
            comps: self
                .compartments
                .iter()
                .map(|(k, c)| (k.clone(), c.interface()))
                .collect(),
        }
    }

    pub fn entry(&self) -> Result<(Ident, Ident), LangError> {
        let (c, p) = self.main.clone().ok_or(LangError::NoMain)?;
        let comp = self.compartments.get(&c).ok_or(LangError::NoMain)?;
        if !comp.procs.contains_key(&p) {
            return Err(LangError::NoMain);
        }
        Ok((c, p))
    }

    /// `(in ks, rest)`. The entry point follows the half that holds its
    /// compartment.
    pub fn split(&self, ks: &BTreeSet<Ident>) -> Result<(Program, Program), LangError> {
        if let Some(k) = ks.iter().find(|k| !self.compartments.contains_key(*k)) {
            return Err(LangError::UnknownCompartment(k.clone()));
        }
        let mut inside = Program::empty();
        let mut outside = Program::empty();
        for (name, comp) in &self.compartments {
            let half = if ks.contains(name) {
                &mut inside
            } else {
                &mut outside
            };
            half.compartments.insert(name.clone(), comp.clone());
        }
        if let Some((c, p)) = &self.main {
            let half = if ks.contains(c) {
                &mut inside
            } else {
                &mut outside
            };
            half.main = Some((c.clone(), p.clone()));
        }
        Ok((inside, outside))
    }

    /// Source-level linking. Imports naming a compartment present in the
    /// union must resolve to a matching export; imports into compartments
    /// still absent are left for a later link.
    pub fn link(&self, other: &Program) -> Result<Program, LangError> {
        let mut out = self.clone();
        for (name, comp) in &other.compartments {
            if out.compartments.contains_key(name) {
                return Err(LangError::NameClash(name.clone()));
            }
            out.compartments.insert(name.clone(), comp.clone());
        }
        out.main = match (&self.main, &other.main) {
            (Some(_), Some(_)) => return Err(LangError::NameClash(Ident::from("main"))),
            (Some(m), None) | (None, Some(m)) => Some(m.clone()),
            (None, None) => None,
        };
        check_partial(&out)?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CompInterface {
    pub exports: BTreeMap<Ident, Signature>,
    pub imports: BTreeMap<(Ident, Ident), Signature>,
    pub syscalls: BTreeSet<Syscall>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Interface {
    pub comps: BTreeMap<Ident, CompInterface>,
}

impl Interface {
    pub fn get(&self, c: &Ident) -> Option<&CompInterface> {
        self.comps.get(c)
    }

    /// Restriction to `ks`; imports of the kept compartments are preserved as
    /// declared even when they name compartments outside `ks`.
    pub fn project(&self, ks: &BTreeSet<Ident>) -> Result<Interface, LangError> {
        if let Some(k) = ks.iter().find(|k| !self.comps.contains_key(*k)) {
            return Err(LangError::UnknownCompartment(k.clone()));
        }
        Ok(Interface {
            comps: self
                .comps
                .iter()
                .filter(|(k, _)| ks.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        })
    }

    /// The signature under which `caller` may call `callee.proc`, if the
    /// callee exports it and the caller imports it with the same signature.
    pub fn allowed_call(&self, caller: &Ident, callee: &Ident, proc: &Ident) -> Option<Signature> {
        let exported = *self.comps.get(callee)?.exports.get(proc)?;
        let imported = *self
            .comps
            .get(caller)?
            .imports
            .get(&(callee.clone(), proc.clone()))?;
        (exported == imported).then_some(exported)
    }
}

/// Free-function form of [`Interface::project`].
pub fn project_interface(i: &Interface, ks: &BTreeSet<Ident>) -> Result<Interface, LangError> {
    i.project(ks)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LangError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("duplicate {kind} `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("unknown {kind} `{name}` referenced from {context}")]
    UnknownReference {
        kind: &'static str,
        name: String,
        context: String,
    },
    #[error("{comp} imports {target}.{proc}, which is not exported")]
    ImportUnresolved {
        comp: Ident,
        target: Ident,
        proc: Ident,
    },
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error("{comp} uses syscall `{syscall}` without allowing it")]
    SyscallNotAllowed { comp: Ident, syscall: Syscall },
    #[error("compartment `{0}` defined on both sides of a link")]
    NameClash(Ident),
    #[error("unknown compartment `{0}`")]
    UnknownCompartment(Ident),
    #[error("program has no entry point")]
    NoMain,
    #[error("{comp} exports `{proc}` without defining it")]
    MissingBody { comp: Ident, proc: Ident },
    #[error("{0} imports from itself")]
    SelfImport(Ident),
    #[error("{comp}.{proc}: {msg}")]
    Ill {
        comp: Ident,
        proc: Ident,
        msg: String,
    },
}

impl From<SexpError> for LangError {
    fn from(e: SexpError) -> Self {
        LangError::Syntax {
            pos: e.pos,
            msg: e.msg,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "
        (compartment C0 (exports (main 0 ret)) (imports (C1 g 1 ret) (C2 h 0 void))
          (proc main () (locals x) (call x C1.g 4) (call _ C2.h) (return x)))
        (compartment C1 (exports (g 1 ret)) (imports (C2 h 0 void))
          (proc g (a) (return (op + a 1))))
        (compartment C2 (exports (h 0 void)) (syscalls write) (global out 2 public)
          (proc h () (call _ sys.write out 1) (return)))";

    fn set(names: &[&str]) -> BTreeSet<Ident> {
        names.iter().map(|n| Ident::from(*n)).collect()
    }

    #[test]
    fn ident_charset() {
        assert!(Ident::parse("C_0x").is_some());
        assert!(Ident::parse("").is_none());
        assert!(Ident::parse("a.b").is_none());
    }

    #[test]
    fn binop_wraps_and_flags_division_by_zero() {
        assert_eq!(BinOp::Add.eval(i64::MAX, 1), Some(i64::MIN));
        assert_eq!(BinOp::Div.eval(i64::MIN, -1), Some(i64::MIN));
        assert_eq!(BinOp::Div.eval(1, 0), None);
        assert_eq!(BinOp::Rem.eval(7, 0), None);
        assert_eq!(BinOp::Rem.eval(-7, 2), Some(-1));
        assert_eq!(BinOp::And.eval(3, 0), Some(0));
        assert_eq!(BinOp::Or.eval(0, -5), Some(1));
    }

    #[test]
    fn project_over_all_is_identity_and_over_none_is_empty() {
        let p = parse_program(THREE).unwrap();
        let i = p.interface();
        let all: BTreeSet<Ident> = p.compartments.keys().cloned().collect();
        assert_eq!(i.project(&all).unwrap(), i);
        assert_eq!(i.project(&BTreeSet::new()).unwrap(), Interface::default());
    }

    #[test]
    fn project_single_compartment_matches_its_record() {
        let p = parse_program(THREE).unwrap();
        let i = p.interface();
        let c1 = i.project(&set(&["C1"])).unwrap();
        assert_eq!(c1.comps.len(), 1);
        let rec = &c1.comps[&Ident::from("C1")];
        let decl = &p.compartments[&Ident::from("C1")];
        assert_eq!(rec.exports, decl.exports);
        assert_eq!(rec.imports, decl.imports);
        assert_eq!(rec.syscalls, decl.syscalls);
        // imports leaving the projection are kept as declared
        assert!(rec.imports.contains_key(&(Ident::from("C2"), Ident::from("h"))));
    }

    #[test]
    fn project_unknown_compartment_fails() {
        let p = parse_program(THREE).unwrap();
        assert_eq!(
            p.interface().project(&set(&["C9"])),
            Err(LangError::UnknownCompartment(Ident::from("C9")))
        );
    }

    #[test]
    fn split_edge_cases() {
        let p = parse_program(THREE).unwrap();
        let (a, b) = p.split(&BTreeSet::new()).unwrap();
        assert!(a.compartments.is_empty());
        assert_eq!(b, p);
        let all: BTreeSet<Ident> = p.compartments.keys().cloned().collect();
        let (a, b) = p.split(&all).unwrap();
        assert_eq!(a, p);
        assert!(b.compartments.is_empty());
        assert!(matches!(
            p.split(&set(&["nope"])),
            Err(LangError::UnknownCompartment(_))
        ));
    }

    #[test]
    fn split_then_link_round_trips() {
        let p = parse_program(THREE).unwrap();
        for ks in [set(&["C0"]), set(&["C1", "C2"]), set(&["C2"])] {
            let (a, b) = p.split(&ks).unwrap();
            assert_eq!(a.link(&b).unwrap(), p);
            assert_eq!(b.link(&a).unwrap(), p);
        }
    }

    #[test]
    fn link_rejects_name_clash() {
        let p = parse_program(THREE).unwrap();
        let (a, _) = p.split(&set(&["C1"])).unwrap();
        assert_eq!(a.link(&a), Err(LangError::NameClash(Ident::from("C1"))));
    }

    #[test]
    fn interface_projection_commutes_with_split() {
        let p = parse_program(THREE).unwrap();
        let ks = set(&["C0", "C2"]);
        let (a, _) = p.split(&ks).unwrap();
        assert_eq!(p.interface().project(&ks).unwrap(), a.interface());
    }
}
