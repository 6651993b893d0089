//! Source to target compilation.
//!
//! Two passes. The first flattens each procedure body into three-address
//! code over frame slots with symbolic labels. The second selects target
//! instructions, applies the calling convention and resolves labels to
//! instruction indices. Every variable and temporary lives in the frame; all
//! registers are caller-saved.
//!
//! Frame layout: slot 0 saved `sp`, slot 1 saved `ra`, then parameters,
//! locals and per-statement temporaries.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::lang::{
    check_interfaces, check_partial, BinOp, CallTarget, CompartmentDecl, Expr, Ident, LangError, ProcBody,
    Program, Stmt, Syscall, UnOp, REG_ARGS,
};
use crate::target::{Instr, JumpTarget, Reg, TComp, TargetProgram};

/// Upper bound on the instructions of one procedure.
pub const MAX_PROC_CODE: usize = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error("{comp}.{proc} takes {arity} parameters but argument spilling is disabled")]
    TooManyParams {
        comp: Ident,
        proc: Ident,
        arity: usize,
    },
    #[error("unsupported construct in {comp}.{proc}: {what}")]
    UnsupportedConstruct {
        comp: Ident,
        proc: Ident,
        what: String,
    },
    #[error("{comp}.{proc} exceeds the code size limit")]
    CodeTooLarge { comp: Ident, proc: Ident },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompileOptions {
    /// Pass surplus arguments through a spill frame. Without it, any call or
    /// procedure with more than eight parameters is rejected.
    pub spill: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { spill: true }
    }
}

type Slot = usize;
type Label = usize;

#[derive(Clone, Debug)]
enum Callee {
    Internal(Ident),
    Cross(Ident, Ident),
}

#[derive(Clone, Debug)]
enum Tac {
    Const(Slot, i64),
    Copy(Slot, Slot),
    Bin(BinOp, Slot, Slot, Slot),
    Un(UnOp, Slot, Slot),
    GLoad(Slot, Ident, Slot),
    GStore(Ident, Slot, Slot),
    Label(Label),
    JumpIf(Slot, Label),
    Jump(Label),
    Call {
        dest: Option<Slot>,
        callee: Callee,
        args: Vec<Slot>,
        /// Holds the spill frame pointer across the call.
        spill_slot: Slot,
    },
    Sys {
        dest: Option<Slot>,
        name: Syscall,
        buffer: Ident,
        count: Slot,
    },
    Ret(Option<Slot>),
}

struct Lowering<'a> {
    body: &'a ProcBody,
    code: Vec<Tac>,
    temp_base: Slot,
    next_temp: Slot,
    max_slot: Slot,
    labels: Label,
}

impl<'a> Lowering<'a> {
    fn var(&self, x: &Ident) -> Option<Slot> {
        let np = self.body.params.len();
        self.body
            .params
            .iter()
            .position(|p| p == x)
            .map(|i| 2 + i)
            .or_else(|| self.body.locals.iter().position(|l| l == x).map(|i| 2 + np + i))
    }

    fn temp(&mut self) -> Slot {
        let t = self.next_temp;
        self.next_temp += 1;
        self.max_slot = self.max_slot.max(self.next_temp);
        t
    }

    fn label(&mut self) -> Label {
        self.labels += 1;
        self.labels - 1
    }

    fn expr(&mut self, e: &Expr) -> Result<Slot, String> {
        Ok(match e {
            Expr::Const(n) => {
                let t = self.temp();
                self.code.push(Tac::Const(t, *n));
                t
            }
            Expr::Local(x) => self.var(x).ok_or_else(|| format!("unknown variable `{x}`"))?,
            Expr::GLoad(g, off) => {
                let o = self.expr(off)?;
                let t = self.temp();
                self.code.push(Tac::GLoad(t, g.clone(), o));
                t
            }
            Expr::Bin(op, a, b) => {
                let a = self.expr(a)?;
                let b = self.expr(b)?;
                let t = self.temp();
                self.code.push(Tac::Bin(*op, t, a, b));
                t
            }
            Expr::Un(op, a) => {
                let a = self.expr(a)?;
                let t = self.temp();
                self.code.push(Tac::Un(*op, t, a));
                t
            }
        })
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), String> {
        self.next_temp = self.temp_base;
        match s {
            Stmt::Skip => {}
            Stmt::Seq(ss) => {
                for s in ss {
                    self.stmt(s)?;
                }
            }
            Stmt::Assign(x, e) => {
                let d = self.var(x).ok_or_else(|| format!("unknown variable `{x}`"))?;
                let v = self.expr(e)?;
                self.code.push(Tac::Copy(d, v));
            }
            Stmt::GStore {
                global,
                offset,
                value,
            } => {
                let o = self.expr(offset)?;
                let v = self.expr(value)?;
                self.code.push(Tac::GStore(global.clone(), o, v));
            }
            Stmt::If(c, a, b) => {
                let (l_then, l_end) = (self.label(), self.label());
                let c = self.expr(c)?;
                self.code.push(Tac::JumpIf(c, l_then));
                self.stmt(b)?;
                self.code.push(Tac::Jump(l_end));
                self.code.push(Tac::Label(l_then));
                self.stmt(a)?;
                self.code.push(Tac::Label(l_end));
            }
            Stmt::While(c, body) => {
                let (l_top, l_body, l_end) = (self.label(), self.label(), self.label());
                self.code.push(Tac::Label(l_top));
                let c = self.expr(c)?;
                self.code.push(Tac::JumpIf(c, l_body));
                self.code.push(Tac::Jump(l_end));
                self.code.push(Tac::Label(l_body));
                self.stmt(body)?;
                self.code.push(Tac::Jump(l_top));
                self.code.push(Tac::Label(l_end));
            }
            Stmt::Call { dest, target, args } => {
                let mut slots = Vec::with_capacity(args.len());
                for a in args {
                    slots.push(self.expr(a)?);
                }
                let dest = match dest {
                    Some(d) => Some(self.var(d).ok_or_else(|| format!("unknown variable `{d}`"))?),
                    None => None,
                };
                match target {
                    CallTarget::Sys(name, buffer) => {
                        let [count] = slots[..] else {
                            return Err(format!("`{name}` takes exactly one argument"));
                        };
                        self.code.push(Tac::Sys {
                            dest,
                            name: *name,
                            buffer: buffer.clone(),
                            count,
                        });
                    }
                    CallTarget::Internal(p) => {
                        let spill_slot = self.temp();
                        self.code.push(Tac::Call {
                            dest,
                            callee: Callee::Internal(p.clone()),
                            args: slots,
                            spill_slot,
                        });
                    }
                    CallTarget::Cross(c, p) => {
                        let spill_slot = self.temp();
                        self.code.push(Tac::Call {
                            dest,
                            callee: Callee::Cross(c.clone(), p.clone()),
                            args: slots,
                            spill_slot,
                        });
                    }
                }
            }
            Stmt::Return(e) => {
                let v = match e {
                    Some(e) => Some(self.expr(e)?),
                    None => None,
                };
                self.code.push(Tac::Ret(v));
            }
        }
        Ok(())
    }
}

fn t(i: u8) -> Reg {
    Reg::T(i)
}

fn select(
    comp: &Ident,
    tac: &[Tac],
    frame: usize,
    body: &ProcBody,
    void_fallthrough: bool,
) -> Vec<Instr> {
    let mut out = Vec::with_capacity(tac.len() * 3 + 8);
    let np = body.params.len();
    out.push(Instr::Enter(frame));
    for i in 0..np {
        if i < REG_ARGS {
            out.push(Instr::StoreF(2 + i, Reg::A(i as u8)));
        } else {
            out.push(Instr::LoadArg(t(0), i - REG_ARGS));
            out.push(Instr::StoreF(2 + i, t(0)));
        }
    }
    if !body.locals.is_empty() {
        out.push(Instr::Li(t(0), 0));
        for i in 0..body.locals.len() {
            out.push(Instr::StoreF(2 + np + i, t(0)));
        }
    }
    let mut labels: BTreeMap<Label, usize> = BTreeMap::new();
    let mut fixups: Vec<(usize, Label)> = Vec::new();
    let ret = |out: &mut Vec<Instr>| {
        out.push(Instr::Leave);
        out.push(Instr::Jr {
            flag: true,
            rs: Reg::Ra,
        });
    };
    for op in tac {
        match op {
            Tac::Const(d, n) => {
                out.push(Instr::Li(t(0), *n));
                out.push(Instr::StoreF(*d, t(0)));
            }
            Tac::Copy(d, s) => {
                out.push(Instr::LoadF(t(0), *s));
                out.push(Instr::StoreF(*d, t(0)));
            }
            Tac::Bin(o, d, a, b) => {
                out.push(Instr::LoadF(t(0), *a));
                out.push(Instr::LoadF(t(1), *b));
                out.push(Instr::Bin(*o, t(0), t(0), t(1)));
                out.push(Instr::StoreF(*d, t(0)));
            }
            Tac::Un(o, d, a) => {
                out.push(Instr::LoadF(t(0), *a));
                out.push(Instr::Un(*o, t(0), t(0)));
                out.push(Instr::StoreF(*d, t(0)));
            }
            Tac::GLoad(d, g, off) => {
                out.push(Instr::LoadF(t(1), *off));
                out.push(Instr::LoadG(t(0), g.clone(), t(1)));
                out.push(Instr::StoreF(*d, t(0)));
            }
            Tac::GStore(g, off, v) => {
                out.push(Instr::LoadF(t(0), *off));
                out.push(Instr::LoadF(t(1), *v));
                out.push(Instr::StoreG(g.clone(), t(0), t(1)));
            }
            Tac::Label(l) => {
                labels.insert(*l, out.len());
            }
            Tac::JumpIf(c, l) => {
                out.push(Instr::LoadF(t(0), *c));
                fixups.push((out.len(), *l));
                out.push(Instr::Jcond(t(0), usize::MAX));
            }
            Tac::Jump(l) => {
                fixups.push((out.len(), *l));
                out.push(Instr::Jmp(JumpTarget::Index(usize::MAX)));
            }
            Tac::Call {
                dest,
                callee,
                args,
                spill_slot,
            } => {
                let spilled = args.len() > REG_ARGS;
                if spilled {
                    out.push(Instr::Spill(t(0), args.len() - REG_ARGS));
                    out.push(Instr::StoreF(*spill_slot, t(0)));
                    for (i, a) in args[REG_ARGS..].iter().enumerate() {
                        out.push(Instr::LoadF(t(1), *a));
                        out.push(Instr::StoreP(t(0), i, t(1)));
                    }
                }
                for (i, a) in args.iter().take(REG_ARGS).enumerate() {
                    out.push(Instr::LoadF(Reg::A(i as u8), *a));
                }
                out.push(match callee {
                    Callee::Internal(p) => Instr::Jal {
                        flag: false,
                        comp: comp.clone(),
                        proc: p.clone(),
                    },
                    Callee::Cross(c, p) => Instr::Jal {
                        flag: true,
                        comp: c.clone(),
                        proc: p.clone(),
                    },
                });
                if let Some(d) = dest {
                    out.push(Instr::StoreF(*d, Reg::A(0)));
                }
                if spilled {
                    out.push(Instr::LoadF(t(0), *spill_slot));
                    out.push(Instr::SFree(t(0)));
                }
            }
            Tac::Sys {
                dest,
                name,
                buffer,
                count,
            } => {
                out.push(Instr::LoadF(Reg::A(0), *count));
                out.push(Instr::Sys(*name, buffer.clone()));
                if let Some(d) = dest {
                    out.push(Instr::StoreF(*d, Reg::A(0)));
                }
            }
            Tac::Ret(v) => {
                match v {
                    Some(v) => out.push(Instr::LoadF(Reg::A(0), *v)),
                    None => out.push(Instr::Li(Reg::A(0), 0)),
                }
                ret(&mut out);
            }
        }
    }
    if void_fallthrough {
        out.push(Instr::Li(Reg::A(0), 0));
        ret(&mut out);
    }
    for (at, l) in fixups {
        let target = labels[&l];
        match &mut out[at] {
            Instr::Jcond(_, idx) | Instr::Jmp(JumpTarget::Index(idx)) => *idx = target,
            _ => unreachable!("fixup on a non-jump"),
        }
    }
    out
}

fn compile_proc(
    c: &CompartmentDecl,
    name: &Ident,
    body: &ProcBody,
    opts: &CompileOptions,
) -> Result<Vec<Instr>, CompileError> {
    let unsupported = |what: String| CompileError::UnsupportedConstruct {
        comp: c.name.clone(),
        proc: name.clone(),
        what,
    };
    if !opts.spill {
        let mut arity = body.params.len();
        body.body.walk(&mut |s| {
            if let Stmt::Call { args, target, .. } = s {
                if !matches!(target, CallTarget::Sys(..)) {
                    arity = arity.max(args.len());
                }
            }
        });
        if arity > REG_ARGS {
            return Err(CompileError::TooManyParams {
                comp: c.name.clone(),
                proc: name.clone(),
                arity,
            });
        }
    }
    let mut bad = None;
    body.body.walk(&mut |s| {
        if let Stmt::Call {
            target: CallTarget::Cross(k, p),
            ..
        } = s
        {
            if k == &c.name {
                bad.get_or_insert_with(|| format!("cross call to own compartment `{k}.{p}`"));
            }
        }
    });
    if let Some(what) = bad {
        return Err(unsupported(what));
    }
    let temp_base = 2 + body.params.len() + body.locals.len();
    let mut low = Lowering {
        body,
        code: Vec::new(),
        temp_base,
        next_temp: temp_base,
        max_slot: temp_base,
        labels: 0,
    };
    low.stmt(&body.body).map_err(unsupported)?;
    let returns = c.proc_signature(name).is_some_and(|s| s.returns);
    let code = select(&c.name, &low.code, low.max_slot, body, !returns);
    if code.len() > MAX_PROC_CODE {
        return Err(CompileError::CodeTooLarge {
            comp: c.name.clone(),
            proc: name.clone(),
        });
    }
    Ok(code)
}

/// Compiles one compartment on its own. Whether a call crosses a boundary is
/// syntactic, so no other compartment is needed; interface checks on calls
/// and syscalls happen at run time.
pub fn compile_compartment(c: &CompartmentDecl) -> Result<TComp, CompileError> {
    compile_compartment_with(c, &CompileOptions::default())
}

pub fn compile_compartment_with(
    c: &CompartmentDecl,
    opts: &CompileOptions,
) -> Result<TComp, CompileError> {
    let mut procs = BTreeMap::new();
    for (name, body) in &c.procs {
        procs.insert(name.clone(), compile_proc(c, name, body, opts)?);
    }
    Ok(TComp {
        name: c.name.clone(),
        interface: c.interface(),
        globals: c.globals.clone(),
        procs,
    })
}

pub fn compile_program(p: &Program) -> Result<TargetProgram, CompileError> {
    compile_program_with(p, &CompileOptions::default())
}

pub fn compile_program_with(p: &Program, opts: &CompileOptions) -> Result<TargetProgram, CompileError> {
    check_interfaces(p)?;
    compile_checked(p, opts)
}

/// Compiles a partial program whose imports may name compartments that a
/// later link supplies.
pub fn compile_partial_with(p: &Program, opts: &CompileOptions) -> Result<TargetProgram, CompileError> {
    check_partial(p)?;
    compile_checked(p, opts)
}

fn compile_checked(p: &Program, opts: &CompileOptions) -> Result<TargetProgram, CompileError> {
    let mut tp = TargetProgram {
        comps: BTreeMap::new(),
        entry: p.main.clone(),
    };
    for (name, c) in &p.compartments {
        tp.comps.insert(name.clone(), compile_compartment_with(c, opts)?);
    }
    Ok(tp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;
    use crate::source::Outcome;
    use crate::target::trun;
    use crate::trace::{serialize_trace, IoScript};

    fn both(text: &str, io: IoScript) -> (String, String, Outcome, Outcome) {
        let p = parse_program(text).unwrap();
        let s = crate::source::run(&p, io.clone(), 100_000).unwrap();
        let tp = compile_program(&p).unwrap();
        let t = trun(&tp, io, 1_000_000).unwrap();
        (
            serialize_trace(&s.trace),
            serialize_trace(&t.trace),
            s.outcome,
            t.outcome,
        )
    }

    #[test]
    fn minimal_program() {
        let (s, t, so, to) = both(
            "(compartment C0 (exports (main 0 ret)) (proc main () (return 0)))",
            IoScript::default(),
        );
        assert_eq!((s.as_str(), t.as_str()), ("", ""));
        assert_eq!(so, Outcome::Final(0));
        assert_eq!(to, Outcome::Final(0));
    }

    #[test]
    fn cross_call_events_agree() {
        let (s, t, so, to) = both(
            "(compartment C0 (exports (main 0 ret)) (imports (C1 g 2 ret))
               (proc main () (locals x) (call x C1.g 1 2) (return x)))
             (compartment C1 (exports (g 2 ret))
               (proc g (a b) (locals i) (while (op < i 3) (set i (op + i 1))) (return (op + (op * a 10) b))))",
            IoScript::default(),
        );
        assert_eq!(s, "CALL C0 C1.g (1,2)\nRET C1 C0 12\n");
        assert_eq!(s, t);
        assert_eq!(so, Outcome::Final(12));
        assert_eq!(so, to);
    }

    #[test]
    fn nine_arguments_spill() {
        let text = "(compartment C0 (exports (main 0 ret)) (imports (C1 g 9 ret))
               (proc main () (locals x) (call x C1.g 1 2 3 4 5 6 7 8 9) (return x)))
             (compartment C1 (exports (g 9 ret))
               (proc g (a b c d e f g h i) (return (op + (op * a 100) i))))";
        let (s, t, so, to) = both(text, IoScript::default());
        assert_eq!(s, "CALL C0 C1.g (1,2,3,4,5,6,7,8,9)\nRET C1 C0 109\n");
        assert_eq!(s, t);
        assert_eq!(so, to);
        let tp = compile_program(&parse_program(text).unwrap()).unwrap();
        let main = &tp.comps[&Ident::from("C0")].procs[&Ident::from("main")];
        assert!(main.iter().any(|i| matches!(i, Instr::Spill(_, 1))));
        let g = &tp.comps[&Ident::from("C1")].procs[&Ident::from("g")];
        assert!(g.iter().any(|i| matches!(i, Instr::LoadArg(_, 0))));
        let err = compile_program_with(
            &parse_program(text).unwrap(),
            &CompileOptions { spill: false },
        )
        .unwrap_err();
        assert!(matches!(err, CompileError::TooManyParams { arity: 9, .. }));
    }

    #[test]
    fn io_and_internal_calls_agree() {
        let text = "(compartment C0 (exports (main 0 ret)) (syscalls read write)
               (global buf 4 public)
               (proc main () (locals n s)
                 (call n sys.read buf 4)
                 (call s sum n)
                 (gstore buf 0 s)
                 (call _ sys.write buf 1)
                 (return s))
               (proc sum (n) (locals i acc)
                 (while (op < i n) (seq (set acc (op + acc (gload buf i))) (set i (op + i 1))))
                 (return acc)))";
        let io = IoScript::new(vec![vec![1, 2, 3]], vec![1]);
        let (s, t, so, to) = both(text, io);
        assert_eq!(s, t);
        assert_eq!(so, Outcome::Final(6));
        assert_eq!(so, to);
    }

    #[test]
    fn undefined_behavior_blames_the_same_compartment() {
        let text = "(compartment C0 (exports (main 0 ret)) (imports (C1 g 1 ret))
               (proc main () (locals x) (call x C1.g 0) (return x)))
             (compartment C1 (exports (g 1 ret)) (global a 2 private)
               (proc g (i) (return (gload a (op - i 1)))))";
        let (s, t, _, to) = both(text, IoScript::default());
        assert_eq!(s, "CALL C0 C1.g (0)\nUB C1\n");
        assert_eq!(s, t);
        assert_eq!(to, Outcome::Stuck(Ident::from("C1")));
    }

    #[test]
    fn void_procedures_and_main() {
        let (s, t, so, to) = both(
            "(compartment C0 (exports (main 0 void)) (imports (C1 g 0 void))
               (proc main () (call _ C1.g)))
             (compartment C1 (exports (g 0 void)) (global x 1 private)
               (proc g () (gstore x 0 5)))",
            IoScript::default(),
        );
        assert_eq!(s, "CALL C0 C1.g ()\nRET C1 C0 void\n");
        assert_eq!(s, t);
        assert_eq!(so, to);
    }

    #[test]
    fn separate_compilation_matches_whole() {
        let p = parse_program(
            "(compartment C0 (exports (main 0 ret)) (imports (C1 g 1 ret))
               (proc main () (locals x) (call x C1.g 4) (return x)))
             (compartment C1 (exports (g 1 ret)) (proc g (a) (return (op * a a))))",
        )
        .unwrap();
        let whole = compile_program(&p).unwrap();
        let mut linked = TargetProgram::default();
        for c in p.compartments.values() {
            let mut part = TargetProgram::default();
            part.comps.insert(c.name.clone(), compile_compartment(c).unwrap());
            linked = linked.link(&part).unwrap();
        }
        linked.entry = p.main.clone();
        assert_eq!(whole, linked);
        assert_eq!(whole.interface(), p.interface());
    }

    #[test]
    fn partial_programs_compile_and_link() {
        let p = parse_program(
            "(main C0 main)
             (compartment C0 (exports) (imports (C1 g 1 ret))
               (proc main () (locals x) (call x C1.g 4) (return x)))
             (compartment C1 (exports (g 1 ret)) (proc g (a) (return (op * a a))))",
        )
        .unwrap();
        let ks = [Ident::from("C0")].into_iter().collect();
        let (a, b) = p.split(&ks).unwrap();
        assert!(compile_program(&a).is_err());
        let opts = CompileOptions::default();
        let ta = compile_partial_with(&a, &opts).unwrap();
        let tb = compile_partial_with(&b, &opts).unwrap();
        assert_eq!(ta.link(&tb).unwrap(), compile_program(&p).unwrap());
    }
}
