//! Small-step, trace-producing interpreter for source programs.
//!
//! Cross-compartment calls and returns pass through explicit call and return
//! states, which is where the interface checks happen and where events are
//! emitted. Internal calls are silent. A failed check leaves the machine in
//! `Stuck(k)`, blaming the compartment `k` whose step went wrong.

use crate::lang::{CallTarget, Expr, Ident, LangError, ProcBody, Program, Signature, Stmt};
use crate::memory::{GlobalEnv, Memory, Value};
use crate::sys;
use crate::trace::{Event, IoScript, Trace};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Final(i64),
    Stuck(Ident),
    OutOfFuel,
}

/// Parameters then locals of the running procedure.
#[derive(Clone, Debug)]
pub struct Locals<'p> {
    body: &'p ProcBody,
    vals: Vec<Value>,
}

impl<'p> Locals<'p> {
    fn new(body: &'p ProcBody, args: &[i64]) -> Self {
        let mut vals: Vec<Value> = args.iter().map(|a| Value::Int(*a)).collect();
        vals.resize(body.params.len() + body.locals.len(), Value::Int(0));
        Locals { body, vals }
    }

    fn slot(&self, x: &Ident) -> Option<usize> {
        let np = self.body.params.len();
        self.body
            .params
            .iter()
            .position(|p| p == x)
            .or_else(|| self.body.locals.iter().position(|l| l == x).map(|i| i + np))
    }

    fn get(&self, x: &Ident) -> Option<&Value> {
        self.slot(x).map(|i| &self.vals[i])
    }

    fn set(&mut self, x: &Ident, v: Value) -> Option<()> {
        let i = self.slot(x)?;
        self.vals[i] = v;
        Some(())
    }
}

/// A suspended caller.
#[derive(Clone, Debug)]
struct Frame<'p> {
    comp: Ident,
    proc: Ident,
    locals: Locals<'p>,
    kont: Vec<&'p Stmt>,
    dest: Option<Ident>,
    cross: bool,
}

#[derive(Clone, Debug)]
pub enum SourceState<'p> {
    Regular {
        comp: Ident,
        proc: Ident,
        kont: Vec<&'p Stmt>,
        locals: Locals<'p>,
    },
    /// A checked cross-compartment call about to enter the callee.
    Call {
        caller: Ident,
        callee: (Ident, Ident),
        args: Vec<i64>,
    },
    /// A checked cross-compartment return about to resume the caller.
    Return {
        callee: Ident,
        caller: Ident,
        value: Option<i64>,
    },
    Final(i64),
    Stuck(Ident),
}

#[derive(Clone, Debug)]
pub struct SourceMachine<'p> {
    prog: &'p Program,
    pub mem: Memory,
    pub globals: GlobalEnv,
    stack: Vec<Frame<'p>>,
    pub state: SourceState<'p>,
    pub io: IoScript,
}

/// A finished (or fuel-bounded) source run.
#[derive(Clone, Debug)]
pub struct SourceRun {
    pub trace: Trace,
    pub outcome: Outcome,
    pub steps: u64,
    pub mem: Memory,
    pub globals: GlobalEnv,
}

/// Globals of `p` in allocation order: compartments by name, then declaration order.
pub fn program_globals(p: &Program) -> impl Iterator<Item = (&Ident, &crate::lang::GlobalDecl)> {
    p.compartments
        .values()
        .flat_map(|c| c.globals.iter().map(move |g| (&c.name, g)))
}

impl<'p> SourceMachine<'p> {
    pub fn init(prog: &'p Program, io: IoScript) -> Result<Self, LangError> {
        let (c, m) = prog.entry()?;
        let mut mem = Memory::new();
        let globals = GlobalEnv::alloc(&mut mem, program_globals(prog));
        let body = &prog.compartments[&c].procs[&m];
        Ok(SourceMachine {
            prog,
            mem,
            globals,
            stack: Vec::new(),
            state: SourceState::Regular {
                comp: c,
                proc: m,
                kont: vec![&body.body],
                locals: Locals::new(body, &[]),
            },
            io,
        })
    }

    pub fn is_done(&self) -> bool {
        matches!(self.state, SourceState::Final(_) | SourceState::Stuck(_))
    }

    /// Number of suspended frames.
    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    fn eval(&mut self, comp: &Ident, locals: &Locals<'p>, e: &Expr) -> Option<i64> {
        match e {
            Expr::Const(c) => Some(*c),
            Expr::Local(x) => locals.get(x)?.as_int(),
            Expr::GLoad(g, off) => {
                let off = self.eval(comp, locals, off)?;
                let b = self.globals.lookup(comp, g)?;
                self.mem.load(comp, b, off).ok()?.as_int()
            }
            Expr::Bin(op, a, b) => {
                let a = self.eval(comp, locals, a)?;
                let b = self.eval(comp, locals, b)?;
                op.eval(a, b)
            }
            Expr::Un(op, a) => Some(op.eval(self.eval(comp, locals, a)?)),
        }
    }

    fn signature(&self, comp: &Ident, proc: &Ident) -> Option<Signature> {
        self.prog.compartments.get(comp)?.proc_signature(proc)
    }

    /// One transition. Returns the event it emitted, if any.
    pub fn step(&mut self) -> Option<Event> {
        let state = std::mem::replace(&mut self.state, SourceState::Final(0));
        let (next, ev) = self.transition(state);
        self.state = next;
        ev
    }

    fn transition(&mut self, state: SourceState<'p>) -> (SourceState<'p>, Option<Event>) {
        match state {
            SourceState::Regular {
                comp,
                proc,
                mut kont,
                mut locals,
            } => {
                let Some(s) = kont.pop() else {
                    // Falling off the end is a void return.
                    let returns = self.signature(&comp, &proc).is_some_and(|s| s.returns);
                    if returns {
                        return (SourceState::Stuck(comp), None);
                    }
                    return self.do_return(comp, None);
                };
                let stuck = |comp: Ident| (SourceState::Stuck(comp), None);
                match s {
                    Stmt::Skip => {}
                    Stmt::Seq(ss) => kont.extend(ss.iter().rev()),
                    Stmt::Assign(x, e) => {
                        let Some(v) = self.eval(&comp, &locals, e) else {
                            return stuck(comp);
                        };
                        if locals.set(x, Value::Int(v)).is_none() {
                            return stuck(comp);
                        }
                    }
                    Stmt::GStore {
                        global,
                        offset,
                        value,
                    } => {
                        let (Some(o), Some(v)) = (
                            self.eval(&comp, &locals, offset),
                            self.eval(&comp, &locals, value),
                        ) else {
                            return stuck(comp);
                        };
                        let ok = self
                            .globals
                            .lookup(&comp, global)
                            .is_some_and(|b| self.mem.store(&comp, b, o, Value::Int(v)).is_ok());
                        if !ok {
                            return stuck(comp);
                        }
                    }
                    Stmt::If(c, a, b) => match self.eval(&comp, &locals, c) {
                        Some(0) => kont.push(b),
                        Some(_) => kont.push(a),
                        None => return stuck(comp),
                    },
                    Stmt::While(c, body) => match self.eval(&comp, &locals, c) {
                        Some(0) => {}
                        Some(_) => {
                            kont.push(s);
                            kont.push(body);
                        }
                        None => return stuck(comp),
                    },
                    Stmt::Return(e) => {
                        let v = match e {
                            Some(e) => match self.eval(&comp, &locals, e) {
                                Some(v) => Some(v),
                                None => return stuck(comp),
                            },
                            None => None,
                        };
                        return self.do_return(comp, v);
                    }
                    Stmt::Call { dest, target, args } => {
                        let mut vals = Vec::with_capacity(args.len());
                        for a in args {
                            match self.eval(&comp, &locals, a) {
                                Some(v) => vals.push(v),
                                None => return stuck(comp),
                            }
                        }
                        return self.do_call(comp, proc, kont, locals, dest, target, vals);
                    }
                }
                (
                    SourceState::Regular {
                        comp,
                        proc,
                        kont,
                        locals,
                    },
                    None,
                )
            }
            SourceState::Call {
                caller: _,
                callee: (c, p),
                args,
            } => {
                let body = &self.prog.compartments[&c].procs[&p];
                (
                    SourceState::Regular {
                        comp: c,
                        proc: p,
                        kont: vec![&body.body],
                        locals: Locals::new(body, &args),
                    },
                    None,
                )
            }
            SourceState::Return { value, .. } => {
                let frame = self.stack.pop().expect("return state without a frame");
                self.resume(frame, value)
            }
            done @ (SourceState::Final(_) | SourceState::Stuck(_)) => (done, None),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn do_call(
        &mut self,
        comp: Ident,
        proc: Ident,
        kont: Vec<&'p Stmt>,
        locals: Locals<'p>,
        dest: &Option<Ident>,
        target: &'p CallTarget,
        args: Vec<i64>,
    ) -> (SourceState<'p>, Option<Event>) {
        let prog = self.prog;
        let caller_decl = &prog.compartments[&comp];
        match target {
            CallTarget::Internal(p) => {
                let Some(body) = caller_decl.procs.get(p) else {
                    return (SourceState::Stuck(comp), None);
                };
                if body.params.len() != args.len() {
                    return (SourceState::Stuck(comp), None);
                }
                self.stack.push(Frame {
                    comp: comp.clone(),
                    proc,
                    locals,
                    kont,
                    dest: dest.clone(),
                    cross: false,
                });
                (
                    SourceState::Regular {
                        comp,
                        proc: p.clone(),
                        kont: vec![&body.body],
                        locals: Locals::new(body, &args),
                    },
                    None,
                )
            }
            CallTarget::Cross(c, p) => {
                // (1) exported by the callee, (2) imported by the caller with
                // the same signature, (3) scalar arguments of the right number.
                let allowed = prog.compartments.get(c).and_then(|callee| {
                    let exp = callee.exports.get(p)?;
                    let imp = caller_decl.imports.get(&(c.clone(), p.clone()))?;
                    let body = callee.procs.get(p)?;
                    (exp == imp && exp.params == args.len() && body.params.len() == args.len())
                        .then_some(())
                });
                if allowed.is_none() || c == &comp {
                    return (SourceState::Stuck(comp), None);
                }
                self.stack.push(Frame {
                    comp: comp.clone(),
                    proc,
                    locals,
                    kont,
                    dest: dest.clone(),
                    cross: true,
                });
                let ev = Event::Call {
                    caller: comp.clone(),
                    callee: c.clone(),
                    proc: p.clone(),
                    args: args.clone(),
                };
                (
                    SourceState::Call {
                        caller: comp,
                        callee: (c.clone(), p.clone()),
                        args,
                    },
                    Some(ev),
                )
            }
            CallTarget::Sys(name, buf) => {
                let allowed = caller_decl.syscalls.contains(name);
                let n = args.first().map(|n| Value::Int(*n)).unwrap_or(Value::Undef);
                let Some(res) = sys::perform(
                    &mut self.mem,
                    &self.globals,
                    &comp,
                    allowed && args.len() == 1,
                    *name,
                    buf,
                    &n,
                    &mut self.io,
                ) else {
                    return (SourceState::Stuck(comp), None);
                };
                let mut locals = locals;
                if let Some(d) = dest {
                    if locals.set(d, Value::Int(res.ret)).is_none() {
                        return (SourceState::Stuck(comp), None);
                    }
                }
                (
                    SourceState::Regular {
                        comp,
                        proc,
                        kont,
                        locals,
                    },
                    Some(res.event),
                )
            }
        }
    }

    fn do_return(&mut self, comp: Ident, value: Option<i64>) -> (SourceState<'p>, Option<Event>) {
        let Some(frame) = self.stack.last() else {
            return (SourceState::Final(value.unwrap_or(0)), None);
        };
        if frame.cross {
            let ev = Event::Return {
                callee: comp.clone(),
                caller: frame.comp.clone(),
                value,
            };
            let caller = frame.comp.clone();
            return (
                SourceState::Return {
                    callee: comp,
                    caller,
                    value,
                },
                Some(ev),
            );
        }
        let frame = self.stack.pop().unwrap();
        if frame.dest.is_some() && value.is_none() {
            return (SourceState::Stuck(comp), None);
        }
        self.resume(frame, value)
    }

    fn resume(&mut self, frame: Frame<'p>, value: Option<i64>) -> (SourceState<'p>, Option<Event>) {
        let Frame {
            comp,
            proc,
            mut locals,
            kont,
            dest,
            ..
        } = frame;
        if let Some(d) = dest {
            match value {
                Some(v) => {
                    locals.set(&d, Value::Int(v));
                }
                None => return (SourceState::Stuck(comp), None),
            }
        }
        (
            SourceState::Regular {
                comp,
                proc,
                kont,
                locals,
            },
            None,
        )
    }
}

/// Runs `p` for at most `fuel` steps. The trace ends in `Undef(k)` exactly
/// when the outcome is `Stuck(k)`.
pub fn run(p: &Program, io: IoScript, fuel: u64) -> Result<SourceRun, LangError> {
    let mut m = SourceMachine::init(p, io)?;
    let mut trace = Vec::new();
    let mut steps = 0;
    let outcome = loop {
        match &m.state {
            SourceState::Final(v) => break Outcome::Final(*v),
            SourceState::Stuck(k) => {
                trace.push(Event::Undef(k.clone()));
                break Outcome::Stuck(k.clone());
            }
            _ => {}
        }
        if steps == fuel {
            break Outcome::OutOfFuel;
        }
        steps += 1;
        if let Some(e) = m.step() {
            trace.push(e);
        }
    };
    Ok(SourceRun {
        trace,
        outcome,
        steps,
        mem: m.mem,
        globals: m.globals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;
    use crate::trace::serialize_trace;

    fn run_text(text: &str, io: IoScript) -> SourceRun {
        run(&parse_program(text).unwrap(), io, 10_000).unwrap()
    }

    #[test]
    fn minimal_program() {
        let r = run_text(
            "(compartment C0 (exports (main 0 ret)) (proc main () (return 0)))",
            IoScript::default(),
        );
        assert!(r.trace.is_empty());
        assert_eq!(r.outcome, Outcome::Final(0));
    }

    #[test]
    fn zero_fuel() {
        let p = parse_program("(compartment C0 (exports (main 0 ret)) (proc main () (return 0)))")
            .unwrap();
        let r = run(&p, IoScript::default(), 0).unwrap();
        assert!(r.trace.is_empty());
        assert_eq!(r.outcome, Outcome::OutOfFuel);
    }

    #[test]
    fn cross_call_and_return() {
        let r = run_text(
            "(compartment C0 (exports (main 0 ret)) (imports (C1 g 2 ret))
               (proc main () (locals x) (call x C1.g 1 2) (return x)))
             (compartment C1 (exports (g 2 ret)) (proc g (a b) (return (op + a b))))",
            IoScript::default(),
        );
        assert_eq!(
            serialize_trace(&r.trace),
            "CALL C0 C1.g (1,2)\nRET C1 C0 3\n"
        );
        assert_eq!(r.outcome, Outcome::Final(3));
    }

    #[test]
    fn internal_calls_are_silent() {
        let r = run_text(
            "(compartment C0 (exports (main 0 ret))
               (proc f (a) (return (op * a 2)))
               (proc main () (locals x) (call x f 4) (return x)))",
            IoScript::default(),
        );
        assert!(r.trace.is_empty());
        assert_eq!(r.outcome, Outcome::Final(8));
    }

    #[test]
    fn read_fills_buffer_and_returns_count() {
        let r = run_text(
            "(compartment C0 (exports (main 0 ret)) (syscalls read) (global buf 4 public)
               (proc main () (locals x)
                 (call x sys.read buf 3)
                 (return (op + (op * x 100) (op + (op * (gload buf 0) 10) (gload buf 1))))))",
            IoScript::new(vec![vec![7, 8]], vec![]),
        );
        assert_eq!(serialize_trace(&r.trace), "SYS C0 read (3) [7,8] -> 2 []\n");
        assert_eq!(r.outcome, Outcome::Final(278));
    }

    #[test]
    fn write_masks_and_acks() {
        let r = run_text(
            "(compartment C0 (exports (main 0 ret)) (syscalls write) (global buf 2 public)
               (proc main () (locals x)
                 (gstore buf 0 257) (gstore buf 1 -1)
                 (call x sys.write buf 2) (return x)))",
            IoScript::new(vec![], vec![5]),
        );
        assert_eq!(serialize_trace(&r.trace), "SYS C0 write (2) [] -> 2 [1,255]\n");
        assert_eq!(r.outcome, Outcome::Final(2));
    }

    #[test]
    fn division_by_zero_blames_the_dividing_compartment() {
        let r = run_text(
            "(compartment C0 (exports (main 0 ret)) (imports (C1 g 1 ret))
               (proc main () (locals x) (call x C1.g 0) (return x)))
             (compartment C1 (exports (g 1 ret)) (proc g (a) (return (op / 1 a))))",
            IoScript::default(),
        );
        assert_eq!(serialize_trace(&r.trace), "CALL C0 C1.g (0)\nUB C1\n");
        assert_eq!(r.outcome, Outcome::Stuck(Ident::from("C1")));
    }

    #[test]
    fn out_of_bounds_and_oversized_syscalls_are_stuck() {
        let r = run_text(
            "(compartment C0 (exports (main 0 ret)) (global g 2 private)
               (proc main () (locals i) (set i 2) (return (gload g i))))",
            IoScript::default(),
        );
        assert_eq!(r.outcome, Outcome::Stuck(Ident::from("C0")));
        let r = run_text(
            "(compartment C0 (exports (main 0 ret)) (syscalls read) (global b 2 public)
               (proc main () (locals x) (call x sys.read b 3) (return x)))",
            IoScript::default(),
        );
        assert_eq!(serialize_trace(&r.trace), "UB C0\n");
    }

    #[test]
    fn globals_are_per_compartment_blocks() {
        let p = parse_program(
            "(compartment C0 (exports (main 0 ret)) (global buf 4 public) (proc main () (return 0)))
             (compartment C1 (global buf 4 public))",
        )
        .unwrap();
        let m = SourceMachine::init(&p, IoScript::default()).unwrap();
        assert_eq!(m.mem.blocks().len(), 2);
        assert_eq!(m.mem.blocks()[0].owner, Ident::from("C0"));
        assert_eq!(m.mem.blocks()[0].slots.len(), 4);
    }
}
