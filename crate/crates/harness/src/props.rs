//! Executable checks of compiler correctness, back-translation,
//! recomposition and blame.

use std::collections::BTreeSet;

use rand::seq::IteratorRandom;
use rand::Rng;

use secomp_core::backtrans::{back_translate_all, BtEnv};
use secomp_core::compile::compile_program;
use secomp_core::lang::{BinOp, CallTarget, CompartmentDecl, Expr, Ident, ProcBody, Program, Stmt};
use secomp_core::source::{run, Outcome, SourceRun};
use secomp_core::target::{trun, TargetProgram, TargetRun};
use secomp_core::trace::{
    blame_rel, prefix_rel, project, serialize_trace, well_bracketed, Event, InformativeEvent,
    IoScript,
};

use crate::gen::GenRng;

/// Target runs get this many steps per source step of fuel.
pub const TARGET_FUEL_FACTOR: u64 = 64;

/// Structural observations accumulated over every run a check performs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub source_runs: u64,
    pub target_runs: u64,
    pub events: u64,
    /// Granted cross-compartment memory accesses (other than argument reads).
    pub isolation_breaches: u64,
    /// Runs whose trace is not well bracketed before its first `Undef`.
    pub dyck_violations: u64,
    /// Target runs whose plain trace is not the projection of the informative one.
    pub project_mismatches: u64,
}

impl Stats {
    pub fn merge(&mut self, o: &Stats) {
        self.source_runs += o.source_runs;
        self.target_runs += o.target_runs;
        self.events += o.events;
        self.isolation_breaches += o.isolation_breaches;
        self.dyck_violations += o.dyck_violations;
        self.project_mismatches += o.project_mismatches;
    }

    pub fn source(&mut self, r: &SourceRun) {
        self.source_runs += 1;
        self.events += r.trace.len() as u64;
        self.isolation_breaches += r.mem.isolation_breaches() as u64;
        self.dyck_violations += !well_bracketed(&r.trace) as u64;
    }

    pub fn target(&mut self, r: &TargetRun) {
        self.target_runs += 1;
        self.events += r.trace.len() as u64;
        self.isolation_breaches += r.mem.isolation_breaches() as u64;
        self.dyck_violations += !well_bracketed(&r.trace) as u64;
        let plain = match r.trace.last() {
            Some(Event::Undef(_)) => &r.trace[..r.trace.len() - 1],
            _ => &r.trace[..],
        };
        self.project_mismatches += (project(&r.itrace) != plain) as u64;
    }

    pub fn clean(&self) -> bool {
        self.isolation_breaches == 0 && self.dyck_violations == 0 && self.project_mismatches == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
    pub stats: Stats,
    /// The last trace the check produced, kept for the failure corpus.
    pub observed: Vec<Event>,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>, stats: Stats) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
            stats,
            observed: Vec::new(),
        }
    }

    fn observing(mut self, t: &[Event]) -> Self {
        self.observed = t.to_vec();
        self
    }
}

fn has_undef(t: &[Event]) -> bool {
    t.iter().any(Event::is_undef)
}

fn run_source(p: &Program, io: &IoScript, fuel: u64, stats: &mut Stats) -> Result<SourceRun, String> {
    let r = run(p, io.clone(), fuel).map_err(|e| format!("source run: {e}"))?;
    stats.source(&r);
    Ok(r)
}

fn run_target(tp: &TargetProgram, io: &IoScript, fuel: u64, stats: &mut Stats) -> Result<TargetRun, String> {
    let r = trun(tp, io.clone(), fuel.saturating_mul(TARGET_FUEL_FACTOR))
        .map_err(|e| format!("target run: {e}"))?;
    stats.target(&r);
    Ok(r)
}

fn describe(t: &[Event]) -> String {
    serialize_trace(t).lines().take(3).collect::<Vec<_>>().join(" | ")
}

/// Forward compiler correctness: an Undef-free source run and the run of
/// the compiled program produce the same trace.
pub fn prop_fcc(p: &Program, io: &IoScript, fuel: u64) -> Verdict {
    let mut stats = Stats::default();
    let s = match run_source(p, io, fuel, &mut stats) {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, e, stats),
    };
    if s.outcome == Outcome::OutOfFuel {
        return Verdict::new(false, "source run out of fuel", stats);
    }
    if has_undef(&s.trace) {
        return Verdict::new(true, "vacuous: source run has undefined behavior", stats);
    }
    let tp = match compile_program(p) {
        Ok(tp) => tp,
        Err(e) => return Verdict::new(true, format!("vacuous: compilation failed: {e}"), stats),
    };
    let t = match run_target(&tp, io, fuel, &mut stats) {
        Ok(t) => t,
        Err(e) => return Verdict::new(false, e, stats),
    };
    let v = if t.trace != s.trace {
        Verdict::new(
            false,
            format!("traces differ: source {} events, target {} events", s.trace.len(), t.trace.len()),
            stats,
        )
    } else if t.outcome != s.outcome {
        Verdict::new(false, format!("outcomes differ: {:?} vs {:?}", s.outcome, t.outcome), stats)
    } else {
        Verdict::new(true, format!("{} events", s.trace.len()), stats)
    };
    v.observing(&t.trace)
}

/// Backward compiler correctness: the source trace is related to the target
/// trace by the prefix relation.
pub fn prop_bcc(p: &Program, io: &IoScript, fuel: u64) -> Verdict {
    let mut stats = Stats::default();
    let tp = match compile_program(p) {
        Ok(tp) => tp,
        Err(e) => return Verdict::new(true, format!("vacuous: compilation failed: {e}"), stats),
    };
    let (s, t) = match (run_source(p, io, fuel, &mut stats), run_target(&tp, io, fuel, &mut stats)) {
        (Ok(s), Ok(t)) => (s, t),
        (Err(e), _) | (_, Err(e)) => return Verdict::new(false, e, stats),
    };
    if s.outcome == Outcome::OutOfFuel || t.outcome == Outcome::OutOfFuel {
        return Verdict::new(false, "run out of fuel", stats).observing(&t.trace);
    }
    if !prefix_rel(&s.trace, &t.trace) {
        return Verdict::new(
            false,
            format!("source [{}] is not a prefix of target [{}]", describe(&s.trace), describe(&t.trace)),
            stats,
        )
        .observing(&t.trace);
    }
    let ub = if has_undef(&s.trace) { ", undefined behavior" } else { "" };
    Verdict::new(true, format!("{} events{ub}", s.trace.len()), stats).observing(&t.trace)
}

/// No event has an `Undef`, and the trace equals `m` when `m` is balanced;
/// for an unbalanced `m` the bt program keeps returning after the prefix,
/// so only the first `|m|` events are compared.
fn reproduces(got: &[Event], m: &[Event]) -> Result<(), String> {
    if has_undef(got) {
        return Err(format!("run has undefined behavior: {}", describe(&got[got.len().saturating_sub(1)..])));
    }
    let balanced = crate::balanced(m);
    let ok = if balanced {
        serialize_trace(got) == serialize_trace(m)
    } else {
        got.len() >= m.len() && got[..m.len()] == *m
    };
    if ok {
        Ok(())
    } else {
        let at = got.iter().zip(m).position(|(a, b)| a != b).unwrap_or(got.len().min(m.len()));
        Err(format!("traces diverge at event {at} ({} vs {} events)", got.len(), m.len()))
    }
}

/// Back-translation correctness for an informative trace: the linked
/// back-translation of every compartment, run in the source semantics with
/// the same IO, reproduces the projected trace.
pub fn prop_backtranslation(env: &BtEnv, it: &[InformativeEvent], io: &IoScript, fuel: u64) -> Verdict {
    let mut stats = Stats::default();
    let m = project(it);
    let p = match back_translate_all(env, it) {
        Ok(p) => p,
        Err(e) => return Verdict::new(false, format!("back-translation failed: {e}"), stats),
    };
    let s = match run_source(&p, io, fuel, &mut stats) {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, e, stats),
    };
    match reproduces(&s.trace, &m) {
        Ok(()) => Verdict::new(true, format!("{} events", m.len()), stats),
        Err(e) => Verdict::new(false, e, stats),
    }
    .observing(&s.trace)
}

/// Records a trace of `tp` and checks its back-translation.
pub fn prop_backtranslation_target(tp: &TargetProgram, io: &IoScript, fuel: u64) -> Verdict {
    let mut stats = Stats::default();
    let r = match run_target(tp, io, fuel, &mut stats) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, e, stats),
    };
    let Some(entry) = tp.entry.clone() else {
        return Verdict::new(false, "target program has no entry", stats);
    };
    let globals = tp
        .comps
        .values()
        .flat_map(|c| c.globals.iter().map(move |g| (c.name.clone(), g.clone())))
        .collect();
    let env = BtEnv::new(tp.interface(), globals, entry);
    let mut v = prop_backtranslation(&env, &r.itrace, io, fuel);
    v.stats.merge(&stats);
    v
}

/// The back-translation of a trace compiles.
pub fn prop_bt_compiles(env: &BtEnv, it: &[InformativeEvent]) -> Verdict {
    let stats = Stats::default();
    match back_translate_all(env, it).map_err(|e| e.to_string()).and_then(|p| {
        compile_program(&p)
            .map(|tp| tp.instr_count())
            .map_err(|e| e.to_string())
    }) {
        Ok(n) => Verdict::new(true, format!("{} events, {n} instructions", it.len()), stats),
        Err(e) => Verdict::new(false, e, stats),
    }
}

const PAD_PROC: &str = "__pad";
const PAD_VAR: &str = "__padv";

/// Adds internal-only work to every procedure of `c`: an extra internal
/// call and some local arithmetic before the original body.
pub fn pad_compartment(c: &mut CompartmentDecl) {
    let x = Ident::from("x");
    let y = Ident::from("y");
    for body in c.procs.values_mut() {
        let v = Ident::from(PAD_VAR);
        body.locals.push(v.clone());
        let original = std::mem::replace(&mut body.body, Stmt::Skip);
        body.body = Stmt::seq(vec![
            Stmt::Call {
                dest: Some(v.clone()),
                target: CallTarget::Internal(Ident::from(PAD_PROC)),
                args: vec![Expr::Const(7)],
            },
            Stmt::Assign(v.clone(), Expr::bin(BinOp::Sub, Expr::Local(v), Expr::Const(1))),
            original,
        ]);
    }
    c.procs.insert(
        Ident::from(PAD_PROC),
        ProcBody {
            params: vec![x.clone()],
            locals: vec![y.clone()],
            body: Stmt::seq(vec![
                Stmt::Assign(y.clone(), Expr::bin(BinOp::Mul, Expr::Local(x), Expr::Const(3))),
                Stmt::While(
                    Expr::bin(BinOp::Lt, Expr::Const(0), Expr::Local(y.clone())),
                    Box::new(Stmt::Assign(
                        y.clone(),
                        Expr::bin(BinOp::Sub, Expr::Local(y.clone()), Expr::Const(5)),
                    )),
                ),
                Stmt::Return(Some(Expr::Local(y))),
            ]),
        },
    );
}

fn padded(p: &Program, which: impl Fn(&Ident) -> bool) -> Program {
    let mut q = p.clone();
    for (k, c) in q.compartments.iter_mut() {
        if which(k) {
            pad_compartment(c);
        }
    }
    q
}

/// True when `m` has a call or return between a compartment of `ks` and one
/// outside it.
pub fn has_crossing(m: &[Event], ks: &BTreeSet<Ident>) -> bool {
    m.iter().any(|e| match e {
        Event::Call { caller, callee, .. } | Event::Return { callee, caller, .. } => {
            ks.contains(caller) != ks.contains(callee)
        }
        _ => false,
    })
}

/// Recomposition: two programs producing the same trace, padded on opposite
/// sides of the split, are compiled; the context half of one linked with the
/// program half of the other must still produce the trace.
pub fn prop_recomposition(
    env: &BtEnv,
    it: &[InformativeEvent],
    io: &IoScript,
    fuel: u64,
    ks: &BTreeSet<Ident>,
) -> Verdict {
    let mut stats = Stats::default();
    let m = project(it);
    if !has_crossing(&m, ks) {
        return Verdict::new(false, "instance has no context/program crossing", stats);
    }
    let base = match back_translate_all(env, it) {
        Ok(p) => p,
        Err(e) => return Verdict::new(false, format!("back-translation failed: {e}"), stats),
    };
    let a = padded(&base, |k| ks.contains(k));
    let b = padded(&base, |k| !ks.contains(k));
    let (w1, w2) = match (compile_program(&a), compile_program(&b)) {
        (Ok(w1), Ok(w2)) => (w1, w2),
        (Err(e), _) | (_, Err(e)) => return Verdict::new(false, format!("compilation failed: {e}"), stats),
    };
    for (name, w) in [("W1", &w1), ("W2", &w2)] {
        let r = match run_target(w, io, fuel, &mut stats) {
            Ok(r) => r,
            Err(e) => return Verdict::new(false, e, stats),
        };
        if let Err(e) = reproduces(&r.trace, &m) {
            return Verdict::new(false, format!("VariantTraceMismatch in {name}: {e}"), stats);
        }
    }
    let w3 = match (w1.split(ks), w2.split(ks)) {
        (Ok((ctx, _)), Ok((_, prog))) => match ctx.link(&prog) {
            Ok(w3) => w3,
            Err(e) => return Verdict::new(false, format!("target link failed: {e}"), stats),
        },
        (Err(e), _) | (_, Err(e)) => return Verdict::new(false, format!("split failed: {e}"), stats),
    };
    let r = match run_target(&w3, io, fuel, &mut stats) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, e, stats),
    };
    match reproduces(&r.trace, &m) {
        Ok(()) => Verdict::new(true, format!("{} events, context {}", m.len(), ks.len()), stats),
        Err(e) => Verdict::new(false, format!("recomposed run: {e}"), stats),
    }
    .observing(&r.trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BtUb {
    DivByZero,
    CounterOutOfBounds,
}

/// Where to make a back-translated compartment misbehave: just before it
/// performs its `at`-th event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UbSite {
    pub comp: Ident,
    pub at: usize,
    pub kind: BtUb,
}

/// Inserts the undefined behavior of `site` into the dispatch loop of every
/// procedure of `c`. Returns false when `c` has no dispatch loop.
pub fn inject_bt_ub(c: &mut CompartmentDecl, site: &UbSite) -> bool {
    let mut done = false;
    for body in c.procs.values_mut() {
        let Stmt::While(_, inner) = &mut body.body else {
            continue;
        };
        let Stmt::Seq(ss) = &mut **inner else {
            continue;
        };
        let Some(Stmt::Assign(snap, Expr::GLoad(ctr, _))) = ss.first().cloned() else {
            continue;
        };
        let s = || Expr::Local(snap.clone());
        let ub = match site.kind {
            BtUb::DivByZero => Stmt::Assign(
                Ident::from("r"),
                Expr::bin(BinOp::Div, Expr::Const(1), Expr::bin(BinOp::Sub, s(), s())),
            ),
            BtUb::CounterOutOfBounds => Stmt::gstore(
                ctr.clone(),
                Expr::bin(BinOp::Add, s(), Expr::Const(1)),
                Expr::Const(0),
            ),
        };
        ss.insert(
            1,
            Stmt::if_(
                Expr::bin(BinOp::Eq, s(), Expr::Const(site.at as i64)),
                ub,
                Stmt::Skip,
            ),
        );
        done = true;
    }
    done
}

/// Picks a program-side compartment that performs at least one event and
/// one of its events.
pub fn pick_ub_site(m: &[Event], ks: &BTreeSet<Ident>, rng: &mut GenRng) -> Option<UbSite> {
    let mut counts: std::collections::BTreeMap<&Ident, usize> = Default::default();
    for e in m {
        *counts.entry(e.actor()).or_default() += 1;
    }
    let (comp, n) = counts.into_iter().filter(|(k, _)| !ks.contains(*k)).choose(rng)?;
    Some(UbSite {
        comp: comp.clone(),
        at: rng.gen_range(0..n),
        kind: if rng.gen_bool(0.5) {
            BtUb::DivByZero
        } else {
            BtUb::CounterOutOfBounds
        },
    })
}

/// Blame: the back-translated context `ks` linked with a program side that
/// misbehaves at `site`. Whenever the mixed run follows the trace up to an
/// `Undef`, the blamed compartment is on the program side. Checked in both
/// the source semantics and after compilation.
pub fn prop_blame(
    env: &BtEnv,
    it: &[InformativeEvent],
    ks: &BTreeSet<Ident>,
    io: &IoScript,
    fuel: u64,
    site: &UbSite,
) -> Verdict {
    let mut stats = Stats::default();
    let m = project(it);
    if ks.contains(&site.comp) {
        return Verdict::new(false, "undefined behavior injected on the context side", stats);
    }
    let mut p = match back_translate_all(env, it) {
        Ok(p) => p,
        Err(e) => return Verdict::new(false, format!("back-translation failed: {e}"), stats),
    };
    let injected = p
        .compartments
        .get_mut(&site.comp)
        .is_some_and(|c| inject_bt_ub(c, site));
    if !injected {
        return Verdict::new(false, format!("cannot inject into {}", site.comp), stats);
    }
    let program_side: Vec<Ident> = env
        .interface
        .comps
        .keys()
        .filter(|k| !ks.contains(*k))
        .cloned()
        .collect();
    let s = match run_source(&p, io, fuel, &mut stats) {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, e, stats),
    };
    let tp = match compile_program(&p) {
        Ok(tp) => tp,
        Err(e) => return Verdict::new(false, format!("compilation failed: {e}"), stats),
    };
    let t = match run_target(&tp, io, fuel, &mut stats) {
        Ok(t) => t,
        Err(e) => return Verdict::new(false, e, stats),
    };
    let mut blamed = None;
    for (level, got) in [("source", &s.trace), ("target", &t.trace)] {
        if prefix_rel(got, &m) {
            if !blame_rel(got, &m, &program_side) {
                return Verdict::new(
                    false,
                    format!("{level} run blames {}", got.last().unwrap().actor()),
                    stats,
                )
                .observing(got);
            }
            if let Some(Event::Undef(k)) = got.last() {
                blamed = Some(k.clone());
            }
        }
    }
    match blamed {
        Some(k) => Verdict::new(true, format!("{} events, blamed {k}", m.len()), stats),
        None => Verdict::new(true, format!("{} events, no undefined behavior reached", m.len()), stats),
    }
    .observing(&t.trace)
}
