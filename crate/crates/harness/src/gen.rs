//! Random environments, informative traces, programs and IO scripts.
//!
//! Everything is a deterministic function of the generator state, so a trial
//! is reproduced from its seed alone.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use secomp_core::backtrans::BtEnv;
use secomp_core::lang::{
    BinOp, CallTarget, CompInterface, CompartmentDecl, Expr, GlobalDecl, Ident, Interface,
    ProcBody, Program, Signature, Stmt, Syscall, UnOp,
};
use secomp_core::memory::{BlockId, GlobalEnv, Memory, Value};
use secomp_core::trace::{Event, InformativeEvent, IoScript, ItraceFile, MemDelta};

pub type GenRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> GenRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenConfig {
    pub seed: u64,
    pub n_compartments: usize,
    pub max_procs: usize,
    pub max_events: usize,
    pub max_deltas_per_event: usize,
    pub max_args: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_compartments: 4,
            max_procs: 3,
            max_events: 900,
            max_deltas_per_event: 3,
            max_args: 10,
        }
    }
}

impl GenConfig {
    pub fn rng(&self) -> GenRng {
        rng_from_seed(self.seed)
    }
}

/// Undirected compartment graph; an edge means the endpoints import from
/// each other.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvGraph {
    pub vertices: Vec<Ident>,
    /// `(i, j)` with `i < j`, indices into `vertices`.
    pub edges: BTreeSet<(usize, usize)>,
}

impl EnvGraph {
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == v {
                Some(b)
            } else if b == v {
                Some(a)
            } else {
                None
            }
        })
    }

    pub fn is_connected(&self) -> bool {
        if self.vertices.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.vertices.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for w in self.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// An interface together with the global layout and entry point shared by
/// every program and trace generated for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Environment {
    pub interface: Interface,
    pub graph: EnvGraph,
    /// In allocation order.
    pub globals: Vec<(Ident, GlobalDecl)>,
    pub entry: (Ident, Ident),
}

impl Environment {
    pub fn bt_env(&self) -> BtEnv {
        BtEnv::new(self.interface.clone(), self.globals.clone(), self.entry.clone())
    }

    pub fn itrace_file(&self, events: Vec<InformativeEvent>) -> ItraceFile {
        ItraceFile {
            entry: Some(self.entry.clone()),
            globals: self.globals.clone(),
            events,
        }
    }

    pub fn compartments(&self) -> impl Iterator<Item = &Ident> {
        self.interface.comps.keys()
    }

    fn globals_of<'a>(&'a self, k: &'a Ident) -> impl Iterator<Item = &'a GlobalDecl> + 'a {
        self.globals.iter().filter(move |(c, _)| c == k).map(|(_, g)| g)
    }
}

fn arity(rng: &mut GenRng, max_args: usize) -> usize {
    if rng.gen_bool(0.85) {
        rng.gen_range(0..=max_args.min(4))
    } else {
        rng.gen_range(0..=max_args)
    }
}

fn nonempty_subset<T: Clone>(rng: &mut GenRng, items: &[T]) -> Vec<T> {
    loop {
        let pick: Vec<T> = items.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
        if !pick.is_empty() {
            return pick;
        }
    }
}

/// Compartments `C0..`, entry `C0.main` (never exported). The graph is a
/// random spanning tree plus independent extra edges with probability 0.3.
pub fn gen_environment(cfg: &GenConfig, rng: &mut GenRng) -> Environment {
    let n = cfg.n_compartments.max(1);
    let names: Vec<Ident> = (0..n).map(|i| Ident::from(format!("C{i}").as_str())).collect();
    let mut edges = BTreeSet::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for i in 1..n {
        let j = order[rng.gen_range(0..i)];
        let (a, b) = (order[i].min(j), order[i].max(j));
        edges.insert((a, b));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.3) {
                edges.insert((a, b));
            }
        }
    }
    let graph = EnvGraph {
        vertices: names.clone(),
        edges,
    };

    let mut comps: BTreeMap<Ident, CompInterface> = BTreeMap::new();
    let mut globals = Vec::new();
    for name in &names {
        let mut ci = CompInterface::default();
        for p in 0..rng.gen_range(1..=cfg.max_procs.max(1)) {
            let sig = Signature::new(arity(rng, cfg.max_args), rng.gen_bool(0.7));
            ci.exports.insert(Ident::from(format!("p{p}").as_str()), sig);
        }
        ci.syscalls = nonempty_subset(rng, &Syscall::ALL).into_iter().collect();
        comps.insert(name.clone(), ci);
        globals.push((
            name.clone(),
            GlobalDecl {
                name: Ident::from("buf"),
                size: rng.gen_range(1..=8),
                public: true,
            },
        ));
        for g in 1..=rng.gen_range(0..=2) {
            globals.push((
                name.clone(),
                GlobalDecl {
                    name: Ident::from(format!("g{g}").as_str()),
                    size: rng.gen_range(1..=4),
                    public: rng.gen_bool(0.5),
                },
            ));
        }
    }
    for &(a, b) in &graph.edges {
        for (from, to) in [(a, b), (b, a)] {
            let exports: Vec<(Ident, Signature)> = comps[&names[to]]
                .exports
                .iter()
                .map(|(p, s)| (p.clone(), *s))
                .collect();
            for (p, sig) in nonempty_subset(rng, &exports) {
                comps
                    .get_mut(&names[from])
                    .unwrap()
                    .imports
                    .insert((names[to].clone(), p), sig);
            }
        }
    }
    Environment {
        interface: Interface { comps },
        graph,
        globals,
        entry: (names[0].clone(), Ident::from("main")),
    }
}

/// A generated informative trace with the IO script that replays it.
#[derive(Clone, Debug)]
pub struct GeneratedTrace {
    pub events: Vec<InformativeEvent>,
    pub io: IoScript,
}

fn small_int(rng: &mut GenRng) -> i64 {
    match rng.gen_range(0..10) {
        0 => rng.gen_range(-(1 << 40)..(1 << 40)),
        1..=3 => rng.gen_range(-100..100),
        _ => rng.gen_range(0..256),
    }
}

struct TraceGen {
    mem: Memory,
    genv: GlobalEnv,
    cur: (Ident, Ident),
    stack: Vec<((Ident, Ident), Signature)>,
    /// The bytes of the last `read`, recorded in the next event's deltas.
    carried: Option<MemDelta>,
}

impl TraceGen {
    fn deltas(&mut self, rng: &mut GenRng, max: usize) -> Vec<MemDelta> {
        let comp = self.cur.0.clone();
        let mut out: Vec<MemDelta> = self.carried.take().into_iter().collect();
        let mine: Vec<(BlockId, GlobalDecl)> = self
            .genv
            .symbols()
            .iter()
            .filter(|s| s.comp == comp)
            .map(|s| (s.block, s.decl.clone()))
            .collect();
        for _ in 0..rng.gen_range(0..=max) {
            let (block, decl) = mine.choose(rng).unwrap().clone();
            let offset = rng.gen_range(0..decl.size);
            let value = if !decl.public && rng.gen_bool(0.1) {
                Value::Ptr(BlockId(rng.gen_range(0..64)), 0)
            } else {
                Value::Int(small_int(rng))
            };
            self.mem.store(&comp, block, offset as i64, value.clone()).unwrap();
            out.push(MemDelta::Store {
                block,
                offset,
                value,
                comp: comp.clone(),
            });
        }
        out
    }

    fn args(rng: &mut GenRng, n: usize) -> Vec<i64> {
        (0..n).map(|_| small_int(rng)).collect()
    }
}

/// A well-formed informative trace for `env` of uniformly random length
/// `0..=max_events`. Open calls are closed before the end, so the trace is
/// balanced.
pub fn gen_informative_trace(env: &Environment, cfg: &GenConfig, rng: &mut GenRng) -> GeneratedTrace {
    let len = rng.gen_range(0..=cfg.max_events);
    gen_trace_of_length(env, cfg, rng, len)
}

pub fn gen_trace_of_length(env: &Environment, cfg: &GenConfig, rng: &mut GenRng, len: usize) -> GeneratedTrace {
    let mut mem = Memory::new();
    let genv = GlobalEnv::alloc(&mut mem, env.globals.iter().map(|(c, g)| (c, g)));
    let mut g = TraceGen {
        mem,
        genv,
        cur: env.entry.clone(),
        stack: Vec::new(),
        carried: None,
    };
    let mut events = Vec::with_capacity(len);
    let mut io = IoScript::default();
    while events.len() < len {
        let remaining = len - events.len();
        let depth = g.stack.len();
        let ci = &env.interface.comps[&g.cur.0];
        let can_call = !ci.imports.is_empty() && remaining >= depth + 2;
        let can_sys = remaining > depth;
        let can_ret = depth > 0;
        let choice = loop {
            let c = rng.gen_range(0..100);
            let pick = if c < 35 { 0 } else if c < 70 { 1 } else { 2 };
            match pick {
                0 if can_call => break 0,
                1 if can_ret => break 1,
                2 if can_sys => break 2,
                _ if !can_call && !can_sys => break 1,
                _ => {}
            }
        };
        let deltas = g.deltas(rng, cfg.max_deltas_per_event);
        let f = g.cur.clone();
        let ev = match choice {
            0 => {
                let ((callee, proc), sig) = ci
                    .imports
                    .iter()
                    .choose(rng)
                    .map(|(k, s)| (k.clone(), *s))
                    .unwrap();
                let event = Event::Call {
                    caller: f.0.clone(),
                    callee: callee.clone(),
                    proc: proc.clone(),
                    args: TraceGen::args(rng, sig.params),
                };
                g.stack.push((f.clone(), sig));
                g.cur = (callee, proc);
                InformativeEvent::call(f, event, sig, deltas)
            }
            1 => {
                let (back, sig) = g.stack.pop().unwrap();
                let event = Event::Return {
                    callee: f.0.clone(),
                    caller: back.0.clone(),
                    value: sig.returns.then(|| small_int(rng)),
                };
                g.cur = back;
                InformativeEvent::ret(f, event, deltas)
            }
            _ => {
                let comp = f.0.clone();
                let name = *ci.syscalls.iter().choose(rng).unwrap();
                let (buffer, block, size) = g
                    .genv
                    .symbols()
                    .iter()
                    .filter(|s| s.comp == comp && s.decl.public)
                    .choose(rng)
                    .map(|s| (s.decl.name.clone(), s.block, s.decl.size))
                    .unwrap();
                let n = rng.gen_range(0..=size) as i64;
                let event = match name {
                    Syscall::Read => {
                        let k = if rng.gen_bool(0.7) { n } else { rng.gen_range(0..=n) };
                        let bytes: Vec<i64> = (0..k).map(|_| rng.gen_range(0..256)).collect();
                        for (i, b) in bytes.iter().enumerate() {
                            g.mem.store(&comp, block, i as i64, Value::Int(*b)).unwrap();
                        }
                        io.reads.push(bytes.clone());
                        g.carried = Some(MemDelta::Bytes {
                            block,
                            offset: 0,
                            values: bytes.clone(),
                            comp: comp.clone(),
                        });
                        Event::Syscall {
                            comp,
                            name,
                            args: vec![n],
                            ret: k,
                            read_bytes: bytes,
                            written_bytes: vec![],
                        }
                    }
                    Syscall::Write => {
                        let written: Vec<i64> = (0..n)
                            .map(|i| g.mem.load(&comp, block, i).unwrap().as_int().unwrap() & 0xff)
                            .collect();
                        let ack = if rng.gen_bool(0.8) { n } else { rng.gen_range(0..=n) };
                        io.acks.push(ack);
                        Event::Syscall {
                            comp,
                            name,
                            args: vec![n],
                            ret: ack,
                            read_bytes: vec![],
                            written_bytes: written,
                        }
                    }
                };
                InformativeEvent::sys(f, event, buffer, deltas)
            }
        };
        events.push(ev);
    }
    GeneratedTrace { events, io }
}

/// Random scripted IO for program runs.
pub fn gen_io(rng: &mut GenRng) -> IoScript {
    let reads = (0..rng.gen_range(0..12))
        .map(|_| (0..rng.gen_range(0..=8)).map(|_| rng.gen_range(0..256)).collect())
        .collect();
    let acks = (0..rng.gen_range(0..12)).map(|_| rng.gen_range(0..=8)).collect();
    IoScript::new(reads, acks)
}

/// Per-compartment invocation budget of generated programs; once spent,
/// procedures return immediately, which bounds every run.
pub const CALL_BUDGET: i64 = 12;

/// The private global counting invocations; generated statements only read it.
const BUDGET: &str = "budget";

struct ProgGen<'a> {
    comp: Ident,
    globals: Vec<GlobalDecl>,
    imports: Vec<((Ident, Ident), Signature)>,
    syscalls: Vec<Syscall>,
    helper: Option<Ident>,
    vars: Vec<Ident>,
    rng: &'a mut GenRng,
}

const VARS: [&str; 4] = ["v0", "v1", "v2", "v3"];
const LOOP_VARS: [&str; 2] = ["l0", "l1"];

impl ProgGen<'_> {
    fn expr(&mut self, depth: usize) -> Expr {
        let leaf = depth >= 3 || self.rng.gen_bool(0.4);
        if leaf {
            return match self.rng.gen_range(0..3) {
                0 => Expr::Const(small_int(self.rng)),
                1 => Expr::Local(self.vars.choose(self.rng).unwrap().clone()),
                _ => {
                    let g = self.globals.choose(self.rng).unwrap().clone();
                    Expr::gload(g.name, Expr::Const(self.rng.gen_range(0..g.size) as i64))
                }
            };
        }
        if self.rng.gen_bool(0.15) {
            let op = if self.rng.gen_bool(0.5) { UnOp::Not } else { UnOp::Neg };
            return Expr::Un(op, Box::new(self.expr(depth + 1)));
        }
        let op = *BinOp::ALL.choose(self.rng).unwrap();
        let a = self.expr(depth + 1);
        let b = match op {
            BinOp::Div | BinOp::Rem => {
                let mut d = small_int(self.rng);
                if d == 0 {
                    d = 7;
                }
                Expr::Const(d)
            }
            _ => self.expr(depth + 1),
        };
        Expr::bin(op, a, b)
    }

    fn dest(&mut self) -> Ident {
        Ident::from(*VARS.choose(self.rng).unwrap())
    }

    fn cross_call(&mut self) -> Option<Stmt> {
        let ((c, p), sig) = self.imports.choose(self.rng)?.clone();
        let args = (0..sig.params).map(|_| self.expr(1)).collect();
        let dest = (sig.returns && self.rng.gen_bool(0.8)).then(|| self.dest());
        Some(Stmt::Call {
            dest,
            target: CallTarget::Cross(c, p),
            args,
        })
    }

    fn stmts(&mut self, depth: usize, n: usize, in_helper: bool) -> Vec<Stmt> {
        (0..n).map(|_| self.stmt(depth, in_helper)).collect()
    }

    fn stmt(&mut self, depth: usize, in_helper: bool) -> Stmt {
        loop {
            match self.rng.gen_range(0..100) {
                0..=29 => {
                    let d = self.dest();
                    return Stmt::Assign(d, self.expr(0));
                }
                30..=44 => {
                    let g = self
                        .globals
                        .iter()
                        .filter(|g| g.name.as_str() != BUDGET)
                        .choose(self.rng)
                        .unwrap()
                        .clone();
                    let off = Expr::Const(self.rng.gen_range(0..g.size) as i64);
                    return Stmt::gstore(g.name, off, self.expr(0));
                }
                45..=54 if depth < 2 => {
                    let c = self.expr(1);
                    let n = self.rng.gen_range(1..=2);
                    let a = Stmt::seq(self.stmts(depth + 1, n, in_helper));
                    let b = if self.rng.gen_bool(0.5) {
                        Stmt::Skip
                    } else {
                        Stmt::seq(self.stmts(depth + 1, 1, in_helper))
                    };
                    return Stmt::if_(c, a, b);
                }
                55..=62 if depth < 2 => {
                    let l = Ident::from(LOOP_VARS[depth]);
                    let k = self.rng.gen_range(0..=3);
                    let n = self.rng.gen_range(1..=2);
                    let mut body = self.stmts(depth + 1, n, in_helper);
                    body.push(Stmt::Assign(
                        l.clone(),
                        Expr::bin(BinOp::Add, Expr::Local(l.clone()), Expr::Const(1)),
                    ));
                    return Stmt::seq(vec![
                        Stmt::Assign(l.clone(), Expr::Const(0)),
                        Stmt::While(
                            Expr::bin(BinOp::Lt, Expr::Local(l), Expr::Const(k)),
                            Box::new(Stmt::seq(body)),
                        ),
                    ]);
                }
                63..=79 if !self.imports.is_empty() => return self.cross_call().unwrap(),
                80..=86 if !in_helper && self.helper.is_some() => {
                    let h = self.helper.clone().unwrap();
                    let dest = Some(self.dest());
                    return Stmt::Call {
                        dest,
                        target: CallTarget::Internal(h),
                        args: vec![self.expr(1)],
                    };
                }
                87..=99 if !self.syscalls.is_empty() => {
                    let name = *self.syscalls.choose(self.rng).unwrap();
                    let Some(buf) = self.globals.iter().filter(|g| g.public).choose(self.rng).cloned() else {
                        continue;
                    };
                    let n = self.rng.gen_range(0..=buf.size) as i64;
                    let dest = self.rng.gen_bool(0.7).then(|| self.dest());
                    return Stmt::Call {
                        dest,
                        target: CallTarget::Sys(name, buf.name),
                        args: vec![Expr::Const(n)],
                    };
                }
                _ => {}
            }
        }
    }

    fn body(&mut self, params: usize, returns: bool, in_helper: bool, entry: bool) -> ProcBody {
        let budget = || Expr::gload(Ident::from(BUDGET), Expr::Const(0));
        let done = || Stmt::Return(returns.then_some(Expr::Const(0)));
        let mut ss = vec![
            Stmt::gstore(
                Ident::from(BUDGET),
                Expr::Const(0),
                Expr::bin(BinOp::Add, budget(), Expr::Const(1)),
            ),
            Stmt::if_(
                Expr::bin(BinOp::Lt, Expr::Const(CALL_BUDGET), budget()),
                done(),
                Stmt::Skip,
            ),
        ];
        let params: Vec<Ident> = (0..params).map(|i| Ident::from(format!("x{i}").as_str())).collect();
        self.vars = VARS.iter().map(|v| Ident::from(*v)).chain(params.iter().cloned()).collect();
        if entry {
            ss.extend(self.cross_call());
        }
        let n = self.rng.gen_range(1..=if entry { 8 } else { 5 });
        ss.extend(self.stmts(0, n, in_helper));
        if returns {
            ss.push(Stmt::Return(Some(self.expr(1))));
        } else if self.rng.gen_bool(0.5) {
            ss.push(Stmt::Return(None));
        }
        ProcBody {
            params,
            locals: VARS.iter().chain(LOOP_VARS.iter()).map(|v| Ident::from(*v)).collect(),
            body: Stmt::Seq(ss),
        }
    }
}

/// A random well-formed program over `env`, free of undefined behavior and
/// terminating by construction (bounded loops and a per-compartment budget
/// on procedure invocations).
pub fn gen_program(env: &Environment, rng: &mut GenRng) -> Program {
    let mut comps = Vec::new();
    for (name, ci) in &env.interface.comps {
        let mut c = CompartmentDecl::new(name.clone());
        c.exports = ci.exports.clone();
        c.imports = ci.imports.clone();
        c.syscalls = ci.syscalls.clone();
        c.globals = env.globals_of(name).cloned().collect();
        c.globals.push(GlobalDecl {
            name: Ident::from(BUDGET),
            size: 1,
            public: false,
        });
        let helper = rng.gen_bool(0.5).then(|| Ident::from("h0"));
        let mut pg = ProgGen {
            comp: name.clone(),
            globals: c.globals.clone(),
            imports: ci.imports.iter().map(|(k, s)| (k.clone(), *s)).collect(),
            syscalls: ci.syscalls.iter().copied().collect(),
            helper: helper.clone(),
            vars: Vec::new(),
            rng,
        };
        for (p, sig) in &ci.exports {
            c.procs.insert(p.clone(), pg.body(sig.params, sig.returns, false, false));
        }
        if let Some(h) = helper {
            c.procs.insert(h, pg.body(1, true, true, false));
        }
        if name == &env.entry.0 {
            c.procs.insert(env.entry.1.clone(), pg.body(0, true, false, true));
        }
        debug_assert_eq!(pg.comp, *name);
        comps.push(c);
    }
    Program::from_compartments(comps, Some(env.entry.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UbKind {
    DivByZero,
    OutOfBounds,
}

/// Inserts a statement with undefined behavior at a random point of a
/// random procedure of one of `comps` (all compartments when `None`).
/// Returns the compartment that was mutated.
pub fn inject_ub(p: &mut Program, comps: Option<&BTreeSet<Ident>>, rng: &mut GenRng) -> Ident {
    let names: Vec<Ident> = p
        .compartments
        .keys()
        .filter(|k| comps.is_none_or(|s| s.contains(*k)))
        .cloned()
        .collect();
    let k = names.choose(rng).expect("no compartment to mutate").clone();
    let c = p.compartments.get_mut(&k).unwrap();
    let proc = c.procs.keys().choose(rng).unwrap().clone();
    let kind = if rng.gen_bool(0.5) {
        UbKind::DivByZero
    } else {
        UbKind::OutOfBounds
    };
    let v0 = || Expr::Local(Ident::from("v0"));
    let ub = match kind {
        UbKind::DivByZero => Stmt::Assign(
            Ident::from("v0"),
            Expr::bin(BinOp::Div, Expr::Const(1), Expr::bin(BinOp::Sub, v0(), v0())),
        ),
        UbKind::OutOfBounds => {
            let g = c.globals.choose(rng).unwrap().clone();
            Stmt::Assign(
                Ident::from("v0"),
                Expr::gload(
                    g.name,
                    Expr::bin(
                        BinOp::Add,
                        Expr::Const(g.size as i64),
                        Expr::bin(BinOp::Mul, v0(), Expr::Const(0)),
                    ),
                ),
            )
        }
    };
    let body = &mut c.procs.get_mut(&proc).unwrap().body;
    if let Stmt::Seq(ss) = body {
        let at = rng.gen_range(2..=ss.len());
        ss.insert(at, ub);
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use secomp_core::backtrans::check_wf;
    use secomp_core::lang::check_interfaces;

    #[test]
    fn environments_are_connected_and_deterministic() {
        for seed in 0..200 {
            let cfg = GenConfig {
                seed,
                n_compartments: 1 + (seed as usize % 6),
                ..GenConfig::default()
            };
            let env = gen_environment(&cfg, &mut cfg.rng());
            assert!(env.graph.is_connected());
            assert_eq!(env, gen_environment(&cfg, &mut cfg.rng()));
            for (k, ci) in &env.interface.comps {
                assert!(!ci.exports.is_empty());
                for (c, p) in ci.imports.keys() {
                    assert!(env.interface.allowed_call(k, c, p).is_some());
                }
            }
            if cfg.n_compartments == 1 {
                assert!(env.interface.comps.values().all(|c| c.imports.is_empty()));
            }
        }
    }

    #[test]
    fn generated_traces_are_well_formed_and_balanced() {
        for seed in 0..100 {
            let cfg = GenConfig {
                seed,
                n_compartments: 1 + (seed as usize % 5),
                max_events: 200,
                ..GenConfig::default()
            };
            let mut rng = cfg.rng();
            let env = gen_environment(&cfg, &mut rng);
            let t = gen_informative_trace(&env, &cfg, &mut rng);
            let end = check_wf(&env.bt_env(), &t.events).unwrap();
            assert!(end.stack.is_empty());
        }
        let cfg = GenConfig {
            max_events: 0,
            ..GenConfig::default()
        };
        let mut rng = cfg.rng();
        let env = gen_environment(&cfg, &mut rng);
        assert!(gen_informative_trace(&env, &cfg, &mut rng).events.is_empty());
    }

    #[test]
    fn generated_programs_check() {
        for seed in 0..100 {
            let cfg = GenConfig {
                seed,
                n_compartments: 1 + (seed as usize % 4),
                ..GenConfig::default()
            };
            let mut rng = cfg.rng();
            let env = gen_environment(&cfg, &mut rng);
            let p = gen_program(&env, &mut rng);
            check_interfaces(&p).unwrap();
            for c in p.compartments.values() {
                for body in c.procs.values() {
                    let mut writes = 0;
                    body.body.walk(&mut |s| {
                        writes += matches!(s, Stmt::GStore { global, .. } if global.as_str() == BUDGET) as usize;
                    });
                    assert_eq!(writes, 1, "seed {seed}");
                }
            }
            let r = secomp_core::source::run(&p, gen_io(&mut rng), 4_000_000).unwrap();
            assert_ne!(r.outcome, secomp_core::source::Outcome::OutOfFuel, "seed {seed}");
            let mut q = p.clone();
            inject_ub(&mut q, None, &mut rng);
            check_interfaces(&q).unwrap();
        }
    }
}
