use proptest::prelude::*;

use secomp_core::backtrans::{back_translate_all, is_wf, BtEnv};
use secomp_core::compile::compile_program;
use secomp_core::lang::{parse_program, Ident};
use secomp_core::memory::{BlockId, Memory, Value};
use secomp_core::source::{run, Outcome};
use secomp_core::target::trun;
use secomp_core::trace::{prefix_rel, serialize_trace, Event, IoScript};

const OPS: [&str; 11] = ["+", "-", "*", "/", "%", "<", "=", "!=", "<=", "and", "or"];

/// Reference arithmetic, computed in 128 bits and truncated.
fn oracle(op: &str, a: i64, b: i64) -> Option<i64> {
    let (x, y) = (a as i128, b as i128);
    let wrap = |v: i128| v as i64;
    Some(match op {
        "+" => wrap(x + y),
        "-" => wrap(x - y),
        "*" => wrap(x * y),
        "/" if b == 0 => return None,
        "/" => wrap(x / y),
        "%" if b == 0 => return None,
        "%" => wrap(x % y),
        "<" => (x < y) as i64,
        "=" => (x == y) as i64,
        "!=" => (x != y) as i64,
        "<=" => (x <= y) as i64,
        "and" => (x != 0 && y != 0) as i64,
        "or" => (x != 0 || y != 0) as i64,
        _ => unreachable!(),
    })
}

fn operand() -> impl Strategy<Value = i64> {
    prop_oneof![
        -3i64..=3,
        any::<i64>(),
        Just(i64::MIN),
        Just(i64::MAX),
        Just(-1i64),
    ]
}

fn both_levels(text: &str) -> (Vec<Event>, Outcome, Vec<Event>, Outcome) {
    let p = parse_program(text).unwrap();
    let s = run(&p, IoScript::default(), 100_000).unwrap();
    let t = trun(&compile_program(&p).unwrap(), IoScript::default(), 1_000_000).unwrap();
    (s.trace, s.outcome, t.trace, t.outcome)
}

proptest! {
    #[test]
    fn binary_operators_match_reference(op in 0..OPS.len(), a in operand(), b in operand()) {
        let op = OPS[op];
        // Operands go through a cross call so both compartments see them.
        let text = format!(
            "(main C0 main)
             (compartment C0 (exports) (imports (C1 f 2 ret)) (syscalls)
               (proc main () (locals r) (call r C1.f {a} {b}) (return r)))
             (compartment C1 (exports (f 2 ret)) (imports) (syscalls)
               (proc f (x y) (locals) (return (op {op} x y))))"
        );
        let (st, so, tt, to) = both_levels(&text);
        prop_assert_eq!(&st, &tt);
        prop_assert_eq!(&so, &to);
        match oracle(op, a, b) {
            Some(v) => {
                prop_assert_eq!(so, Outcome::Final(v));
                prop_assert_eq!(
                    serialize_trace(&st),
                    format!("CALL C0 C1.f ({a},{b})\nRET C1 C0 {v}\n")
                );
            }
            None => prop_assert_eq!(st.last(), Some(&Event::Undef(Ident::from("C1")))),
        }
    }

    #[test]
    fn many_arguments_cross_intact(args in prop::collection::vec(any::<i64>(), 0..=14)) {
        let n = args.len();
        let params: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        // Weighted sum so that argument order matters.
        let mut sum = "0".to_string();
        for (i, p) in params.iter().enumerate() {
            sum = format!("(op + {sum} (op * {p} {}))", i + 1);
        }
        let actual: Vec<String> = args.iter().map(i64::to_string).collect();
        let text = format!(
            "(main C0 main)
             (compartment C0 (exports) (imports (C1 f {n} ret)) (syscalls)
               (proc main () (locals r) (call r C1.f {}) (return r)))
             (compartment C1 (exports (f {n} ret)) (imports) (syscalls)
               (proc f ({}) (locals) (return {sum})))",
            actual.join(" "),
            params.join(" "),
        );
        let expected = args
            .iter()
            .enumerate()
            .fold(0i64, |acc, (i, &a)| acc.wrapping_add(a.wrapping_mul(i as i64 + 1)));
        let (st, so, tt, to) = both_levels(&text);
        prop_assert_eq!(&st, &tt);
        prop_assert_eq!(&so, &to);
        prop_assert_eq!(so, Outcome::Final(expected));
        prop_assert_eq!(
            serialize_trace(&st),
            format!("CALL C0 C1.f ({})\nRET C1 C0 {expected}\n", actual.join(","))
        );
    }

    #[test]
    fn recorded_traces_are_well_formed_and_back_translate(
        writes in prop::collection::vec((0usize..3, 0i64..256), 0..6),
        reads in prop::collection::vec(prop::collection::vec(0i64..256, 0..4), 0..3),
        depth in 0usize..4,
    ) {
        // C0 and C1 ping-pong `depth` times; C1 fills its buffer from stdin
        // and C0 writes out whatever it stored.
        let stores: String = writes
            .iter()
            .map(|(o, v)| format!("(gstore out {o} {v})"))
            .collect();
        let text = format!(
            "(main C0 main)
             (compartment C0 (exports (back 1 ret)) (imports (C1 ping 1 ret)) (syscalls write)
               (global out 3 public)
               (proc main () (locals r) {stores} (call r C1.ping {depth}) (call _ sys.write out 3) (return r))
               (proc back (n) (locals r) (call r C1.ping (op - n 1)) (return (op + r 1))))
             (compartment C1 (exports (ping 1 ret)) (imports (C0 back 1 ret)) (syscalls read)
               (global inb 3 public)
               (proc ping (n) (locals r k)
                 (call k sys.read inb 3)
                 (if (op <= n 0) (return (gload inb 0)))
                 (call r C0.back n)
                 (return r)))"
        );
        let p = parse_program(&text).unwrap();
        let io = IoScript::new(reads, vec![3]);
        let tp = compile_program(&p).unwrap();
        let t = trun(&tp, io.clone(), 1_000_000).unwrap();
        prop_assert!(matches!(t.outcome, Outcome::Final(_)));
        let globals = tp
            .comps
            .values()
            .flat_map(|c| c.globals.iter().map(move |g| (c.name.clone(), g.clone())))
            .collect();
        let env = BtEnv::new(tp.interface(), globals, tp.entry.clone().unwrap());
        prop_assert!(is_wf(&env, &t.itrace));
        let bt = back_translate_all(&env, &t.itrace).unwrap();
        let s = run(&bt, io, 1_000_000).unwrap();
        prop_assert_eq!(serialize_trace(&s.trace), serialize_trace(&t.trace));
    }
}

#[derive(Clone, Debug)]
enum MemOp {
    Alloc { owner: u8, size: usize },
    Store { actor: u8, block: usize, off: i64, v: i64 },
    Load { actor: u8, block: usize, off: i64 },
    Free { actor: u8, block: usize },
}

fn mem_op() -> impl Strategy<Value = MemOp> {
    prop_oneof![
        (0u8..3, 0usize..4).prop_map(|(owner, size)| MemOp::Alloc { owner, size }),
        (0u8..3, 0usize..8, -1i64..5, any::<i64>())
            .prop_map(|(actor, block, off, v)| MemOp::Store { actor, block, off, v }),
        (0u8..3, 0usize..8, -1i64..5).prop_map(|(actor, block, off)| MemOp::Load { actor, block, off }),
        (0u8..3, 0usize..8).prop_map(|(actor, block)| MemOp::Free { actor, block }),
    ]
}

/// Reference model: owner, liveness and contents per block.
#[derive(Default)]
struct Model {
    blocks: Vec<(u8, bool, Vec<Option<i64>>)>,
}

impl Model {
    fn ok(&self, actor: u8, block: usize, off: Option<i64>) -> Option<usize> {
        let (owner, live, slots) = self.blocks.get(block)?;
        if *owner != actor || !live {
            return None;
        }
        match off {
            None => Some(0),
            Some(o) if o >= 0 && (o as usize) < slots.len() => Some(o as usize),
            Some(_) => None,
        }
    }
}

proptest! {
    #[test]
    fn memory_matches_ownership_model(ops in prop::collection::vec(mem_op(), 0..60)) {
        let name = |k: u8| Ident::from(["C0", "C1", "C2"][k as usize]);
        let mut mem = Memory::new();
        let mut model = Model::default();
        for op in ops {
            match op {
                MemOp::Alloc { owner, size } => {
                    let b = mem.alloc(&name(owner), size);
                    prop_assert_eq!(b, BlockId(model.blocks.len()));
                    model.blocks.push((owner, true, vec![None; size]));
                }
                MemOp::Store { actor, block, off, v } => {
                    let r = mem.store(&name(actor), BlockId(block), off, Value::Int(v));
                    match model.ok(actor, block, Some(off)) {
                        Some(i) => {
                            prop_assert!(r.is_ok());
                            model.blocks[block].2[i] = Some(v);
                        }
                        None => prop_assert!(r.is_err()),
                    }
                }
                MemOp::Load { actor, block, off } => {
                    let r = mem.load(&name(actor), BlockId(block), off);
                    match model.ok(actor, block, Some(off)) {
                        Some(i) => {
                            let want = model.blocks[block].2[i].map_or(Value::Undef, Value::Int);
                            prop_assert_eq!(r, Ok(want));
                        }
                        None => prop_assert!(r.is_err()),
                    }
                }
                MemOp::Free { actor, block } => {
                    let r = mem.free(&name(actor), BlockId(block));
                    match model.ok(actor, block, None) {
                        Some(_) => {
                            prop_assert!(r.is_ok());
                            model.blocks[block].1 = false;
                        }
                        None => prop_assert!(r.is_err()),
                    }
                }
            }
        }
        prop_assert_eq!(mem.isolation_breaches(), 0);
    }

    #[test]
    fn prefix_relation_matches_definition(
        m in prop::collection::vec(0i64..3, 0..6),
        cut in 0usize..7,
        undef in any::<bool>(),
        tweak in any::<bool>(),
    ) {
        let ev = |v: i64| Event::Return {
            callee: Ident::from("C1"),
            caller: Ident::from("C0"),
            value: Some(v),
        };
        let m2: Vec<Event> = m.iter().map(|&v| ev(v)).collect();
        let cut = cut.min(m2.len());
        let mut m1 = m2[..cut].to_vec();
        if tweak && !m1.is_empty() {
            let last = m1.len() - 1;
            m1[last] = ev(7);
        }
        if undef {
            m1.push(Event::Undef(Ident::from("C0")));
        }
        // m1 ≼ m2 iff its Undef-free part equals m2 (no Undef) or is a
        // prefix of m2 (with Undef).
        let body_is_prefix = !tweak || cut == 0;
        let expected = if undef { body_is_prefix } else { body_is_prefix && cut == m2.len() };
        prop_assert_eq!(prefix_rel(&m1, &m2), expected);
    }
}
