//! Greedy shrinking of failing instances.

use secomp_core::lang::{check_interfaces, Program, Stmt};
use secomp_core::trace::InformativeEvent;

/// Shortest prefix of `it` on which `fails` still holds (assuming it holds
/// on `it`). Prefixes of a well-formed trace are well formed, so the result
/// is a valid instance.
pub fn shrink_trace(
    it: &[InformativeEvent],
    mut fails: impl FnMut(&[InformativeEvent]) -> bool,
) -> Vec<InformativeEvent> {
    let mut n = it.len();
    let mut step = n.next_power_of_two();
    while step > 0 {
        if step <= n && fails(&it[..n - step]) {
            n -= step;
        } else {
            step /= 2;
        }
    }
    it[..n].to_vec()
}

fn seq_slots(s: &Stmt, out: &mut usize) {
    match s {
        Stmt::Seq(ss) => {
            *out += ss.len();
            ss.iter().for_each(|s| seq_slots(s, out));
        }
        Stmt::If(_, a, b) => {
            seq_slots(a, out);
            seq_slots(b, out);
        }
        Stmt::While(_, b) => seq_slots(b, out),
        _ => {}
    }
}

/// Removes the `target`-th statement found in a sequence (pre-order).
fn remove_nth(s: &mut Stmt, target: &mut usize) -> bool {
    match s {
        Stmt::Seq(ss) => {
            if *target < ss.len() {
                ss.remove(*target);
                return true;
            }
            *target -= ss.len();
            ss.iter_mut().any(|s| remove_nth(s, target))
        }
        Stmt::If(_, a, b) => remove_nth(a, target) || remove_nth(b, target),
        Stmt::While(_, b) => remove_nth(b, target),
        _ => false,
    }
}

/// Greedily deletes statements from every procedure body while `fails`
/// holds and the program still passes the interface checks.
pub fn shrink_program(p: &Program, mut fails: impl FnMut(&Program) -> bool) -> Program {
    let mut cur = p.clone();
    let keys: Vec<_> = cur
        .compartments
        .iter()
        .flat_map(|(c, d)| d.procs.keys().map(move |q| (c.clone(), q.clone())))
        .collect();
    for (c, q) in keys {
        let mut i = 0;
        loop {
            let mut n = 0;
            seq_slots(&cur.compartments[&c].procs[&q].body, &mut n);
            if i >= n {
                break;
            }
            let mut cand = cur.clone();
            let mut t = i;
            remove_nth(&mut cand.compartments.get_mut(&c).unwrap().procs.get_mut(&q).unwrap().body, &mut t);
            if check_interfaces(&cand).is_ok() && fails(&cand) {
                cur = cand;
            } else {
                i += 1;
            }
        }
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use secomp_core::lang::parse_program;
    use secomp_core::source::{run, Outcome};
    use secomp_core::trace::IoScript;

    #[test]
    fn trace_shrinks_to_minimal_prefix() {
        let env = crate::gen::gen_environment(&Default::default(), &mut crate::gen::rng_from_seed(3));
        let g = crate::gen::gen_trace_of_length(
            &env,
            &Default::default(),
            &mut crate::gen::rng_from_seed(4),
            40,
        );
        let small = shrink_trace(&g.events, |t| t.len() >= 13);
        assert_eq!(small.len(), 13);
        assert_eq!(small[..], g.events[..13]);
    }

    #[test]
    fn program_shrinks_to_the_failing_statement() {
        let p = parse_program(
            "(main C0 main)
             (compartment C0 (exports) (imports) (syscalls)
               (global g 2 private)
               (proc main () (locals x)
                 (set x 1)
                 (gstore g 0 x)
                 (set x (op + x 2))
                 (set x (op / x 0))
                 (return x)))",
        )
        .unwrap();
        let stuck = |p: &Program| {
            matches!(run(p, IoScript::default(), 1000).map(|r| r.outcome), Ok(Outcome::Stuck(_)))
        };
        assert!(stuck(&p));
        let s = shrink_program(&p, stuck);
        let body = &s.compartments.values().next().unwrap().procs.values().next().unwrap().body;
        let mut n = 0;
        seq_slots(body, &mut n);
        assert!(n <= 1, "{body:?}");
        assert!(stuck(&s));
    }
}
