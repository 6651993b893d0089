//! Hand-written target-level attackers. Each one tries to break out of its
//! compartment and must be stopped with undefined behavior blamed on itself.

use secomp_core::lang::Ident;
use secomp_core::source::Outcome;
use secomp_core::target::{parse_target, trun};
use secomp_core::trace::{Event, IoScript};

use crate::props::{Stats, Verdict};

pub struct Attack {
    pub name: &'static str,
    pub attacker: &'static str,
    pub program: &'static str,
}

const FUEL: u64 = 10_000;

pub const ATTACKS: &[Attack] = &[
    Attack {
        name: "integer-return-address",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (jal.x C1.g) (halt a0) (li a0 99) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (tproc g (li a0 1) (li t0 2) (jr.x t0)))",
    },
    Attack {
        name: "stale-return-address",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (jal.x C1.g) (jal.x C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (global seen 1 private) (global saved 1 private)
            (tproc g (li t0 0) (load_g t1 seen t0) (li a0 1) (jcond t1 8)
              (store_g saved t0 ra) (li t1 1) (store_g seen t0 t1) (jr.x ra)
              (load_g t2 saved t0) (jr.x t2)))",
    },
    Attack {
        name: "stack-pointer-mismatch",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (enter 2) (jal.x C1.g) (leave) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (tproc g (enter 4) (li a0 1) (jr.x ra)))",
    },
    Attack {
        name: "unflagged-cross-jump",
        attacker: "C0",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (jal C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (tproc g (li a0 1) (jr.x ra)))",
    },
    Attack {
        name: "direct-jump-into-caller",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (jal.x C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (tproc g (li a0 1) (jmp C0.main)))",
    },
    Attack {
        name: "spill-frame-write-after-callback",
        attacker: "C0",
        program: "(entry C0 main)
          (tcompartment C0
            (interface (exports (main 0 ret) (cb 0 ret)) (imports (C1 g 9 ret)) (syscalls))
            (global stash 1 private)
            (tproc main (enter 3) (spill t0 1) (store_f 2 t0) (li t2 0) (store_g stash t2 t0)
              (li t1 40) (storep t0 0 t1)
              (li a0 2) (li a1 0) (li a2 0) (li a3 0) (li a4 0) (li a5 0) (li a6 0) (li a7 0)
              (jal.x C1.g) (load_f t0 2) (sfree t0) (leave) (halt a0))
            (tproc cb (li t0 0) (load_g t1 stash t0) (li t2 7) (storep t1 0 t2) (li a0 0) (jr.x ra)))
          (tcompartment C1 (interface (exports (g 9 ret)) (imports (C0 cb 0 ret)) (syscalls))
            (tproc g (enter 2) (jal.x C0.cb) (leave) (load_arg t0 0) (mov a0 t0) (jr.x ra)))",
    },
    Attack {
        name: "non-imported-call",
        attacker: "C0",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (jal.x C1.h) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret) (h 0 ret)) (imports) (syscalls))
            (tproc g (li a0 1) (jr.x ra))
            (tproc h (li a0 2) (jr.x ra)))",
    },
    Attack {
        name: "signature-mismatch-call",
        attacker: "C0",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 2 ret)) (syscalls))
            (tproc main (li a0 1) (li a1 2) (jal.x C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 1 ret)) (imports) (syscalls))
            (tproc g (jr.x ra)))",
    },
    Attack {
        name: "disallowed-syscall",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls write))
            (tproc main (jal.x C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls read))
            (global out 1 public)
            (tproc g (li a0 1) (sys write out) (jr.x ra)))",
    },
    Attack {
        name: "pointer-return-value",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (jal.x C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (global secret 2 private)
            (tproc g (enter 3) (store_f 2 sp) (load_f a0 2) (leave) (jr.x ra)))",
    },
    Attack {
        name: "undefined-return-value",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (li t3 5) (jal.x C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (tproc g (mov a0 t3) (jr.x ra)))",
    },
    Attack {
        name: "pointer-argument",
        attacker: "C0",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 1 ret)) (syscalls))
            (tproc main (enter 2) (mov a0 sp) (jal.x C1.g) (leave) (halt a0)))
          (tcompartment C1 (interface (exports (g 1 ret)) (imports) (syscalls))
            (tproc g (jr.x ra)))",
    },
    Attack {
        name: "caller-frame-read",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (enter 3) (li t0 1234) (store_f 2 t0) (jal.x C1.g) (leave) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (tproc g (load_f a0 2) (jr.x ra)))",
    },
    Attack {
        name: "caller-frame-write",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (enter 3) (jal.x C1.g) (leave) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (tproc g (li t0 1) (store_f 1 t0) (li a0 0) (jr.x ra)))",
    },
    Attack {
        name: "missing-spill-frame",
        attacker: "C0",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 9 ret)) (syscalls))
            (tproc main (li a0 0) (li a1 0) (li a2 0) (li a3 0) (li a4 0) (li a5 0) (li a6 0) (li a7 0)
              (jal.x C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 9 ret)) (imports) (syscalls))
            (tproc g (li a0 0) (jr.x ra)))",
    },
    Attack {
        name: "foreign-global-access",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (global key 1 private)
            (tproc main (jal.x C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls))
            (tproc g (li t0 0) (load_g a0 key t0) (jr.x ra)))",
    },
    Attack {
        name: "pointer-in-public-global-at-syscall",
        attacker: "C1",
        program: "(entry C0 main)
          (tcompartment C0 (interface (exports (main 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (tproc main (jal.x C1.g) (halt a0)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports) (syscalls write))
            (global out 2 public)
            (tproc g (enter 2) (li t0 1) (store_g out t0 sp) (li a0 1) (sys write out) (leave) (jr.x ra)))",
    },
    Attack {
        name: "return-from-nested-callback-into-outer-caller",
        attacker: "C0",
        program: "(entry C0 main)
          (tcompartment C0
            (interface (exports (main 0 ret) (cb 0 ret)) (imports (C1 g 0 ret)) (syscalls))
            (global outer 1 private)
            (tproc main (jal C0.helper) (jal.x C1.g) (halt a0))
            (tproc helper (li t0 0) (store_g outer t0 ra) (jr.x ra))
            (tproc cb (li t0 0) (load_g t1 outer t0) (li a0 5) (jr.x t1)))
          (tcompartment C1 (interface (exports (g 0 ret)) (imports (C0 cb 0 ret)) (syscalls))
            (tproc g (enter 2) (jal.x C0.cb) (leave) (jr.x ra)))",
    },
];

/// Runs an attack and checks that it ends `Stuck(attacker)` with a trace
/// ending in `Undef(attacker)` and no granted cross-compartment access.
pub fn run_attack(a: &Attack) -> Verdict {
    let mut stats = Stats::default();
    let tp = match parse_target(a.program) {
        Ok(tp) => tp,
        Err(e) => {
            return Verdict::new(false, format!("{}: parse error: {e}", a.name), stats)
        }
    };
    let r = match trun(&tp, IoScript::default(), FUEL) {
        Ok(r) => r,
        Err(e) => {
            return Verdict::new(false, format!("{}: {e}", a.name), stats)
        }
    };
    stats.target(&r);
    let attacker = Ident::from(a.attacker);
    let stuck = r.outcome == Outcome::Stuck(attacker.clone());
    let blamed = r.trace.last() == Some(&Event::Undef(attacker));
    let pass = stuck && blamed && stats.clean();
    let mut v = Verdict::new(pass, format!("{}: {:?} after {} events", a.name, r.outcome, r.trace.len()), stats);
    v.observed = r.trace;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_attack_is_stopped_and_blamed() {
        assert!(ATTACKS.len() >= 10);
        for a in ATTACKS {
            let v = run_attack(a);
            assert!(v.pass, "{}", v.detail);
        }
    }

    #[test]
    fn attacks_pass_interface_shape_checks() {
        for a in ATTACKS {
            let tp = parse_target(a.program).unwrap();
            assert!(tp.comps.contains_key(&Ident::from(a.attacker)), "{}", a.name);
        }
    }
}
