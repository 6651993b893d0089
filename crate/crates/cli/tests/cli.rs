use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_secomp-kit");

const PROG: &str = "
(main C0 main)
(compartment C0 (exports) (imports (C1 g 1 ret)) (syscalls write)
  (global out 2 public)
  (proc main () (locals x)
    (gstore out 0 72)
    (call x C1.g 20)
    (gstore out 1 x)
    (call _ sys.write out 2)
    (return x)))
(compartment C1 (exports (g 1 ret)) (imports) (syscalls read)
  (global inb 2 public)
  (proc g (a) (locals n)
    (call n sys.read inb 2)
    (return (op + a (gload inb 1)))))";

const INTERFACE: &str = "
(compartment C0 (exports) (imports (C1 g 1 ret)) (syscalls write))
(compartment C1 (exports (g 1 ret)) (imports) (syscalls read))";

const IO: &str = "READ 5 22\nWRITEACK 2\n";

fn kit(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn setup() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("p.sexp"), PROG).unwrap();
    fs::write(d.path().join("i.sexp"), INTERFACE).unwrap();
    fs::write(d.path().join("io.txt"), IO).unwrap();
    d
}

fn text(dir: &Path, f: &str) -> String {
    fs::read_to_string(dir.join(f)).unwrap()
}

#[test]
fn minimal_program_gives_empty_trace() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("min.sexp"),
        "(main C0 main) (compartment C0 (exports) (imports) (syscalls) (proc main () (locals) (return 0)))",
    )
    .unwrap();
    let o = kit(d.path(), &["run-source", "min.sexp", "--fuel", "100", "--trace", "t.txt"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(text(d.path(), "t.txt"), "");
}

#[test]
fn compiled_program_has_the_source_trace() {
    let d = setup();
    let p = d.path();
    assert_eq!(code(&kit(p, &["compile", "p.sexp", "-o", "t.sexp"])), 0);
    let s = kit(p, &["run-source", "p.sexp", "--io", "io.txt", "--trace", "s.txt"]);
    let t = kit(p, &["run-target", "t.sexp", "--io", "io.txt", "--trace", "tt.txt", "--itrace", "it.txt"]);
    assert_eq!((code(&s), code(&t)), (0, 0));
    assert_eq!(text(p, "s.txt"), text(p, "tt.txt"));
    assert_eq!(
        text(p, "s.txt"),
        "CALL C0 C1.g (20)\nSYS C1 read (2) [5,22] -> 2 []\nRET C1 C0 42\nSYS C0 write (2) [] -> 2 [72,42]\n"
    );
    assert_eq!(String::from_utf8_lossy(&s.stderr).trim(), "final 42");
}

#[test]
fn recorded_trace_checks_and_back_translates() {
    let d = setup();
    let p = d.path();
    kit(p, &["compile", "p.sexp", "-o", "t.sexp"]);
    kit(p, &["run-target", "t.sexp", "--io", "io.txt", "--trace", "m.txt", "--itrace", "it.txt"]);
    let c = kit(p, &["check-trace", "it.txt", "--interface", "i.sexp"]);
    assert_eq!(code(&c), 0);
    assert!(String::from_utf8_lossy(&c.stdout).starts_with("PASS 4 events"));
    let b = kit(p, &["backtranslate", "--interface", "i.sexp", "--itrace", "it.txt", "-o", "bt.sexp"]);
    assert_eq!(code(&b), 0, "{}", String::from_utf8_lossy(&b.stderr));
    kit(p, &["run-source", "bt.sexp", "--io", "io.txt", "--trace", "bt.txt"]);
    assert_eq!(text(p, "bt.txt"), text(p, "m.txt"));
    let one = kit(p, &["backtranslate", "--interface", "i.sexp", "--itrace", "it.txt", "--comp", "C1"]);
    assert_eq!(code(&one), 0);
    let out = String::from_utf8_lossy(&one.stdout);
    assert!(out.starts_with("(compartment C1"), "{out}");
    let short = kit(
        p,
        &["backtranslate", "--interface", "i.sexp", "--itrace", "it.txt", "--max-trace-length", "2"],
    );
    assert_eq!(code(&short), 2);
}

#[test]
fn tampered_trace_fails_the_check() {
    let d = setup();
    let p = d.path();
    kit(p, &["compile", "p.sexp", "-o", "t.sexp"]);
    kit(p, &["run-target", "t.sexp", "--io", "io.txt", "--itrace", "it.txt"]);
    let it = text(p, "it.txt").replace("RET C1 C0 42", "RET C0 C1 42");
    fs::write(p.join("bad.txt"), it).unwrap();
    let c = kit(p, &["check-trace", "bad.txt", "--interface", "i.sexp"]);
    assert_eq!(code(&c), 1, "{}", String::from_utf8_lossy(&c.stdout));
}

#[test]
fn stuck_run_exits_one() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("ub.sexp"),
        "(main C0 main) (compartment C0 (exports) (imports) (syscalls) (proc main () (locals x) (return (op / 1 x))))",
    )
    .unwrap();
    let o = kit(d.path(), &["run-source", "ub.sexp"]);
    assert_eq!(code(&o), 1);
    assert_eq!(String::from_utf8_lossy(&o.stdout), "UB C0\n");
}

#[test]
fn usage_and_parse_errors_exit_two() {
    let d = setup();
    assert_eq!(code(&kit(d.path(), &["compile", "p.sexp", "--frobnicate"])), 2);
    assert_eq!(code(&kit(d.path(), &["fuzz", "nonsense"])), 2);
    fs::write(d.path().join("bad.sexp"), "(compartment C0 (exports").unwrap();
    let o = kit(d.path(), &["compile", "bad.sexp"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.sexp"));
    assert_eq!(code(&kit(d.path(), &["run-source", "missing.sexp"])), 2);
}

#[test]
fn fuzz_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    for out in ["a", "b"] {
        let o = kit(p, &["fuzz", "fcc", "--trials", "10", "--seed", "1", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    }
    let a = text(p, "a/fcc/verdicts.txt");
    assert_eq!(a, text(p, "b/fcc/verdicts.txt"));
    assert_eq!(a.lines().count(), 10);
}

#[test]
fn link_joins_halves() {
    let d = setup();
    let p = d.path();
    let (c0, c1) = PROG.split_at(PROG.find("(compartment C1").unwrap());
    fs::write(p.join("a.sexp"), c0).unwrap();
    fs::write(p.join("b.sexp"), c1).unwrap();
    assert_eq!(code(&kit(p, &["link", "a.sexp", "b.sexp", "-o", "ab.sexp"])), 0);
    kit(p, &["run-source", "p.sexp", "--io", "io.txt", "--trace", "s1.txt"]);
    kit(p, &["run-source", "ab.sexp", "--io", "io.txt", "--trace", "s2.txt"]);
    assert_eq!(text(p, "s1.txt"), text(p, "s2.txt"));

    assert_eq!(code(&kit(p, &["compile", "a.sexp", "-o", "ta.sexp"])), 2);
    assert_eq!(code(&kit(p, &["compile", "a.sexp", "--partial", "-o", "ta.sexp"])), 0);
    assert_eq!(code(&kit(p, &["compile", "b.sexp", "--partial", "-o", "tb.sexp"])), 0);
    assert_eq!(code(&kit(p, &["link", "ta.sexp", "tb.sexp", "-o", "tab.sexp"])), 0);
    kit(p, &["run-target", "tab.sexp", "--io", "io.txt", "--trace", "t.txt"]);
    assert_eq!(text(p, "s1.txt"), text(p, "t.txt"));
}
