use std::fmt::Write;

use super::*;

/// Renders a program in the concrete syntax accepted by [`parse_program`].
/// Printing then parsing yields the same program.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    if let Some((c, m)) = &p.main {
        writeln!(out, "(main {c} {m})").unwrap();
    }
    for comp in p.compartments.values() {
        out.push_str(&print_compartment(comp));
    }
    out
}

/// Only the interface: exports, imports and syscalls of every compartment.
pub fn print_interface(i: &Interface) -> String {
    let mut out = String::new();
    for (name, ci) in &i.comps {
        writeln!(out, "(compartment {name}").unwrap();
        header(&mut out, &ci.exports, &ci.imports, &ci.syscalls);
        out.push_str(")\n");
    }
    out
}

fn header(
    out: &mut String,
    exports: &BTreeMap<Ident, Signature>,
    imports: &BTreeMap<(Ident, Ident), Signature>,
    syscalls: &BTreeSet<Syscall>,
) {
    if !exports.is_empty() {
        out.push_str("  (exports");
        for (p, sig) in exports {
            write!(out, " ({p} {sig})").unwrap();
        }
        out.push_str(")\n");
    }
    if !imports.is_empty() {
        out.push_str("  (imports");
        for ((c, p), sig) in imports {
            write!(out, " ({c} {p} {sig})").unwrap();
        }
        out.push_str(")\n");
    }
    if !syscalls.is_empty() {
        out.push_str("  (syscalls");
        for s in syscalls {
            write!(out, " {s}").unwrap();
        }
        out.push_str(")\n");
    }
}

pub fn print_compartment(comp: &CompartmentDecl) -> String {
    let mut out = String::new();
    writeln!(out, "(compartment {}", comp.name).unwrap();
    header(&mut out, &comp.exports, &comp.imports, &comp.syscalls);
    for g in &comp.globals {
        let vis = if g.public { "public" } else { "private" };
        writeln!(out, "  (global {} {} {vis})", g.name, g.size).unwrap();
    }
    for (name, body) in &comp.procs {
        write!(out, "  (proc {name} (").unwrap();
        join(&mut out, &body.params);
        out.push(')');
        if !body.locals.is_empty() {
            out.push_str(" (locals ");
            join(&mut out, &body.locals);
            out.push(')');
        }
        // A lone `seq` body is spread over the proc form.
        let stmts: &[Stmt] = match &body.body {
            Stmt::Seq(ss) => ss,
            other => std::slice::from_ref(other),
        };
        for s in stmts {
            out.push_str("\n    ");
            stmt(&mut out, s, 4);
        }
        out.push_str(")\n");
    }
    out.push_str(")\n");
    out
}

fn join(out: &mut String, xs: &[Ident]) {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(x.as_str());
    }
}

fn stmt(out: &mut String, s: &Stmt, indent: usize) {
    let nl = |out: &mut String, ind: usize| {
        out.push('\n');
        out.extend(std::iter::repeat_n(' ', ind));
    };
    match s {
        Stmt::Skip => out.push_str("(skip)"),
        Stmt::Seq(ss) => {
            out.push_str("(seq");
            for x in ss {
                nl(out, indent + 2);
                stmt(out, x, indent + 2);
            }
            out.push(')');
        }
        Stmt::Assign(x, e) => {
            write!(out, "(set {x} ").unwrap();
            expr(out, e);
            out.push(')');
        }
        Stmt::GStore {
            global,
            offset,
            value,
        } => {
            write!(out, "(gstore {global} ").unwrap();
            expr(out, offset);
            out.push(' ');
            expr(out, value);
            out.push(')');
        }
        Stmt::If(c, a, b) => {
            out.push_str("(if ");
            expr(out, c);
            nl(out, indent + 2);
            stmt(out, a, indent + 2);
            nl(out, indent + 2);
            stmt(out, b, indent + 2);
            out.push(')');
        }
        Stmt::While(c, b) => {
            out.push_str("(while ");
            expr(out, c);
            nl(out, indent + 2);
            stmt(out, b, indent + 2);
            out.push(')');
        }
        Stmt::Call { dest, target, args } => {
            out.push_str("(call ");
            match dest {
                Some(d) => out.push_str(d.as_str()),
                None => out.push('_'),
            }
            match target {
                CallTarget::Internal(p) => write!(out, " {p}").unwrap(),
                CallTarget::Cross(c, p) => write!(out, " {c}.{p}").unwrap(),
                CallTarget::Sys(sc, buf) => write!(out, " sys.{sc} {buf}").unwrap(),
            }
            for a in args {
                out.push(' ');
                expr(out, a);
            }
            out.push(')');
        }
        Stmt::Return(None) => out.push_str("(return)"),
        Stmt::Return(Some(e)) => {
            out.push_str("(return ");
            expr(out, e);
            out.push(')');
        }
    }
}

fn expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Const(n) => write!(out, "{n}").unwrap(),
        Expr::Local(x) => out.push_str(x.as_str()),
        Expr::GLoad(g, off) => {
            write!(out, "(gload {g} ").unwrap();
            expr(out, off);
            out.push(')');
        }
        Expr::Bin(op, a, b) => {
            write!(out, "(op {} ", op.symbol()).unwrap();
            expr(out, a);
            out.push(' ');
            expr(out, b);
            out.push(')');
        }
        Expr::Un(op, a) => {
            write!(out, "(op {} ", op.symbol()).unwrap();
            expr(out, a);
            out.push(')');
        }
    }
}
