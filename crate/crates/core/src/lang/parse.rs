use std::collections::BTreeSet;

use super::*;
use crate::sexp::{parse_all, Sexp};

fn syntax(pos: Pos, msg: impl Into<String>) -> LangError {
    LangError::Syntax {
        pos,
        msg: msg.into(),
    }
}

fn ident(s: &Sexp, what: &str) -> Result<Ident, LangError> {
    let a = s.expect_atom(what)?;
    Ident::parse(a).ok_or_else(|| syntax(s.pos(), format!("invalid {what} `{a}`")))
}

fn count(s: &Sexp, what: &str) -> Result<usize, LangError> {
    let a = s.expect_atom(what)?;
    a.parse()
        .map_err(|_| syntax(s.pos(), format!("expected non-negative {what}, found `{a}`")))
}

fn signature(arity: &Sexp, ret: &Sexp) -> Result<Signature, LangError> {
    let params = count(arity, "arity")?;
    if params > MAX_PARAMS {
        return Err(syntax(
            arity.pos(),
            format!("arity {params} exceeds the maximum of {MAX_PARAMS}"),
        ));
    }
    let returns = match ret.expect_atom("ret|void")? {
        "ret" => true,
        "void" => false,
        other => return Err(syntax(ret.pos(), format!("expected ret|void, found `{other}`"))),
    };
    Ok(Signature::new(params, returns))
}

/// Parses a program in the S-expression concrete syntax. The entry point is an
/// explicit `(main COMP PROC)` form or, failing that, the first compartment
/// (by name) exporting a procedure called `main`.
pub fn parse_program(text: &str) -> Result<Program, LangError> {
    let forms = parse_all(text)?;
    let mut prog = Program::empty();
    let mut explicit_main = None;
    let mut raw_procs = Vec::new();
    for form in &forms {
        let items = form.expect_list("top-level form")?;
        match form.head() {
            Some("compartment") => {
                let (comp, procs) = compartment_header(items, form.pos())?;
                if prog.compartments.contains_key(&comp.name) {
                    return Err(LangError::DuplicateName {
                        kind: "compartment",
                        name: comp.name.to_string(),
                    });
                }
                raw_procs.push((comp.name.clone(), procs));
                prog.compartments.insert(comp.name.clone(), comp);
            }
            Some("main") => {
                if items.len() != 3 {
                    return Err(syntax(form.pos(), "expected (main COMP PROC)"));
                }
                explicit_main = Some((ident(&items[1], "compartment")?, ident(&items[2], "proc")?));
            }
            _ => return Err(syntax(form.pos(), "expected (compartment ...) or (main ...)")),
        }
    }
    // Bodies are parsed once every compartment header is known so that
    // cross-compartment references can be resolved against imports.
    for (name, procs) in raw_procs {
        for form in procs {
            let decl = prog.compartments.get(&name).unwrap();
            let (pname, body) = proc_form(decl, form)?;
            let decl = prog.compartments.get_mut(&name).unwrap();
            if decl.procs.insert(pname.clone(), body).is_some() {
                return Err(LangError::DuplicateName {
                    kind: "procedure",
                    name: format!("{name}.{pname}"),
                });
            }
        }
        let decl = &prog.compartments[&name];
        let mut checker = RefChecker { comp: decl };
        for (pname, body) in &decl.procs {
            checker.proc(pname, body)?;
        }
    }
    prog.main = match explicit_main {
        Some((c, p)) => {
            let known = prog
                .compartments
                .get(&c)
                .is_some_and(|comp| comp.procs.contains_key(&p) || comp.exports.contains_key(&p));
            if !known {
                return Err(LangError::UnknownReference {
                    kind: "entry point",
                    name: format!("{c}.{p}"),
                    context: "(main ...)".into(),
                });
            }
            Some((c, p))
        }
        None => prog
            .compartments
            .values()
            .find(|c| c.exports.contains_key(&Ident::from("main")))
            .map(|c| (c.name.clone(), Ident::from("main"))),
    };
    Ok(prog)
}

/// Parses only the interface part (exports, imports, syscalls) of the same
/// text format; procedure bodies, when present, are validated and dropped.
pub fn parse_interface(text: &str) -> Result<Interface, LangError> {
    parse_program(text).map(|p| p.interface())
}

fn compartment_header(
    items: &[Sexp],
    pos: Pos,
) -> Result<(CompartmentDecl, Vec<&Sexp>), LangError> {
    let name = ident(items.get(1).ok_or_else(|| syntax(pos, "missing compartment name"))?, "compartment name")?;
    let mut comp = CompartmentDecl::new(name.clone());
    let mut procs = Vec::new();
    for sec in &items[2..] {
        let parts = sec.expect_list("compartment section")?;
        match sec.head() {
            Some("exports") => {
                for e in &parts[1..] {
                    let e_items = e.expect_list("(PROC ARITY ret|void)")?;
                    if e_items.len() != 3 {
                        return Err(syntax(e.pos(), "expected (PROC ARITY ret|void)"));
                    }
                    let p = ident(&e_items[0], "procedure")?;
                    let sig = signature(&e_items[1], &e_items[2])?;
                    if comp.exports.insert(p.clone(), sig).is_some() {
                        return Err(LangError::DuplicateName {
                            kind: "export",
                            name: format!("{name}.{p}"),
                        });
                    }
                }
            }
            Some("imports") => {
                for e in &parts[1..] {
                    let e_items = e.expect_list("(COMP PROC ARITY ret|void)")?;
                    if e_items.len() != 4 {
                        return Err(syntax(e.pos(), "expected (COMP PROC ARITY ret|void)"));
                    }
                    let c = ident(&e_items[0], "compartment")?;
                    let p = ident(&e_items[1], "procedure")?;
                    let sig = signature(&e_items[2], &e_items[3])?;
                    if comp.imports.insert((c.clone(), p.clone()), sig).is_some() {
                        return Err(LangError::DuplicateName {
                            kind: "import",
                            name: format!("{c}.{p}"),
                        });
                    }
                }
            }
            Some("syscalls") => {
                for s in &parts[1..] {
                    let a = s.expect_atom("syscall name")?;
                    let sc = a
                        .parse::<Syscall>()
                        .map_err(|_| syntax(s.pos(), format!("unknown syscall `{a}`")))?;
                    comp.syscalls.insert(sc);
                }
            }
            Some("global") => {
                if parts.len() != 4 {
                    return Err(syntax(sec.pos(), "expected (global NAME SIZE public|private)"));
                }
                let g = ident(&parts[1], "global")?;
                let size = count(&parts[2], "size")?;
                let public = match parts[3].expect_atom("public|private")? {
                    "public" => true,
                    "private" => false,
                    other => {
                        return Err(syntax(
                            parts[3].pos(),
                            format!("expected public|private, found `{other}`"),
                        ))
                    }
                };
                if comp.global(&g).is_some() {
                    return Err(LangError::DuplicateName {
                        kind: "global",
                        name: format!("{name}.{g}"),
                    });
                }
                comp.globals.push(GlobalDecl {
                    name: g,
                    size,
                    public,
                });
            }
            Some("proc") => procs.push(sec),
            _ => return Err(syntax(sec.pos(), "unknown compartment section")),
        }
    }
    Ok((comp, procs))
}

fn proc_form(comp: &CompartmentDecl, form: &Sexp) -> Result<(Ident, ProcBody), LangError> {
    let items = form.expect_list("proc")?;
    let name = ident(items.get(1).ok_or_else(|| syntax(form.pos(), "missing proc name"))?, "proc name")?;
    let params_form = items
        .get(2)
        .ok_or_else(|| syntax(form.pos(), "missing parameter list"))?;
    let params = params_form
        .expect_list("parameter list")?
        .iter()
        .map(|p| ident(p, "parameter"))
        .collect::<Result<Vec<_>, _>>()?;
    if params.len() > MAX_PARAMS {
        return Err(syntax(params_form.pos(), "too many parameters"));
    }
    let mut rest = &items[3..];
    let mut locals = Vec::new();
    if let Some(first) = rest.first() {
        if first.head() == Some("locals") {
            locals = first.as_list().unwrap()[1..]
                .iter()
                .map(|l| ident(l, "local"))
                .collect::<Result<Vec<_>, _>>()?;
            rest = &rest[1..];
        }
    }
    let mut seen = BTreeSet::new();
    for v in params.iter().chain(&locals) {
        if !seen.insert(v.clone()) {
            return Err(LangError::DuplicateName {
                kind: "variable",
                name: format!("{}.{name}.{v}", comp.name),
            });
        }
    }
    let ctx = StmtCtx { comp, vars: &seen };
    let body = Stmt::seq(rest.iter().map(|s| ctx.stmt(s)).collect::<Result<_, _>>()?);
    Ok((name, ProcBody {
        params,
        locals,
        body,
    }))
}

struct StmtCtx<'a> {
    comp: &'a CompartmentDecl,
    vars: &'a BTreeSet<Ident>,
}

impl StmtCtx<'_> {
    fn stmt(&self, s: &Sexp) -> Result<Stmt, LangError> {
        let items = s.expect_list("statement")?;
        let head = s.head().ok_or_else(|| syntax(s.pos(), "expected statement keyword"))?;
        let arity = |n: usize, shape: &str| -> Result<(), LangError> {
            if items.len() != n {
                Err(syntax(s.pos(), format!("expected {shape}")))
            } else {
                Ok(())
            }
        };
        Ok(match head {
            "skip" => {
                arity(1, "(skip)")?;
                Stmt::Skip
            }
            "seq" => Stmt::Seq(items[1..].iter().map(|x| self.stmt(x)).collect::<Result<_, _>>()?),
            "set" => {
                arity(3, "(set X E)")?;
                Stmt::Assign(ident(&items[1], "variable")?, self.expr(&items[2])?)
            }
            "gstore" => {
                arity(4, "(gstore G E_off E_val)")?;
                Stmt::gstore(
                    ident(&items[1], "global")?,
                    self.expr(&items[2])?,
                    self.expr(&items[3])?,
                )
            }
            "if" => {
                if items.len() != 3 && items.len() != 4 {
                    return Err(syntax(s.pos(), "expected (if E S S)"));
                }
                let els = match items.get(3) {
                    Some(e) => self.stmt(e)?,
                    None => Stmt::Skip,
                };
                Stmt::if_(self.expr(&items[1])?, self.stmt(&items[2])?, els)
            }
            "while" => {
                arity(3, "(while E S)")?;
                Stmt::While(self.expr(&items[1])?, Box::new(self.stmt(&items[2])?))
            }
            "return" => match items.len() {
                1 => Stmt::Return(None),
                2 => Stmt::Return(Some(self.expr(&items[1])?)),
                _ => return Err(syntax(s.pos(), "expected (return E?)")),
            },
            "call" => self.call(items, s.pos())?,
            other => return Err(syntax(s.pos(), format!("unknown statement `{other}`"))),
        })
    }

    fn call(&self, items: &[Sexp], pos: Pos) -> Result<Stmt, LangError> {
        let first = items
            .get(1)
            .ok_or_else(|| syntax(pos, "expected (call X? TARGET E...)"))?;
        let first_atom = first.expect_atom("call target")?;
        // A destination is present iff the first operand is `_` or a variable.
        let (dest, rest) = if first_atom == "_" {
            (None, &items[2..])
        } else if Ident::parse(first_atom).is_some_and(|v| self.vars.contains(&v)) {
            (Some(Ident::from(first_atom)), &items[2..])
        } else {
            (None, &items[1..])
        };
        let target_sexp = rest.first().ok_or_else(|| syntax(pos, "missing call target"))?;
        let t = target_sexp.expect_atom("call target")?;
        let tpos = target_sexp.pos();
        let mut args = &rest[1..];
        let target = match t.split_once('.') {
            Some(("sys", name)) => {
                let sc = name
                    .parse::<Syscall>()
                    .map_err(|_| syntax(tpos, format!("unknown syscall `{name}`")))?;
                let buf = args
                    .first()
                    .ok_or_else(|| syntax(tpos, "syscall needs a buffer global"))?;
                let buf = ident(buf, "buffer global")?;
                args = &args[1..];
                CallTarget::Sys(sc, buf)
            }
            Some((c, p)) => {
                let c = Ident::parse(c).ok_or_else(|| syntax(tpos, "invalid compartment"))?;
                let p = Ident::parse(p).ok_or_else(|| syntax(tpos, "invalid procedure"))?;
                if c == self.comp.name {
                    CallTarget::Internal(p)
                } else {
                    CallTarget::Cross(c, p)
                }
            }
            None => CallTarget::Internal(
                Ident::parse(t).ok_or_else(|| syntax(tpos, format!("invalid call target `{t}`")))?,
            ),
        };
        let args = args.iter().map(|a| self.expr(a)).collect::<Result<Vec<_>, _>>()?;
        Ok(Stmt::Call { dest, target, args })
    }

    fn expr(&self, s: &Sexp) -> Result<Expr, LangError> {
        match s {
            Sexp::Atom(a, pos) => {
                if let Ok(n) = a.parse::<i64>() {
                    return Ok(Expr::Const(n));
                }
                Ident::parse(a)
                    .map(Expr::Local)
                    .ok_or_else(|| syntax(*pos, format!("invalid expression `{a}`")))
            }
            Sexp::List(items, pos) => match s.head() {
                Some("gload") if items.len() == 3 => Ok(Expr::gload(
                    ident(&items[1], "global")?,
                    self.expr(&items[2])?,
                )),
                Some("op") => {
                    let sym = items
                        .get(1)
                        .ok_or_else(|| syntax(*pos, "expected (op SYM E...)"))?
                        .expect_atom("operator")?;
                    let operands = items[2..]
                        .iter()
                        .map(|e| self.expr(e))
                        .collect::<Result<Vec<_>, _>>()?;
                    let mut operands = operands.into_iter();
                    match (sym, operands.len()) {
                        ("not", 1) => Ok(Expr::Un(UnOp::Not, Box::new(operands.next().unwrap()))),
                        ("neg", 1) => Ok(Expr::Un(UnOp::Neg, Box::new(operands.next().unwrap()))),
                        (sym, 2) => {
                            let op = BinOp::from_symbol(sym)
                                .ok_or_else(|| syntax(*pos, format!("unknown operator `{sym}`")))?;
                            let a = operands.next().unwrap();
                            Ok(Expr::bin(op, a, operands.next().unwrap()))
                        }
                        _ => Err(syntax(*pos, format!("bad operand count for `{sym}`"))),
                    }
                }
                _ => Err(syntax(*pos, "expected expression")),
            },
        }
    }
}

/// Resolves names used in procedure bodies.
struct RefChecker<'a> {
    comp: &'a CompartmentDecl,
}

impl RefChecker<'_> {
    fn unknown(&self, kind: &'static str, name: impl ToString, proc: &Ident) -> LangError {
        LangError::UnknownReference {
            kind,
            name: name.to_string(),
            context: format!("{}.{}", self.comp.name, proc),
        }
    }

    fn proc(&mut self, name: &Ident, body: &ProcBody) -> Result<(), LangError> {
        let vars: BTreeSet<&Ident> = body.params.iter().chain(&body.locals).collect();
        let mut result = Ok(());
        body.body.walk(&mut |s| {
            if result.is_err() {
                return;
            }
            result = self.stmt(name, &vars, s);
        });
        result
    }

    fn stmt(&self, proc: &Ident, vars: &BTreeSet<&Ident>, s: &Stmt) -> Result<(), LangError> {
        match s {
            Stmt::Skip | Stmt::Seq(_) | Stmt::Return(None) => Ok(()),
            Stmt::Assign(x, e) => {
                if !vars.contains(x) {
                    return Err(self.unknown("variable", x, proc));
                }
                self.expr(proc, vars, e)
            }
            Stmt::GStore {
                global,
                offset,
                value,
            } => {
                if self.comp.global(global).is_none() {
                    return Err(self.unknown("global", global, proc));
                }
                self.expr(proc, vars, offset)?;
                self.expr(proc, vars, value)
            }
            Stmt::If(c, ..) | Stmt::While(c, _) | Stmt::Return(Some(c)) => self.expr(proc, vars, c),
            Stmt::Call { dest, target, args } => {
                if let Some(d) = dest {
                    if !vars.contains(d) {
                        return Err(self.unknown("variable", d, proc));
                    }
                }
                match target {
                    CallTarget::Internal(p) => {
                        if !self.comp.procs.contains_key(p) {
                            return Err(self.unknown("procedure", p, proc));
                        }
                    }
                    CallTarget::Cross(c, p) => {
                        if !self.comp.imports.contains_key(&(c.clone(), p.clone())) {
                            return Err(self.unknown("import", format!("{c}.{p}"), proc));
                        }
                    }
                    CallTarget::Sys(_, buf) => {
                        if self.comp.global(buf).is_none() {
                            return Err(self.unknown("global", buf, proc));
                        }
                    }
                }
                args.iter().try_for_each(|a| self.expr(proc, vars, a))
            }
        }
    }

    fn expr(&self, proc: &Ident, vars: &BTreeSet<&Ident>, e: &Expr) -> Result<(), LangError> {
        match e {
            Expr::Const(_) => Ok(()),
            Expr::Local(x) => {
                if vars.contains(x) {
                    Ok(())
                } else {
                    Err(self.unknown("variable", x, proc))
                }
            }
            Expr::GLoad(g, off) => {
                if self.comp.global(g).is_none() {
                    return Err(self.unknown("global", g, proc));
                }
                self.expr(proc, vars, off)
            }
            Expr::Bin(_, a, b) => {
                self.expr(proc, vars, a)?;
                self.expr(proc, vars, b)
            }
            Expr::Un(_, a) => self.expr(proc, vars, a),
        }
    }
}
