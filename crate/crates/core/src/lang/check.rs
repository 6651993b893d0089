use super::*;

/// Conservative: true when every path through `s` ends in a `return`.
pub fn always_returns(s: &Stmt) -> bool {
    match s {
        Stmt::Return(_) => true,
        Stmt::Seq(ss) => ss.iter().any(always_returns),
        Stmt::If(_, a, b) => always_returns(a) && always_returns(b),
        Stmt::While(Expr::Const(c), _) => *c != 0,
        _ => false,
    }
}

/// Well-formedness of a complete program: everything [`check_partial`]
/// checks, and in addition every import names a compartment of the program.
pub fn check_interfaces(p: &Program) -> Result<(), LangError> {
    check_partial(p)?;
    for comp in p.compartments.values() {
        for (c, proc) in comp.imports.keys() {
            if !p.compartments.contains_key(c) {
                return Err(LangError::ImportUnresolved {
                    comp: comp.name.clone(),
                    target: c.clone(),
                    proc: proc.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Checks that hold for a partial program, where imports may point at
/// compartments supplied by a later link.
pub fn check_partial(p: &Program) -> Result<(), LangError> {
    for comp in p.compartments.values() {
        check_compartment(p, comp)?;
    }
    if let Some((c, m)) = &p.main {
        if let Some(comp) = p.compartments.get(c) {
            match comp.procs.get(m) {
                None => return Err(LangError::NoMain),
                Some(body) if !body.params.is_empty() => {
                    return Err(LangError::Ill {
                        comp: c.clone(),
                        proc: m.clone(),
                        msg: "entry point must take no parameters".into(),
                    })
                }
                Some(_) => {}
            }
        }
    }
    Ok(())
}

fn check_compartment(p: &Program, comp: &CompartmentDecl) -> Result<(), LangError> {
    for ((c, proc), sig) in &comp.imports {
        if c == &comp.name {
            return Err(LangError::SelfImport(comp.name.clone()));
        }
        if let Some(target) = p.compartments.get(c) {
            match target.exports.get(proc) {
                None => {
                    return Err(LangError::ImportUnresolved {
                        comp: comp.name.clone(),
                        target: c.clone(),
                        proc: proc.clone(),
                    })
                }
                Some(exp) if exp != sig => {
                    return Err(LangError::SignatureMismatch(format!(
                        "{} imports {c}.{proc} as ({sig}) but it is exported as ({exp})",
                        comp.name
                    )))
                }
                Some(_) => {}
            }
        }
    }
    for (name, sig) in &comp.exports {
        let body = comp.procs.get(name).ok_or_else(|| LangError::MissingBody {
            comp: comp.name.clone(),
            proc: name.clone(),
        })?;
        if body.params.len() != sig.params {
            return Err(LangError::SignatureMismatch(format!(
                "{}.{name} is exported with {} parameters but defines {}",
                comp.name,
                sig.params,
                body.params.len()
            )));
        }
    }
    for (name, body) in &comp.procs {
        check_proc(comp, name, body)?;
    }
    Ok(())
}

fn check_proc(comp: &CompartmentDecl, name: &Ident, body: &ProcBody) -> Result<(), LangError> {
    let ill = |msg: String| LangError::Ill {
        comp: comp.name.clone(),
        proc: name.clone(),
        msg,
    };
    let sig = comp.proc_signature(name).unwrap();
    if sig.returns && !always_returns(&body.body) {
        return Err(ill("may finish without returning a value".into()));
    }
    let mut result = Ok(());
    let mut exprs: Vec<&Expr> = Vec::new();
    body.body.walk(&mut |s| {
        if result.is_err() {
            return;
        }
        result = (|| {
            match s {
                Stmt::Return(v) => {
                    exprs.extend(v.iter());
                    if v.is_some() != sig.returns {
                        return Err(ill(if sig.returns {
                            "`return` without a value".into()
                        } else {
                            "void procedure returns a value".into()
                        }));
                    }
                }
                Stmt::Assign(_, e) | Stmt::If(e, ..) | Stmt::While(e, _) => exprs.push(e),
                Stmt::GStore {
                    global,
                    offset,
                    value,
                } => {
                    const_bounds(comp, global, offset).map_err(&ill)?;
                    exprs.push(offset);
                    exprs.push(value);
                }
                Stmt::Call { dest, target, args } => {
                    exprs.extend(args.iter());
                    let callee_sig = match target {
                        CallTarget::Internal(p) => comp.proc_signature(p).ok_or_else(|| {
                            LangError::UnknownReference {
                                kind: "procedure",
                                name: p.to_string(),
                                context: format!("{}.{name}", comp.name),
                            }
                        })?,
                        CallTarget::Cross(c, p) => {
                            *comp.imports.get(&(c.clone(), p.clone())).ok_or_else(|| {
                                LangError::UnknownReference {
                                    kind: "import",
                                    name: format!("{c}.{p}"),
                                    context: format!("{}.{name}", comp.name),
                                }
                            })?
                        }
                        CallTarget::Sys(sc, buf) => {
                            if !comp.syscalls.contains(sc) {
                                return Err(LangError::SyscallNotAllowed {
                                    comp: comp.name.clone(),
                                    syscall: *sc,
                                });
                            }
                            if comp.global(buf).is_none() {
                                return Err(ill(format!("unknown buffer `{buf}`")));
                            }
                            Signature::new(1, true)
                        }
                    };
                    if args.len() != callee_sig.params {
                        return Err(LangError::SignatureMismatch(format!(
                            "{}.{name} passes {} arguments to a procedure taking {}",
                            comp.name,
                            args.len(),
                            callee_sig.params
                        )));
                    }
                    if dest.is_some() && !callee_sig.returns {
                        return Err(ill("assigns the result of a void call".into()));
                    }
                }
                Stmt::Skip | Stmt::Seq(_) => {}
            }
            Ok(())
        })();
    });
    result?;
    while let Some(e) = exprs.pop() {
        match e {
            Expr::Const(_) | Expr::Local(_) => {}
            Expr::GLoad(g, off) => {
                const_bounds(comp, g, off).map_err(&ill)?;
                exprs.push(off);
            }
            Expr::Bin(_, a, b) => {
                exprs.push(a);
                exprs.push(b);
            }
            Expr::Un(_, a) => exprs.push(a),
        }
    }
    Ok(())
}

fn const_bounds(comp: &CompartmentDecl, g: &Ident, off: &Expr) -> Result<(), String> {
    let decl = comp.global(g).ok_or_else(|| format!("unknown global `{g}`"))?;
    if let Expr::Const(i) = off {
        if *i < 0 || *i as u64 >= decl.size as u64 {
            return Err(format!("constant index {i} out of bounds for `{g}` of size {}", decl.size));
        }
    }
    Ok(())
}
