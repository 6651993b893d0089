use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use secomp_core::backtrans::{back_translate, back_translate_all, check_wf, BtEnv, DEFAULT_MAX_TRACE_LENGTH};
use secomp_core::compile::{compile_partial_with, compile_program_with, CompileOptions};
use secomp_core::lang::{parse_interface, parse_program, print_compartment, print_program, Ident};
use secomp_core::source::{run, Outcome};
use secomp_core::target::{parse_target, print_target, trun};
use secomp_core::trace::{parse_io, parse_itrace, serialize_itrace, serialize_trace, IoScript, ItraceFile};
use secomp_harness::corpus::{fuzz, Property};

#[derive(Parser)]
#[command(name = "secomp-kit", version, about = "Compile, run, back-translate and fuzz compartmentalized programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a source program to target code.
    Compile {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Reject procedures with more than 8 parameters instead of spilling.
        #[arg(long)]
        no_spill: bool,
        /// Allow imports from compartments that a later link provides.
        #[arg(long)]
        partial: bool,
    },
    /// Run a source program.
    RunSource {
        program: PathBuf,
        #[arg(long)]
        io: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        fuel: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a target program.
    RunTarget {
        program: PathBuf,
        #[arg(long)]
        io: Option<PathBuf>,
        #[arg(long, default_value_t = 64_000_000)]
        fuel: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        itrace: Option<PathBuf>,
    },
    /// Build a source program that reproduces an informative trace.
    Backtranslate {
        #[arg(long)]
        interface: PathBuf,
        #[arg(long)]
        itrace: PathBuf,
        /// Only this compartment; all of them, linked, when omitted.
        #[arg(long)]
        comp: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_TRACE_LENGTH)]
        max_trace_length: usize,
    },
    /// Check that an informative trace is well formed for an interface.
    CheckTrace {
        itrace: PathBuf,
        #[arg(long)]
        interface: PathBuf,
    },
    /// Run a seeded campaign of one property.
    Fuzz {
        property: Property,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Link source programs, or target programs, into one.
    Link {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_io(path: Option<&Path>) -> Result<IoScript> {
    match path {
        Some(p) => parse_io(&read(p)?).with_context(|| p.display().to_string()),
        None => Ok(IoScript::default()),
    }
}

fn outcome_code(o: &Outcome) -> ExitCode {
    eprintln!(
        "{}",
        match o {
            Outcome::Final(v) => format!("final {v}"),
            Outcome::Stuck(k) => format!("stuck {k}"),
            Outcome::OutOfFuel => "out of fuel".to_string(),
        }
    );
    match o {
        Outcome::Final(_) => ExitCode::SUCCESS,
        _ => ExitCode::from(1),
    }
}

fn bt_env(interface: &Path, itrace: &Path) -> Result<(BtEnv, ItraceFile)> {
    let i = parse_interface(&read(interface)?).with_context(|| interface.display().to_string())?;
    let file = parse_itrace(&read(itrace)?).with_context(|| itrace.display().to_string())?;
    let env = BtEnv::from_itrace(i, &file).with_context(|| itrace.display().to_string())?;
    Ok((env, file))
}

fn exec(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Compile {
            input,
            output,
            no_spill,
            partial,
        } => {
            let p = parse_program(&read(&input)?).with_context(|| input.display().to_string())?;
            let opts = CompileOptions { spill: !no_spill };
            let tp = if partial {
                compile_partial_with(&p, &opts)
            } else {
                compile_program_with(&p, &opts)
            }
            .with_context(|| input.display().to_string())?;
            emit(output.as_deref(), &print_target(&tp))?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::RunSource {
            program,
            io,
            fuel,
            trace,
        } => {
            let p = parse_program(&read(&program)?).with_context(|| program.display().to_string())?;
            let r = run(&p, load_io(io.as_deref())?, fuel)?;
            emit(trace.as_deref(), &serialize_trace(&r.trace))?;
            Ok(outcome_code(&r.outcome))
        }
        Cmd::RunTarget {
            program,
            io,
            fuel,
            trace,
            itrace,
        } => {
            let tp = parse_target(&read(&program)?).with_context(|| program.display().to_string())?;
            let r = trun(&tp, load_io(io.as_deref())?, fuel)?;
            emit(trace.as_deref(), &serialize_trace(&r.trace))?;
            if let Some(path) = itrace {
                let file = ItraceFile {
                    entry: tp.entry.clone(),
                    globals: tp
                        .comps
                        .values()
                        .flat_map(|c| c.globals.iter().map(|g| (c.name.clone(), g.clone())))
                        .collect(),
                    events: r.itrace,
                };
                emit(Some(&path), &serialize_itrace(&file))?;
            }
            Ok(outcome_code(&r.outcome))
        }
        Cmd::Backtranslate {
            interface,
            itrace,
            comp,
            output,
            max_trace_length,
        } => {
            let (mut env, file) = bt_env(&interface, &itrace)?;
            env.max_trace_length = max_trace_length;
            let text = match comp {
                Some(k) => {
                    let k = Ident::parse(&k).ok_or_else(|| anyhow!("invalid compartment name `{k}`"))?;
                    print_compartment(&back_translate(&env, &file.events, &k)?)
                }
                None => print_program(&back_translate_all(&env, &file.events)?),
            };
            emit(output.as_deref(), &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::CheckTrace { itrace, interface } => {
            let (env, file) = bt_env(&interface, &itrace)?;
            Ok(match check_wf(&env, &file.events) {
                Ok(_) => {
                    println!("PASS {} events", file.events.len());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    println!("FAIL {e}");
                    ExitCode::from(1)
                }
            })
        }
        Cmd::Fuzz {
            property,
            seed,
            trials,
            out,
        } => {
            let r = fuzz(property, seed, trials, out.as_deref())?;
            for (s, v) in r.results.iter().filter(|(_, v)| !v.pass) {
                println!("{property} {s} FAIL {}", v.detail);
            }
            println!("{property}: {}/{} passed", r.passed(), r.results.len());
            Ok(if r.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Cmd::Link { inputs, output } => {
            let texts = inputs.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
            let ctx = |i: usize| inputs[i].display().to_string();
            let text = if texts[0].contains("(tcompartment") {
                let mut acc = parse_target(&texts[0]).with_context(|| ctx(0))?;
                for (i, t) in texts.iter().enumerate().skip(1) {
                    acc = acc.link(&parse_target(t).with_context(|| ctx(i))?).with_context(|| ctx(i))?;
                }
                print_target(&acc)
            } else {
                let mut acc = parse_program(&texts[0]).with_context(|| ctx(0))?;
                for (i, t) in texts.iter().enumerate().skip(1) {
                    acc = acc.link(&parse_program(t).with_context(|| ctx(i))?).with_context(|| ctx(i))?;
                }
                print_program(&acc)
            };
            emit(output.as_deref(), &text)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match exec(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
