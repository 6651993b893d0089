//! Seeded fuzzing campaigns and the on-disk failure corpus.
//!
//! Layout: `<out>/<property>/<seed>/{program.sexp, target.sexp, trace.txt,
//! itrace.txt, io.txt, verdict.json-line}` for every trial, a `shrunk/`
//! subdirectory next to failing trials, and `<out>/<property>/verdicts.txt`
//! with one `<property> <seed> PASS|FAIL <detail>` line per trial.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;

use secomp_core::backtrans::back_translate_all;
use secomp_core::compile::compile_program;
use secomp_core::lang::{print_program, Ident, Program};
use secomp_core::target::{print_target, TargetProgram};
use secomp_core::trace::{project, serialize_io, serialize_itrace, serialize_trace, InformativeEvent, IoScript};

use crate::adversarial::{run_attack, ATTACKS};
use crate::gen::{
    gen_environment, gen_informative_trace, gen_io, gen_program, inject_ub, rng_from_seed, Environment,
    GenConfig, GenRng,
};
use crate::props::{
    has_crossing, pick_ub_site, prop_backtranslation, prop_bcc, prop_blame, prop_bt_compiles, prop_fcc,
    prop_recomposition, Stats, UbSite, Verdict,
};
use crate::shrink::{shrink_program, shrink_trace};

/// Source-level fuel per run; target runs get a fixed multiple of it.
pub const FUEL: u64 = 4_000_000;

/// Attempts at drawing a trace and split with a context/program crossing.
const SPLIT_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Property {
    Fcc,
    Bcc,
    Backtranslation,
    BtCompiles,
    Recomposition,
    Blame,
    Adversarial,
}

impl Property {
    pub const ALL: [Property; 7] = [
        Property::Fcc,
        Property::Bcc,
        Property::Backtranslation,
        Property::BtCompiles,
        Property::Recomposition,
        Property::Blame,
        Property::Adversarial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Fcc => "fcc",
            Property::Bcc => "bcc",
            Property::Backtranslation => "backtranslation",
            Property::BtCompiles => "bt-compiles",
            Property::Recomposition => "recomposition",
            Property::Blame => "blame",
            Property::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Property::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown property `{s}`"))
    }
}

/// Everything needed to replay a trial.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub program: Option<Program>,
    pub target: Option<TargetProgram>,
    pub env: Option<Environment>,
    pub itrace: Vec<InformativeEvent>,
    pub io: IoScript,
}

#[derive(Clone, Debug)]
pub struct Trial {
    pub property: Property,
    pub seed: u64,
    pub verdict: Verdict,
    pub artifacts: Artifacts,
}

#[derive(Clone, Debug)]
pub struct FuzzReport {
    pub property: Property,
    /// Trial seed and verdict, in trial order.
    pub results: Vec<(u64, Verdict)>,
    pub stats: Stats,
}

impl FuzzReport {
    pub fn passed(&self) -> usize {
        self.results.iter().filter(|(_, v)| v.pass).count()
    }

    pub fn all_pass(&self) -> bool {
        self.passed() == self.results.len()
    }
}

/// The per-trial seeds of a campaign.
pub fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    let mut rng = rng_from_seed(seed);
    (0..trials).map(|_| rng.next_u64()).collect()
}

fn config(seed: u64, rng: &mut GenRng, min_comps: usize) -> GenConfig {
    GenConfig {
        seed,
        n_compartments: rng.gen_range(min_comps..=5),
        ..GenConfig::default()
    }
}

/// A random non-empty proper subset of the compartments of `env`.
fn random_split(env: &Environment, rng: &mut GenRng) -> BTreeSet<Ident> {
    let mut names: Vec<Ident> = env.compartments().cloned().collect();
    names.shuffle(rng);
    let n = rng.gen_range(1..names.len());
    names.into_iter().take(n).collect()
}

/// A trace of `env` together with a split that it crosses.
fn crossing_instance(
    env: &Environment,
    cfg: &GenConfig,
    rng: &mut GenRng,
) -> Option<(Vec<InformativeEvent>, IoScript, BTreeSet<Ident>)> {
    for _ in 0..SPLIT_ATTEMPTS {
        let g = gen_informative_trace(env, cfg, rng);
        let ks = random_split(env, rng);
        if has_crossing(&project(&g.events), &ks) {
            return Some((g.events, g.io, ks));
        }
    }
    None
}

fn bt_artifacts(env: &Environment, it: Vec<InformativeEvent>, io: IoScript) -> Artifacts {
    let program = back_translate_all(&env.bt_env(), &it).ok();
    let target = program.as_ref().and_then(|p| compile_program(p).ok());
    Artifacts {
        program,
        target,
        env: Some(env.clone()),
        itrace: it,
        io,
    }
}

/// Generates and checks one instance of `property`. `index` picks the
/// attack for the adversarial suite.
pub fn run_trial(property: Property, index: usize, seed: u64) -> Trial {
    let mut rng = rng_from_seed(seed);
    let (verdict, artifacts) = match property {
        Property::Fcc | Property::Bcc => {
            let cfg = config(seed, &mut rng, 1);
            let env = gen_environment(&cfg, &mut rng);
            let mut p = gen_program(&env, &mut rng);
            let io = gen_io(&mut rng);
            let v = if property == Property::Fcc {
                prop_fcc(&p, &io, FUEL)
            } else {
                inject_ub(&mut p, None, &mut rng);
                prop_bcc(&p, &io, FUEL)
            };
            let target = compile_program(&p).ok();
            let art = Artifacts {
                program: Some(p),
                target,
                env: Some(env),
                itrace: Vec::new(),
                io,
            };
            (v, art)
        }
        Property::Backtranslation | Property::BtCompiles => {
            let cfg = config(seed, &mut rng, 1);
            let env = gen_environment(&cfg, &mut rng);
            let g = gen_informative_trace(&env, &cfg, &mut rng);
            let bt = env.bt_env();
            let v = if property == Property::Backtranslation {
                prop_backtranslation(&bt, &g.events, &g.io, FUEL)
            } else {
                prop_bt_compiles(&bt, &g.events)
            };
            (v, bt_artifacts(&env, g.events, g.io))
        }
        Property::Recomposition | Property::Blame => {
            let cfg = config(seed, &mut rng, 2);
            let env = gen_environment(&cfg, &mut rng);
            match crossing_instance(&env, &cfg, &mut rng) {
                None => (
                    Verdict::new(false, "no trace with a context/program crossing", Stats::default()),
                    Artifacts {
                        env: Some(env),
                        ..Artifacts::default()
                    },
                ),
                Some((it, io, ks)) => {
                    let bt = env.bt_env();
                    let v = if property == Property::Recomposition {
                        prop_recomposition(&bt, &it, &io, FUEL, &ks)
                    } else {
                        match pick_ub_site(&project(&it), &ks, &mut rng) {
                            Some(site) => {
                                let mut v = prop_blame(&bt, &it, &ks, &io, FUEL, &site);
                                v.detail = format!("{} ({})", v.detail, site_text(&site, &ks));
                                v
                            }
                            None => Verdict::new(false, "no program-side event", Stats::default()),
                        }
                    };
                    (v, bt_artifacts(&env, it, io))
                }
            }
        }
        Property::Adversarial => {
            let a = &ATTACKS[index % ATTACKS.len()];
            let v = run_attack(a);
            let target = secomp_core::target::parse_target(a.program).ok();
            (
                v,
                Artifacts {
                    target,
                    ..Artifacts::default()
                },
            )
        }
    };
    Trial {
        property,
        seed,
        verdict,
        artifacts,
    }
}

fn site_text(site: &UbSite, ks: &BTreeSet<Ident>) -> String {
    let ctx: Vec<&str> = ks.iter().map(Ident::as_str).collect();
    format!("context {}, {:?} in {} at event {}", ctx.join(","), site.kind, site.comp, site.at)
}

fn verdict_word(v: &Verdict) -> &'static str {
    if v.pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn write_artifacts(dir: &Path, art: &Artifacts, observed: &[secomp_core::trace::Event]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(p) = &art.program {
        fs::write(dir.join("program.sexp"), print_program(p))?;
    }
    if let Some(tp) = &art.target {
        fs::write(dir.join("target.sexp"), print_target(tp))?;
    }
    let trace = if art.itrace.is_empty() {
        serialize_trace(observed)
    } else {
        serialize_trace(&project(&art.itrace))
    };
    fs::write(dir.join("trace.txt"), trace)?;
    if let Some(env) = &art.env {
        fs::write(dir.join("itrace.txt"), serialize_itrace(&env.itrace_file(art.itrace.clone())))?;
    }
    fs::write(dir.join("io.txt"), serialize_io(&art.io))
}

/// Shrinks a failing trial with the same check that failed.
fn shrink(t: &Trial) -> Option<Artifacts> {
    let art = &t.artifacts;
    match t.property {
        Property::Fcc | Property::Bcc => {
            let p = art.program.as_ref()?;
            let check = |q: &Program| match t.property {
                Property::Fcc => !prop_fcc(q, &art.io, FUEL).pass,
                _ => !prop_bcc(q, &art.io, FUEL).pass,
            };
            let small = shrink_program(p, check);
            Some(Artifacts {
                target: compile_program(&small).ok(),
                program: Some(small),
                ..art.clone()
            })
        }
        Property::Backtranslation | Property::BtCompiles => {
            let env = art.env.as_ref()?;
            let bt = env.bt_env();
            let check = |it: &[InformativeEvent]| match t.property {
                Property::Backtranslation => !prop_backtranslation(&bt, it, &art.io, FUEL).pass,
                _ => !prop_bt_compiles(&bt, it).pass,
            };
            let it = shrink_trace(&art.itrace, check);
            Some(bt_artifacts(env, it, art.io.clone()))
        }
        _ => None,
    }
}

fn write_trial(root: &Path, t: &Trial) -> io::Result<()> {
    let dir = root.join(t.property.name()).join(t.seed.to_string());
    write_artifacts(&dir, &t.artifacts, &t.verdict.observed)?;
    let line = serde_json::json!({
        "property": t.property.name(),
        "seed": t.seed,
        "verdict": verdict_word(&t.verdict),
        "detail": t.verdict.detail,
    });
    fs::write(dir.join("verdict.json-line"), format!("{line}\n"))?;
    if !t.verdict.pass {
        if let Some(small) = shrink(t) {
            write_artifacts(&dir.join("shrunk"), &small, &[])?;
        }
    }
    Ok(())
}

/// Worker threads for campaigns: `SECOMP_KIT_JOBS`, else all cores.
pub fn jobs() -> usize {
    std::env::var("SECOMP_KIT_JOBS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `trials` seeded trials of `property`, writing the corpus under
/// `out` when given. Output is identical for equal arguments regardless of
/// the number of worker threads.
pub fn fuzz(property: Property, seed: u64, trials: usize, out: Option<&Path>) -> io::Result<FuzzReport> {
    let seeds = trial_seeds(seed, trials);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs())
        .build()
        .map_err(io::Error::other)?;
    let results: Vec<io::Result<(u64, Verdict)>> = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, &s)| {
                let t = run_trial(property, i, s);
                if let Some(root) = out {
                    write_trial(root, &t)?;
                }
                Ok((s, t.verdict))
            })
            .collect()
    });
    let results = results.into_iter().collect::<io::Result<Vec<_>>>()?;
    let mut stats = Stats::default();
    for (_, v) in &results {
        stats.merge(&v.stats);
    }
    if let Some(root) = out {
        let dir = root.join(property.name());
        fs::create_dir_all(&dir)?;
        let lines: String = results
            .iter()
            .map(|(s, v)| format!("{property} {s} {} {}\n", verdict_word(v), v.detail))
            .collect();
        fs::write(dir.join("verdicts.txt"), lines)?;
    }
    Ok(FuzzReport {
        property,
        results,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn property_names_round_trip() {
        for p in Property::ALL {
            assert_eq!(p.name().parse::<Property>(), Ok(p));
        }
        assert!("nope".parse::<Property>().is_err());
    }

    #[test]
    fn small_campaigns_pass() {
        for p in Property::ALL {
            let r = fuzz(p, 11, 4, None).unwrap();
            for (s, v) in &r.results {
                assert!(v.pass, "{p} {s}: {}", v.detail);
            }
            assert!(r.stats.clean(), "{p}: {:?}", r.stats);
        }
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let r = fuzz(Property::Backtranslation, 5, 2, Some(dir.path())).unwrap();
        let seed = r.results[0].0;
        let trial = dir.path().join("backtranslation").join(seed.to_string());
        for f in ["program.sexp", "target.sexp", "trace.txt", "itrace.txt", "io.txt", "verdict.json-line"] {
            assert!(trial.join(f).is_file(), "{f}");
        }
        let verdicts = fs::read_to_string(dir.path().join("backtranslation/verdicts.txt")).unwrap();
        assert_eq!(verdicts.lines().count(), 2);
        assert!(verdicts.starts_with(&format!("backtranslation {seed} PASS")));
    }
}
