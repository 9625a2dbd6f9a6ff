//! The `nullcore` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::Analysis;
use crate::chase::{format_trace, run_chase, ChaseConfig, ChaseError, ChaseVariant, Strategy, DEFAULT_MAX_STEPS};
use crate::entailment::{EntailmentError, Mode, Reasoner};
use crate::hom::core_of;
use crate::io::{
    emit_facts, emit_report, emit_report_json, format_answer, parse_facts, parse_program, AnalysisReport,
    AnswerRecord, Program,
};
use crate::model::Interpretation;
use crate::stratified::{core_safe_chase, find_core_safe_stratification, StratifiedError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_ENTAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_STEP_LIMIT: i32 = 3;
pub const EXIT_NO_STRATIFICATION: i32 = 4;

pub const MAX_STEPS_ENV: &str = "NULLCORE_MAX_STEPS";

#[derive(Parser, Debug)]
#[command(name = "nullcore", version, about = "Core-model reasoning for existential rules with negation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print restraints, reliances, safe positions and query classifications.
    Analyze(Common),
    /// Run the chase and print the resulting facts.
    Chase(Common),
    /// Print the core of the restricted chase.
    Core(Common),
    /// Answer the program's queries.
    Query(QueryArgs),
    /// Print a core-safe stratification.
    Stratify(Common),
    /// Compute the core-safe chase along a synthesized stratification.
    Solve(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Program file (.rls).
    program: PathBuf,
    /// Additional facts (.facts); may contain nulls.
    #[arg(long)]
    facts: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Restricted)]
    variant: VariantArg,
    #[arg(long, value_enum, default_value_t = StrategyArg::DatalogFirst)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step cap; defaults to $NULLCORE_MAX_STEPS or 10000.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Print the chase trace to standard error.
    #[arg(long)]
    trace: bool,
    /// Write the output to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Structured output.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
    /// Answer only the query with this name.
    #[arg(long)]
    query: Option<String>,
    /// Answer on the partial instance when the chase hits the step cap.
    #[arg(long)]
    assume_finite_core: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VariantArg {
    Restricted,
    Skolem,
    Oblivious,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StrategyArg {
    Fifo,
    DatalogFirst,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Auto,
    Core,
    Chase,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<ChaseError> for Failure {
    fn from(e: ChaseError) -> Failure {
        Failure {
            code: EXIT_STEP_LIMIT,
            message: e.to_string(),
        }
    }
}

impl From<EntailmentError> for Failure {
    fn from(e: EntailmentError) -> Failure {
        match e {
            EntailmentError::Chase(c) => c.into(),
            other => Failure::input(other.to_string()),
        }
    }
}

impl From<StratifiedError> for Failure {
    fn from(e: StratifiedError) -> Failure {
        match e {
            StratifiedError::Chase(c) => c.into(),
            other => Failure::input(other.to_string()),
        }
    }
}

type Outcome = Result<(String, i32), Failure>;

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let common = match &cli.command {
        Command::Analyze(c) | Command::Chase(c) | Command::Core(c) | Command::Stratify(c) | Command::Solve(c) => c,
        Command::Query(q) => &q.common,
    };
    let outcome = dispatch(&cli.command, stderr);
    match outcome {
        Ok((text, code)) => {
            let written = match &common.out {
                Some(path) => fs::write(path, &text).map_err(|e| format!("cannot write {}: {e}", path.display())),
                None => stdout.write_all(text.as_bytes()).map_err(|e| e.to_string()),
            };
            match written {
                Ok(()) => code,
                Err(msg) => {
                    let _ = writeln!(stderr, "error: {msg}");
                    EXIT_INPUT
                }
            }
        }
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn load(c: &Common) -> Result<(Program, Interpretation), Failure> {
    let program = parse_program(&read(&c.program)?)
        .map_err(|e| Failure::input(format!("{}: {e}", c.program.display())))?;
    let mut database = program.facts.clone();
    if let Some(path) = &c.facts {
        let extra = parse_facts(&read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        database = database.union(&extra);
    }
    Ok((program, database))
}

fn config(c: &Common) -> Result<ChaseConfig, Failure> {
    let max_steps = match c.max_steps {
        Some(n) => n,
        None => match std::env::var(MAX_STEPS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::input(format!("{MAX_STEPS_ENV} must be a number, got {v:?}")))?,
            Err(_) => DEFAULT_MAX_STEPS,
        },
    };
    if max_steps == 0 {
        return Err(Failure::input("the step cap must be at least 1"));
    }
    let variant = match c.variant {
        VariantArg::Restricted => ChaseVariant::Restricted,
        VariantArg::Skolem => ChaseVariant::Skolem,
        VariantArg::Oblivious => ChaseVariant::Oblivious,
    };
    let strategy = match c.strategy {
        StrategyArg::Fifo => Strategy::Fifo,
        StrategyArg::DatalogFirst => Strategy::DatalogFirst,
        StrategyArg::Random => Strategy::Random,
    };
    Ok(ChaseConfig::new(variant, strategy, c.seed, max_steps))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct FactsOutput<'a> {
    facts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strata: Option<&'a [crate::stratified::StratumSummary]>,
}

fn facts_json(i: &Interpretation, strata: Option<&[crate::stratified::StratumSummary]>) -> String {
    json(&FactsOutput {
        facts: emit_facts(i).lines().map(str::to_string).collect(),
        strata,
    })
}

fn dispatch(command: &Command, stderr: &mut dyn Write) -> Outcome {
    match command {
        Command::Analyze(c) => {
            let (program, _) = load(c)?;
            let report = AnalysisReport::new(&Analysis::new(&program.rules), &program.queries, None);
            let text = if c.json { emit_report_json(&report) } else { emit_report(&report) };
            Ok((text, EXIT_OK))
        }
        Command::Chase(c) | Command::Core(c) => {
            let (program, database) = load(c)?;
            let mut cfg = config(c)?;
            let is_core = matches!(command, Command::Core(_));
            if is_core {
                cfg = cfg.restricted();
            }
            let result = run_chase(&program.rules, &database, &cfg);
            if c.trace {
                let trace = match &result {
                    Ok(r) => &r.trace,
                    Err(e) => &e.partial().trace,
                };
                let _ = stderr.write_all(format_trace(trace).as_bytes());
            }
            let result = result?;
            let instance = if is_core { core_of(&result.instance) } else { result.instance };
            let text = if c.json { facts_json(&instance, None) } else { emit_facts(&instance) };
            Ok((text, EXIT_OK))
        }
        Command::Query(q) => {
            let c = &q.common;
            let (program, database) = load(c)?;
            let cfg = config(c)?;
            let queries: Vec<_> = match &q.query {
                Some(name) => match program.queries.iter().find(|x| x.name() == name) {
                    Some(x) => vec![x.clone()],
                    None => return Err(Failure::input(format!("no query named {name}"))),
                },
                None => program.queries.clone(),
            };
            if queries.is_empty() {
                return Err(Failure::input("the program has no queries"));
            }
            let mode = match q.mode {
                ModeArg::Auto => Mode::Auto,
                ModeArg::Core => Mode::Core,
                ModeArg::Chase => Mode::Chase,
            };
            let mut reasoner = Reasoner::new(&program.rules, &database, &cfg).assume_finite_core(q.assume_finite_core);
            let mut records = Vec::new();
            for query in &queries {
                records.push(AnswerRecord::from(&reasoner.answer(query, mode)?));
            }
            for r in &records {
                if let Some(w) = &r.warning {
                    let _ = writeln!(stderr, "warning: {}: {w}", r.name);
                }
            }
            let code = if records.len() == 1 && !records[0].entailed {
                EXIT_NOT_ENTAILED
            } else {
                EXIT_OK
            };
            let text = if c.json {
                json(&serde_json::json!({ "answers": records }))
            } else {
                records.iter().map(|r| format_answer(r) + "\n").collect()
            };
            Ok((text, code))
        }
        Command::Stratify(c) => {
            let (program, _) = load(c)?;
            let analysis = Analysis::new(&program.rules);
            let Some(s) = find_core_safe_stratification(&analysis) else {
                return Err(Failure {
                    code: EXIT_NO_STRATIFICATION,
                    message: "no core-safe stratification exists".into(),
                });
            };
            let text = if c.json {
                json(&s)
            } else {
                s.strata
                    .iter()
                    .enumerate()
                    .map(|(i, rules)| format!("stratum {}: {}\n", i + 1, rules.join(" ")))
                    .collect()
            };
            Ok((text, EXIT_OK))
        }
        Command::Solve(c) => {
            let (program, database) = load(c)?;
            let cfg = config(c)?;
            let analysis = Analysis::new(&program.rules);
            let Some(s) = find_core_safe_stratification(&analysis) else {
                return Err(Failure {
                    code: EXIT_NO_STRATIFICATION,
                    message: "no core-safe stratification exists".into(),
                });
            };
            let result = core_safe_chase(&analysis, &s, &database, &cfg)?;
            let text = if c.json {
                facts_json(result.final_model(), Some(&result.summaries))
            } else {
                let mut text = String::new();
                for sum in &result.summaries {
                    text.push_str(&format!(
                        "% stratum {}: rules {} steps={} added={} removed_by_core={}\n",
                        sum.stratum,
                        sum.rules.join(" "),
                        sum.steps,
                        sum.atoms_added,
                        sum.atoms_removed_by_core
                    ));
                }
                text + &emit_facts(result.final_model())
            };
            Ok((text, EXIT_OK))
        }
    }
}
