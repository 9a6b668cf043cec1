use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value as Json};

use slash_core::engine::{uniform_table, CompiledQuery, GradientForm};
use slash_core::experiment::{Experiment, ExperimentConfig};
use slash_core::frontend::{parse_program, parse_query, Program, Query};
use slash_core::grounder::{ground, ground_constraints, GroundProgram, GroundRule};
use slash_core::npp::checkpoint;
use slash_core::par::{with_threads, Execution};
use slash_core::solver::{enumerate_with, NumScope, SolverConfig};
use slash_core::Error;

#[derive(Parser)]
#[command(
    name = "slash",
    version,
    about = "Neural-probabilistic answer set programs"
)]
struct Cli {
    /// Worker threads (1 = sequential and bit-reproducible).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed; falls back to $SLASH_SEED, then the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NppOutput {
    Uniform,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Base,
    WithQuery,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a program; print ground sizes.
    Check { program: PathBuf },
    /// Print the ground program.
    Ground {
        program: PathBuf,
        #[arg(long)]
        query: Option<PathBuf>,
    },
    /// Print stable models, one sorted atom list per line.
    Models {
        program: PathBuf,
        /// Keep only models satisfying this query.
        #[arg(long)]
        query: Option<PathBuf>,
    },
    /// Query probability under fixed NPP outputs.
    Infer {
        program: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, value_enum, default_value = "uniform")]
        npp_output: NppOutput,
        /// JSON object from NPP instance (e.g. `digit(1,i1)`) to probabilities.
        #[arg(long, required_if_eq("npp_output", "file"))]
        table: Option<PathBuf>,
        /// Also report d log P(Q) / dp per NPP instance.
        #[arg(long)]
        gradients: bool,
        #[arg(long, value_enum, default_value = "base")]
        num_scope: Scope,
    },
    /// Train from an experiment configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Metrics JSON-lines file.
        #[arg(long, default_value = "metrics.jsonl")]
        metrics: PathBuf,
        #[arg(long, default_value = "model.ckpt")]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint on the configuration's held-out data.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure {
            code: if e.is_numeric() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn semantic(message: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| semantic(format!("{}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<(Program, GroundProgram), Failure> {
    let program =
        parse_program(&read(path)?).map_err(|e| semantic(format!("{}: {e}", path.display())))?;
    let gp = ground(&program).map_err(Error::from)?;
    Ok((program, gp))
}

fn load_query(
    path: &Path,
    program: &Program,
    gp: &GroundProgram,
) -> Result<(Query, Vec<GroundRule>), Failure> {
    let query = parse_query(&read(path)?, program)
        .map_err(|e| semantic(format!("{}: {e}", path.display())))?;
    let cs = ground_constraints(gp, &query.constraints).map_err(Error::from)?;
    Ok((query, cs))
}

fn solver_config(threads: usize) -> SolverConfig {
    SolverConfig {
        execution: if threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        ..Default::default()
    }
}

fn read_table(path: &Path, gp: &GroundProgram) -> Result<Vec<Vec<f64>>, Failure> {
    let obj: Map<String, Json> = serde_json::from_str(&read(path)?)
        .map_err(|e| semantic(format!("{}: {e}", path.display())))?;
    gp.choices
        .iter()
        .map(|c| {
            let key = c.instance.to_string();
            let row = obj
                .get(&key)
                .ok_or_else(|| semantic(format!("{}: no entry for `{key}`", path.display())))?;
            serde_json::from_value::<Vec<f64>>(row.clone())
                .map_err(|e| semantic(format!("{}: `{key}`: {e}", path.display())))
        })
        .collect()
}

fn run(cli: &Cli, seed: Option<u64>) -> Result<String, Failure> {
    match &cli.command {
        Command::Check { program } => {
            let (p, gp) = load_program(program)?;
            let s = gp.stats();
            Ok(format!(
                "ok: {} rules, {} npp declarations; ground: {} atoms, {} rules, {} choices\n",
                p.rules.len(),
                p.npps.len(),
                s.atoms,
                s.rules,
                s.choices
            ))
        }
        Command::Ground { program, query } => {
            let (p, gp) = load_program(program)?;
            let mut out = gp.dump();
            if let Some(q) = query {
                let (_, cs) = load_query(q, &p, &gp)?;
                for c in &cs {
                    out.push_str(&gp.rule_to_string(c));
                    out.push('\n');
                }
            }
            Ok(out)
        }
        Command::Models { program, query } => {
            let (p, gp) = load_program(program)?;
            let extra = match query {
                Some(q) => load_query(q, &p, &gp)?.1,
                None => Vec::new(),
            };
            let set =
                enumerate_with(&gp, &extra, &solver_config(cli.threads)).map_err(Error::from)?;
            let mut lines: Vec<String> = set.models.iter().map(|m| m.render(&gp)).collect();
            lines.sort();
            Ok(lines.into_iter().map(|l| l + "\n").collect())
        }
        Command::Infer {
            program,
            query,
            npp_output,
            table,
            gradients,
            num_scope,
        } => {
            let (p, gp) = load_program(program)?;
            let (_, cs) = load_query(query, &p, &gp)?;
            let scope = match num_scope {
                Scope::Base => NumScope::Base,
                Scope::WithQuery => NumScope::WithQuery,
            };
            let cq = CompiledQuery::compile(&gp, &cs, scope, &solver_config(cli.threads))
                .map_err(Error::from)?;
            let table = match npp_output {
                NppOutput::Uniform => uniform_table(&gp),
                NppOutput::File => {
                    read_table(table.as_deref().expect("clap requires --table"), &gp)?
                }
            };
            let result = cq.probability(&table).map_err(Error::from)?;
            let mut out = json!({
                "query": query.display().to_string(),
                "probability": result.probability,
                "satisfying_models": result.satisfying_models,
            });
            if *gradients {
                let (_, grad) = cq
                    .grad_log(&table, GradientForm::Raw)
                    .map_err(Error::from)?;
                let per: Map<String, Json> = gp
                    .choices
                    .iter()
                    .zip(grad)
                    .map(|(c, g)| (c.instance.to_string(), json!(g)))
                    .collect();
                out["per_npp_gradients"] = Json::Object(per);
            }
            Ok(format!("{out}\n"))
        }
        Command::Train {
            config,
            metrics,
            checkpoint,
        } => {
            let mut cfg = ExperimentConfig::load(config).map_err(semantic)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.train.threads = cli.threads;
            let mut exp = Experiment::new(cfg)?;
            let report = exp.run(Some(metrics.clone()), Some(checkpoint.clone()))?;
            let last = report.epochs.last().map(|m| json!(m)).unwrap_or(Json::Null);
            Ok(format!(
                "{}\n",
                json!({
                    "epochs": report.epochs.len(),
                    "steps": report.steps,
                    "final": last,
                    "metrics": metrics.display().to_string(),
                    "checkpoint": checkpoint.display().to_string(),
                })
            ))
        }
        Command::Eval {
            config,
            checkpoint: ckpt,
        } => {
            let mut cfg = ExperimentConfig::load(config).map_err(semantic)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.train.threads = cli.threads;
            let mut exp = Experiment::new(cfg)?;
            checkpoint::load(&mut exp.bank, ckpt).map_err(Error::from)?;
            let metric = exp.evaluate(&exp.bank)?;
            Ok(format!("{}\n", json!({ "task_metric": metric })))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let seed = match cli.seed {
        Some(s) => Some(s),
        None => match std::env::var("SLASH_SEED") {
            Ok(v) => match v.parse() {
                Ok(s) => Some(s),
                Err(_) => {
                    eprintln!("error: SLASH_SEED must be an unsigned integer, got `{v}`");
                    return ExitCode::from(1);
                }
            },
            Err(_) => None,
        },
    };
    match with_threads(cli.threads, || run(&cli, seed)) {
        Ok(text) => {
            let written = match &cli.out {
                Some(path) => fs::write(path, text),
                None => std::io::stdout().write_all(text.as_bytes()),
            };
            if let Err(e) = written {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
