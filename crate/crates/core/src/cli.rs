//! Command-line front door. `dispatch` returns the process exit code: 0 on
//! success, 1 when a stage fails, 2 for usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{BackendKind, PipelineConfig};
use crate::dataset::{SplitOrder, SplitRatios};
use crate::error::{Error, Result};
use crate::evalkit::PromptMode;
use crate::pipeline::{self, Run};

#[derive(Debug, Parser)]
#[command(name = "thermalign", version, about = "Projector alignment of a toy vision-language model to thermal imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct NewRun {
    /// TOML configuration; defaults are used for anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed, overriding the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory that receives the stamped run directory.
    #[arg(long)]
    output_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunDir {
    /// An existing run directory.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic thermal/RGB corpus into a new run directory.
    GenData {
        #[command(flatten)]
        new: NewRun,
        #[arg(long)]
        n_per_species: Option<usize>,
    },
    /// Balance, split and convert the corpus to ShareGPT conversations.
    BuildDataset {
        #[command(flatten)]
        run: RunDir,
        #[arg(long)]
        balance: Option<bool>,
        #[arg(long, value_parser = ["augment-first", "split-first"])]
        split_order: Option<String>,
        /// Comma-separated train,val,test fractions.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Train encoder and language model on colour scenes, then freeze them.
    Pretrain {
        #[command(flatten)]
        run: RunDir,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Train the projector alone on the thermal training split.
    Align {
        #[command(flatten)]
        run: RunDir,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        eval_interval: Option<u64>,
    },
    /// Score a backend on the test split.
    Eval {
        #[command(flatten)]
        run: RunDir,
        #[arg(long, value_parser = ["local", "remote"])]
        backend: Option<String>,
        /// Prompt mode; repeat for several.
        #[arg(long, value_parser = ["closed", "open"])]
        mode: Vec<String>,
        /// Which alignment run the local backend loads.
        #[arg(long)]
        align_steps: Option<u64>,
    },
    /// Ask a remote backend for habitat descriptions of the RGB twins.
    Habitat {
        #[command(flatten)]
        run: RunDir,
        #[arg(long, value_parser = ["local", "remote"], default_value = "remote")]
        backend: String,
    },
    /// Rebuild tables, metrics and loss-curve plots of a finished run.
    Report {
        #[command(flatten)]
        run: RunDir,
    },
    /// Every stage in order on a new run directory.
    All {
        #[command(flatten)]
        new: NewRun,
    },
}

fn base_config(new: &NewRun) -> Result<PipelineConfig> {
    let mut cfg = match &new.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = new.seed {
        cfg.seed = s;
    }
    if let Some(root) = &new.output_root {
        cfg.output_root = root.clone();
    }
    Ok(cfg)
}

fn parse_ratios(s: &str) -> Result<SplitRatios> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::Config(format!("ratio {p:?}: {e}"))))
        .collect::<Result<_>>()?;
    let [train, val, test] = parts[..] else {
        return Err(Error::Config(format!("--ratios needs three values, got {s:?}")));
    };
    let r = SplitRatios { train, val, test };
    r.validate()?;
    Ok(r)
}

fn open(dir: &Path) -> Result<Run> {
    Run::open(dir)
}

fn execute(cmd: Command, out: &mut dyn FnMut(&str)) -> Result<()> {
    match cmd {
        Command::GenData { new, n_per_species } => {
            let mut cfg = base_config(&new)?;
            if let Some(n) = n_per_species {
                cfg.scenegen.n_per_species = n;
            }
            let run = Run::create(cfg)?;
            let recs = pipeline::gen_data(&run)?;
            out(&format!("gen-data: {} scenes in {}", recs.len(), run.dir.display()));
        }
        Command::BuildDataset { run, balance, split_order, ratios } => {
            let mut run = open(&run.run)?;
            if let Some(b) = balance {
                run.config.dataset.balance = b;
            }
            if let Some(o) = split_order {
                run.config.dataset.split_order = o.parse::<SplitOrder>().map_err(Error::Config)?;
            }
            if let Some(r) = ratios {
                run.config.dataset.ratios = parse_ratios(&r)?;
            }
            let ds = pipeline::build_dataset(&run)?;
            out(&format!("build-dataset: train {} / val {} / test {}", ds.train.len(), ds.val.len(), ds.test.len()));
        }
        Command::Pretrain { run, steps } => {
            let mut run = open(&run.run)?;
            if let Some(s) = steps {
                run.config.pretrain.steps = s;
            }
            let total = run.config.pretrain.steps;
            let every = (total / 10).max(1);
            let rep = pipeline::pretrain(&run, &mut |step, loss| {
                if step % every == 0 {
                    eprintln!("pretrain step {step}/{total} loss {loss:.4}");
                }
            })?;
            out(&format!(
                "pretrain: {} steps, loss {:.4} -> {:.4}, held-out exact {:.3}, species {:.3}, within-1 {:.3}",
                rep.steps,
                rep.initial_loss_per_token,
                rep.final_smoothed_loss,
                rep.held_out.exact,
                rep.held_out.species,
                rep.held_out.within1
            ));
        }
        Command::Align { run, max_steps, eval_interval } => {
            let mut run = open(&run.run)?;
            if let Some(s) = max_steps {
                run.config.align.max_steps = s;
            }
            if let Some(e) = eval_interval {
                run.config.align.eval_interval = e;
            }
            let art = pipeline::align(&run)?;
            out(&format!("align: selected step {} (val loss {:.4})", art.selected_step, art.selected_val_loss()));
        }
        Command::Eval { run, backend, mode, align_steps } => {
            let mut run = open(&run.run)?;
            let kind = match backend {
                Some(b) => b.parse::<BackendKind>()?,
                None => run.config.eval.backend,
            };
            if let Some(s) = align_steps {
                run.config.align.max_steps = s;
            }
            let modes: Vec<PromptMode> = if mode.is_empty() {
                run.config.eval.modes.clone()
            } else {
                mode.iter().filter_map(|m| PromptMode::parse(m)).collect()
            };
            for r in pipeline::eval(&run, kind, &modes)? {
                out(&format!(
                    "eval {} {}: macro-F1 {:.3}, macro within-1 {:.3}, {} backend failures",
                    r.model,
                    r.mode.short(),
                    r.macro_f1(),
                    r.macro_within1(),
                    r.backend_failures
                ));
            }
        }
        Command::Habitat { run, backend } => {
            let run = open(&run.run)?;
            let recs = pipeline::habitat(&run, backend.parse()?)?;
            let ok = recs.iter().filter(|r| r.report.is_some()).count();
            out(&format!("habitat: {ok} of {} responses parsed", recs.len()));
        }
        Command::Report { run } => {
            let run = open(&run.run)?;
            let tables = pipeline::report(&run)?;
            out(&format!(
                "report: {} rows in {}",
                tables.table2.lines().count().saturating_sub(2),
                run.path(pipeline::REPORT_DIR).display()
            ));
        }
        Command::All { new } => {
            let cfg = base_config(&new)?;
            pipeline::run_all(cfg, out)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the chosen stage.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, &mut |line| println!("{line}")) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
