use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use clfa::commands::{
    cmd_eval, cmd_heatmap, cmd_sweep_alpha, cmd_train, gen_data, parse_alpha_values, parse_seeds, GenDataArgs,
};
use clfa::config::RunConfig;
use clfa::report::METRIC_COLUMNS;
use clfa::Result;
use clfa_core::data::Split;

#[derive(Parser)]
#[command(name = "clfa", version, about = "Contrastive teacher-guided multimodal classification at toy scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s:?}; expected train, dev or test"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with teacher embeddings.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(2..))]
        classes: u32,
        #[arg(long, default_value_t = 32)]
        teacher_width: usize,
    },
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Metrics CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the text-image similarity matrix of one batch.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long, default_value_t = 8)]
        batch: usize,
    },
    /// Train once per alpha and seed and report dev metrics.
    SweepAlpha {
        /// Comma-separated, e.g. 0,0.5,1,2.
        #[arg(long)]
        values: String,
        /// Comma-separated, e.g. 1,2,3.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            n,
            seed,
            classes,
            teacher_width,
        } => {
            let stats = gen_data(&GenDataArgs {
                out: out.clone(),
                n,
                seed,
                classes: classes as usize,
                teacher_width,
            })?;
            for s in &stats.splits {
                println!("{:<5} {:>6} samples  per class {:?}", s.split, s.samples(), s.per_class);
            }
            println!("wrote {}", out.join("data.clfa").display());
        }
        Command::Train { config } => {
            let run = cmd_train(&config)?;
            for r in &run.history {
                println!(
                    "epoch {:>2}  L_con {:.4}  L_ce {:.4}  total {:.4}  acc {:.4}  macro_F1 {:.4}",
                    r.epoch, r.loss.align.con, r.loss.ce, r.loss.total, r.metrics.accuracy, r.metrics.macro_f1
                );
            }
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => {
            let m = cmd_eval(&checkpoint, &data, split, out.as_deref())?;
            println!("samples   {}", m.confusion.total());
            println!("accuracy  {:.4}", m.accuracy);
            for (k, ((p, r), f)) in m.precision.iter().zip(&m.recall).zip(&m.f1).enumerate() {
                println!("class {k}   P {p:.4}  R {r:.4}  F1 {f:.4}");
            }
            println!("macro     P {:.4}  R {:.4}  F1 {:.4}", m.macro_precision, m.macro_recall, m.macro_f1);
            if out.is_none() {
                println!("{}", METRIC_COLUMNS.join(","));
                println!("{},{},{},{}", m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1);
            }
        }
        Command::Heatmap {
            checkpoint,
            data,
            out,
            split,
            batch,
        } => {
            let h = cmd_heatmap(&checkpoint, &data, split, batch, &out)?;
            let rate = clfa_core::analysis::diagonal_max_rate(&h);
            println!("{}x{} heatmap, diagonal is the row maximum in {:.0}% of rows", h.rows(), h.cols(), rate * 100.0);
        }
        Command::SweepAlpha {
            values,
            seeds,
            config,
            out,
        } => {
            let base = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let rows = cmd_sweep_alpha(&base, &parse_alpha_values(&values)?, &parse_seeds(&seeds)?, &out)?;
            for r in &rows {
                println!("alpha {:<6} seed {:<4} macro_F1 {:.4}", r.alpha, r.seed, r.metrics.macro_f1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
