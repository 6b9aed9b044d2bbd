use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

use crate::commands::{
    cmd_gen, cmd_infer, cmd_quantize, cmd_report, cmd_simulate, cmd_sweep, cmd_train, GenArgs, InferArgs, Out,
    QuantizeArgs, ReportArgs, SimulateArgs, SweepArgs, TrainArgs,
};

const AFTER_HELP: &str = "\
Output: stdout carries one `key = value` line per fact. Every command first
echoes its resolved configuration as `config.<key> = <value>` lines, and
names each file it writes on a `wrote = <path>` line. Config files are TOML
with `schema = 1`; flags override file values.

Exit codes: 0 success, 2 usage error, 3 input or format error, 4 numerical
abort (training diverged).";

#[derive(Debug, Parser)]
#[command(name = "dlac", version, about = "Ternary weight networks and a zero-skipping accelerator model", after_help = AFTER_HELP)]
pub struct Cli {
    /// Per-epoch and per-layer detail
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ternarize a TNSR weight tensor into a packed TERN file
    Quantize(QuantizeArgs),
    /// Run a network forward; write logits and optionally the op trace
    Infer(InferArgs),
    /// Train with shadow ternary weights; write a checkpoint and a log
    Train(TrainArgs),
    /// Time a network's forward pass on the PE grid
    Simulate(SimulateArgs),
    /// Time synthetic mmOps over a config and density grid
    Sweep(SweepArgs),
    /// Generate a dataset or a random tensor
    Gen(GenArgs),
    /// Write plot-ready CSVs for the throughput and sparsity figures
    Report(ReportArgs),
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let mut out = Out::new(stdout, cli.verbose);
    let res = match &cli.command {
        Command::Quantize(a) => cmd_quantize(a, &mut out),
        Command::Infer(a) => cmd_infer(a, &mut out),
        Command::Train(a) => cmd_train(a, &mut out),
        Command::Simulate(a) => cmd_simulate(a, &mut out),
        Command::Sweep(a) => cmd_sweep(a, &mut out),
        Command::Gen(a) => cmd_gen(a, &mut out),
        Command::Report(a) => cmd_report(a, &mut out),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
