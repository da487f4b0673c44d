use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use pplus_cli::commands::*;
use pplus_cli::run::{read_config, resolve, resolve_seed, CliResult, Failure, Run, RunConfig, EXIT_CODES};
use pplus_cli::selftest::{selftest_cmd, SelftestFlags, SelftestParams};

/// Per-layer prompt conditioning and extended textual inversion on a toy
/// text-to-image diffusion model.
#[derive(Parser, Debug)]
#[command(name = "pplus", version, after_help = EXIT_CODES)]
struct Cli {
    /// JSON config file: {"schema_version": 1, "command": ..., "seed": ..., "params": {...}}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; falls back to the config file, then PPLUS_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 runs sequentially).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic corpus with a manifest.
    Corpus(CorpusFlags),
    /// Train the toy diffusion model.
    Pretrain(PretrainFlags),
    /// Invert concept images into one (TI) or per-layer (XTI) embeddings.
    Invert(InvertFlags),
    /// Sample from a prompt or an inverted concept.
    Generate(GenerateFlags),
    /// Condition a layer range on one concept and the rest on another.
    Mix(MixFlags),
    /// Per-layer cross-attention ratio of object to appearance tokens.
    AttnRatio(AttnRatioFlags),
    /// Attribute sweep over growing layer subsets.
    SubsetSweep(SweepFlags),
    /// Log density of inverted embeddings under a KDE of the token table.
    Density(DensityFlags),
    /// Text and subject similarity of an inverted concept.
    Eval(EvalFlags),
    /// Deterministic end-to-end checks on a freshly trained tiny model.
    Selftest(SelftestFlags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Corpus(_) => "corpus",
            Command::Pretrain(_) => "pretrain",
            Command::Invert(_) => "invert",
            Command::Generate(_) => "generate",
            Command::Mix(_) => "mix",
            Command::AttnRatio(_) => "attn-ratio",
            Command::SubsetSweep(_) => "subset-sweep",
            Command::Density(_) => "density",
            Command::Eval(_) => "eval",
            Command::Selftest(_) => "selftest",
        }
    }
}

struct Ctx {
    file: Option<RunConfig>,
    out: PathBuf,
    seed: u64,
}

impl Ctx {
    fn go<P, F>(&self, name: &str, flags: &F, body: impl FnOnce(&Run, &P) -> CliResult<()>) -> CliResult<()>
    where
        P: Default + Serialize + DeserializeOwned,
        F: Serialize,
    {
        let params: P = resolve(self.file.as_ref(), flags)?;
        let run = Run::start(self.out.clone(), name, self.seed, &params)?;
        body(&run, &params)
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        pplus_core::par::set_threads(n)?;
    }
    let name = cli.command.name();
    let file = cli.config.as_deref().map(read_config).transpose()?;
    if let Some(f) = &file {
        if f.command != name {
            return Err(Failure::Config(format!(
                "config file is for {:?}, not {name:?}",
                f.command
            )));
        }
    }
    let ctx = Ctx {
        seed: resolve_seed(cli.seed, file.as_ref())?,
        out: cli.out.unwrap_or_else(|| PathBuf::from("runs").join(name)),
        file,
    };
    match &cli.command {
        Command::Corpus(f) => ctx.go::<CorpusParams, _>(name, f, corpus),
        Command::Pretrain(f) => ctx.go::<PretrainParams, _>(name, f, pretrain_cmd),
        Command::Invert(f) => ctx.go::<InvertParams, _>(name, f, invert_cmd),
        Command::Generate(f) => ctx.go::<GenerateParams, _>(name, f, generate_cmd),
        Command::Mix(f) => ctx.go::<MixParams, _>(name, f, mix_cmd),
        Command::AttnRatio(f) => ctx.go::<AttnRatioParams, _>(name, f, attn_ratio_cmd),
        Command::SubsetSweep(f) => ctx.go::<SweepParams, _>(name, f, sweep_cmd),
        Command::Density(f) => ctx.go::<DensityParams, _>(name, f, density_cmd),
        Command::Eval(f) => ctx.go::<EvalParams, _>(name, f, eval_cmd),
        Command::Selftest(f) => ctx.go::<SelftestParams, _>(name, f, selftest_cmd),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.json_line());
            ExitCode::from(f.exit_code())
        }
    }
}
