use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use imfield_cli::decode::{decode, interpolate_shapes, CodeSource, DecodeArgs, InterpolateArgs};
use imfield_cli::eval::{eval, EvalArgs, Suite};
use imfield_cli::train::{train_ae, train_gan, train_svr};
use imfield_cli::{dataset, gradcheck, init_threads, CliResult, Config};

/// Implicit-field shape learning.
///
/// Settings come from defaults, then `--config FILE`, then `--section.key=value`
/// flags (see `imfield config`).
#[derive(Parser)]
#[command(name = "imfield", version)]
struct Cli {
    /// key = value file applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Shorthand for --data.dims.
    #[arg(long, global = true)]
    dims: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every config key with its effective value.
    Config,
    /// Rasterize the procedural corpus and write the manifest.
    GenData,
    /// Train the autoencoder through the resolution schedule.
    TrainAe(Resume),
    /// Train the latent GAN on autoencoder codes.
    TrainGan(Resume),
    /// Train the single-view image encoder against autoencoder codes.
    TrainSvr(Resume),
    /// Decode one latent code to an OBJ mesh (3D) or PGM image (2D).
    Decode(DecodeCmd),
    /// Decode evenly spaced blends of two shapes' codes.
    Interpolate(InterpolateCmd),
    /// Evaluate a suite and print a tab-separated report.
    Eval(EvalCmd),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckCmd),
}

#[derive(Args)]
struct Resume {
    /// Continue from the run's last checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["shape_id", "code_file", "gan_sample", "image"])))]
struct DecodeCmd {
    #[arg(long)]
    shape_id: Option<String>,
    #[arg(long)]
    code_file: Option<PathBuf>,
    /// Noise seed for one generator sample.
    #[arg(long)]
    gan_sample: Option<u64>,
    /// Silhouette PGM for the single-view encoder.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long)]
    out: PathBuf,
    /// Threshold 2D output at 0.5.
    #[arg(long)]
    binarize: bool,
    /// Autoencoder checkpoint (default: the run's last).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct InterpolateCmd {
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    binarize: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Ae,
    Gan,
    Svr,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    /// Score the ground truth against itself.
    #[arg(long)]
    oracle: bool,
    /// Evaluate the last N saved checkpoints and report the best.
    #[arg(long)]
    select_best_of: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckCmd {
    /// Random instances per case.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Perturb the analytic gradients (harness self-test).
    #[arg(long, hide = true)]
    corrupt: bool,
}

/// Splits `--section.key=value` overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let kv = a.strip_prefix("--").and_then(|s| s.split_once('='));
        match kv {
            Some((k, v)) if k.contains('.') => overrides.push((k.to_string(), v.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn run(cli: Cli, overrides: &[(String, String)]) -> CliResult<()> {
    init_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(d) = cli.dims {
        cfg.set("data.dims", &d.to_string())?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    let stdout = std::io::stdout();
    let out: &mut dyn Write = &mut stdout.lock();
    match cli.command {
        Command::Config => {
            write!(out, "{}", cfg.to_text()).map_err(|e| imfield::Error::io("<stdout>", e))?;
        }
        Command::GenData => {
            let d = dataset::gen_data(&cfg)?;
            let train = d.entries(imfield::voxel::Split::Train).len();
            writeln!(out, "shapes\t{}\ttrain\t{train}\ttest\t{}", d.manifest.entries.len(), d.manifest.entries.len() - train)
                .map_err(|e| imfield::Error::io("<stdout>", e))?;
        }
        Command::TrainAe(r) => {
            train_ae(&cfg, r.resume, out)?;
        }
        Command::TrainGan(r) => {
            train_gan(&cfg, r.resume, out)?;
        }
        Command::TrainSvr(r) => {
            train_svr(&cfg, r.resume, out)?;
        }
        Command::Decode(d) => {
            let source = match (d.shape_id, d.code_file, d.gan_sample, d.image) {
                (Some(id), ..) => CodeSource::Shape(id),
                (_, Some(p), ..) => CodeSource::File(p),
                (_, _, Some(s), _) => CodeSource::GanSample(s),
                (.., Some(p)) => CodeSource::Image(p),
                _ => unreachable!("clap requires one code source"),
            };
            let args = DecodeArgs {
                source,
                res: d.res,
                out: d.out,
                binarize: d.binarize,
                checkpoint: d.checkpoint,
            };
            decode(&cfg, &args, out)?;
        }
        Command::Interpolate(i) => {
            let args = InterpolateArgs {
                a: i.a,
                b: i.b,
                steps: i.steps,
                res: i.res,
                out_dir: i.out_dir,
                binarize: i.binarize,
                checkpoint: i.checkpoint,
            };
            interpolate_shapes(&cfg, &args, out)?;
        }
        Command::Eval(e) => {
            let args = EvalArgs {
                suite: match e.suite {
                    SuiteArg::Ae => Suite::Ae,
                    SuiteArg::Gan => Suite::Gan,
                    SuiteArg::Svr => Suite::Svr,
                },
                oracle: e.oracle,
                select_best_of: e.select_best_of,
                checkpoint: e.checkpoint,
                out: e.out,
            };
            eval(&cfg, &args, out)?;
        }
        Command::Gradcheck(g) => {
            gradcheck(g.seeds, g.corrupt, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
