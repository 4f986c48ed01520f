use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cubetop::io::{
    diagrams_from_json, diagrams_to_json, keypoints_from_json, keypoints_to_json, load_ctvol, mask_from_json,
    mask_to_json, save_ctvol,
};
use cubetop::pretrain::{compute_terms, overall_loss, PretrainInputs};
use cubetop::selfcheck::{self, SelfCheckConfig};
use cubetop::{
    apply_mask, betti_at, compute_persistence, crop_keypoints, euler_characteristic_at, make_mask, topo_loss,
    w2_distance, CropBox, Error, LossWeights, Volume,
};

const EXIT_INPUT: u8 = 2;
const EXIT_CONTRACT: u8 = 3;
const EXIT_USAGE: u8 = 64;
const BENCH_TARGET_SECONDS: f64 = 30.0;

#[derive(Parser)]
#[command(name = "cubetop", version, about = "Cubical persistent homology and topology-aware pre-training losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Persistence diagrams (dimensions 0-2) of a volume.
    Ph {
        volume: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// 2-Wasserstein distance and matching between two diagram files, per dimension.
    Dist { a: PathBuf, b: PathBuf },
    /// Topological loss between a target and a reconstructed volume.
    Topoloss {
        target: PathBuf,
        recon: PathBuf,
        /// Write the gradient with respect to the reconstruction here.
        #[arg(long)]
        grad: Option<PathBuf>,
    },
    /// Random patch mask.
    Mask {
        #[arg(long, value_parser = parse_triple)]
        dims: [usize; 3],
        #[arg(long, value_parser = parse_triple)]
        patch: [usize; 3],
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fill the masked patches of a volume.
    ApplyMask {
        volume: PathBuf,
        mask: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        fill: f64,
    },
    /// The nine normalized key points of a crop.
    Keypoints {
        #[arg(long, value_parser = parse_triple)]
        origin: [usize; 3],
        #[arg(long, value_parser = parse_triple)]
        size: [usize; 3],
        #[arg(long, value_parser = parse_triple)]
        parent: [usize; 3],
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// All eight pre-training loss terms and their weighted total.
    PretrainLoss {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        recon_a: PathBuf,
        #[arg(long)]
        recon_b: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        kp_gt: PathBuf,
        #[arg(long)]
        kp_a: PathBuf,
        #[arg(long)]
        kp_b: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        l1: f64,
        #[arg(long, default_value_t = 0.1)]
        l2: f64,
        #[arg(long, default_value_t = 0.1)]
        l3: f64,
        /// Reconstruction MSE over the whole volume rather than masked patches.
        #[arg(long)]
        full_mse: bool,
    },
    /// Betti numbers and Euler characteristic of a super-level set.
    Betti {
        volume: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        tau: f64,
    },
    /// Time full persistence of a random volume.
    Bench {
        #[arg(long, value_parser = parse_triple, default_value = "64")]
        dims: [usize; 3],
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in oracle and gradient suites.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `n` (a cube) or `x,y,z`.
fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> =
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err(format!("expected n or x,y,z, got {s:?}")),
    }
}

enum Failure {
    Core(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type CmdResult = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> Result<String, Error> {
    Ok(serde_json::to_string(value)?)
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Error> {
    match output {
        Some(path) => fs::write(path, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum MatchEnd {
    Index(usize),
    Diagonal(&'static str),
}

impl From<Option<usize>> for MatchEnd {
    fn from(i: Option<usize>) -> Self {
        i.map_or(MatchEnd::Diagonal("diag"), MatchEnd::Index)
    }
}

#[derive(Serialize)]
struct DimDistance {
    dim: usize,
    w2: f64,
    matching: Vec<[MatchEnd; 2]>,
}

#[derive(Serialize)]
struct DistOutput {
    dims: Vec<DimDistance>,
}

#[derive(Serialize)]
struct TopoOutput {
    value: f64,
    per_dim: [f64; 3],
}

#[derive(Serialize)]
struct BettiOutput {
    tau: f64,
    betti: [usize; 3],
    euler: i64,
}

#[derive(Serialize)]
struct BenchOutput {
    dims: [usize; 3],
    seed: u64,
    cells: usize,
    pairs: [usize; 3],
    seconds: f64,
    target_seconds: f64,
    within_target: bool,
}

#[derive(Serialize)]
struct CheckLine<'a> {
    name: &'a str,
    passed: bool,
    detail: &'a str,
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Ph { volume, output } => {
            let v = load_ctvol(&volume)?;
            cubetop::filtration::check_size(&v)?;
            emit(&diagrams_to_json(&compute_persistence(&v))?, output.as_deref())?;
        }
        Command::Dist { a, b } => {
            let da = diagrams_from_json(&read_text(&a)?)?;
            let db = diagrams_from_json(&read_text(&b)?)?;
            let mut dims = Vec::with_capacity(3);
            for k in 0..3 {
                let (w2, m) = w2_distance(&da[k], &db[k])?;
                let matching = m.pairs.iter().map(|&(i, j)| [i.into(), j.into()]).collect();
                dims.push(DimDistance { dim: k, w2, matching });
            }
            emit(&to_json(&DistOutput { dims })?, None)?;
        }
        Command::Topoloss { target, recon, grad } => {
            let t = load_ctvol(&target)?;
            let r = load_ctvol(&recon)?;
            let result = topo_loss(&t, &r, grad.is_some())?;
            if let (Some(path), Some(g)) = (grad, &result.gradient) {
                save_ctvol(g, path)?;
            }
            emit(&to_json(&TopoOutput { value: result.value, per_dim: result.per_dim_w2 })?, None)?;
        }
        Command::Mask { dims, patch, ratio, seed, output } => {
            let m = make_mask(dims, patch, ratio, seed)?;
            emit(&mask_to_json(&m)?, output.as_deref())?;
        }
        Command::ApplyMask { volume, mask, output, fill } => {
            let v = load_ctvol(&volume)?;
            let m = mask_from_json(&read_text(&mask)?)?;
            save_ctvol(&apply_mask(&v, &m, fill)?, output)?;
        }
        Command::Keypoints { origin, size, parent, output } => {
            let kp = crop_keypoints(&CropBox::new(origin, size, parent)?);
            emit(&keypoints_to_json(&kp)?, output.as_deref())?;
        }
        Command::PretrainLoss { target, recon_a, recon_b, mask, kp_gt, kp_a, kp_b, l1, l2, l3, full_mse } => {
            let weights = LossWeights::new(l1, l2, l3)?;
            let target = load_ctvol(&target)?;
            let recon_vit = load_ctvol(&recon_a)?;
            let recon_unetrpp = load_ctvol(&recon_b)?;
            let mask = mask_from_json(&read_text(&mask)?)?;
            let keypoints_truth = keypoints_from_json(&read_text(&kp_gt)?)?;
            let keypoints_vit = keypoints_from_json(&read_text(&kp_a)?)?;
            let keypoints_unetrpp = keypoints_from_json(&read_text(&kp_b)?)?;
            let terms = compute_terms(&PretrainInputs {
                target: &target,
                recon_vit: &recon_vit,
                recon_unetrpp: &recon_unetrpp,
                mask: &mask,
                keypoints_truth: &keypoints_truth,
                keypoints_vit: &keypoints_vit,
                keypoints_unetrpp: &keypoints_unetrpp,
                full_mse,
            })?;
            emit(&to_json(&overall_loss(&terms, &weights)?)?, None)?;
        }
        Command::Betti { volume, tau } => {
            let v = load_ctvol(&volume)?;
            let out = BettiOutput { tau, betti: betti_at(&v, tau), euler: euler_characteristic_at(&v, tau) };
            emit(&to_json(&out)?, None)?;
        }
        Command::Bench { dims, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = Volume::from_fn(dims, |_, _, _| rng.random_range(0.0..1.0))?;
            cubetop::filtration::check_size(&v)?;
            let start = Instant::now();
            let diagrams = compute_persistence(&v);
            let seconds = start.elapsed().as_secs_f64();
            let out = BenchOutput {
                dims,
                seed,
                cells: dims.iter().map(|&n| 2 * n - 1).product(),
                pairs: diagrams.each_ref().map(|d| d.len()),
                seconds,
                target_seconds: BENCH_TARGET_SECONDS,
                within_target: seconds < BENCH_TARGET_SECONDS,
            };
            if !out.within_target {
                eprintln!("warning: persistence took {seconds:.2}s, above the {BENCH_TARGET_SECONDS}s target");
            }
            emit(&to_json(&out)?, None)?;
        }
        Command::Selfcheck { seed } => {
            let outcomes = selfcheck::run(&SelfCheckConfig { seed, ..SelfCheckConfig::default() });
            for o in &outcomes {
                emit(&to_json(&CheckLine { name: o.name, passed: o.passed, detail: &o.detail })?, None)?;
            }
            let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
            if !failed.is_empty() {
                return Err(Failure::Check(format!("self-check failed: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn configure_threads() {
    let threads = std::env::var("CUBETOP_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok());
    if let Some(n) = threads.filter(|&n| n > 0) {
        // fails only if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { EXIT_INPUT } else { EXIT_CONTRACT })
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
