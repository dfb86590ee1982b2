use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use scenetrack::io::{
    load_params, read_featseq, read_track_csv, save_params, write_featseq, write_loss_trace_csv, write_metrics_csv,
    write_track_csv,
};
use scenetrack::selftest::{run_selected, SelftestOptions, CRITERIA};
use scenetrack::synth::{
    auc_thresholds, compute_corpus_metrics, generate_sequence, spsa_train, Motion, SceneConfig, SpsaConfig,
    SyntheticSequence,
};
use scenetrack::{track_sequence, Ablation, Error, ModelParams, TargetBox, TrackerConfig};

mod config;

#[derive(Parser, Debug)]
#[command(name = "scenetrack", version, about = "Scene-aware tracking on synthetic feature grids")]
#[command(args_override_self = true)]
struct Cli {
    /// TOML file whose `[gen]`, `[train]`, ... tables hold flag defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic crossing-distractor sequences.
    Gen(GenArgs),
    /// Train fusion and state-update parameters with SPSA.
    Train(TrainArgs),
    /// Track the annotated target through feature sequences.
    Track(TrackArgs),
    /// Score predicted boxes against ground truth.
    Eval(EvalArgs),
    /// Run the built-in acceptance checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Output directory; files are named `<prefix>_<index>.featseq`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "seq")]
    prefix: String,
    #[arg(long, default_value_t = 18)]
    width: usize,
    #[arg(long, default_value_t = 18)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, default_value_t = 2)]
    distractors: usize,
    /// static, linear or crossing
    #[arg(long, default_value = "crossing", value_parser = parse_motion)]
    motion: Motion,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Feature files or directories of them.
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    /// Starting parameters; the memory-seeded defaults otherwise.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    loss_out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0.005)]
    step_size: f64,
    #[arg(long, default_value_t = 0.02)]
    perturbation: f64,
    /// Also perturb the correspondence nets.
    #[arg(long)]
    train_correspondence: bool,
}

#[derive(Args, Debug)]
struct TrackArgs {
    /// Feature files; one CSV per input is written to `--out`.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "full", value_parser = parse_ablation)]
    ablate: Ablation,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Tracking CSVs, paired in order with `--gt`.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Feature files carrying the ground truth.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Accepted for uniformity; evaluation draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Skip the training experiment.
    #[arg(long)]
    quick: bool,
    /// Run only these criteria.
    #[arg(long)]
    only: Vec<u8>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_motion(s: &str) -> Result<Motion, String> {
    match s {
        "static" => Ok(Motion::Static),
        "linear" => Ok(Motion::Linear),
        "crossing" => Ok(Motion::Crossing),
        _ => Err(format!("unknown motion '{s}'")),
    }
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Io(String),
    /// Already reported.
    Silent,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::apply(args) {
        Ok(a) => a,
        Err(f) => return report(Err(f)),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    report(dispatch(cli.command))
}

fn report(outcome: Outcome) -> ExitCode {
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Silent) => ExitCode::from(1),
    }
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Track(a) => track(a),
        Command::Eval(a) => eval(a),
        Command::Selftest(a) => selftest(a),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn gen(a: GenArgs) -> Outcome {
    let scene = SceneConfig {
        width: a.width,
        height: a.height,
        channels: a.channels,
        frames: a.frames,
        distractors: a.distractors,
        motion: a.motion,
        ..SceneConfig::default()
    };
    scene.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    (0..a.count).into_par_iter().try_for_each(|i| -> Outcome {
        let seq = generate_sequence(&scene, a.seed.wrapping_add(i as u64))?;
        write_featseq(&seq, &a.out.join(format!("{}_{i:04}.featseq", a.prefix)))?;
        Ok(())
    })?;
    println!("wrote {} sequences to {}", a.count, a.out.display());
    Ok(())
}

fn collect_featseqs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| io_failure(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "featseq"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Failure::Invalid("no feature files found".into()));
    }
    Ok(files)
}

fn read_all(files: &[PathBuf]) -> Result<Vec<SyntheticSequence>, Failure> {
    files
        .par_iter()
        .map(|f| read_featseq(f).map_err(Failure::from))
        .collect()
}

fn train(a: TrainArgs) -> Outcome {
    let corpus = read_all(&collect_featseqs(&a.corpus)?)?;
    let initial = match &a.init {
        Some(p) => load_params::<f32>(p)?,
        None => ModelParams::memory_seeded(scenetrack::model::MEMORY_GAIN as f32),
    };
    let cfg = SpsaConfig {
        steps: a.steps,
        batch: a.batch,
        a: a.step_size,
        c: a.perturbation,
        train_correspondence: a.train_correspondence,
        seed: a.seed,
        ..SpsaConfig::default()
    };
    let tracker = TrackerConfig::<f32> {
        seed: a.seed,
        stride: corpus[0].stride,
        ..TrackerConfig::default()
    };
    let out = spsa_train(&initial, &corpus, &tracker, &cfg)?;
    save_params(&out.params, &a.out)?;
    write_loss_trace_csv(&out.loss_trace, &a.loss_out)?;
    if let (Some(first), Some(last)) = (out.loss_trace.first(), out.loss_trace.last()) {
        println!("trained {} steps on {} sequences; loss {first:.4} -> {last:.4}", cfg.steps, corpus.len());
    }
    Ok(())
}

fn track(a: TrackArgs) -> Outcome {
    let params = match &a.params {
        Some(p) => load_params::<f32>(p)?,
        None => ModelParams::initial(),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let files = collect_featseqs(&a.input)?;
    files.par_iter().try_for_each(|f| -> Outcome {
        let seq = read_featseq(f)?;
        let cfg = TrackerConfig::<f32> {
            stride: seq.stride,
            seed: a.seed,
            ablation: a.ablate,
            params: params.clone(),
            ..TrackerConfig::default()
        };
        let run = track_sequence(&seq.frames, &seq.gt_boxes[0], &cfg)?;
        let stem = f.file_stem().map_or_else(|| "track".into(), |s| s.to_string_lossy().into_owned());
        write_track_csv(&run, &a.out.join(format!("{stem}.csv")))?;
        Ok(())
    })?;
    println!("tracked {} sequences ({})", files.len(), a.ablate);
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    if a.pred.len() != a.gt.len() {
        return Err(Failure::Invalid(format!(
            "{} prediction files but {} ground-truth files",
            a.pred.len(),
            a.gt.len()
        )));
    }
    let preds = a
        .pred
        .iter()
        .map(|p| Ok(read_track_csv(p)?.iter().map(|r| r.target_box()).collect()))
        .collect::<Result<Vec<Vec<TargetBox>>, Failure>>()?;
    let gts = read_all(&a.gt)?;
    let pairs: Vec<_> = preds
        .iter()
        .zip(&gts)
        .map(|(p, g)| (p.as_slice(), g.gt_boxes.as_slice()))
        .collect();
    let report = compute_corpus_metrics(&pairs, &auc_thresholds())?;
    write_metrics_csv(&report, &a.out)?;
    println!(
        "AUC {:.4} OP50 {:.4} over {} sequences, {} frames",
        report.auc,
        report.op_at(0.5),
        gts.len(),
        report.frame_count()
    );
    Ok(())
}

fn selftest(a: SelftestArgs) -> Outcome {
    let ids: Vec<u8> = if a.only.is_empty() {
        CRITERIA
            .iter()
            .map(|c| c.0)
            .filter(|&id| !(a.quick && id == 7))
            .collect()
    } else {
        a.only.clone()
    };
    let opts = SelftestOptions {
        seed: a.seed,
        ..SelftestOptions::default()
    };
    let verdicts = run_selected(&ids, &opts, |v| println!("{v}"));
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    println!("{} of {} checks passed", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Silent)
    }
}
