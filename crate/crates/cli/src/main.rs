//! `bobnet`: synthetic data generation, training, localization, evaluation
//! and classifier comparison.
//!
//! Exit status is 0 on success, 1 for invalid arguments or state, 2 for
//! unreadable or malformed files.

mod meta;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bobnet::fusion::{localize, read_profile_csv, DetectionProfile, FusionConfig, LocalizeConfig};
use bobnet::metrics::{aggregate_by_structure, aggregates_to_csv, compare_profiles, format_report, LocalizationReport};
use bobnet::model::{load_checkpoint, save_checkpoint};
use bobnet::phantom::{gen_dataset, PhantomRandomizer};
use bobnet::slicing::Dataset;
use bobnet::train::{train, RunConfig};
use bobnet::volume::{format_boxes, load_boxes, load_volume, BBox3D, Volume3D};
use bobnet::{Error, Result};
use clap::{Args, Parser, Subcommand};

use crate::meta::ModelMeta;

#[derive(Parser, Debug)]
#[command(name = "bobnet", version, about = "Slice-based 3D bounding-box localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic phantom dataset with a train/val/test split.
    GenSynth(GenSynthArgs),
    /// Train a network on a dataset directory.
    Train(TrainArgs),
    /// Predict one box per structure for a volume.
    Localize(LocalizeArgs),
    /// Compare predicted boxes with reference boxes.
    Evaluate(EvaluateArgs),
    /// McNemar's test between two prediction profiles.
    Compare(CompareArgs),
    /// Write the ideal (0/1) profile of reference boxes, for use with `compare`.
    Labels(LabelsArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    /// Comma-separated subset of heart,aorta.
    #[arg(long, value_delimiter = ',')]
    structures: Option<Vec<String>>,
    /// Voxel spacing in mm as X,Y,Z.
    #[arg(long, value_delimiter = ',')]
    spacing: Option<Vec<f64>>,
    /// Volume extents as X,Y,Z.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also append per-epoch lines to this file.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Train on these structures only (default: all in the dataset).
    #[arg(long, value_delimiter = ',')]
    structures: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write per-slice probabilities as CSV.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Print mean milliseconds per slice and total seconds.
    #[arg(long)]
    time: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Structure names for the model outputs (default: from the model sidecar).
    #[arg(long, value_delimiter = ',')]
    structures: Option<Vec<String>>,
    #[arg(long)]
    target_spacing: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Volume the boxes refer to; supplies dims and spacing.
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args, Debug)]
struct LabelsArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn triple<T: Copy>(v: Vec<T>, what: &str) -> Result<[T; 3]> {
    <[T; 3]>::try_from(v).map_err(|v| Error::InvalidArgument(format!("--{what} needs 3 values, got {}", v.len())))
}

fn gen_synth(args: GenSynthArgs) -> Result<()> {
    let mut r = PhantomRandomizer::default();
    if let Some(s) = args.structures {
        r.structures = s;
    }
    if let Some(s) = args.spacing {
        r.spacing = triple(s, "spacing")?;
    }
    if let Some(d) = args.dims {
        r.dims = triple(d, "dims")?;
    }
    let split = gen_dataset(&args.out, args.count, &r, args.seed)?;
    println!(
        "wrote {} phantoms to {} ({} train, {} val, {} test)",
        args.count,
        args.out.display(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let dataset = Dataset::open(&args.data)?;
    let structures = match args.structures {
        Some(s) => {
            if let Some(missing) = s.iter().find(|n| !dataset.structures().contains(n)) {
                return Err(Error::InvalidArgument(format!("structure {missing:?} not in dataset")));
            }
            s
        }
        None => dataset.structures().to_vec(),
    };
    let mut log = match &args.log {
        Some(p) => Some(fs::File::create(p).map_err(|source| Error::Io {
            path: p.clone(),
            source,
        })?),
        None => None,
    };
    let mut log_err = None;
    let outcome = train(&dataset, &structures, &config, |stats| {
        println!("{stats}");
        if let Some(f) = log.as_mut() {
            if let Err(e) = writeln!(f, "{stats}") {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let (Some(e), Some(p)) = (log_err, &args.log) {
        return Err(Error::Io { path: p.clone(), source: e });
    }
    save_checkpoint(&outcome.model, &args.out)?;
    ModelMeta {
        structures: outcome.structures,
        target_spacing_mm: config.target_spacing_mm,
        threshold: config.threshold,
    }
    .save(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn localize_cmd(args: LocalizeArgs) -> Result<()> {
    let start = Instant::now();
    let model = load_checkpoint(&args.model)?;
    let meta = ModelMeta::load(&args.model)?;
    let names = match (args.structures, &meta) {
        (Some(s), _) => s,
        (None, Some(m)) => m.structures.clone(),
        (None, None) => (0..model.num_structures()).map(|i| format!("structure_{i}")).collect(),
    };
    let config = LocalizeConfig {
        target_spacing_mm: args
            .target_spacing
            .or(meta.as_ref().map(|m| m.target_spacing_mm))
            .unwrap_or(LocalizeConfig::default().target_spacing_mm),
        fusion: FusionConfig::new(args.threshold.or(meta.as_ref().map(|m| m.threshold)).unwrap_or(0.5))?,
        workers: args.workers.max(1),
    };
    let volume = load_volume(&args.volume)?;
    let result = localize(&model, &volume, &names, &config)?;

    let found: Vec<BBox3D> = result.boxes.iter().filter_map(|(_, b)| b.clone()).collect();
    let mut text = format_boxes(&found)?;
    for (name, b) in &result.boxes {
        if b.is_none() {
            text.push_str(&format!("# {name} not found\n"));
        }
    }
    write_file(&args.out, text)?;
    if let Some(p) = &args.profiles {
        result.profile.write_csv(p)?;
    }
    if args.time {
        println!(
            "{:.3} ms per slice over {} slices, {:.3} s total",
            result.ms_per_slice(),
            result.slices,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn attach_all(boxes: &mut [BBox3D], volume: &Volume3D, what: &Path) -> Result<()> {
    for b in boxes {
        b.attach(volume)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", what.display())))?;
    }
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let volume = load_volume(&args.volume)?;
    let mut pred = load_boxes(&args.pred)?;
    let mut reference = load_boxes(&args.reference)?;
    attach_all(&mut pred, &volume, &args.pred)?;
    attach_all(&mut reference, &volume, &args.reference)?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in &reference {
        match pred.iter().find(|p| p.name == r.name) {
            Some(p) => reports.push(LocalizationReport::new(p, r)?),
            None => failures.push(r.name.clone()),
        }
    }
    print!("{}", format_report(&reports, &failures));
    if let Some(p) = &args.csv {
        write_file(p, aggregates_to_csv(&aggregate_by_structure(&reports))?)?;
    }
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> Result<()> {
    let a = read_profile_csv(&args.a)?;
    let b = read_profile_csv(&args.b)?;
    let labels = read_profile_csv(&args.labels)?;
    let m = compare_profiles(&a, &b, &labels, 0.5)?;
    println!("b = {}", m.b);
    println!("c = {}", m.c);
    println!("statistic = {:.4}", m.statistic);
    println!("p = {:.4}", m.p_value);
    Ok(())
}

fn labels_cmd(args: LabelsArgs) -> Result<()> {
    let volume = load_volume(&args.volume)?;
    let mut boxes = load_boxes(&args.boxes)?;
    attach_all(&mut boxes, &volume, &args.boxes)?;
    DetectionProfile::ideal(volume.dims(), &boxes).write_csv(&args.out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Labels(a) => labels_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io_or_format() { 2 } else { 1 })
        }
    }
}
