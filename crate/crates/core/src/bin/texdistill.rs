use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use texdistill::backbone::load_checkpoint;
use texdistill::data_manifest::{
    per_class_count, read_manifest, sample_low_data, scan_dataset, stratified_split, subsample_balanced,
    write_manifest, CANONICAL_PERCENTAGES,
};
use texdistill::experiment::{
    self, evaluate, generate_synthetic_texture_dataset, report, run_experiment, ExperimentSpec, RunConfig,
};
use texdistill::image_pipeline::{CachedSource, DirectorySource};
use texdistill::trainer::Method;

#[derive(Parser)]
#[command(name = "texdistill", version, about = "Local/global self-distillation for texture classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a class-per-folder dataset and write the base and low-data split manifests.
    PrepareSplits {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = CANONICAL_PERCENTAGES.to_vec())]
        percentages: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, default_value = "splits")]
        out: PathBuf,
        /// Seed of the fixed 50/50 train/test split.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Draw this many images per class before splitting.
        #[arg(long)]
        subsample: Option<usize>,
        #[arg(long)]
        dataset_id: Option<String>,
    },
    /// Train one model on a train manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root; defaults to the root recorded in the manifest.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long, default_value = "model.ckpt")]
        checkpoint: PathBuf,
        /// Per-step loss log (tab separated).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on a manifest (global branch, eval mode).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train and evaluate every (method, percentage, seed) combination.
    Experiment {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![Method::Vanilla, Method::KdCtcnet])]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', default_values_t = CANONICAL_PERCENTAGES.to_vec())]
        percentages: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        dataset_id: Option<String>,
        #[arg(long)]
        keep_checkpoints: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render accuracy tables and confusion matrices from a results directory.
    Report {
        #[arg(long)]
        results_dir: PathBuf,
    },
    /// Write a procedural texture dataset.
    SynthData {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 150)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Per-field overrides of the config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    focal_gamma: Option<f64>,
    #[arg(long)]
    mixed_precision: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    local_branch: Option<bool>,
    #[arg(long)]
    global_size: Option<usize>,
    #[arg(long)]
    local_size: Option<usize>,
    #[arg(long)]
    min_fraction: Option<f64>,
    #[arg(long)]
    max_fraction: Option<f64>,
    #[arg(long)]
    flip_prob: Option<f64>,
}

impl Overrides {
    fn apply(self, c: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            arch, lr, momentum, batch_size, total_steps, alpha, n_min, focal_gamma, mixed_precision, seed,
            eval_every, checkpoint_every, local_branch, global_size, local_size, min_fraction, max_fraction,
            flip_prob
        );
        if self.pretrained.is_some() {
            c.pretrained = self.pretrained;
        }
    }
}

fn resolve_config(path: Option<&PathBuf>, overrides: Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_root(manifest_path: &std::path::Path, root: Option<PathBuf>, m: &texdistill::data_manifest::SplitManifest) -> Result<PathBuf> {
    match root {
        Some(r) => Ok(r),
        None => m
            .resolve_root(manifest_path.parent())
            .with_context(|| format!("{} records no dataset root; pass --root", manifest_path.display())),
    }
}

fn default_id(root: &std::path::Path) -> String {
    root.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::PrepareSplits {
            root,
            percentages,
            seeds,
            out,
            split_seed,
            subsample,
            dataset_id,
        } => {
            let mut index = scan_dataset(&root)?;
            for w in &index.warnings {
                log::warn!("{w}");
            }
            if let Some(n) = subsample {
                index = subsample_balanced(&index, n, split_seed)?;
            }
            let id = dataset_id.unwrap_or_else(|| default_id(&root));
            let (train, test) = stratified_split(&index, &id, split_seed)?;
            write_manifest(&train, out.join("train_full.tsv"))?;
            write_manifest(&test, out.join("test.tsv"))?;
            println!(
                "{id}: {} classes, {} train / {} test images per class",
                train.num_classes(),
                train.per_class_count,
                test.per_class_count
            );
            for &pct in &percentages {
                for &seed in experiment::seeds_for(pct, &seeds) {
                    let m = sample_low_data(&train, pct, seed)?;
                    let path = out.join(format!("train_p{pct:03}_s{seed}.tsv"));
                    write_manifest(&m, &path)?;
                    println!(
                        "{pct:>3}% seed {seed}: {} per class ({} images) -> {}",
                        per_class_count(train.per_class_count, pct)?,
                        m.len(),
                        path.display()
                    );
                }
            }
        }
        Command::Train {
            manifest,
            method,
            config,
            root,
            checkpoint,
            log,
            overrides,
        } => {
            let mut cfg = resolve_config(config.as_ref(), overrides)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            let m = read_manifest(&manifest)?;
            let root = dataset_root(&manifest, root, &m)?;
            let mut log_file = match &log {
                Some(p) => Some(BufWriter::new(File::create(p).with_context(|| p.display().to_string())?)),
                None => None,
            };
            let outcome = experiment::train_from_manifest(
                &m,
                &root,
                &cfg,
                &checkpoint,
                log_file.as_mut().map(|w| w as &mut dyn std::io::Write),
            )?;
            let last = outcome.state.history.last().context("no steps were run")?;
            println!(
                "trained {} ({}) for {} steps, final loss {:.6}; checkpoint {}",
                cfg.arch,
                cfg.method,
                outcome.state.step,
                last.total,
                checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            root,
            config,
            overrides,
        } => {
            let cfg = resolve_config(config.as_ref(), overrides)?;
            let model = load_checkpoint::<f32>(&checkpoint)?;
            let m = read_manifest(&manifest)?;
            let root = dataset_root(&manifest, root, &m)?;
            let source = CachedSource::new(DirectorySource::new(root));
            let ev = evaluate(&model, &m, &source, &cfg.pipeline_config(), cfg.batch_size)?;
            println!("accuracy {:.4}", ev.accuracy);
            for (name, acc) in m.classes.iter().zip(&ev.per_class_accuracy) {
                println!("  {name}: {acc:.4}");
            }
            println!("confusion (rows: true, columns: predicted)");
            for row in &ev.confusion {
                let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
                println!("{}", cells.join(""));
            }
        }
        Command::Experiment {
            root,
            methods,
            percentages,
            seeds,
            out,
            config,
            split_seed,
            dataset_id,
            keep_checkpoints,
            overrides,
        } => {
            let cfg = resolve_config(config.as_ref(), overrides)?;
            let spec = ExperimentSpec {
                dataset_id: dataset_id.unwrap_or_else(|| default_id(&root)),
                dataset_root: root,
                results_dir: out.clone(),
                methods,
                percentages,
                seeds,
                split_seed,
                config: cfg,
                keep_checkpoints,
            };
            let outcome = run_experiment(&spec)?;
            let failed = outcome
                .results
                .iter()
                .filter(|r| r.status != experiment::RunStatus::Ok)
                .count();
            print!("{}", experiment::report::render_table(&outcome.aggregates));
            if failed > 0 {
                bail!("{failed} run(s) failed; see {}", out.join(experiment::INDEX_FILE).display());
            }
        }
        Command::Report { results_dir } => {
            let files = report(&results_dir)?;
            print!("{}", std::fs::read_to_string(&files.table_txt)?);
            println!(
                "wrote {}, {} and {} confusion matrices",
                files.table_txt.display(),
                files.table_csv.display(),
                files.confusion.len()
            );
        }
        Command::SynthData {
            classes,
            per_class,
            size,
            seed,
            out,
        } => {
            let root = generate_synthetic_texture_dataset(classes, per_class, size, seed, &out)?;
            println!("wrote {} images to {}", classes * per_class, root.display());
        }
    }
    Ok(())
}
