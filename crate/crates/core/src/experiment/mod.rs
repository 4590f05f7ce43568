//! Evaluation, multi-seed runs over low-data splits, aggregation and
//! reporting.

pub mod config;
pub mod report;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use report::{report, ReportFiles};
pub use synthetic::generate_synthetic_texture_dataset;

use crate::backbone::{build_model, save_checkpoint, Model};
use crate::data_manifest::{
    read_manifest, sample_low_data, scan_dataset, stratified_split, write_manifest, Sample, SplitManifest,
};
use crate::error::{Error, Result};
use crate::image_pipeline::{make_batch, CachedSource, DirectorySource, ImageSource, PipelineConfig};
use crate::objectives::teacher_hard_label;
use crate::rng;
use crate::trainer::{train, Method, TrainHooks};

/// Top-1 metrics of one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Zero for classes without test images.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`, raw counts.
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Validation(format!(
                "{} labels vs {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= num_classes || p >= num_classes {
                return Err(Error::Validation(format!("class id out of range for {num_classes} classes")));
            }
            confusion[y][p] += 1;
        }
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[c] as f64 / n as f64
                }
            })
            .collect();
        Ok(Self {
            accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
            per_class_accuracy,
            confusion,
        })
    }
}

/// Eval-mode forward of the global view only.
pub fn evaluate(
    model: &Model<f32>,
    test: &SplitManifest,
    source: &dyn ImageSource,
    pipeline: &PipelineConfig,
    batch_size: usize,
) -> Result<Evaluation> {
    if model.class_names() != test.classes.as_slice() {
        return Err(Error::Validation(format!(
            "class order mismatch: model {:?}, manifest {:?}",
            model.class_names(),
            test.classes
        )));
    }
    if test.is_empty() {
        return Err(Error::Validation("test manifest is empty".into()));
    }
    // local views are drawn but unused; a private stream keeps evaluation
    // from touching any training randomness
    let mut rng = rng::seeded(0);
    let mut predictions = Vec::with_capacity(test.len());
    for chunk in test.entries.chunks(batch_size.max(1)) {
        let batch = make_batch(chunk, source, pipeline, false, &mut rng)?;
        let logits = model.forward(&batch.global)?;
        predictions.extend(teacher_hard_label(logits.view()));
    }
    Evaluation::from_predictions(&test.labels(), &predictions, test.num_classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One trained and evaluated (method, percentage, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub percentage: u32,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub per_class_count: usize,
    pub test_accuracy: f64,
    pub final_loss: f64,
    pub class_names: Vec<String>,
    pub per_class_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub config: RunConfig,
}

impl RunResult {
    pub fn key(&self) -> String {
        run_key(self.method, self.percentage, self.seed)
    }

    pub fn to_record(&self) -> String {
        toml::to_string(self).expect("run record serializes")
    }

    pub fn from_record(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.display().to_string(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            msg: e.message().to_string(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_record(&text, path)
    }
}

pub fn run_key(method: Method, percentage: u32, seed: u64) -> String {
    format!("{method}_p{percentage:03}_s{seed}")
}

/// Mean and standard deviation of accuracies for one method and percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub percentage: u32,
    pub method: Method,
    pub mean_accuracy: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single seed.
    pub std_accuracy: f64,
    pub n_seeds: usize,
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Groups successful runs by (method, percentage); failed runs are skipped
/// with a warning.
pub fn aggregate(results: &[RunResult]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Method, u32), Vec<f64>> = BTreeMap::new();
    for r in results {
        if r.status != RunStatus::Ok {
            log::warn!("excluding failed run {} from aggregates", r.key());
            continue;
        }
        groups.entry((r.method, r.percentage)).or_default().push(r.test_accuracy);
    }
    groups
        .into_iter()
        .map(|((method, percentage), accs)| {
            let (mean_accuracy, std_accuracy) = mean_std(&accs);
            AggregateRow {
                percentage,
                method,
                mean_accuracy,
                std_accuracy,
                n_seeds: accs.len(),
            }
        })
        .collect()
}

/// Seeds used at `percentage`: all of them up to 50%, only the first above
/// (larger splits overlap almost entirely).
pub fn seeds_for(percentage: u32, seeds: &[u64]) -> &[u64] {
    if percentage > 50 {
        &seeds[..seeds.len().min(1)]
    } else {
        seeds
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub dataset_root: PathBuf,
    pub results_dir: PathBuf,
    pub dataset_id: String,
    pub methods: Vec<Method>,
    pub percentages: Vec<u32>,
    pub seeds: Vec<u64>,
    /// Seed of the fixed 50/50 train/test split.
    pub split_seed: u64,
    /// Base config; `method` and `seed` are set per run.
    pub config: RunConfig,
    pub keep_checkpoints: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub results: Vec<RunResult>,
    pub aggregates: Vec<AggregateRow>,
}

pub const INDEX_FILE: &str = "index.tsv";
pub const RUNS_DIR: &str = "runs";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

/// Lays out `results_dir` as
///
/// ```text
/// splits/{train_full,test}.tsv, splits/train_pNNN_sS.tsv
/// runs/<method>_pNNN_sS.toml      one record per run
/// logs/<method>_pNNN_sS.tsv       per-step losses
/// index.tsv                       method, percentage, seed, status, record
/// aggregate.csv
/// ```
///
/// Runs whose record already exists with status `ok` and the same config
/// are not repeated.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.config.validate()?;
    if spec.methods.is_empty() || spec.percentages.is_empty() || spec.seeds.is_empty() {
        return Err(Error::Config("methods, percentages and seeds must be non-empty".into()));
    }
    let out = &spec.results_dir;
    let splits_dir = out.join("splits");
    let (train_full, test) = prepare_base_split(spec, &splits_dir)?;
    let source = CachedSource::new(DirectorySource::new(&spec.dataset_root));
    let pipeline = spec.config.pipeline_config();

    let mut index: Vec<String> = Vec::new();
    let mut results = Vec::new();
    for &pct in &spec.percentages {
        for &seed in seeds_for(pct, &spec.seeds) {
            let manifest_path = splits_dir.join(format!("train_p{pct:03}_s{seed}.tsv"));
            let train_split = sample_low_data(&train_full, pct, seed)?;
            write_manifest(&train_split, &manifest_path)?;
            for &method in &spec.methods {
                let cfg = RunConfig {
                    method,
                    seed,
                    ..spec.config.clone()
                };
                let key = run_key(method, pct, seed);
                let record_path = out.join(RUNS_DIR).join(format!("{key}.toml"));
                let previous = record_path.exists().then(|| RunResult::read(&record_path)).transpose();
                let result = match previous {
                    Ok(Some(r)) if r.status == RunStatus::Ok && r.config == cfg => {
                        log::info!("{key}: reusing existing record");
                        r
                    }
                    _ => {
                        log::info!("{key}: training {} images", train_split.len());
                        let r = single_run(spec, &cfg, pct, &train_split, &test, &source, &pipeline, &key);
                        write_atomic(&record_path, r.to_record().as_bytes())?;
                        r
                    }
                };
                index.push(format!(
                    "{method}\t{pct}\t{seed}\t{}\t{RUNS_DIR}/{key}.toml",
                    if result.status == RunStatus::Ok { "ok" } else { "failed" }
                ));
                let text = format!("method\tpercentage\tseed\tstatus\trecord\n{}\n", index.join("\n"));
                write_atomic(&out.join(INDEX_FILE), text.as_bytes())?;
                results.push(result);
            }
        }
    }
    let aggregates = aggregate(&results);
    write_atomic(&out.join(AGGREGATE_FILE), report::render_csv(&aggregates).as_bytes())?;
    Ok(ExperimentOutcome { results, aggregates })
}

fn prepare_base_split(spec: &ExperimentSpec, splits_dir: &Path) -> Result<(SplitManifest, SplitManifest)> {
    let train_path = splits_dir.join("train_full.tsv");
    let test_path = splits_dir.join("test.tsv");
    if train_path.exists() && test_path.exists() {
        let train = read_manifest(&train_path)?;
        let test = read_manifest(&test_path)?;
        if train.seed == spec.split_seed && train.dataset_id == spec.dataset_id {
            return Ok((train, test));
        }
        return Err(Error::Validation(format!(
            "{} holds a different base split (dataset {}, seed {}); use a fresh results directory",
            splits_dir.display(),
            train.dataset_id,
            train.seed
        )));
    }
    let index = scan_dataset(&spec.dataset_root)?;
    for w in &index.warnings {
        log::warn!("{w}");
    }
    let (train, test) = stratified_split(&index, &spec.dataset_id, spec.split_seed)?;
    write_manifest(&train, &train_path)?;
    write_manifest(&test, &test_path)?;
    Ok((train, test))
}

#[allow(clippy::too_many_arguments)]
fn single_run(
    spec: &ExperimentSpec,
    cfg: &RunConfig,
    pct: u32,
    train_split: &SplitManifest,
    test: &SplitManifest,
    source: &dyn ImageSource,
    pipeline: &PipelineConfig,
    key: &str,
) -> RunResult {
    let mut result = RunResult {
        method: cfg.method,
        percentage: pct,
        seed: cfg.seed,
        status: RunStatus::Failed,
        error: None,
        per_class_count: train_split.per_class_count,
        test_accuracy: 0.0,
        final_loss: f64::NAN,
        class_names: test.classes.clone(),
        per_class_accuracy: Vec::new(),
        confusion: Vec::new(),
        config: cfg.clone(),
    };
    let attempt = || -> Result<(Evaluation, f64)> {
        let mut model = build_model::<f32>(&cfg.arch, train_split.num_classes(), &cfg.init())?;
        model.set_class_names(train_split.classes.clone())?;
        let log_path = spec.results_dir.join("logs").join(format!("{key}.tsv"));
        if let Some(dir) = log_path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
        let tc = cfg.train_config();
        let outcome = train(
            train_split,
            source,
            pipeline,
            &tc,
            model,
            TrainHooks {
                loss_log: Some(&mut log),
                checkpoint: spec
                    .keep_checkpoints
                    .then(|| spec.results_dir.join("checkpoints").join(format!("{key}.ckpt"))),
                ..Default::default()
            },
        )?;
        let final_loss = outcome.state.history.last().map_or(f64::NAN, |r| r.total);
        let ev = evaluate(&outcome.state.model, test, source, pipeline, tc.batch_size)?;
        Ok((ev, final_loss))
    };
    match attempt() {
        Ok((ev, final_loss)) => {
            result.status = RunStatus::Ok;
            result.test_accuracy = ev.accuracy;
            result.per_class_accuracy = ev.per_class_accuracy;
            result.confusion = ev.confusion;
            result.final_loss = final_loss;
        }
        Err(e) => {
            log::warn!("{key} failed: {e}");
            result.error = Some(e.to_string());
        }
    }
    result
}

/// Trains one model on a manifest and saves it; used by the `train`
/// subcommand.
pub fn train_from_manifest(
    manifest: &SplitManifest,
    dataset_root: &Path,
    cfg: &RunConfig,
    checkpoint: &Path,
    loss_log: Option<&mut dyn std::io::Write>,
) -> Result<crate::trainer::TrainOutcome> {
    cfg.validate()?;
    let mut model = build_model::<f32>(&cfg.arch, manifest.num_classes(), &cfg.init())?;
    model.set_class_names(manifest.classes.clone())?;
    let source = CachedSource::new(DirectorySource::new(dataset_root));
    let outcome = train(
        manifest,
        &source,
        &cfg.pipeline_config(),
        &cfg.train_config(),
        model,
        TrainHooks {
            loss_log,
            checkpoint: Some(checkpoint.to_path_buf()),
            ..Default::default()
        },
    )?;
    save_checkpoint(&outcome.state.model, checkpoint)?;
    Ok(outcome)
}

/// Entries of a manifest as `(path, class_id)` pairs; convenience for
/// bindings.
pub fn manifest_pairs(m: &SplitManifest) -> Vec<(String, usize)> {
    m.entries.iter().map(|Sample { path, class_id }| (path.clone(), *class_id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_classifiers() {
        let labels: Vec<usize> = (0..8).flat_map(|c| [c, c]).collect();
        let perfect = Evaluation::from_predictions(&labels, &labels, 8).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        for c in 0..8 {
            assert_eq!(perfect.confusion[c][c], 2);
        }
        let constant = Evaluation::from_predictions(&labels, &vec![0; 16], 8).unwrap();
        assert_eq!(constant.accuracy, 0.125);
        assert!(constant.confusion.iter().all(|row| row[0] == 2));
        assert_eq!(constant.per_class_accuracy[0], 1.0);
        assert_eq!(constant.per_class_accuracy[3], 0.0);
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[94.13, 94.13, 94.13]), (94.13, 0.0));
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[95.61, 95.91]);
        assert!((m - 95.76).abs() < 1e-12);
        assert!((s - 0.3 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn seed_protocol() {
        let seeds = [0, 1, 2];
        assert_eq!(seeds_for(1, &seeds), &[0, 1, 2]);
        assert_eq!(seeds_for(50, &seeds), &[0, 1, 2]);
        assert_eq!(seeds_for(100, &seeds), &[0]);
    }

    #[test]
    fn record_round_trip() {
        let r = RunResult {
            method: Method::KdCtcnet,
            percentage: 20,
            seed: 2,
            status: RunStatus::Ok,
            error: None,
            per_class_count: 62,
            test_accuracy: 0.9413,
            final_loss: 0.123456789,
            class_names: vec!["a".into(), "b".into()],
            per_class_accuracy: vec![1.0, 0.8826],
            confusion: vec![vec![10, 0], vec![2, 8]],
            config: RunConfig::default(),
        };
        let text = r.to_record();
        assert_eq!(RunResult::from_record(&text, Path::new("x")).unwrap(), r);
        assert!(RunResult::from_record("method = 3", Path::new("x")).is_err());
    }
}
