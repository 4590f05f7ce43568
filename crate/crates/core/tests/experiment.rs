use std::fs;
use std::path::Path;

use texdistill::backbone::{build_model, Init};
use texdistill::data_manifest::{scan_dataset, stratified_split};
use texdistill::experiment::report::{load_results, render_table};
use texdistill::experiment::{
    aggregate, evaluate, generate_synthetic_texture_dataset, report, run_experiment, Evaluation, ExperimentSpec,
    RunConfig, RunResult, RunStatus, INDEX_FILE,
};
use texdistill::image_pipeline::{make_batch, CachedSource, DirectorySource, RawImage};
use texdistill::trainer::Method;
use texdistill::{rng, Error};

fn tiny_config() -> RunConfig {
    RunConfig {
        arch: "tiny_cnn:2".into(),
        total_steps: 5,
        batch_size: 8,
        global_size: 16,
        local_size: 8,
        ..Default::default()
    }
}

#[test]
fn synthetic_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate_synthetic_texture_dataset(4, 30, 150, 0, dir.path()).unwrap();
    let index = scan_dataset(&root).unwrap();
    assert_eq!(index.classes.len(), 4);
    assert_eq!(index.samples.len(), 120);
    assert_eq!(index.class_counts(), vec![30; 4]);
    assert_eq!(index.image_size_hint, Some((150, 150)));
    assert!(index.warnings.is_empty());
}

#[test]
fn nearest_centroid_separates_the_synthetic_classes() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate_synthetic_texture_dataset(4, 20, 32, 9, dir.path()).unwrap();
    let index = scan_dataset(&root).unwrap();
    let (train_m, test_m) = stratified_split(&index, "nc", 0).unwrap();
    let load = |p: &str| -> Vec<f64> {
        RawImage::open(root.join(p)).unwrap().data.iter().map(|&v| v as f64).collect()
    };
    let dim = 32 * 32 * 3;
    let mut centroids = vec![vec![0.0; dim]; 4];
    for s in &train_m.entries {
        for (c, v) in centroids[s.class_id].iter_mut().zip(load(&s.path)) {
            *c += v / train_m.per_class_count as f64;
        }
    }
    let mut correct = 0;
    for s in &test_m.entries {
        let x = load(&s.path);
        let best = (0..4)
            .min_by(|&a, &b| {
                let d = |k: usize| centroids[k].iter().zip(&x).map(|(c, v)| (c - v).powi(2)).sum::<f64>();
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        correct += (best == s.class_id) as usize;
    }
    let acc = correct as f64 / test_m.len() as f64;
    assert!(acc > 0.5, "nearest-centroid accuracy {acc}");
}

#[test]
fn accuracy_matches_a_pairwise_count_oracle() {
    let mut r = rng::seeded(31);
    let labels: Vec<usize> = (0..300).map(|_| rng::index(&mut r, 3)).collect();
    let preds: Vec<usize> = (0..300).map(|_| rng::index(&mut r, 3)).collect();
    let ev = Evaluation::from_predictions(&labels, &preds, 3).unwrap();
    let mut agree = 0;
    for i in 0..labels.len() {
        for j in 0..preds.len() {
            if i == j && labels[i] == preds[j] {
                agree += 1;
            }
        }
    }
    assert!((ev.accuracy - agree as f64 / 300.0).abs() < 1e-12);
    for (c, row) in ev.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<u64>() as usize, labels.iter().filter(|&&l| l == c).count());
    }
}

#[test]
fn evaluate_rejects_class_order_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate_synthetic_texture_dataset(2, 4, 16, 0, dir.path()).unwrap();
    let (_, test_m) = stratified_split(&scan_dataset(&root).unwrap(), "x", 0).unwrap();
    let mut model = build_model::<f32>("tiny_cnn:2", 2, &Init::Random(0)).unwrap();
    model.set_class_names(vec![test_m.classes[1].clone(), test_m.classes[0].clone()]).unwrap();
    let src = DirectorySource::new(&root);
    let cfg = tiny_config();
    assert!(matches!(
        evaluate(&model, &test_m, &src, &cfg.pipeline_config(), 4),
        Err(Error::Validation(_))
    ));
}

#[test]
fn experiment_protocol_records_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate_synthetic_texture_dataset(3, 20, 24, 2, dir.path().join("data")).unwrap();
    let results = dir.path().join("results");
    let spec = ExperimentSpec {
        dataset_root: root,
        results_dir: results.clone(),
        dataset_id: "syn".into(),
        methods: vec![Method::Vanilla, Method::VanillaPlusSampling, Method::KdCtcnet],
        percentages: vec![10, 50, 100],
        seeds: vec![0, 1, 2],
        split_seed: 0,
        config: tiny_config(),
        keep_checkpoints: true,
    };
    let out = run_experiment(&spec).unwrap();
    assert_eq!(out.results.len(), 3 * (3 + 3 + 1));
    for r in &out.results {
        assert_eq!(r.status, RunStatus::Ok);
        let total: u64 = r.confusion.iter().flatten().sum();
        let trace: u64 = (0..3).map(|c| r.confusion[c][c]).sum();
        assert!((trace as f64 / total as f64 - r.test_accuracy).abs() < 1e-9);
        assert!(r.confusion.iter().all(|row| row.iter().sum::<u64>() == 10));
        assert_eq!(r.config.method, r.method);
        assert_eq!(r.config.seed, r.seed);
    }
    let rows = &out.aggregates;
    assert_eq!(rows.len(), 9);
    for row in rows {
        assert_eq!(row.n_seeds, if row.percentage == 100 { 1 } else { 3 });
        let accs: Vec<f64> = out
            .results
            .iter()
            .filter(|r| r.method == row.method && r.percentage == row.percentage)
            .map(|r| r.test_accuracy)
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((row.mean_accuracy - mean).abs() < 1e-12);
    }
    let index = fs::read_to_string(results.join(INDEX_FILE)).unwrap();
    assert_eq!(index.lines().count(), 1 + out.results.len());
    assert!(results.join("checkpoints/kd_ctcnet_p010_s2.ckpt").exists());
    assert!(results.join("logs/vanilla_p100_s0.tsv").exists());

    // a missing record is recomputed; the rest are reused unchanged
    let victim = results.join("runs/kd_ctcnet_p050_s1.toml");
    fs::remove_file(&victim).unwrap();
    let again = run_experiment(&spec).unwrap();
    assert!(victim.exists());
    assert_eq!(again.results, out.results);
}

#[test]
fn failed_runs_are_recorded_and_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate_synthetic_texture_dataset(2, 8, 24, 2, dir.path().join("data")).unwrap();
    // an image too small for the local patch makes every run fail
    image::RgbImage::new(4, 4).save(root.join("class_00/img_0000.png")).unwrap();
    let results = dir.path().join("results");
    let spec = ExperimentSpec {
        dataset_root: root,
        results_dir: results.clone(),
        dataset_id: "bad".into(),
        methods: vec![Method::KdCtcnet],
        percentages: vec![100],
        seeds: vec![0],
        split_seed: 0,
        config: tiny_config(),
        keep_checkpoints: false,
    };
    let out = run_experiment(&spec).unwrap();
    assert_eq!(out.results[0].status, RunStatus::Failed);
    assert!(out.results[0].error.as_deref().unwrap().contains("too small"));
    assert!(out.aggregates.is_empty());
    assert!(matches!(report(&results), Err(Error::NothingToReport(_))));
}

fn fake_result(method: Method, percentage: u32, seed: u64, acc: f64) -> RunResult {
    RunResult {
        method,
        percentage,
        seed,
        status: RunStatus::Ok,
        error: None,
        per_class_count: 3,
        test_accuracy: acc,
        final_loss: 0.1,
        class_names: vec!["a".into(), "b".into()],
        per_class_accuracy: vec![acc, acc],
        confusion: vec![vec![8, 2], vec![2, 8]],
        config: RunConfig::default(),
    }
}

#[test]
fn report_layout_and_byte_stability() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    fs::create_dir_all(&runs).unwrap();
    for (m, p, s, a) in [
        (Method::Vanilla, 1, 0, 0.5),
        (Method::Vanilla, 20, 0, 0.9),
        (Method::Vanilla, 20, 1, 0.92),
        (Method::Vanilla, 100, 0, 0.97),
        (Method::KdCtcnet, 1, 0, 0.6),
        (Method::KdCtcnet, 20, 0, 0.94),
        (Method::KdCtcnet, 100, 0, 0.98),
    ] {
        let r = fake_result(m, p, s, a);
        fs::write(runs.join(format!("{}.toml", r.key())), r.to_record()).unwrap();
    }
    let mut failed = fake_result(Method::KdCtcnet, 20, 9, 0.0);
    failed.status = RunStatus::Failed;
    fs::write(runs.join(format!("{}.toml", failed.key())), failed.to_record()).unwrap();

    let files = report(dir.path()).unwrap();
    let table = fs::read_to_string(&files.table_txt).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["method", "1%", "20%", "100%"]);
    assert_eq!(files.confusion.len(), 7);
    let csv = fs::read_to_string(&files.confusion[0].0).unwrap();
    assert_eq!(csv, "true\\predicted,a,b\na,8,2\nb,2,8\n");

    let snapshot = |files: &texdistill::experiment::ReportFiles| -> Vec<Vec<u8>> {
        let mut paths = vec![files.table_txt.clone(), files.table_csv.clone()];
        paths.extend(files.confusion.iter().flat_map(|(c, p)| [c.clone(), p.clone()]));
        paths.iter().map(|p| fs::read(p).unwrap()).collect()
    };
    let first = snapshot(&files);
    assert_eq!(first, snapshot(&report(dir.path()).unwrap()));

    let all = load_results(dir.path()).unwrap();
    assert_eq!(all.len(), 8);
    let rows = aggregate(&all);
    assert_eq!(rows.len(), 6);
    assert_eq!(render_table(&rows), table);
}

#[test]
fn undecodable_image_names_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate_synthetic_texture_dataset(2, 4, 24, 0, dir.path()).unwrap();
    let (train_m, _) = stratified_split(&scan_dataset(&root).unwrap(), "x", 0).unwrap();
    let victim = &train_m.entries[0].path;
    fs::write(root.join(victim), b"not a png").unwrap();
    let src = CachedSource::new(DirectorySource::new(&root));
    match make_batch(&train_m.entries, &src, &tiny_config().pipeline_config(), true, &mut rng::seeded(0)) {
        Err(Error::Batch { entry, source }) => {
            assert_eq!(&entry, victim);
            assert!(matches!(*source, Error::Decode { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(Path::new(&root.join(victim)).exists());
}
