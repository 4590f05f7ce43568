//! Accuracy tables and confusion matrices from a results directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::{aggregate, write_atomic, AggregateRow, RunResult, RunStatus, RUNS_DIR};
use crate::error::{Error, Result};
use crate::trainer::Method;

/// Pixels per confusion cell in heatmaps.
pub const CELL_PX: u32 = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table_txt: PathBuf,
    pub table_csv: PathBuf,
    /// Per run: raw count CSV and row-normalized heatmap PNG.
    pub confusion: Vec<(PathBuf, PathBuf)>,
}

/// Every run record under `results_dir/runs`, sorted by file name.
pub fn load_results(results_dir: &Path) -> Result<Vec<RunResult>> {
    let runs = results_dir.join(RUNS_DIR);
    let mut paths: Vec<PathBuf> = match fs::read_dir(&runs) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect(),
        Err(_) => Vec::new(),
    };
    paths.sort();
    paths.iter().map(RunResult::read).collect()
}

/// `mean ± std` in percent, methods as rows, percentages as columns.
pub fn render_table(rows: &[AggregateRow]) -> String {
    let mut pcts: Vec<u32> = rows.iter().map(|r| r.percentage).collect();
    pcts.sort_unstable();
    pcts.dedup();
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort_unstable();
    methods.dedup();
    let cell = |m: Method, p: u32| -> String {
        match rows.iter().find(|r| r.method == m && r.percentage == p) {
            Some(r) if r.n_seeds > 1 => format!("{:.2} ± {:.2}", 100.0 * r.mean_accuracy, 100.0 * r.std_accuracy),
            Some(r) => format!("{:.2}", 100.0 * r.mean_accuracy),
            None => "-".into(),
        }
    };
    let name_w = methods.iter().map(|m| m.as_str().len()).max().unwrap_or(6).max(6);
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("method".to_string())
        .chain(pcts.iter().map(|p| format!("{p}%")))
        .collect()];
    for &m in &methods {
        grid.push(std::iter::once(m.to_string()).chain(pcts.iter().map(|&p| cell(m, p))).collect());
    }
    let col_w: Vec<usize> = (0..=pcts.len())
        .map(|j| grid.iter().map(|row| row[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &grid {
        let mut line = format!("{:<name_w$}", row[0]);
        for (j, v) in row.iter().enumerate().skip(1) {
            let pad = col_w[j] - v.chars().count();
            line.push_str("  ");
            line.push_str(&" ".repeat(pad));
            line.push_str(v);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub fn render_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("method,percentage,mean_accuracy,std_accuracy,n_seeds\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{}",
            r.method, r.percentage, r.mean_accuracy, r.std_accuracy, r.n_seeds
        );
    }
    out
}

/// Raw counts with class names as header and first column.
pub fn confusion_csv(r: &RunResult) -> String {
    let mut out = format!("true\\predicted,{}\n", r.class_names.join(","));
    for (name, row) in r.class_names.iter().zip(&r.confusion) {
        let counts: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "{name},{}", counts.join(","));
    }
    out
}

/// Row-normalized heatmap: white for 0, dark blue for 1.
pub fn confusion_heatmap(confusion: &[Vec<u64>]) -> RgbImage {
    let n = confusion.len() as u32;
    let mut img = RgbImage::new(n * CELL_PX, n * CELL_PX);
    for (i, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (j, &count) in row.iter().enumerate() {
            let f = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let shade = |lo: f64, hi: f64| (hi + (lo - hi) * f).round() as u8;
            let color = Rgb([shade(8.0, 255.0), shade(48.0, 255.0), shade(107.0, 255.0)]);
            for y in 0..CELL_PX {
                for x in 0..CELL_PX {
                    img.put_pixel(j as u32 * CELL_PX + x, i as u32 * CELL_PX + y, color);
                }
            }
        }
    }
    img
}

/// Writes `report/table.txt`, `report/table.csv` and per-run
/// `report/confusion/<run>.{csv,png}` under `results_dir`.
pub fn report(results_dir: impl AsRef<Path>) -> Result<ReportFiles> {
    let results_dir = results_dir.as_ref();
    let results: Vec<RunResult> = load_results(results_dir)?
        .into_iter()
        .filter(|r| r.status == RunStatus::Ok)
        .collect();
    if results.is_empty() {
        return Err(Error::NothingToReport(results_dir.to_path_buf()));
    }
    let rows = aggregate(&results);
    let out = results_dir.join("report");
    let table_txt = out.join("table.txt");
    let table_csv = out.join("table.csv");
    write_atomic(&table_txt, render_table(&rows).as_bytes())?;
    write_atomic(&table_csv, render_csv(&rows).as_bytes())?;
    let conf_dir = out.join("confusion");
    fs::create_dir_all(&conf_dir).map_err(|e| Error::io(&conf_dir, e))?;
    let mut confusion = Vec::new();
    for r in &results {
        let csv = conf_dir.join(format!("{}.csv", r.key()));
        let png = conf_dir.join(format!("{}.png", r.key()));
        write_atomic(&csv, confusion_csv(r).as_bytes())?;
        confusion_heatmap(&r.confusion).save(&png).map_err(|e| Error::Path {
            path: png.clone(),
            msg: e.to_string(),
        })?;
        confusion.push((csv, png));
    }
    Ok(ReportFiles {
        table_txt,
        table_csv,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, percentage: u32, mean: f64, std: f64, n: usize) -> AggregateRow {
        AggregateRow {
            percentage,
            method,
            mean_accuracy: mean,
            std_accuracy: std,
            n_seeds: n,
        }
    }

    #[test]
    fn table_shape() {
        let rows = vec![
            row(Method::Vanilla, 1, 0.5, 0.01, 3),
            row(Method::Vanilla, 20, 0.9182, 0.0, 3),
            row(Method::Vanilla, 100, 0.97, 0.0, 1),
            row(Method::KdCtcnet, 1, 0.6, 0.02, 3),
            row(Method::KdCtcnet, 20, 0.9413, 0.0054, 3),
            row(Method::KdCtcnet, 100, 0.98, 0.0, 1),
        ];
        let t = render_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("method"));
        assert!(lines[1].starts_with("vanilla") && lines[1].contains("91.82 ± 0.00"));
        assert!(lines[2].starts_with("kd_ctcnet") && lines[2].contains("94.13 ± 0.54"));
        assert!(lines[2].ends_with("98.00"));
        assert_eq!(render_csv(&rows).lines().count(), 7);
    }

    #[test]
    fn heatmap_is_row_normalized() {
        let img = confusion_heatmap(&[vec![5, 0], vec![1, 1]]);
        assert_eq!(img.dimensions(), (2 * CELL_PX, 2 * CELL_PX));
        assert_eq!(*img.get_pixel(0, 0), Rgb([8, 48, 107]));
        assert_eq!(*img.get_pixel(CELL_PX, 0), Rgb([255, 255, 255]));
        assert_eq!(img.get_pixel(0, CELL_PX), img.get_pixel(CELL_PX, CELL_PX));
    }

    #[test]
    fn empty_dir_has_nothing_to_report() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path()), Err(Error::NothingToReport(_))));
    }
}
