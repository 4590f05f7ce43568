//! Dataset discovery and the low-data split protocol.
//!
//! A dataset is a directory with one sub-folder per class. Classes are indexed
//! by lexicographic folder name. Every class is split 50/50 into a train half
//! (`floor(n/2)` images) and a test half (the remainder); low-data training
//! sets are then drawn class-balanced from the train half.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// The ten training percentages of the protocol.
pub const CANONICAL_PERCENTAGES: [u32; 10] = [1, 3, 5, 10, 20, 30, 40, 50, 75, 100];

/// Images per class for the canonical percentages on a 312-image train half.
/// Used verbatim: the 10% entry is 30, not floor(31.2) = 31.
pub const CANONICAL_COUNTS_312: [usize; 10] = [3, 9, 15, 30, 62, 93, 124, 156, 234, 312];

const CANONICAL_BASE: usize = 312;

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "tif", "tiff", "jpg", "jpeg", "bmp"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sample {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
    /// (height, width) of the first readable image.
    pub image_size_hint: Option<(u32, u32)>,
    /// Files that were skipped because they could not be read as images.
    pub warnings: Vec<String>,
}

impl DatasetIndex {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.class_id] += 1;
        }
        counts
    }

    fn samples_of(&self, class_id: usize) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| s.class_id == class_id)
            .cloned()
            .collect()
    }

    /// Checks the index invariants: sorted unique classes, valid ids, unique paths.
    pub fn validate(&self) -> Result<()> {
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(
                "class names must be unique and sorted".into(),
            ));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if s.class_id >= self.classes.len() {
                return Err(Error::Validation(format!(
                    "sample {} has class id {} but there are {} classes",
                    s.path,
                    s.class_id,
                    self.classes.len()
                )));
            }
            if !seen.insert(s.path.as_str()) {
                return Err(Error::Validation(format!("duplicate sample path {}", s.path)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            other => Err(Error::Validation(format!("unknown manifest role {other:?}"))),
        }
    }
}

/// One reproducible train or test set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub dataset_id: String,
    pub role: Role,
    pub percentage: u32,
    pub seed: u64,
    pub per_class_count: usize,
    pub classes: Vec<String>,
    /// Dataset root the entry paths are relative to, when known.
    pub root: Option<String>,
    /// Sorted by path.
    pub entries: Vec<Sample>,
}

impl SplitManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.class_id).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for e in &self.entries {
            if e.class_id < counts.len() {
                counts[e.class_id] += 1;
            }
        }
        counts
    }

    fn entries_of(&self, class_id: usize) -> Vec<Sample> {
        self.entries
            .iter()
            .filter(|e| e.class_id == class_id)
            .cloned()
            .collect()
    }

    /// Checks ids, uniqueness and class balance.
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Validation("manifest lists no classes".into()));
        }
        if !(1..=100).contains(&self.percentage) {
            return Err(Error::Validation(format!(
                "percentage {} outside 1..=100",
                self.percentage
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.class_id >= self.classes.len() {
                return Err(Error::Validation(format!(
                    "entry {} has unknown class id {} ({} classes)",
                    e.path,
                    e.class_id,
                    self.classes.len()
                )));
            }
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Validation(format!("duplicated entry {}", e.path)));
            }
        }
        for (class_id, count) in self.class_counts().into_iter().enumerate() {
            if count != self.per_class_count {
                return Err(Error::Validation(format!(
                    "class {} has {} entries, manifest declares {} per class",
                    self.classes[class_id], count, self.per_class_count
                )));
            }
        }
        Ok(())
    }

    /// The dataset root to resolve entries against: `root` if set, made
    /// relative to `manifest_dir` when it is not absolute.
    pub fn resolve_root(&self, manifest_dir: Option<&Path>) -> Option<PathBuf> {
        let root = PathBuf::from(self.root.as_ref()?);
        match manifest_dir {
            Some(dir) if root.is_relative() => Some(dir.join(root)),
            _ => Some(root),
        }
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn check_name(name: &str) -> bool {
    !name.contains(['\t', '\n', '\r'])
}

/// Discovers a class-per-folder dataset under `root`.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Path {
            path: root.to_path_buf(),
            msg: "dataset root does not exist or is not a directory".into(),
        });
    }
    let mut class_dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !entry.path().is_dir() {
            continue;
        }
        if !check_name(&name) {
            return Err(Error::Validation(format!(
                "class folder name {name:?} contains a tab or newline"
            )));
        }
        class_dirs.push(name);
    }
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Validation(format!(
            "no class folders under {}",
            root.display()
        )));
    }

    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut image_size_hint = None;
    for (class_id, class) in class_dirs.iter().enumerate() {
        let dir = root.join(class);
        let mut files: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| !n.starts_with('.'))
            .collect();
        files.sort();
        let mut found = 0usize;
        for file in files {
            let rel = format!("{class}/{file}");
            let full = dir.join(&file);
            if !check_name(&file) {
                warnings.push(format!("{rel}: file name contains a tab or newline"));
                continue;
            }
            if !is_image_file(&full) {
                warnings.push(format!("{rel}: not an image file extension"));
                continue;
            }
            match image::ImageReader::open(&full)
                .and_then(|r| r.with_guessed_format())
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()))
            {
                Ok((w, h)) => {
                    image_size_hint.get_or_insert((h, w));
                    samples.push(Sample { path: rel, class_id });
                    found += 1;
                }
                Err(msg) => warnings.push(format!("{rel}: unreadable image: {msg}")),
            }
        }
        if found == 0 {
            return Err(Error::Validation(format!(
                "class folder {class:?} contains no readable images"
            )));
        }
    }
    samples.sort();
    for w in &warnings {
        log::warn!("{w}");
    }
    let index = DatasetIndex {
        root: root.to_path_buf(),
        classes: class_dirs,
        samples,
        image_size_hint,
        warnings,
    };
    index.validate()?;
    Ok(index)
}

/// Draws exactly `n_per_class` samples from every class without replacement.
pub fn subsample_balanced(index: &DatasetIndex, n_per_class: usize, seed: u64) -> Result<DatasetIndex> {
    let mut samples = Vec::with_capacity(n_per_class * index.num_classes());
    for class_id in 0..index.num_classes() {
        let pool = index.samples_of(class_id);
        if pool.len() < n_per_class {
            return Err(Error::Validation(format!(
                "class {:?} has {} samples, {} requested",
                index.classes[class_id],
                pool.len(),
                n_per_class
            )));
        }
        let mut rng = rng::seeded_stream(seed, class_id as u64);
        samples.extend(rng::choose_without_replacement(&mut rng, &pool, n_per_class));
    }
    samples.sort();
    Ok(DatasetIndex {
        samples,
        warnings: Vec::new(),
        ..index.clone()
    })
}

/// Splits every class into a train half of `floor(n/2)` and a test half.
///
/// The index must be class-balanced so both manifests are balanced too; run
/// [`subsample_balanced`] first on uneven datasets.
pub fn stratified_split(
    index: &DatasetIndex,
    dataset_id: &str,
    seed: u64,
) -> Result<(SplitManifest, SplitManifest)> {
    if index.samples.is_empty() {
        return Err(Error::Validation("cannot split an empty index".into()));
    }
    let counts = index.class_counts();
    let n = counts[0];
    if let Some((c, &m)) = counts.iter().enumerate().find(|(_, &m)| m != n) {
        return Err(Error::Validation(format!(
            "index is not class-balanced: class {:?} has {m} samples, class {:?} has {n}; subsample it first",
            index.classes[c], index.classes[0]
        )));
    }
    let n_train = n / 2;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class_id in 0..index.num_classes() {
        let mut pool = index.samples_of(class_id);
        let mut rng = rng::seeded_stream(seed, class_id as u64);
        rng::shuffle(&mut rng, &mut pool);
        test.extend(pool.split_off(n_train));
        train.extend(pool);
    }
    train.sort();
    test.sort();
    let base = SplitManifest {
        dataset_id: dataset_id.to_string(),
        role: Role::Train,
        percentage: 100,
        seed,
        per_class_count: n_train,
        classes: index.classes.clone(),
        root: Some(index.root.to_string_lossy().into_owned()),
        entries: train,
    };
    let test = SplitManifest {
        role: Role::Test,
        per_class_count: n - n_train,
        entries: test,
        ..base.clone()
    };
    Ok((base, test))
}

/// Images per class to draw for `percentage` of a train half holding
/// `base` images per class.
pub fn per_class_count(base: usize, percentage: u32) -> Result<usize> {
    if !(1..=100).contains(&percentage) {
        return Err(Error::Validation(format!(
            "percentage {percentage} outside 1..=100"
        )));
    }
    if base == CANONICAL_BASE {
        if let Some(i) = CANONICAL_PERCENTAGES.iter().position(|&p| p == percentage) {
            return Ok(CANONICAL_COUNTS_312[i]);
        }
    }
    Ok((base * percentage as usize / 100).max(1))
}

/// Draws a class-balanced low-data training set from a full train half.
pub fn sample_low_data(train: &SplitManifest, percentage: u32, seed: u64) -> Result<SplitManifest> {
    if train.role != Role::Train || train.percentage != 100 {
        return Err(Error::Validation(format!(
            "low-data sampling needs a full (100%) train manifest, got {} at {}%",
            train.role, train.percentage
        )));
    }
    let count = per_class_count(train.per_class_count, percentage)?;
    let mut entries = Vec::with_capacity(count * train.num_classes());
    for class_id in 0..train.num_classes() {
        let pool = train.entries_of(class_id);
        if pool.len() < count {
            return Err(Error::Validation(format!(
                "class {:?} has {} train images, {count} requested for {percentage}%",
                train.classes[class_id],
                pool.len()
            )));
        }
        let mut rng = rng::seeded_stream(seed, class_id as u64);
        entries.extend(rng::choose_without_replacement(&mut rng, &pool, count));
    }
    entries.sort();
    Ok(SplitManifest {
        percentage,
        seed,
        per_class_count: count,
        entries,
        ..train.clone()
    })
}

/// Serializes a manifest to its line-oriented text form.
pub fn render_manifest(m: &SplitManifest) -> String {
    let mut out = String::new();
    out.push_str("# texdistill split manifest\n");
    out.push_str(&format!("#format_version={MANIFEST_FORMAT_VERSION}\n"));
    out.push_str(&format!("#dataset_id={}\n", m.dataset_id));
    out.push_str(&format!("#role={}\n", m.role));
    out.push_str(&format!("#percentage={}\n", m.percentage));
    out.push_str(&format!("#seed={}\n", m.seed));
    out.push_str(&format!("#per_class_count={}\n", m.per_class_count));
    out.push_str(&format!("#rng={}\n", rng::RNG_ALGORITHM));
    if let Some(root) = &m.root {
        out.push_str(&format!("#root={root}\n"));
    }
    out.push_str(&format!("#classes={}\n", m.classes.join("\t")));
    for e in &m.entries {
        out.push_str(&format!("{}\t{}\n", e.path, e.class_id));
    }
    out
}

pub fn write_manifest(m: &SplitManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if m.dataset_id.contains(['\n', '\r']) {
        return Err(Error::Validation("dataset_id contains a newline".into()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, render_manifest(m)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<SplitManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.to_string_lossy())
}

/// Parses the text form; `origin` names the source in error messages.
pub fn parse_manifest(text: &str, origin: &str) -> Result<SplitManifest> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut header: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.starts_with("# ") || line.is_empty() {
            continue;
        }
        if let Some(kv) = line.strip_prefix('#') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(lineno, format!("header line without '=': {line:?}")))?;
            if header.insert(k, (lineno, v)).is_some() {
                return Err(perr(lineno, format!("header key {k:?} repeated")));
            }
            continue;
        }
        let (p, c) = line
            .rsplit_once('\t')
            .ok_or_else(|| perr(lineno, "expected `relative_path<TAB>class_id`".into()))?;
        let class_id = c
            .parse::<usize>()
            .map_err(|e| perr(lineno, format!("class_id {c:?}: {e}")))?;
        if p.is_empty() {
            return Err(perr(lineno, "empty relative_path".into()));
        }
        entries.push(Sample {
            path: p.to_string(),
            class_id,
        });
    }
    let get = |k: &str| -> Result<(usize, &str)> {
        header
            .get(k)
            .copied()
            .ok_or_else(|| perr(0, format!("missing header field {k:?}")))
    };
    fn num<T: FromStr>(
        perr: &dyn Fn(usize, String) -> Error,
        (line, v): (usize, &str),
        field: &str,
    ) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        v.parse::<T>()
            .map_err(|e| perr(line, format!("field {field}: {v:?}: {e}")))
    }
    let version: u32 = num(&perr, get("format_version")?, "format_version")?;
    if version != MANIFEST_FORMAT_VERSION {
        let (line, _) = get("format_version")?;
        return Err(perr(
            line,
            format!("unsupported format_version {version} (expected {MANIFEST_FORMAT_VERSION})"),
        ));
    }
    let (role_line, role) = get("role")?;
    let role = role
        .parse::<Role>()
        .map_err(|e| perr(role_line, e.to_string()))?;
    let percentage = num(&perr, get("percentage")?, "percentage")?;
    let seed = num(&perr, get("seed")?, "seed")?;
    let per_class_count = num(&perr, get("per_class_count")?, "per_class_count")?;
    let classes: Vec<String> = get("classes")?.1.split('\t').map(str::to_string).collect();
    let m = SplitManifest {
        dataset_id: get("dataset_id")?.1.to_string(),
        role,
        percentage,
        seed,
        per_class_count,
        classes,
        root: header.get("root").map(|(_, v)| v.to_string()),
        entries,
    };
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_index(classes: usize, per_class: usize) -> DatasetIndex {
        let names: Vec<String> = (0..classes).map(|c| format!("class{c:02}")).collect();
        let mut samples = Vec::new();
        for (c, name) in names.iter().enumerate() {
            for i in 0..per_class {
                samples.push(Sample {
                    path: format!("{name}/img{i:04}.png"),
                    class_id: c,
                });
            }
        }
        samples.sort();
        DatasetIndex {
            root: PathBuf::from("/data/synthetic"),
            classes: names,
            samples,
            image_size_hint: Some((150, 150)),
            warnings: vec![],
        }
    }

    #[test]
    fn split_625_gives_312_and_313() {
        let index = synthetic_index(8, 625);
        let (train, test) = stratified_split(&index, "k16", 0).unwrap();
        assert_eq!(train.per_class_count, 312);
        assert_eq!(test.per_class_count, 313);
        assert!(train.class_counts().iter().all(|&c| c == 312));
        assert!(test.class_counts().iter().all(|&c| c == 313));
        let train_paths: HashSet<_> = train.entries.iter().map(|e| &e.path).collect();
        assert!(test.entries.iter().all(|e| !train_paths.contains(&e.path)));
        let mut all: Vec<_> = train.entries.iter().chain(&test.entries).cloned().collect();
        all.sort();
        assert_eq!(all, index.samples);
    }

    #[test]
    fn split_two_per_class() {
        let index = synthetic_index(3, 2);
        let (train, test) = stratified_split(&index, "tiny", 5).unwrap();
        assert_eq!(train.per_class_count, 1);
        assert_eq!(test.per_class_count, 1);
    }

    #[test]
    fn split_rejects_unbalanced() {
        let mut index = synthetic_index(2, 4);
        index.samples.pop();
        assert!(matches!(
            stratified_split(&index, "x", 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn table_lookup_for_canonical_percentages() {
        let counts: Vec<usize> = CANONICAL_PERCENTAGES
            .iter()
            .map(|&p| per_class_count(312, p).unwrap())
            .collect();
        assert_eq!(counts, vec![3, 9, 15, 30, 62, 93, 124, 156, 234, 312]);
        // floor rule elsewhere
        assert_eq!(per_class_count(312, 2).unwrap(), 6);
        assert_eq!(per_class_count(15, 50).unwrap(), 7);
        assert_eq!(per_class_count(15, 1).unwrap(), 1);
        assert!(per_class_count(312, 0).is_err());
        assert!(per_class_count(312, 101).is_err());
    }

    #[test]
    fn low_data_sampling_counts_and_subset() {
        let index = synthetic_index(8, 625);
        let (train, _) = stratified_split(&index, "k16", 0).unwrap();
        let train_set: HashSet<_> = train.entries.iter().cloned().collect();
        for (&pct, &want) in CANONICAL_PERCENTAGES.iter().zip(&CANONICAL_COUNTS_312) {
            let m = sample_low_data(&train, pct, 1).unwrap();
            assert_eq!(m.per_class_count, want);
            assert!(m.class_counts().iter().all(|&c| c == want));
            assert!(m.entries.iter().all(|e| train_set.contains(e)));
            m.validate().unwrap();
        }
        let full = sample_low_data(&train, 100, 9).unwrap();
        assert_eq!(full.entries, train.entries);
    }

    #[test]
    fn low_data_rejects_non_full_input() {
        let index = synthetic_index(2, 40);
        let (train, test) = stratified_split(&index, "x", 0).unwrap();
        let ten = sample_low_data(&train, 10, 0).unwrap();
        assert!(sample_low_data(&ten, 5, 0).is_err());
        assert!(sample_low_data(&test, 5, 0).is_err());
        assert!(sample_low_data(&train, 0, 0).is_err());
    }

    #[test]
    fn three_seeds_differ() {
        let index = synthetic_index(8, 625);
        let (train, _) = stratified_split(&index, "k16", 0).unwrap();
        for pct in [1, 3, 5, 10, 20, 50] {
            let a = sample_low_data(&train, pct, 0).unwrap();
            let b = sample_low_data(&train, pct, 1).unwrap();
            let c = sample_low_data(&train, pct, 2).unwrap();
            assert!(!(a.entries == b.entries && b.entries == c.entries));
        }
    }

    #[test]
    fn subsample_exact_and_deterministic() {
        let mut index = synthetic_index(9, 700);
        // make one class larger
        index.samples.push(Sample {
            path: "class00/zzz.png".into(),
            class_id: 0,
        });
        index.samples.sort();
        let a = subsample_balanced(&index, 625, 3).unwrap();
        let b = subsample_balanced(&index, 625, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 9 * 625);
        assert!(a.class_counts().iter().all(|&c| c == 625));
        a.validate().unwrap();

        let small = synthetic_index(2, 5);
        let all = subsample_balanced(&small, 5, 0).unwrap();
        assert_eq!(all.samples, small.samples);
        let err = subsample_balanced(&small, 6, 0).unwrap_err().to_string();
        assert!(err.contains("class00") && err.contains('5') && err.contains('6'), "{err}");
    }

    #[test]
    fn manifest_round_trip_text() {
        let index = synthetic_index(3, 10);
        let (train, _) = stratified_split(&index, "rt", 4).unwrap();
        let m = sample_low_data(&train, 40, 2).unwrap();
        let text = render_manifest(&m);
        let back = parse_manifest(&text, "mem").unwrap();
        assert_eq!(back, m);
        assert_eq!(render_manifest(&back), text);
    }

    #[test]
    fn manifest_rejects_unknown_class_and_duplicates() {
        let index = synthetic_index(2, 4);
        let (train, _) = stratified_split(&index, "bad", 0).unwrap();
        let text = render_manifest(&train);

        let unknown = text.replacen("\t1\n", "\t7\n", 1);
        assert!(matches!(parse_manifest(&unknown, "m"), Err(Error::Validation(_))));

        let first_entry = text.lines().find(|l| !l.starts_with('#')).unwrap();
        let dup = format!("{text}{first_entry}\n");
        let err = parse_manifest(&dup, "m").unwrap_err();
        assert!(matches!(err, Error::Validation(ref s) if s.contains("duplicated")), "{err}");
    }

    #[test]
    fn manifest_parse_errors_carry_line_numbers() {
        let text = "#format_version=1\n#role=train\n#percentage=abc\n";
        match parse_manifest(text, "f.manifest") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("percentage"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "#format_version=1\nno-tab-here\n";
        assert!(matches!(
            parse_manifest(text, "f"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
