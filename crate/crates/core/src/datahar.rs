//! UCI-HAR raw inertial signal ingestion.
//!
//! Expects the published directory layout:
//!
//! ```text
//! <root>/train/Inertial Signals/{body_acc,body_gyro,total_acc}_{x,y,z}_train.txt
//! <root>/train/y_train.txt
//! <root>/train/subject_train.txt
//! <root>/test/...   (same, with _test)
//! ```
//!
//! Every signal row holds 128 whitespace-separated decimals. A parsed copy is
//! cached as `.dwn-cache.bin` inside the split directory and reused while the
//! source files keep the same size and mtime.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::UNIX_EPOCH;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::window::Window;

pub const NUM_CHANNELS: usize = 9;
pub const TIMESTEPS: usize = 128;
pub const NUM_CLASSES: usize = 6;

/// Signal file stems in channel order.
pub const CHANNELS: [&str; NUM_CHANNELS] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];

pub const ACTIVITY_NAMES: [&str; NUM_CLASSES] = [
    "WALKING",
    "WALKING_UPSTAIRS",
    "WALKING_DOWNSTAIRS",
    "SITTING",
    "STANDING",
    "LAYING",
];

const CACHE_NAME: &str = ".dwn-cache.bin";
const CACHE_MAGIC: &[u8; 4] = b"DWNH";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: expected {expected} values, found {got}")]
    RowLength {
        file: PathBuf,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{file}:{line}: cannot parse {token:?}")]
    Parse {
        file: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{file}:{line}: label {value} outside 1..={max}")]
    LabelOutOfRange {
        file: PathBuf,
        line: usize,
        value: i64,
        max: usize,
    },
    #[error("{file} has {got} rows, expected {expected}")]
    RowCountMismatch {
        file: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

/// One labeled activity window.
#[derive(Debug, Clone, PartialEq)]
pub struct HarSample {
    pub window: Window,
    /// Activity label, 1-based.
    pub label: u8,
    pub subject: u32,
}

impl HarSample {
    /// Zero-based class index.
    pub fn class(&self) -> usize {
        self.label as usize - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarDataset {
    pub samples: Vec<HarSample>,
    pub split: Split,
}

impl HarDataset {
    pub fn new(samples: Vec<HarSample>, split: Split) -> Self {
        Self { samples, split }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel_order(&self) -> &'static [&'static str] {
        &CHANNELS
    }

    pub fn subjects(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.subject).collect()
    }

    /// All values of each channel, pooled over samples and timesteps.
    pub fn pooled_channels(&self) -> Vec<Vec<f32>> {
        let channels = self.samples.first().map_or(0, |s| s.window.channels());
        let mut pooled = vec![Vec::new(); channels];
        for s in &self.samples {
            for (c, dst) in pooled.iter_mut().enumerate() {
                dst.extend_from_slice(s.window.channel(c));
            }
        }
        pooled
    }

    /// Seeded random split into `(1 - fraction, fraction)` parts.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> (HarDataset, HarDataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_hold = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        let (hold, keep) = idx.split_at(n_hold);
        let mut keep = keep.to_vec();
        let mut hold = hold.to_vec();
        keep.sort_unstable();
        hold.sort_unstable();
        let pick = |ix: &[usize]| ix.iter().map(|&i| self.samples[i].clone()).collect();
        (
            HarDataset::new(pick(&keep), self.split),
            HarDataset::new(pick(&hold), self.split),
        )
    }
}

/// Sample count per label.
pub fn class_distribution(ds: &HarDataset) -> Result<BTreeMap<u8, usize>, DataError> {
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    let mut counts = BTreeMap::new();
    for s in &ds.samples {
        *counts.entry(s.label).or_insert(0) += 1;
    }
    Ok(counts)
}

fn split_files(root: &Path, split: Split) -> (Vec<PathBuf>, PathBuf, PathBuf) {
    let dir = root.join(split.as_str());
    let signals = CHANNELS
        .iter()
        .map(|c| dir.join("Inertial Signals").join(format!("{c}_{split}.txt")))
        .collect();
    (
        signals,
        dir.join(format!("y_{split}.txt")),
        dir.join(format!("subject_{split}.txt")),
    )
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            DataError::MissingFile(path.to_path_buf())
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    Ok(lines)
}

fn read_signal(path: &Path) -> Result<Vec<Vec<f32>>, DataError> {
    let mut rows = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let mut row = Vec::with_capacity(TIMESTEPS);
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| DataError::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                token: tok.to_string(),
            })?;
            row.push(v as f32);
        }
        if row.len() != TIMESTEPS {
            return Err(DataError::RowLength {
                file: path.to_path_buf(),
                line: i + 1,
                expected: TIMESTEPS,
                got: row.len(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_ints(path: &Path) -> Result<Vec<i64>, DataError> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let tok = l.trim();
            tok.parse::<i64>().map_err(|_| DataError::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                token: tok.to_string(),
            })
        })
        .collect()
}

/// Parses a split directly from the text files, ignoring any cache.
pub fn load_split_uncached(root: &Path, split: Split) -> Result<HarDataset, DataError> {
    let (signal_paths, label_path, subject_path) = split_files(root, split);
    let labels = read_ints(&label_path)?;
    let subjects = read_ints(&subject_path)?;
    let n = labels.len();
    if subjects.len() != n {
        return Err(DataError::RowCountMismatch {
            file: subject_path,
            expected: n,
            got: subjects.len(),
        });
    }
    for (i, &l) in labels.iter().enumerate() {
        if !(1..=NUM_CLASSES as i64).contains(&l) {
            return Err(DataError::LabelOutOfRange {
                file: label_path.clone(),
                line: i + 1,
                value: l,
                max: NUM_CLASSES,
            });
        }
    }
    let mut signals = Vec::with_capacity(NUM_CHANNELS);
    for p in &signal_paths {
        let rows = read_signal(p)?;
        if rows.len() != n {
            return Err(DataError::RowCountMismatch {
                file: p.clone(),
                expected: n,
                got: rows.len(),
            });
        }
        signals.push(rows);
    }
    let samples = (0..n)
        .map(|i| {
            let mut data = Vec::with_capacity(NUM_CHANNELS * TIMESTEPS);
            for ch in &signals {
                data.extend_from_slice(&ch[i]);
            }
            HarSample {
                window: Window::from_flat(NUM_CHANNELS, TIMESTEPS, data),
                label: labels[i] as u8,
                subject: subjects[i] as u32,
            }
        })
        .collect();
    Ok(HarDataset::new(samples, split))
}

/// Loads a split, going through the binary cache when it is fresh.
pub fn load_split(root: &Path, split: Split) -> Result<HarDataset, DataError> {
    let (signal_paths, label_path, subject_path) = split_files(root, split);
    let mut sources = signal_paths;
    sources.push(label_path);
    sources.push(subject_path);
    let fingerprint = match fingerprint(&sources) {
        Ok(f) => f,
        // Let the uncached path report which file is missing.
        Err(_) => return load_split_uncached(root, split),
    };
    let cache_path = root.join(split.as_str()).join(CACHE_NAME);
    if let Some(ds) = read_cache(&cache_path, &fingerprint, split) {
        return Ok(ds);
    }
    let ds = load_split_uncached(root, split)?;
    // A read-only dataset directory just means no cache.
    let _ = write_cache(&cache_path, &fingerprint, &ds);
    Ok(ds)
}

fn fingerprint(paths: &[PathBuf]) -> io::Result<Vec<u8>> {
    let mut out = Vec::new();
    for p in paths {
        let meta = fs::metadata(p)?;
        let mtime = meta.modified()?.duration_since(UNIX_EPOCH).unwrap_or_default();
        out.extend_from_slice(&meta.len().to_le_bytes());
        out.extend_from_slice(&mtime.as_secs().to_le_bytes());
        out.extend_from_slice(&mtime.subsec_nanos().to_le_bytes());
    }
    Ok(out)
}

fn read_cache(path: &Path, fingerprint: &[u8], split: Split) -> Option<HarDataset> {
    let mut buf = Vec::new();
    fs::File::open(path).ok()?.read_to_end(&mut buf).ok()?;
    let header = 4 + 4 + fingerprint.len() + 4;
    if buf.len() < header || &buf[..4] != CACHE_MAGIC {
        return None;
    }
    if u32::from_le_bytes(buf[4..8].try_into().ok()?) != CACHE_VERSION {
        return None;
    }
    if &buf[8..8 + fingerprint.len()] != fingerprint {
        return None;
    }
    let mut off = 8 + fingerprint.len();
    let n = u32::from_le_bytes(buf[off..off + 4].try_into().ok()?) as usize;
    off += 4;
    let rec = 1 + 4 + 4 * NUM_CHANNELS * TIMESTEPS;
    if buf.len() != off + n * rec {
        return None;
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let label = buf[off];
        let subject = u32::from_le_bytes(buf[off + 1..off + 5].try_into().ok()?);
        off += 5;
        let data = buf[off..off + 4 * NUM_CHANNELS * TIMESTEPS]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        off += 4 * NUM_CHANNELS * TIMESTEPS;
        samples.push(HarSample {
            window: Window::from_flat(NUM_CHANNELS, TIMESTEPS, data),
            label,
            subject,
        });
    }
    Some(HarDataset::new(samples, split))
}

fn write_cache(path: &Path, fingerprint: &[u8], ds: &HarDataset) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(fingerprint)?;
        w.write_all(&(ds.len() as u32).to_le_bytes())?;
        for s in &ds.samples {
            w.write_all(&[s.label])?;
            w.write_all(&s.subject.to_le_bytes())?;
            for v in s.window.as_flat() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(tmp, path)
}

/// Writes samples in the published text layout (used for fixtures and
/// exported subsets). Windows must be 9 × 128.
pub fn write_split(root: &Path, split: Split, samples: &[HarSample]) -> Result<(), DataError> {
    let (signal_paths, label_path, subject_path) = split_files(root, split);
    let sig_dir = signal_paths[0].parent().expect("signal dir").to_path_buf();
    fs::create_dir_all(&sig_dir).map_err(io_err(&sig_dir))?;
    let write = |path: &Path, body: String| fs::write(path, body).map_err(io_err(path));
    for (c, p) in signal_paths.iter().enumerate() {
        let mut body = String::new();
        for s in samples {
            let row: Vec<String> = s.window.channel(c).iter().map(|v| format!("{v:e}")).collect();
            body.push_str(&row.join(" "));
            body.push('\n');
        }
        write(p, body)?;
    }
    write(
        &label_path,
        samples.iter().map(|s| format!("{}\n", s.label)).collect(),
    )?;
    write(
        &subject_path,
        samples.iter().map(|s| format!("{}\n", s.subject)).collect(),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn class_distribution_counts_labels() {
        let mut samples = synth::har_like(1, 3, 0).samples;
        samples[0].label = 1;
        samples[1].label = 1;
        samples[2].label = 2;
        let ds = HarDataset::new(samples[..3].to_vec(), Split::Train);
        let counts = class_distribution(&ds).unwrap();
        assert_eq!(counts, BTreeMap::from([(1, 2), (2, 1)]));
    }

    #[test]
    fn class_distribution_rejects_empty() {
        let ds = HarDataset::new(vec![], Split::Test);
        assert!(matches!(class_distribution(&ds), Err(DataError::Empty)));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth::har_like(2, 6, 5);
        write_split(dir.path(), Split::Train, &ds.samples).unwrap();
        let loaded = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(loaded.samples, ds.samples);
        // second load comes from the cache
        assert!(dir.path().join("train").join(CACHE_NAME).exists());
        let again = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(again.samples, ds.samples);
    }

    #[test]
    fn stale_cache_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth::har_like(1, 6, 1);
        write_split(dir.path(), Split::Test, &ds.samples).unwrap();
        load_split(dir.path(), Split::Test).unwrap();
        let fewer = &ds.samples[..4];
        write_split(dir.path(), Split::Test, fewer).unwrap();
        assert_eq!(load_split(dir.path(), Split::Test).unwrap().len(), 4);
    }

    #[test]
    fn short_row_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth::har_like(1, 6, 2);
        write_split(dir.path(), Split::Train, &ds.samples).unwrap();
        let p = dir.path().join("train/Inertial Signals/body_gyro_y_train.txt");
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut toks: Vec<&str> = lines[2].split_whitespace().collect();
        toks.pop();
        lines[2] = toks.join(" ");
        fs::write(&p, lines.join("\n")).unwrap();
        match load_split(dir.path(), Split::Train) {
            Err(DataError::RowLength { file, line, got, .. }) => {
                assert!(file.ends_with("body_gyro_y_train.txt"));
                assert_eq!(line, 3);
                assert_eq!(got, 127);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_label_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth::har_like(1, 6, 3);
        write_split(dir.path(), Split::Train, &ds.samples).unwrap();
        fs::write(dir.path().join("train/y_train.txt"), "1\n2\n7\n4\n5\n6\n").unwrap();
        assert!(matches!(
            load_split_uncached(dir.path(), Split::Train),
            Err(DataError::LabelOutOfRange { line: 3, value: 7, .. })
        ));
        fs::remove_file(dir.path().join("train/subject_train.txt")).unwrap();
        assert!(matches!(
            load_split(dir.path(), Split::Train),
            Err(DataError::MissingFile(_))
        ));
    }

    #[test]
    fn row_count_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth::har_like(1, 6, 4);
        write_split(dir.path(), Split::Train, &ds.samples).unwrap();
        let p = dir.path().join("train/Inertial Signals/total_acc_z_train.txt");
        let text = fs::read_to_string(&p).unwrap();
        let kept: Vec<&str> = text.lines().take(5).collect();
        fs::write(&p, kept.join("\n")).unwrap();
        assert!(matches!(
            load_split_uncached(dir.path(), Split::Train),
            Err(DataError::RowCountMismatch { expected: 6, got: 5, .. })
        ));
    }

    #[test]
    fn holdout_partitions_samples() {
        let ds = synth::har_like(5, 6, 9);
        let (keep, hold) = ds.split_holdout(0.2, 1);
        assert_eq!(keep.len() + hold.len(), ds.len());
        assert_eq!(hold.len(), 6);
        let (keep2, _) = ds.split_holdout(0.2, 1);
        assert_eq!(keep, keep2);
    }
}
