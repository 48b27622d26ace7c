//! Dataset discovery and deterministic stratified splitting.
//!
//! The expected layout is one subdirectory per species, each holding WAV
//! clips. Class indices are assigned by sorted directory name, so they are
//! stable across machines.

mod cache;

pub use cache::{build_cache, load_cache, save_cache, BuildReport, CacheRecord, FeatureCache};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub class_index: usize,
    pub split: Split,
    pub duration_s: f64,
}

/// Clip inventory with stable class indexing and split assignment.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub ratio: f64,
}

/// Files that could not be ingested, with the reason.
#[derive(Debug, Clone, Default)]
pub struct SkipReport {
    pub skipped: Vec<(PathBuf, String)>,
}

impl DatasetManifest {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn split_counts(&self) -> (usize, usize) {
        let train = self.entries.iter().filter(|e| e.split == Split::Train).count();
        (train, self.entries.len() - train)
    }
}

/// Walk `root` (one subdirectory per species), reading every WAV. Unreadable
/// files land in the skip report instead of failing the scan. All entries
/// start in the train split; see [`split`].
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<(DatasetManifest, SkipReport)> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }

    let mut species_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    species_dirs.sort();

    let mut skip = SkipReport::default();
    let mut classes: Vec<(String, Vec<(PathBuf, f64)>)> = Vec::new();
    for dir in &species_dirs {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .map(|e| e.eq_ignore_ascii_case("wav"))
                        .unwrap_or(false)
            })
            .collect();
        files.sort();

        let mut clips = Vec::new();
        for f in files {
            match dsp::read_wav(&f) {
                Ok(clip) => clips.push((f, clip.duration_s())),
                Err(e) => skip.skipped.push((f, e.to_string())),
            }
        }
        if !clips.is_empty() {
            classes.push((label, clips));
        }
    }

    if classes.is_empty() {
        return Err(Error::Data(format!(
            "no readable WAV clips under {} (expected one subdirectory per species)",
            root.display()
        )));
    }

    // Directory order is already sorted, which fixes the class indices.
    let class_names: Vec<String> = classes.iter().map(|(n, _)| n.clone()).collect();
    let mut entries = Vec::new();
    for (idx, (label, clips)) in classes.into_iter().enumerate() {
        for (path, duration_s) in clips {
            entries.push(ManifestEntry {
                path,
                label: label.clone(),
                class_index: idx,
                split: Split::Train,
                duration_s,
            });
        }
    }

    Ok((
        DatasetManifest {
            entries,
            class_names,
            seed: 0,
            ratio: 1.0,
        },
        skip,
    ))
}

/// Stratified clip-level split: per class, `round(ratio * n)` clips go to
/// train, clamped to `[1, n-1]` so neither side is empty. All segments of a
/// clip inherit its split, which is what prevents near-duplicate windows from
/// leaking across splits.
pub fn split(manifest: &mut DatasetManifest, ratio: f64, seed: u64) -> Result<()> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must be in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in 0..manifest.class_count() {
        let mut idx: Vec<usize> = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.class_index == class)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class '{}' has {} clip(s); need at least 2 to split",
                manifest.class_names[class],
                idx.len()
            )));
        }
        // Fisher-Yates; one stream across classes keeps the whole split a
        // pure function of (entries, ratio, seed).
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let n = idx.len();
        let train_count = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        for (k, &entry_idx) in idx.iter().enumerate() {
            manifest.entries[entry_idx].split = if k < train_count {
                Split::Train
            } else {
                Split::Test
            };
        }
    }
    manifest.seed = seed;
    manifest.ratio = ratio;
    Ok(())
}

/// Text-table rendering: comment header with seed/ratio/classes, then one
/// tab-separated row per clip.
pub fn manifest_to_string(m: &DatasetManifest) -> String {
    let mut out = String::new();
    out.push_str("# MTBCA-MANIFEST v1\n");
    out.push_str(&format!("# seed {}\n", m.seed));
    out.push_str(&format!("# ratio {}\n", m.ratio));
    out.push_str(&format!("# classes {}\n", m.class_count()));
    for (i, name) in m.class_names.iter().enumerate() {
        out.push_str(&format!("# class {i} {name}\n"));
    }
    out.push_str("path\tlabel\tclass_index\tsplit\tduration_s\n");
    for e in &m.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\n",
            e.path.display(),
            e.label,
            e.class_index,
            e.split,
            e.duration_s
        ));
    }
    out
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, manifest_to_string(m))?;
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    if first != "# MTBCA-MANIFEST v1" {
        return Err(Error::Data(format!(
            "{} is not a manifest (bad first line '{first}')",
            path.display()
        )));
    }
    let mut seed = 0u64;
    let mut ratio = 1.0f64;
    let mut class_names: Vec<String> = Vec::new();
    let mut entries = Vec::new();
    let mut in_header = true;
    for line in lines {
        if in_header {
            if let Some(rest) = line.strip_prefix("# ") {
                let mut parts = rest.splitn(2, ' ');
                match (parts.next(), parts.next()) {
                    (Some("seed"), Some(v)) => {
                        seed = v.parse().map_err(|_| bad_field(path, "seed", v))?
                    }
                    (Some("ratio"), Some(v)) => {
                        ratio = v.parse().map_err(|_| bad_field(path, "ratio", v))?
                    }
                    (Some("classes"), Some(_)) => {}
                    (Some("class"), Some(v)) => {
                        let mut p = v.splitn(2, ' ');
                        let idx: usize = p
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| bad_field(path, "class", v))?;
                        let name = p.next().unwrap_or_default().to_string();
                        if idx != class_names.len() {
                            return Err(Error::Data(format!(
                                "manifest class indices out of order at '{v}'"
                            )));
                        }
                        class_names.push(name);
                    }
                    _ => {}
                }
                continue;
            }
            // column header row
            in_header = false;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::Data(format!("manifest row has {} columns: '{line}'", cols.len())));
        }
        let class_index: usize = cols[2]
            .parse()
            .map_err(|_| bad_field(path, "class_index", cols[2]))?;
        let split = match cols[3] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(bad_field(path, "split", other)),
        };
        let duration_s: f64 = cols[4]
            .parse()
            .map_err(|_| bad_field(path, "duration_s", cols[4]))?;
        entries.push(ManifestEntry {
            path: PathBuf::from(cols[0]),
            label: cols[1].to_string(),
            class_index,
            split,
            duration_s,
        });
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("manifest {} has no entries", path.display())));
    }
    for e in &entries {
        if e.class_index >= class_names.len() {
            return Err(Error::Data(format!(
                "manifest entry {} references class {} but only {} classes are declared",
                e.path.display(),
                e.class_index,
                class_names.len()
            )));
        }
    }
    Ok(DatasetManifest {
        entries,
        class_names,
        seed,
        ratio,
    })
}

fn bad_field(path: &Path, field: &str, value: &str) -> Error {
    Error::Data(format!(
        "manifest {}: cannot parse {field} from '{value}'",
        path.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::write_wav_pcm16;

    fn make_tree(classes: usize, clips: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for c in 0..classes {
            let sub = dir.path().join(format!("species_{c:02}"));
            fs::create_dir(&sub).unwrap();
            for k in 0..clips {
                let samples: Vec<f32> = (0..8000)
                    .map(|i| 0.3 * (i as f32 * (0.01 + c as f32 * 0.005)).sin())
                    .collect();
                write_wav_pcm16(sub.join(format!("clip_{k}.wav")), &samples, 16_000).unwrap();
            }
        }
        dir
    }

    #[test]
    fn scan_counts_classes_and_entries() {
        let dir = make_tree(2, 3);
        let (m, skip) = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.class_count(), 2);
        assert_eq!(m.entries.len(), 6);
        assert!(skip.skipped.is_empty());
        assert_eq!(m.class_names, vec!["species_00", "species_01"]);
    }

    #[test]
    fn class_names_sorted_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["whale", "dolphin", "seal"] {
            let sub = dir.path().join(name);
            fs::create_dir(&sub).unwrap();
            write_wav_pcm16(sub.join("a.wav"), &[0.1; 4000], 16_000).unwrap();
            write_wav_pcm16(sub.join("b.wav"), &[0.1; 4000], 16_000).unwrap();
        }
        let (m, _) = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.class_names, vec!["dolphin", "seal", "whale"]);
    }

    #[test]
    fn unreadable_file_reported_not_fatal() {
        let dir = make_tree(1, 2);
        fs::write(dir.path().join("species_00/broken.wav"), b"garbage").unwrap();
        let (m, skip) = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(skip.skipped.len(), 1);
    }

    #[test]
    fn empty_root_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_dataset(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn split_ratio_80_20() {
        let dir = make_tree(2, 10);
        let (mut m, _) = scan_dataset(dir.path()).unwrap();
        split(&mut m, 0.8, 42).unwrap();
        for class in 0..2 {
            let train = m
                .entries
                .iter()
                .filter(|e| e.class_index == class && e.split == Split::Train)
                .count();
            assert_eq!(train, 8, "class {class}");
        }
    }

    #[test]
    fn split_clamps_to_keep_test_nonempty() {
        // 5 clips at 0.8: round(4.0) = 4 train / 1 test
        let dir = make_tree(1, 5);
        let (mut m, _) = scan_dataset(dir.path()).unwrap();
        split(&mut m, 0.8, 1).unwrap();
        let (train, test) = m.split_counts();
        assert_eq!((train, test), (4, 1));

        // 2 clips at 0.99: clamped to 1/1
        let dir2 = make_tree(1, 2);
        let (mut m2, _) = scan_dataset(dir2.path()).unwrap();
        split(&mut m2, 0.99, 1).unwrap();
        assert_eq!(m2.split_counts(), (1, 1));
    }

    #[test]
    fn split_single_clip_class_errors_with_name() {
        let dir = make_tree(1, 1);
        let (mut m, _) = scan_dataset(dir.path()).unwrap();
        match split(&mut m, 0.8, 1) {
            Err(Error::Data(msg)) => assert!(msg.contains("species_00"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn split_is_seed_deterministic() {
        let dir = make_tree(3, 7);
        let (mut a, _) = scan_dataset(dir.path()).unwrap();
        let (mut b, _) = scan_dataset(dir.path()).unwrap();
        split(&mut a, 0.8, 9).unwrap();
        split(&mut b, 0.8, 9).unwrap();
        let sa: Vec<_> = a.entries.iter().map(|e| e.split).collect();
        let sb: Vec<_> = b.entries.iter().map(|e| e.split).collect();
        assert_eq!(sa, sb);
        assert_eq!(manifest_to_string(&a), manifest_to_string(&b));
    }

    #[test]
    fn class_distribution_within_one_clip() {
        let dir = make_tree(4, 9);
        let (mut m, _) = scan_dataset(dir.path()).unwrap();
        split(&mut m, 0.75, 5).unwrap();
        for class in 0..4 {
            let total = m.entries.iter().filter(|e| e.class_index == class).count();
            let train = m
                .entries
                .iter()
                .filter(|e| e.class_index == class && e.split == Split::Train)
                .count();
            let want = 0.75 * total as f64;
            assert!((train as f64 - want).abs() <= 1.0, "class {class}: {train} vs {want}");
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = make_tree(2, 4);
        let (mut m, _) = scan_dataset(dir.path()).unwrap();
        split(&mut m, 0.8, 3).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("manifest.tsv");
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.class_names, m.class_names);
        assert_eq!(loaded.seed, 3);
        assert_eq!(loaded.entries.len(), m.entries.len());
        for (a, b) in loaded.entries.iter().zip(&m.entries) {
            assert_eq!(a.path, b.path);
            assert_eq!(a.class_index, b.class_index);
            assert_eq!(a.split, b.split);
        }
        // Re-saving the loaded manifest reproduces the bytes.
        assert_eq!(manifest_to_string(&loaded), manifest_to_string(&m));
    }

    #[test]
    fn manifest_rejects_garbage() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("nope.tsv");
        fs::write(&path, "hello world\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Data(_))));
    }
}
