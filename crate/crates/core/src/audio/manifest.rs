use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub audio_path: PathBuf,
    pub speaker_id: String,
    pub split: Split,
}

impl UtteranceRecord {
    pub fn utterance_id(&self) -> String {
        self.audio_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerManifest {
    pub records: Vec<UtteranceRecord>,
    /// Sorted, unique.
    pub speakers: Vec<String>,
}

const AUDIO_EXTENSIONS: &[&str] = &["wav"];

impl SpeakerManifest {
    pub fn from_records(records: Vec<UtteranceRecord>) -> Self {
        let speakers: BTreeSet<String> = records.iter().map(|r| r.speaker_id.clone()).collect();
        Self {
            records,
            speakers: speakers.into_iter().collect(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Speakers that own at least one training record, sorted.
    pub fn train_speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.split(Split::Train).map(|r| r.speaker_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn require_pairable(&self) -> Result<()> {
        let n = self.train_speakers().len();
        if n < 2 {
            return Err(Error::Config(format!(
                "pair sampling needs at least 2 speakers with training utterances, found {n}"
            )));
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes via a temporary sibling then renames, so a failed run never
    /// leaves a partial manifest behind.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let body = self.to_jsonl()?;
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<UtteranceRecord>(&line)?);
        }
        Ok(Self::from_records(records))
    }
}

/// Scans `root/<speaker>/*.wav`. Per speaker the files are sorted by name and
/// the last `eval_count` become the eval split.
pub fn build_manifest(root: &Path, eval_count: usize) -> Result<SpeakerManifest> {
    if !root.is_dir() {
        return Err(Error::Config(format!(
            "data root {} is not a directory",
            root.display()
        )));
    }
    let mut speaker_dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    speaker_dirs.sort();
    if speaker_dirs.is_empty() {
        return Err(Error::Config(format!(
            "{} contains no speaker directories",
            root.display()
        )));
    }

    let mut records = Vec::new();
    let mut offenders = Vec::new();
    for dir in &speaker_dirs {
        let speaker = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| AUDIO_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        if files.is_empty() || files.len() < eval_count {
            offenders.push(format!("{speaker} ({} files)", files.len()));
            continue;
        }
        let n_train = files.len() - eval_count;
        for (i, audio_path) in files.into_iter().enumerate() {
            records.push(UtteranceRecord {
                audio_path,
                speaker_id: speaker.clone(),
                split: if i < n_train { Split::Train } else { Split::Eval },
            });
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Config(format!(
            "speakers with too few audio files for eval_count {eval_count}: {}",
            offenders.join(", ")
        )));
    }
    let manifest = SpeakerManifest::from_records(records);
    manifest.require_pairable()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make_corpus(root: &Path, speakers: &[(&str, usize)]) {
        for (spk, n) in speakers {
            let dir = root.join(spk);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..*n {
                // Content is irrelevant to the manifest.
                std::fs::write(dir.join(format!("utt_{i:03}.wav")), b"RIFF").unwrap();
            }
            std::fs::write(dir.join("notes.txt"), b"ignored").unwrap();
        }
    }

    #[test]
    fn paper_split_81_35() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), &[("A", 116), ("B", 116)]);
        let m = build_manifest(dir.path(), 35).unwrap();
        for spk in ["A", "B"] {
            let train = m.split(Split::Train).filter(|r| r.speaker_id == spk).count();
            let eval = m.split(Split::Eval).filter(|r| r.speaker_id == spk).count();
            assert_eq!((train, eval), (81, 35));
        }
        // The eval tail is the lexicographically last files.
        let first_eval = m.split(Split::Eval).next().unwrap();
        assert_eq!(first_eval.utterance_id(), "utt_081");
        assert_eq!(m.speakers, vec!["A", "B"]);
    }

    #[test]
    fn eval_zero_all_train() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), &[("A", 3), ("B", 4)]);
        let m = build_manifest(dir.path(), 0).unwrap();
        assert_eq!(m.split(Split::Train).count(), 7);
    }

    #[test]
    fn empty_speaker_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), &[("A", 3), ("B", 3)]);
        std::fs::create_dir_all(dir.path().join("ghost")).unwrap();
        let err = build_manifest(dir.path(), 0).unwrap_err().to_string();
        assert!(err.contains("ghost"), "{err}");
    }

    #[test]
    fn too_few_files_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), &[("A", 10), ("B", 2)]);
        let err = build_manifest(dir.path(), 5).unwrap_err().to_string();
        assert!(err.contains("B (2 files)"), "{err}");
    }

    #[test]
    fn single_speaker_rejected() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), &[("A", 3)]);
        assert!(matches!(build_manifest(dir.path(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_and_jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(dir.path(), &[("B", 5), ("A", 6)]);
        let a = build_manifest(dir.path(), 2).unwrap();
        let b = build_manifest(dir.path(), 2).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
        let path = dir.path().join("manifest.jsonl");
        a.write_jsonl(&path).unwrap();
        assert_eq!(SpeakerManifest::read_jsonl(&path).unwrap(), a);
        let first = std::fs::read_to_string(&path).unwrap();
        let line = first.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["split"], "train");
        assert_eq!(v["speaker_id"], "A");
    }
}
