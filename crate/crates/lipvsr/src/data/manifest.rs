//! Dataset manifests: UTF-8, one record per line, tab-separated
//! `id<TAB>path<TAB>duration_s<TAB>transcript`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub path: String,
    pub duration_s: f64,
    pub transcript: String,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    let mut text = String::new();
    for e in entries {
        if !seen.insert(&e.utterance_id) {
            return Err(Error::contract(format!(
                "duplicate utterance id {} in manifest",
                e.utterance_id
            )));
        }
        let _ = writeln!(
            text,
            "{}\t{}\t{:.6}\t{}",
            e.utterance_id, e.path, e.duration_s, e.transcript
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::format(format!(
                "manifest line {} has {} fields, expected 4",
                i + 1,
                fields.len()
            )));
        }
        let duration_s: f64 = fields[2]
            .parse()
            .map_err(|_| Error::format(format!("bad duration on manifest line {}", i + 1)))?;
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::format(format!(
                "duplicate utterance id {} on manifest line {}",
                fields[0],
                i + 1
            )));
        }
        entries.push(ManifestEntry {
            utterance_id: fields[0].to_string(),
            path: fields[1].to_string(),
            duration_s,
            transcript: fields[3].to_string(),
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let entries = vec![
            ManifestEntry {
                utterance_id: "utt000000".into(),
                path: "videos/utt000000.lvid".into(),
                duration_s: 0.36,
                transcript: "abc".into(),
            },
            ManifestEntry {
                utterance_id: "utt000001".into(),
                path: "videos/utt000001.lvid".into(),
                duration_s: 0.6,
                transcript: "de".into(),
            },
        ];
        write_manifest(&p, &entries).unwrap();
        let loaded = read_manifest(&p).unwrap();
        assert_eq!(loaded, entries);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let e = ManifestEntry {
            utterance_id: "x".into(),
            path: "p".into(),
            duration_s: 1.0,
            transcript: "a".into(),
        };
        assert!(write_manifest(&p, &[e.clone(), e]).is_err());
    }
}
