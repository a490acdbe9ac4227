//! JSON-lines dataset manifest: one `{"path", "speaker_id", "split"}` record per utterance.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub path: PathBuf,
    pub speaker_id: String,
    pub split: Split,
}

/// Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestItem>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut items = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut item: ManifestItem = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if item.path.is_relative() {
            item.path = base.join(&item.path);
        }
        items.push(item);
    }
    Ok(items)
}

pub fn write_manifest(path: impl AsRef<Path>, items: &[ManifestItem]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for item in items {
        let line = serde_json::to_string(item)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.jsonl");
        std::fs::write(
            &m,
            "{\"path\":\"wav/a.wav\",\"speaker_id\":\"s0\",\"split\":\"train\"}\n\n{\"path\":\"/abs/b.wav\",\"speaker_id\":\"s1\",\"split\":\"val\"}\n",
        )
        .unwrap();
        let items = read_manifest(&m).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].path, dir.path().join("wav/a.wav"));
        assert_eq!(items[1].path, PathBuf::from("/abs/b.wav"));
        assert_eq!(items[1].split, Split::Val);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.jsonl");
        std::fs::write(&m, "{\"path\":\"a.wav\",\"speaker_id\":\"s0\",\"split\":\"train\"}\n{oops}\n").unwrap();
        match read_manifest(&m) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
