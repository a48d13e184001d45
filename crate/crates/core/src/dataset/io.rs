use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Transition;
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "linkrl-transitions";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

/// Writes a JSON Lines dataset: a header line, then one transition per line.
pub fn write_dataset(path: &Path, transitions: &[Transition]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header { format: DATASET_FORMAT.into(), version: DATASET_VERSION };
    let emit = |w: &mut BufWriter<std::fs::File>, line: String| -> Result<()> {
        w.write_all(line.as_bytes()).and_then(|_| w.write_all(b"\n")).map_err(|e| Error::io(path, e))
    };
    emit(&mut w, serde_json::to_string(&header).expect("header serializes"))?;
    for t in transitions {
        emit(&mut w, serde_json::to_string(t).expect("transition serializes"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_dataset`]. The header line is optional;
/// an empty file is an empty dataset.
pub fn read_dataset(path: &Path) -> Result<Vec<Transition>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<Header>(&line) {
                if h.format != DATASET_FORMAT || h.version != DATASET_VERSION {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: lineno,
                        msg: format!("unsupported dataset {} v{} (expected {DATASET_FORMAT} v{DATASET_VERSION})", h.format, h.version),
                    });
                }
                continue;
            }
        }
        let t = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: lineno,
            msg: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{run_scheduler, Action, EnvConfig, Observation};
    use crate::policy::FnPolicy;

    #[test]
    fn round_trip_thousand_transitions() {
        let config = EnvConfig { harq_delay: 3, n_harq_processes: 2, rng_seed: 9, ..Default::default() };
        let stream =
            run_scheduler(&config, &mut FnPolicy(|o: &Observation| Action::from_index(o.x as usize % 28)), 1_500).unwrap();
        let stream: Vec<_> = stream.into_iter().take(1_000).collect();
        assert_eq!(stream.len(), 1_000);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &stream).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), stream);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_dataset(&path).unwrap().is_empty());
        write_dataset(&path, &[]).unwrap();
        assert!(read_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn truncated_line_names_line_number() {
        let config = EnvConfig::default();
        let stream = run_scheduler(&config, &mut FnPolicy(|_: &Observation| Action(2)), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_dataset(&path, &stream).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 20]).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        std::fs::write(&path, format!("{{\"format\":\"{DATASET_FORMAT}\",\"version\":99}}\n")).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 1, .. })));
    }
}
