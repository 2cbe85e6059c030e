//! Corpus files: JSON lines, one header then one record per sequence.
//!
//! The header carries what a bare record list cannot: the declared view
//! count and the landmark topology. Records hold frames as `T × N × 3`
//! nested arrays. All floats are printed in shortest round-trip form, so
//! writing a corpus and reading it back is bit-exact, and generation with
//! a fixed seed produces byte-identical files.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use focovil_core::skeleton::{ActionSequence, MultiViewCorpus, Pose, SkeletonTopology};
use serde::{Deserialize, Serialize};

use crate::errors::{CliError, CliResult};

const FORMAT: &str = "focovil-corpus";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    n_views: usize,
    topology: SkeletonTopology,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    scene_id: u64,
    view_id: u32,
    class_label: Option<u32>,
    /// `frames[t][joint] = [x, y, z]`.
    frames: Vec<Vec<[f64; 3]>>,
}

/// Writes `corpus` to `path`, returning the record count.
pub fn write_corpus(path: &Path, corpus: &MultiViewCorpus) -> CliResult<usize> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: FORMAT.to_string(),
        version: VERSION,
        n_views: corpus.n_views(),
        topology: *corpus.topology(),
    };
    let mut emit = |value: &str| -> CliResult<()> {
        writeln!(w, "{value}").map_err(|e| CliError::io(path, e))
    };
    emit(&serde_json::to_string(&header).expect("header serializes"))?;
    for seq in corpus.sequences() {
        let record = Record {
            scene_id: seq.scene_id,
            view_id: seq.view_id,
            class_label: seq.class_label,
            frames: seq
                .frames
                .iter()
                .map(|p| p.coords().to_vec())
                .collect(),
        };
        emit(&serde_json::to_string(&record).expect("record serializes"))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(corpus.len())
}

/// Reads a corpus file written by [`write_corpus`].
pub fn read_corpus(path: &Path) -> CliResult<MultiViewCorpus> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| {
        CliError::Io(format!("{}: empty corpus file", path.display()))
    })?;
    let first = first.map_err(|e| CliError::io(path, e))?;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| CliError::Io(format!("{}: bad header: {e}", path.display())))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(CliError::Io(format!(
            "{}: expected {FORMAT} v{VERSION}, found {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let mut sequences = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| CliError::Io(format!("{}:{}: bad record: {e}", path.display(), idx + 1)))?;
        let frames = record
            .frames
            .into_iter()
            .map(Pose::new)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Io(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        let seq =
            ActionSequence::new(frames, record.scene_id, record.view_id, record.class_label)
                .map_err(|e| CliError::Io(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        sequences.push(seq);
    }
    MultiViewCorpus::new(sequences, header.n_views, header.topology)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
