use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Vocab};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "medspan-tagger";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocab,
    params: Vec<f64>,
}

/// Writes the model as JSON. Floats round-trip exactly, so a reloaded model
/// predicts bit-identically.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        params: model.params.clone(),
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer(&mut w, &file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let file: CheckpointFile =
        serde_json::from_reader(r).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format tag {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    Model::from_parts(file.config, file.vocab, file.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedTweet, Dataset, Tweet};
    use crate::model::build_vocab;

    #[test]
    fn reload_is_bit_exact() {
        let ds = Dataset::new(
            "c",
            vec![AnnotatedTweet::negative(Tweet::new("1", "u", "took tylenol today"))],
        )
        .unwrap();
        let cfg = ModelConfig {
            d_model: 8,
            n_layers: 1,
            d_ff: 8,
            max_seq_len: 8,
            ..ModelConfig::default()
        };
        let m = Model::new(cfg, build_vocab(&ds, 1, false).unwrap(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        let bits = |m: &Model| m.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back.predict_dataset(&ds), m.predict_dataset(&ds));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"format":"medspan-tagger","version":99,"config":{},"vocab":{"tokens":[],"case_sensitive":false},"params":[]}"#,
        )
        .unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        assert!(load_checkpoint(dir.path().join("missing.json")).is_err());
    }
}
