use std::path::Path;

use super::SeriesDataset;
use crate::error::{Error, Result};
use crate::graph::{decode_entries, encode_entries};
use crate::tensor::Tensor;

/// Same container as weights files, with its own magic.
pub const DATASET_MAGIC: &[u8; 7] = b"TSDLD1\0";

const NOTE_PREFIX: &str = "note:";

pub fn save_dataset(path: impl AsRef<Path>, data: &SeriesDataset) -> Result<()> {
    let marker = Tensor::scalar(0.0);
    let entries = vec![
        ("inputs".to_string(), &data.inputs),
        ("targets".to_string(), &data.targets),
        (format!("{NOTE_PREFIX}{}", data.note), &marker),
    ];
    std::fs::write(path, encode_entries(DATASET_MAGIC, &entries))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SeriesDataset> {
    let entries = decode_entries(DATASET_MAGIC, &std::fs::read(path)?)?;
    let mut inputs = None;
    let mut targets = None;
    let mut note = String::new();
    for (name, t) in entries {
        match name.as_str() {
            "inputs" => inputs = Some(t),
            "targets" => targets = Some(t),
            n if n.starts_with(NOTE_PREFIX) => note = n[NOTE_PREFIX.len()..].to_string(),
            other => return Err(Error::Format(format!("dataset file has unknown entry '{other}'"))),
        }
    }
    let missing = |what: &str| Error::Format(format!("dataset file lacks '{what}'"));
    SeriesDataset::new(inputs.ok_or_else(|| missing("inputs"))?, targets.ok_or_else(|| missing("targets"))?, note)
}
