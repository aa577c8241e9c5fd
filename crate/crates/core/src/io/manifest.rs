//! JSON run manifest: seeds, attack params, checkpoint digests, and the
//! per-cell repeat values behind a transfer matrix.

use crate::attacks::AttackConfig;
use crate::error::{Error, Result};
use crate::transfer::TransferRun;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRef {
    pub label: String,
    pub model_id: String,
    pub weight_bits: u8,
    pub activation_bits: u8,
    pub checkpoint_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestCell {
    pub source: String,
    pub target: String,
    pub repeat: usize,
    pub selection_seed: u64,
    pub accuracy: f64,
    pub n_samples: usize,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub repeats: usize,
    pub samples: usize,
    pub attack: AttackConfig,
    pub sources: Vec<ModelRef>,
    pub targets: Vec<ModelRef>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Mean cells including the Average column, matching the CSV.
    pub matrix: Vec<Vec<f64>>,
    pub cells: Vec<ManifestCell>,
}

impl RunManifest {
    pub fn from_run(
        run: &TransferRun,
        attack: AttackConfig,
        samples: usize,
        sources: Vec<ModelRef>,
        targets: Vec<ModelRef>,
    ) -> RunManifest {
        RunManifest {
            seed: run.matrix.seed,
            repeats: run.matrix.repeats,
            samples,
            attack,
            sources,
            targets,
            row_labels: run.matrix.row_labels.clone(),
            col_labels: run.matrix.col_labels.clone(),
            matrix: run.matrix.cells.clone(),
            cells: run
                .records
                .iter()
                .map(|r| ManifestCell {
                    source: r.source.clone(),
                    target: r.target.clone(),
                    repeat: r.repeat,
                    selection_seed: r.selection_seed,
                    accuracy: r.accuracy,
                    n_samples: r.indices.len(),
                    indices: r.indices.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<RunManifest> {
        serde_json::from_str(text)
            .map_err(|e| Error::Format { offset: 0, detail: format!("manifest JSON: {e}") })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::atomic_write(path, self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::FgsmParams;

    #[test]
    fn manifest_round_trips_and_is_stable() {
        let m = RunManifest {
            seed: 3,
            repeats: 2,
            samples: 10,
            attack: AttackConfig::Fgsm(FgsmParams { eps: 0.25 }),
            sources: vec![ModelRef {
                label: "FP".into(),
                model_id: "MnistA".into(),
                weight_bits: 0,
                activation_bits: 0,
                checkpoint_digest: "ab".into(),
            }],
            targets: vec![],
            row_labels: vec!["FP".into()],
            col_labels: vec!["FP".into(), "Average".into()],
            matrix: vec![vec![0.5, 0.5]],
            cells: vec![ManifestCell {
                source: "FP".into(),
                target: "FP".into(),
                repeat: 0,
                selection_seed: 3,
                accuracy: 0.5,
                n_samples: 2,
                indices: vec![4, 9],
            }],
        };
        let json = m.to_json();
        assert_eq!(json, m.to_json(), "stable serialization");
        let back = RunManifest::from_json(&json).unwrap();
        assert_eq!(back.cells[0].indices, vec![4, 9]);
        assert!(json.contains("\"attack\": \"fgsm\""), "{json}");
        assert!(RunManifest::from_json("{bad").is_err());
    }
}
