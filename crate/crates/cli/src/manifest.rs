use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use bhtsne_core::{Precision, StepTimings, TsneConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub has_header: bool,
    pub sha256: String,
    pub n_points: usize,
    pub n_dims: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub format: String,
    pub sha256: String,
}

/// Everything needed to repeat a run and check that it matched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub input: InputRecord,
    pub config: TsneConfig,
    pub seed: u64,
    pub precision: Precision,
    /// Workers actually used.
    pub threads: usize,
    pub wall_s: f64,
    pub stage_s: BTreeMap<String, f64>,
    pub kl: f64,
    pub embedding: OutputRecord,
}

impl RunManifest {
    pub fn stage_totals(t: &StepTimings) -> BTreeMap<String, f64> {
        bhtsne_core::Stage::ALL
            .iter()
            .map(|&s| (s.name().to_string(), t.stage(s).total()))
            .collect()
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        write!(hex, "{b:02x}").unwrap();
    }
    Ok(hex)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip() {
        let m = RunManifest {
            tool_version: "0.1.0".into(),
            input: InputRecord {
                path: "data.csv".into(),
                has_header: true,
                sha256: "00".repeat(32),
                n_points: 10,
                n_dims: 3,
            },
            config: TsneConfig {
                kl_every: Some(5),
                ..Default::default()
            },
            seed: 3,
            precision: Precision::F32,
            threads: 4,
            wall_s: 1.25,
            stage_s: [("knn".to_string(), 0.1)].into_iter().collect(),
            kl: 0.123456789012345,
            embedding: OutputRecord {
                path: "emb.bin".into(),
                format: "bin".into(),
                sha256: "ff".repeat(32),
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(RunManifest::load(&p).unwrap(), m);
    }
}
