//! Offline artifacts persisted between pipeline stages, and the run manifest
//! whose hash every output file carries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qflqg_core::innovation::InnovationStatistics;
use qflqg_core::linalg;
use qflqg_core::quantizer::{CellMoment, CellMomentTable, QuantizerBank, QuantizerMoments};
use qflqg_core::{Matrix, RiccatiSolution, ScenarioModel, Vector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::formats;

pub const SCENARIO_FILE: &str = "scenario.json";
pub const BANK_FILE: &str = "bank.json";
pub const RICCATI_FILE: &str = "riccati.json";
pub const INNOVATION_FILE: &str = "innovation_stats.json";
pub const MOMENTS_FILE: &str = "moment_tables.json";

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("missing artifact {}", .0.display())]
    Missing(PathBuf),
    #[error("{}: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Inputs and parameters of one command invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario_path: Option<String>,
    pub scenario_sha256: Option<String>,
    pub bank_path: Option<String>,
    pub bank_sha256: Option<String>,
    pub master_seed: Option<u64>,
    pub out_dir: String,
    pub params: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            scenario_path: None,
            scenario_sha256: None,
            bank_path: None,
            bank_sha256: None,
            master_seed: None,
            out_dir: out_dir.display().to_string(),
            params: BTreeMap::new(),
        }
    }

    /// Record an input file by path and content hash.
    pub fn with_input(mut self, kind: &str, path: &Path) -> Self {
        let digest = std::fs::read(path).ok().map(|b| sha256_hex(&b));
        let shown = Some(path.display().to_string());
        match kind {
            "scenario" => (self.scenario_path, self.scenario_sha256) = (shown, digest),
            _ => (self.bank_path, self.bank_sha256) = (shown, digest),
        }
        self
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serializes"))
    }

    pub fn file_name(&self) -> String {
        format!("{}.manifest.json", self.command)
    }
}

/// Row-major matrix with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixJson {
    fn from(m: &Matrix) -> Self {
        let data = (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<Matrix, String> {
        if self.data.len() != self.rows * self.cols {
            return Err(format!("{}x{} matrix with {} entries", self.rows, self.cols, self.data.len()));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

fn mats(ms: &[Matrix]) -> Vec<MatrixJson> {
    ms.iter().map(MatrixJson::from).collect()
}

fn unmats(ms: &[MatrixJson]) -> Result<Vec<Matrix>, String> {
    ms.iter().map(MatrixJson::to_matrix).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiFile {
    pub manifest_sha256: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub horizon: usize,
    #[serde(rename = "P")]
    pub p: Vec<MatrixJson>,
    #[serde(rename = "L")]
    pub l: Vec<MatrixJson>,
    #[serde(rename = "N")]
    pub n: Vec<MatrixJson>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationFile {
    pub manifest_sha256: String,
    pub state_dim: usize,
    pub output_dim: usize,
    pub horizon: usize,
    #[serde(rename = "M")]
    pub m: Vec<MatrixJson>,
    #[serde(rename = "Sigma_pred")]
    pub sigma_pred: Vec<MatrixJson>,
    #[serde(rename = "Sigma_filt")]
    pub sigma_filt: Vec<MatrixJson>,
    #[serde(rename = "K")]
    pub k: Vec<MatrixJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellJson {
    pub prob: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerMomentsJson {
    /// Position in the supplied bank file.
    pub quantizer: usize,
    pub cells: Vec<CellJson>,
    #[serde(rename = "F")]
    pub f: MatrixJson,
    #[serde(rename = "Mcal")]
    pub mcal: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsFile {
    pub manifest_sha256: String,
    pub output_dim: usize,
    pub horizon: usize,
    pub quantizers: usize,
    /// Hash of the cell geometry; prices and bit-rate may change without
    /// invalidating the table.
    pub partition_sha256: String,
    /// `stages[t][i]`, `i` in delay-sorted bank order.
    pub stages: Vec<Vec<QuantizerMomentsJson>>,
}

/// Hash of the partitions only, in supplied order.
pub fn partition_hash(bank: &QuantizerBank) -> String {
    let mut v = formats::bank_to_value(bank);
    v.as_object_mut().expect("object").remove("bit_rate");
    for q in v["quantizers"].as_array_mut().expect("array") {
        q.as_object_mut().expect("object").remove("price");
    }
    sha256_hex(&serde_json::to_vec(&v).expect("serializes"))
}

pub fn riccati_file(sol: &RiccatiSolution, model: &ScenarioModel, hash: &str) -> RiccatiFile {
    RiccatiFile {
        manifest_sha256: hash.into(),
        state_dim: model.state_dim(),
        input_dim: model.input_dim(),
        horizon: model.horizon(),
        p: mats(&sol.p),
        l: mats(&sol.l),
        n: mats(&sol.n),
        r: sol.r.clone(),
    }
}

pub fn innovation_file(stats: &InnovationStatistics, model: &ScenarioModel, hash: &str) -> InnovationFile {
    InnovationFile {
        manifest_sha256: hash.into(),
        state_dim: model.state_dim(),
        output_dim: model.output_dim(),
        horizon: model.horizon(),
        m: mats(&stats.m),
        sigma_pred: mats(&stats.sigma_pred),
        sigma_filt: mats(&stats.sigma_filt),
        k: mats(&stats.k),
    }
}

pub fn moments_file(table: &CellMomentTable, bank: &QuantizerBank, hash: &str) -> MomentsFile {
    MomentsFile {
        manifest_sha256: hash.into(),
        output_dim: bank.output_dim(),
        horizon: table.horizon(),
        quantizers: bank.len(),
        partition_sha256: partition_hash(bank),
        stages: table
            .entries
            .iter()
            .map(|row| {
                row.iter()
                    .zip(bank.quantizers())
                    .map(|(q, spec)| QuantizerMomentsJson {
                        quantizer: spec.index,
                        cells: q
                            .cells
                            .iter()
                            .map(|c| CellJson { prob: c.prob, mean: c.mean.iter().copied().collect() })
                            .collect(),
                        f: (&q.f).into(),
                        mcal: (&q.mcal).into(),
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Everything `synth` leaves on disk, loaded back.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub model: ScenarioModel,
    pub bank: QuantizerBank,
    pub riccati: RiccatiSolution,
    pub stats: InnovationStatistics,
    pub moments: CellMomentTable,
    pub synth_manifest_sha256: String,
}

fn read_value(dir: &Path, name: &str) -> Result<Value, ArtifactError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(ArtifactError::Missing(path));
    }
    formats::read_json(&path).map_err(|e| ArtifactError::Corrupt { path, reason: e.to_string() })
}

fn read_typed<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T, ArtifactError> {
    let path = dir.join(name);
    serde_json::from_value(read_value(dir, name)?)
        .map_err(|e| ArtifactError::Corrupt { path, reason: e.to_string() })
}

/// Load the artifacts in `dir`. A `bank` given here replaces the stored copy;
/// its partitions must match the ones the moment table was built from.
pub fn load_artifacts(dir: &Path, bank: Option<QuantizerBank>) -> Result<Artifacts, ArtifactError> {
    let corrupt = |name: &str, reason: String| ArtifactError::Corrupt { path: dir.join(name), reason };
    let model = formats::scenario_from_value(&read_value(dir, SCENARIO_FILE)?, None)
        .map_err(|e| corrupt(SCENARIO_FILE, e.to_string()))?;
    let stored_bank = formats::bank_from_value(&read_value(dir, BANK_FILE)?, None)
        .map_err(|e| corrupt(BANK_FILE, e.to_string()))?;
    let bank = bank.unwrap_or(stored_bank);

    let ric: RiccatiFile = read_typed(dir, RICCATI_FILE)?;
    let inn: InnovationFile = read_typed(dir, INNOVATION_FILE)?;
    let mom: MomentsFile = read_typed(dir, MOMENTS_FILE)?;
    let horizon = model.horizon();
    if ric.horizon != horizon || inn.horizon != horizon || mom.horizon != horizon {
        return Err(corrupt(RICCATI_FILE, "horizons of the artifacts disagree".into()));
    }
    if mom.partition_sha256 != partition_hash(&bank) || mom.quantizers != bank.len() {
        return Err(corrupt(MOMENTS_FILE, "built for a bank with different partitions".into()));
    }

    let riccati = RiccatiSolution {
        p: unmats(&ric.p).map_err(|e| corrupt(RICCATI_FILE, e))?,
        l: unmats(&ric.l).map_err(|e| corrupt(RICCATI_FILE, e))?,
        n: unmats(&ric.n).map_err(|e| corrupt(RICCATI_FILE, e))?,
        r: ric.r,
    };
    let stats = InnovationStatistics {
        m: unmats(&inn.m).map_err(|e| corrupt(INNOVATION_FILE, e))?,
        sigma_pred: unmats(&inn.sigma_pred).map_err(|e| corrupt(INNOVATION_FILE, e))?,
        sigma_filt: unmats(&inn.sigma_filt).map_err(|e| corrupt(INNOVATION_FILE, e))?,
        k: unmats(&inn.k).map_err(|e| corrupt(INNOVATION_FILE, e))?,
        a_powers: linalg::powers(model.a(), horizon),
    };
    // stored rows follow the delay-sorted order of the bank used by synth;
    // reorder them to the order of `bank` through the supplied index
    let mut entries = Vec::with_capacity(horizon);
    for row in &mom.stages {
        let mut out = Vec::with_capacity(bank.len());
        for spec in bank.quantizers() {
            let q = row
                .iter()
                .find(|q| q.quantizer == spec.index)
                .ok_or_else(|| corrupt(MOMENTS_FILE, format!("quantizer {} missing", spec.index)))?;
            out.push(QuantizerMoments {
                cells: q.cells.iter().map(|c| CellMoment { prob: c.prob, mean: Vector::from_vec(c.mean.clone()) }).collect(),
                f: q.f.to_matrix().map_err(|e| corrupt(MOMENTS_FILE, e))?,
                mcal: q.mcal.to_matrix().map_err(|e| corrupt(MOMENTS_FILE, e))?,
            });
        }
        entries.push(out);
    }
    Ok(Artifacts {
        model,
        bank,
        riccati,
        stats,
        moments: CellMomentTable { entries },
        synth_manifest_sha256: ric.manifest_sha256,
    })
}

/// Write pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| ArtifactError::Write { path: path.into(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ArtifactError> {
    std::fs::write(path, text).map_err(|source| ArtifactError::Write { path: path.into(), source })
}

/// Persist the synth outputs, tagging each with `manifest`.
pub fn write_artifacts(
    dir: &Path,
    manifest: &RunManifest,
    model: &ScenarioModel,
    bank: &QuantizerBank,
    riccati: &RiccatiSolution,
    stats: &InnovationStatistics,
    moments: &CellMomentTable,
) -> Result<(), ArtifactError> {
    std::fs::create_dir_all(dir).map_err(|source| ArtifactError::Write { path: dir.into(), source })?;
    let hash = manifest.hash();
    let mut scenario = formats::scenario_to_value(model);
    scenario["manifest_sha256"] = Value::from(hash.clone());
    let mut bank_value = formats::bank_to_value(bank);
    bank_value["manifest_sha256"] = Value::from(hash.clone());
    write_json(&dir.join(SCENARIO_FILE), &scenario)?;
    write_json(&dir.join(BANK_FILE), &bank_value)?;
    write_json(&dir.join(RICCATI_FILE), &riccati_file(riccati, model, &hash))?;
    write_json(&dir.join(INNOVATION_FILE), &innovation_file(stats, model, &hash))?;
    write_json(&dir.join(MOMENTS_FILE), &moments_file(moments, bank, &hash))?;
    write_json(&dir.join(manifest.file_name()), manifest)
}
