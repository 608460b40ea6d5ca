//! Persisted process-matrix artifacts.
//!
//! The artifact is a JSON document with the chi matrix stored as a
//! row-major list of explicit re/im pairs, plus enough metadata to
//! reproduce the run. Writing is deterministic: the same data always
//! serializes to the same bytes, so identical runs can be compared with a
//! plain byte comparison. There is deliberately no timestamp.

use std::fs;
use std::path::Path;

use chitrace_core::tomography::ChiMatrix;
use chitrace_core::C64;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

/// One complex entry, spelled out so no reader has to guess a convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReIm {
    pub re: f64,
    pub im: f64,
}

/// Ensemble size: a trajectory count for stochastic runs, or the marker
/// string "exact" for density-matrix oracle runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleCount {
    Trajectories(u64),
    Marker(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub trace_distance_to_ideal: f64,
    pub fidelity_to_ideal: f64,
    /// Omitted when no jump-free trajectory was observed (or for exact
    /// oracle runs, where it is meaningless).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nojump_upper_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactMeta {
    pub n: SampleCount,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_jump: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumped: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disposed: Option<u64>,
    pub master_seed: u64,
    /// Echo of the model section of the configuration that produced this.
    pub model: ModelConfig,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiArtifact {
    pub schema_version: u32,
    pub basis_labels: Vec<String>,
    pub qubit_dim: usize,
    /// Row-major chi entries, `basis_labels.len()` squared of them.
    pub chi: Vec<ReIm>,
    pub meta: ArtifactMeta,
}

impl ChiArtifact {
    pub fn from_chi(chi: &ChiMatrix, qubit_dim: usize, meta: ArtifactMeta) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            basis_labels: chi.labels().to_vec(),
            qubit_dim,
            chi: chi
                .data()
                .iter()
                .map(|z| ReIm { re: z.re, im: z.im })
                .collect(),
            meta,
        }
    }

    /// The stored matrix as a dense array again.
    pub fn chi_matrix(&self) -> Result<Array2<C64>, Failure> {
        let d2 = self.basis_labels.len();
        if self.chi.len() != d2 * d2 {
            return Err(Failure::Numeric(format!(
                "artifact holds {} entries for a {d2}x{d2} matrix",
                self.chi.len()
            )));
        }
        Ok(Array2::from_shape_fn((d2, d2), |(i, j)| {
            let e = &self.chi[i * d2 + j];
            C64::new(e.re, e.im)
        }))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serialization");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        fs::write(path, self.to_json())
            .map_err(|e| Failure::Numeric(format!("writing {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("reading {}: {e}", path.display())))?;
        let art: ChiArtifact = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("parsing {}: {e}", path.display())))?;
        if art.schema_version != SCHEMA_VERSION {
            return Err(Failure::Config(format!(
                "artifact schema version {} unsupported (expected {SCHEMA_VERSION})",
                art.schema_version
            )));
        }
        Ok(art)
    }
}

/// Format a float with 17 significant digits, enough for a lossless
/// double round-trip, used by every CSV emitter.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
