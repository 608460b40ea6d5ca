//! Run configuration: a strict TOML schema plus construction of the
//! simulation model each configuration describes.
//!
//! Frequencies in Rydberg configurations are entered as linear frequencies
//! (the value printed next to a "/2pi" symbol), in MHz, and converted to
//! angular radians per microsecond internally. The key names carry the
//! unit so a bare angular number cannot sneak in unnoticed.

use std::fs;
use std::path::{Path, PathBuf};

use chitrace_core::model::{HilbertSpec, JumpOp, LindbladModel, OperatorBasis, Segment};
use chitrace_core::rydberg::{angular_from_mhz, build_cphase_model, ideal_cphase, RydbergParams};
use chitrace_core::{linalg, C64};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::Failure;

fn default_rel_tol() -> f64 {
    // Statistical noise of a few-hundred-trajectory ensemble is orders of
    // magnitude above this; oracle runs tighten it themselves.
    1e-6
}

fn default_abs_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub n_trajectories: usize,
    pub master_seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    /// Where output files go; the command line can override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Have the oracle command also run the entangled-input density route
    /// and report the discrepancy between the two exact methods.
    #[serde(default)]
    pub oracle_cross_check: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepCfg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelConfig {
    AmplitudeDamping(DecayCfg),
    Dephasing(DecayCfg),
    CustomMatrixFile(CustomCfg),
    RydbergCphase(RydbergCfg),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayCfg {
    /// Decay (or dephasing) rate, in inverse duration units.
    pub gamma: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomCfg {
    /// CSV file with the Hamiltonian: row i holds the entries
    /// `re(M[i,0]), im(M[i,0]), re(M[i,1]), im(M[i,1]), ...`.
    pub hamiltonian_file: PathBuf,
    /// Jump operators in the same format, one file each.
    #[serde(default)]
    pub jump_files: Vec<PathBuf>,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RydbergCfg {
    #[serde(default = "d_delta")]
    pub delta_mhz_over_2pi: f64,
    #[serde(default = "d_omega_r")]
    pub omega_r_mhz_over_2pi: f64,
    #[serde(default = "d_omega_b")]
    pub omega_b_mhz_over_2pi: f64,
    #[serde(default = "d_blockade")]
    pub blockade_mhz_over_2pi: f64,
    #[serde(default = "d_gamma_p")]
    pub gamma_p_mhz_over_2pi: f64,
    #[serde(default = "d_gamma_r")]
    pub gamma_r_khz_over_2pi: f64,
    #[serde(default = "d_gamma_d")]
    pub gamma_d_khz_over_2pi: f64,
    #[serde(default = "d_branching")]
    pub branching: [f64; 3],
    /// Explicit |0> light-shift compensation, MHz over 2pi. Leave unset
    /// for exact cancellation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_e0_mhz_over_2pi: Option<f64>,
}

fn d_delta() -> f64 {
    2000.0
}
fn d_omega_r() -> f64 {
    118.0
}
fn d_omega_b() -> f64 {
    39.0
}
fn d_blockade() -> f64 {
    20.0
}
fn d_gamma_p() -> f64 {
    6.07
}
fn d_gamma_r() -> f64 {
    0.53
}
fn d_gamma_d() -> f64 {
    1.0
}
fn d_branching() -> [f64; 3] {
    [0.12, 0.32, 0.56]
}

impl Default for RydbergCfg {
    fn default() -> Self {
        Self {
            delta_mhz_over_2pi: d_delta(),
            omega_r_mhz_over_2pi: d_omega_r(),
            omega_b_mhz_over_2pi: d_omega_b(),
            blockade_mhz_over_2pi: d_blockade(),
            gamma_p_mhz_over_2pi: d_gamma_p(),
            gamma_r_khz_over_2pi: d_gamma_r(),
            gamma_d_khz_over_2pi: d_gamma_d(),
            branching: d_branching(),
            delta_e0_mhz_over_2pi: None,
        }
    }
}

impl RydbergCfg {
    pub fn to_params(&self) -> RydbergParams {
        RydbergParams {
            delta: angular_from_mhz(self.delta_mhz_over_2pi),
            omega_r: angular_from_mhz(self.omega_r_mhz_over_2pi),
            omega_b: angular_from_mhz(self.omega_b_mhz_over_2pi),
            blockade: angular_from_mhz(self.blockade_mhz_over_2pi),
            gamma_p: angular_from_mhz(self.gamma_p_mhz_over_2pi),
            gamma_r: angular_from_mhz(self.gamma_r_khz_over_2pi * 1e-3),
            gamma_d: angular_from_mhz(self.gamma_d_khz_over_2pi * 1e-3),
            branching: self.branching,
            delta_e0: self.delta_e0_mhz_over_2pi.map(angular_from_mhz),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeCfg {
    #[serde(default = "d_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "d_repeats")]
    pub repeats: usize,
}

fn d_n_list() -> Vec<usize> {
    vec![20, 50, 100, 200, 500]
}
fn d_repeats() -> usize {
    50
}

impl Default for ConvergeCfg {
    fn default() -> Self {
        Self {
            n_list: d_n_list(),
            repeats: d_repeats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    #[serde(default = "d_omega_b_grid")]
    pub omega_b_mhz_over_2pi: Vec<f64>,
    /// Blockade values to sweep. The named reference values are 20 and
    /// 30 MHz; 10 MHz is this tool's documented default for the third
    /// realization.
    #[serde(default = "d_blockade_grid")]
    pub blockade_mhz_over_2pi: Vec<f64>,
    /// The grid point whose chi difference from the ideal gate is dumped
    /// entry by entry.
    #[serde(default = "d_omega_b")]
    pub flag_omega_b_mhz_over_2pi: f64,
    #[serde(default = "d_blockade")]
    pub flag_blockade_mhz_over_2pi: f64,
}

fn d_omega_b_grid() -> Vec<f64> {
    vec![20.0, 25.0, 30.0, 35.0, 39.0, 45.0, 50.0]
}
fn d_blockade_grid() -> Vec<f64> {
    vec![10.0, 20.0, 30.0]
}

impl Default for SweepCfg {
    fn default() -> Self {
        Self {
            omega_b_mhz_over_2pi: d_omega_b_grid(),
            blockade_mhz_over_2pi: d_blockade_grid(),
            flag_omega_b_mhz_over_2pi: d_omega_b(),
            flag_blockade_mhz_over_2pi: d_blockade(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("reading {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Failure::Config(format!("parsing {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.n_trajectories == 0 {
            return Err(Failure::Config("n_trajectories must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Failure::Config(
                "integrator tolerances must be positive".into(),
            ));
        }
        if let Some(cv) = &self.converge {
            if cv.repeats < 2 {
                return Err(Failure::Config(
                    "converge.repeats must be at least 2".into(),
                ));
            }
            if cv.n_list.is_empty() || cv.n_list.iter().any(|&n| n == 0) {
                return Err(Failure::Config(
                    "converge.n_list must hold positive ensemble sizes".into(),
                ));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.omega_b_mhz_over_2pi.is_empty() || sw.blockade_mhz_over_2pi.is_empty() {
                return Err(Failure::Config("sweep grids must be nonempty".into()));
            }
        }
        Ok(())
    }
}

/// A configuration turned into something the engine can run.
pub struct BuiltModel {
    pub model: LindbladModel,
    pub basis: OperatorBasis,
    /// The unitary this model is ideally implementing on its qubit
    /// subspace: identity for the error channels, the controlled-phase
    /// gate for the two-atom model.
    pub ideal: Array2<C64>,
    pub name: &'static str,
}

fn lowering_op(gamma: f64) -> JumpOp {
    let mut m: Array2<C64> = Array2::zeros((2, 2));
    m[[0, 1]] = C64::new(gamma.sqrt(), 0.0);
    JumpOp::new("decay", m)
}

fn dephasing_op(gamma: f64) -> JumpOp {
    let mut m: Array2<C64> = Array2::zeros((2, 2));
    m[[0, 0]] = C64::new(gamma.sqrt(), 0.0);
    m[[1, 1]] = C64::new(-gamma.sqrt(), 0.0);
    JumpOp::new("phase flip", m)
}

fn single_channel_model(duration: f64, op: JumpOp) -> Result<LindbladModel, Failure> {
    LindbladModel::new(
        HilbertSpec::qubit_only(&[2]),
        vec![Segment {
            duration,
            hamiltonian: Array2::zeros((2, 2)),
        }],
        vec![op],
    )
    .map_err(Failure::numeric)
}

/// Read a complex matrix from the interleaved re/im CSV layout.
fn load_matrix(path: &Path) -> Result<Array2<C64>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Config(format!("opening {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| Failure::Config(format!("reading {}: {e}", path.display())))?;
        let row: Result<Vec<f64>, _> = record.iter().map(|s| s.parse::<f64>()).collect();
        rows.push(row.map_err(|e| {
            Failure::Config(format!("parsing number in {}: {e}", path.display()))
        })?);
    }
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != 2 * d) {
        return Err(Failure::Config(format!(
            "{} must hold a square complex matrix: {d} rows need {} columns each",
            path.display(),
            2 * d
        )));
    }
    Ok(Array2::from_shape_fn((d, d), |(i, j)| {
        C64::new(rows[i][2 * j], rows[i][2 * j + 1])
    }))
}

fn pauli_basis_for_dim(d: usize) -> Result<OperatorBasis, Failure> {
    let n = match d {
        2 => 1,
        4 => 2,
        8 => 3,
        _ => {
            return Err(Failure::Config(format!(
                "matrix dimension {d} is not a supported qubit register (2, 4, or 8)"
            )))
        }
    };
    Ok(OperatorBasis::pauli(n))
}

pub fn build_model(cfg: &ModelConfig) -> Result<BuiltModel, Failure> {
    match cfg {
        ModelConfig::AmplitudeDamping(d) => Ok(BuiltModel {
            model: single_channel_model(d.duration, lowering_op(d.gamma))?,
            basis: OperatorBasis::pauli(1),
            ideal: linalg::identity(2),
            name: "amplitude_damping",
        }),
        ModelConfig::Dephasing(d) => Ok(BuiltModel {
            model: single_channel_model(d.duration, dephasing_op(d.gamma))?,
            basis: OperatorBasis::pauli(1),
            ideal: linalg::identity(2),
            name: "dephasing",
        }),
        ModelConfig::CustomMatrixFile(c) => {
            let h = load_matrix(&c.hamiltonian_file)?;
            let d = h.nrows();
            let basis = pauli_basis_for_dim(d)?;
            let mut ops = Vec::new();
            for (k, path) in c.jump_files.iter().enumerate() {
                let m = load_matrix(path)?;
                if m.nrows() != d {
                    return Err(Failure::Config(format!(
                        "jump operator {} is {}x{} but the Hamiltonian is {d}x{d}",
                        path.display(),
                        m.nrows(),
                        m.ncols()
                    )));
                }
                ops.push(JumpOp::new(format!("jump {k}"), m));
            }
            let model = LindbladModel::new(
                HilbertSpec::qubit_only(&[d]),
                vec![Segment {
                    duration: c.duration,
                    hamiltonian: h,
                }],
                ops,
            )
            .map_err(Failure::numeric)?;
            Ok(BuiltModel {
                model,
                basis,
                ideal: linalg::identity(d),
                name: "custom_matrix_file",
            })
        }
        ModelConfig::RydbergCphase(r) => {
            let params = r.to_params();
            let model = build_cphase_model(&params).map_err(Failure::numeric)?;
            Ok(BuiltModel {
                model,
                basis: OperatorBasis::pauli(2),
                ideal: ideal_cphase(),
                name: "rydberg_cphase",
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"
            n_trajectories = 100
            master_seed = 7
            [model.amplitude_damping]
            gamma = 1.0
            duration = 0.1
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_trajectories, 100);
        assert_eq!(cfg.workers, 0);
        assert_eq!(cfg.rel_tol, 1e-6);
        assert!(matches!(cfg.model, ModelConfig::AmplitudeDamping(_)));
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        let top = r#"
            n_trajectories = 1
            master_seed = 0
            surprise = true
            [model.dephasing]
            gamma = 1.0
            duration = 0.1
        "#;
        assert!(toml::from_str::<RunConfig>(top).is_err());
        let nested = r#"
            n_trajectories = 1
            master_seed = 0
            [model.dephasing]
            gamma = 1.0
            duration = 0.1
            typo_field = 2.0
        "#;
        assert!(toml::from_str::<RunConfig>(nested).is_err());
        let wrong_model = r#"
            n_trajectories = 1
            master_seed = 0
            [model.telepathy]
            gamma = 1.0
        "#;
        assert!(toml::from_str::<RunConfig>(wrong_model).is_err());
    }

    #[test]
    fn rydberg_defaults_match_the_reference_parameters() {
        let text = r#"
            n_trajectories = 500
            master_seed = 1
            [model.rydberg_cphase]
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let ModelConfig::RydbergCphase(r) = &cfg.model else {
            panic!("wrong variant");
        };
        let params = r.to_params();
        let reference = RydbergParams::default();
        approx::assert_relative_eq!(params.delta, reference.delta, max_relative = 1e-15);
        approx::assert_relative_eq!(params.omega_r, reference.omega_r, max_relative = 1e-15);
        approx::assert_relative_eq!(params.omega_b, reference.omega_b, max_relative = 1e-15);
        approx::assert_relative_eq!(params.blockade, reference.blockade, max_relative = 1e-15);
        approx::assert_relative_eq!(params.gamma_p, reference.gamma_p, max_relative = 1e-15);
        approx::assert_relative_eq!(params.gamma_r, reference.gamma_r, max_relative = 1e-15);
        approx::assert_relative_eq!(params.gamma_d, reference.gamma_d, max_relative = 1e-15);
        assert_eq!(params.branching, reference.branching);
        assert_eq!(params.delta_e0, reference.delta_e0);
    }

    #[test]
    fn unit_bearing_keys_convert_to_angular_frequencies() {
        let r = RydbergCfg {
            omega_b_mhz_over_2pi: 10.0,
            gamma_d_khz_over_2pi: 2.0,
            ..RydbergCfg::default()
        };
        let p = r.to_params();
        approx::assert_relative_eq!(
            p.omega_b,
            2.0 * std::f64::consts::PI * 10.0,
            max_relative = 1e-15
        );
        approx::assert_relative_eq!(
            p.gamma_d,
            2.0 * std::f64::consts::PI * 0.002,
            max_relative = 1e-15
        );
    }

    #[test]
    fn validation_catches_bad_counts() {
        let mut cfg: RunConfig = toml::from_str(
            r#"
            n_trajectories = 0
            master_seed = 0
            [model.amplitude_damping]
            gamma = 1.0
            duration = 0.1
        "#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
        cfg.n_trajectories = 10;
        cfg.converge = Some(ConvergeCfg {
            n_list: vec![10],
            repeats: 1,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn custom_matrix_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        std::fs::write(&path, "0.0,0.0,0.5,-0.25\n0.5,0.25,1.0,0.0\n").unwrap();
        let m = load_matrix(&path).unwrap();
        assert_eq!(m[[0, 1]], C64::new(0.5, -0.25));
        assert_eq!(m[[1, 0]], C64::new(0.5, 0.25));
        assert_eq!(m[[1, 1]], C64::new(1.0, 0.0));
        std::fs::write(&path, "1.0,0.0\n2.0,0.0\n").unwrap();
        assert!(load_matrix(&path).is_err());
    }
}
