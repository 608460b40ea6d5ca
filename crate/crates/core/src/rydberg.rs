//! Two-atom Rydberg-blockade controlled-phase gate model.
//!
//! Each atom carries four levels: the qubit pair |0>, |1>, the Rydberg
//! level |r>, and a transient excited level |p> that mediates both the
//! two-photon qubit-Rydberg coupling and the spontaneous-emission error
//! channels. The intermediate level is adiabatically eliminated from the
//! coherent dynamics, so the Hamiltonian couples |1> and |r> directly with
//! an effective Rabi frequency and leaves the |p> row and column empty;
//! |p> is populated only transiently, at Rydberg-decay jump times, and
//! relaxes with declared branching weights in the same instant.
//!
//! All frequencies and rates are angular (radians per time unit). Any time
//! unit works as long as durations use the same one; the defaults express
//! linear MHz inputs as radians per microsecond.

use ndarray::{linalg::kron, Array2};

use crate::linalg::identity;
use crate::model::{HilbertSpec, JumpOp, LindbladModel, Segment};
use crate::{C64, Error, Result};

/// Single-atom level indices.
pub const LVL0: usize = 0;
pub const LVL1: usize = 1;
pub const LVLR: usize = 2;
pub const LVLP: usize = 3;

/// Angular frequency (radians per microsecond) of a linear frequency in MHz.
pub fn angular_from_mhz(megahertz: f64) -> f64 {
    2.0 * std::f64::consts::PI * megahertz
}

/// Physical gate parameters. All frequencies and rates angular.
#[derive(Debug, Clone, PartialEq)]
pub struct RydbergParams {
    /// One-photon detuning of the two-photon transition.
    pub delta: f64,
    /// Rabi frequency of the lower (qubit to transient) leg.
    pub omega_r: f64,
    /// Rabi frequency of the upper (transient to Rydberg) leg.
    pub omega_b: f64,
    /// Blockade shift of the doubly excited Rydberg pair state.
    pub blockade: f64,
    /// Decay rate of the transient level.
    pub gamma_p: f64,
    /// Decay rate of the Rydberg level (through the transient level).
    pub gamma_r: f64,
    /// Dephasing rate of the Rydberg level.
    pub gamma_d: f64,
    /// Branching weights of transient-level decay into |0>, |1>, and
    /// states outside the model (lost atoms). Must sum to 1.
    pub branching: [f64; 3],
    /// Light shift applied to |0> by a compensating field. `None` picks
    /// the value that exactly cancels the shift induced by the lower leg,
    /// so |0> accumulates no phase.
    pub delta_e0: Option<f64>,
}

impl Default for RydbergParams {
    /// The reference parameter set used throughout the experiments here:
    /// detuning 2.0 GHz, Rabi frequencies 118 and 39 MHz, blockade 20 MHz,
    /// transient decay 6.07 MHz, Rydberg decay 0.53 kHz, dephasing 1.0 kHz
    /// (all linear frequencies), expressed in radians per microsecond.
    fn default() -> Self {
        Self {
            delta: angular_from_mhz(2000.0),
            omega_r: angular_from_mhz(118.0),
            omega_b: angular_from_mhz(39.0),
            blockade: angular_from_mhz(20.0),
            gamma_p: angular_from_mhz(6.07),
            gamma_r: angular_from_mhz(0.53e-3),
            gamma_d: angular_from_mhz(1.0e-3),
            branching: [0.12, 0.32, 0.56],
            delta_e0: None,
        }
    }
}

impl RydbergParams {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("gamma_p", self.gamma_p),
            ("gamma_r", self.gamma_r),
            ("gamma_d", self.gamma_d),
        ] {
            if !(rate >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "rate {name} = {rate} must be nonnegative"
                )));
            }
        }
        for (j, c) in self.branching.iter().enumerate() {
            if !(*c >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "branching weight {j} = {c} must be nonnegative"
                )));
            }
        }
        let sum: f64 = self.branching.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "branching weights sum to {sum}, expected 1"
            )));
        }
        if self.delta == 0.0 {
            return Err(Error::InvalidInput(
                "detuning must be nonzero".into(),
            ));
        }
        Ok(())
    }

    /// Total transient-level scattering rate, the sum of the per-target
    /// branching rates. With normalized branching this equals `gamma_p`.
    pub fn gamma_total(&self) -> f64 {
        self.branching.iter().sum::<f64>() * self.gamma_p
    }

    /// The light shift the lower leg imposes on |0>, which the default
    /// compensation removes.
    fn zero_level_shift(&self) -> Result<f64> {
        let g = self.gamma_total();
        let den = 4.0 * self.delta * self.delta + g * g;
        if den == 0.0 {
            return Err(Error::InvalidInput(
                "light-shift denominator vanishes".into(),
            ));
        }
        Ok(self.delta * self.omega_r * self.omega_r / den)
    }
}

/// Second-order shift of the Rydberg level produced by the two driving
/// fields, subtracted from the upper-leg detuning wherever it appears.
pub fn delta_er(p: &RydbergParams) -> Result<f64> {
    if p.delta == 0.0 {
        return Err(Error::InvalidInput("detuning must be nonzero".into()));
    }
    let d2 = p.delta * p.delta;
    let num = 16.0 * d2 * (p.omega_b * p.omega_b - p.omega_r * p.omega_r)
        - p.omega_r.powi(4);
    Ok(num / (64.0 * d2 * p.delta))
}

/// Effective two-photon Rabi frequency between |1> and |r>.
pub fn effective_rabi(p: &RydbergParams) -> Result<f64> {
    let der = delta_er(p)?;
    let g = p.gamma_total();
    let den = 8.0 * p.delta * (p.delta - der) + 2.0 * g * g;
    if den == 0.0 {
        return Err(Error::InvalidInput(
            "effective Rabi denominator vanishes".into(),
        ));
    }
    Ok(2.0 * (2.0 * p.delta - der) * p.omega_r * p.omega_b / den)
}

/// Single-atom Hamiltonian after adiabatic elimination of the transient
/// level: the effective |1>-|r> coupling plus whatever part of the |0>
/// light shift the compensation field leaves over. The |p> row and column
/// stay zero.
pub fn single_atom_hamiltonian(p: &RydbergParams) -> Result<Array2<C64>> {
    p.validate()?;
    let half_rabi = 0.5 * effective_rabi(p)?;
    let shift = p.zero_level_shift()?;
    let leftover = p.delta_e0.unwrap_or(shift) - shift;
    let mut h: Array2<C64> = Array2::zeros((4, 4));
    h[[LVL1, LVLR]] = C64::new(half_rabi, 0.0);
    h[[LVLR, LVL1]] = C64::new(half_rabi, 0.0);
    h[[LVL0, LVL0]] = C64::new(leftover, 0.0);
    Ok(h)
}

fn scatter_matrix(p: &RydbergParams, weight: f64, target: usize) -> Result<Array2<C64>> {
    let g = p.gamma_total();
    let der = delta_er(p)?;
    let lower_den = C64::new(2.0 * p.delta, -g);
    let upper_den = C64::new(2.0 * (p.delta - der), -g);
    if lower_den.norm_sqr() == 0.0 || upper_den.norm_sqr() == 0.0 {
        return Err(Error::InvalidInput(
            "scattering amplitude denominator vanishes".into(),
        ));
    }
    let amp = C64::new(weight.sqrt(), 0.0);
    let mut m: Array2<C64> = Array2::zeros((4, 4));
    m[[target, LVL1]] = amp * C64::new(p.omega_r, 0.0) / lower_den;
    m[[target, LVLR]] = amp * C64::new(p.omega_b, 0.0) / upper_den;
    Ok(m)
}

fn settle_matrix(weight: f64, target: usize) -> Array2<C64> {
    let mut m: Array2<C64> = Array2::zeros((4, 4));
    m[[target, LVLP]] = C64::new(weight.sqrt(), 0.0);
    m
}

/// Single-atom jump operators. Channels with zero rate are omitted.
///
/// Three classes: light scattering off the transient level during the
/// drive (one operator per branching target, superposing the |1> and |r>
/// source amplitudes), Rydberg dephasing, and Rydberg decay through the
/// transient level. The decay operator cascades into settle operators
/// that empty |p> at the same time stamp with the same branching weights.
/// Operators whose target lies outside the model dispose of the
/// trajectory; their matrix rows are a formality since only
/// `L^dagger L` of a disposing operator is ever used.
pub fn single_atom_jump_ops(p: &RydbergParams) -> Result<Vec<JumpOp>> {
    p.validate()?;
    let [c0, c1, cg] = p.branching;
    let mut ops = Vec::new();
    for (c, target, label, disposes) in [
        (c0, LVL0, "scatter to 0", false),
        (c1, LVL1, "scatter to 1", false),
        (cg, LVL0, "scatter out", true),
    ] {
        if c * p.gamma_p > 0.0 {
            let m = scatter_matrix(p, c * p.gamma_p, target)?;
            ops.push(if disposes {
                JumpOp::disposing(label, m)
            } else {
                JumpOp::new(label, m)
            });
        }
    }
    if p.gamma_d > 0.0 {
        let mut m = identity(4).mapv(|z| z * C64::new(p.gamma_d.sqrt(), 0.0));
        m[[LVLR, LVLR]] = C64::new(-p.gamma_d.sqrt(), 0.0);
        ops.push(JumpOp::new("rydberg dephasing", m));
    }
    if p.gamma_r > 0.0 {
        let mut parent: Array2<C64> = Array2::zeros((4, 4));
        parent[[LVLP, LVLR]] = C64::new(p.gamma_r.sqrt(), 0.0);
        let parent_idx = ops.len();
        let mut children = Vec::new();
        for (c, target, label, disposes) in [
            (c0, LVL0, "settle to 0", false),
            (c1, LVL1, "settle to 1", false),
            (cg, LVL0, "settle out", true),
        ] {
            if c * p.gamma_p > 0.0 {
                children.push(parent_idx + 1 + children.len());
                let m = settle_matrix(c * p.gamma_p, target);
                ops.push(if disposes {
                    JumpOp::disposing(label, m)
                } else {
                    JumpOp::new(label, m)
                });
            }
        }
        // Children were appended starting at parent_idx; shift them up by
        // inserting the parent in front of its children.
        let settled: Vec<JumpOp> = ops.drain(parent_idx..).collect();
        ops.push(JumpOp::new("rydberg decay", parent).with_cascade(children));
        ops.extend(settled);
    }
    Ok(ops)
}

/// The ideal controlled-phase gate on the two-qubit subspace, ordered
/// |00>, |01>, |10>, |11>.
pub fn ideal_cphase() -> Array2<C64> {
    let mut u = identity(4);
    for k in 1..4 {
        u[[k, k]] = C64::new(-1.0, 0.0);
    }
    u
}

/// Index of the doubly Rydberg-excited pair state in the two-atom space.
const RR: usize = LVLR * 4 + LVLR;

/// Build the full two-atom gate model: a pi pulse on the control atom, a
/// 2 pi pulse on the target atom, and a closing pi pulse on the control
/// atom, with the blockade shift on |rr> and every decoherence channel
/// active throughout.
pub fn build_cphase_model(p: &RydbergParams) -> Result<LindbladModel> {
    p.validate()?;
    let rabi = effective_rabi(p)?;
    if rabi == 0.0 || !rabi.is_finite() {
        return Err(Error::InvalidInput(
            "effective Rabi frequency vanishes; pulse duration undefined".into(),
        ));
    }
    let t_pi = std::f64::consts::PI / rabi.abs();
    let h1 = single_atom_hamiltonian(p)?;
    let eye = identity(4);
    let mut h_control = kron(&h1, &eye);
    let mut h_target = kron(&eye, &h1);
    let b = C64::new(p.blockade, 0.0);
    h_control[[RR, RR]] += b;
    h_target[[RR, RR]] += b;
    let schedule = vec![
        Segment {
            duration: t_pi,
            hamiltonian: h_control.clone(),
        },
        Segment {
            duration: 2.0 * t_pi,
            hamiltonian: h_target,
        },
        Segment {
            duration: t_pi,
            hamiltonian: h_control,
        },
    ];

    let singles = single_atom_jump_ops(p)?;
    let offset = singles.len();
    let mut jump_ops = Vec::with_capacity(2 * offset);
    for op in &singles {
        jump_ops.push(JumpOp {
            label: format!("control {}", op.label),
            matrix: kron(&op.matrix, &eye),
            disposes: op.disposes,
            cascade: op.cascade.clone(),
        });
    }
    for op in &singles {
        jump_ops.push(JumpOp {
            label: format!("target {}", op.label),
            matrix: kron(&eye, &op.matrix),
            disposes: op.disposes,
            cascade: op.cascade.iter().map(|k| k + offset).collect(),
        });
    }

    let spec = HilbertSpec::new(16, vec![2, 2], vec![0, 1, 4, 5], vec![])?;
    LindbladModel::new(spec, schedule, jump_ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, max_abs_diff, unitary_exp};
    use crate::model::OperatorBasis;
    use crate::tomography::{chi_of_operator, fidelity, ideal_chi};
    use approx::assert_relative_eq;

    #[test]
    fn level_shift_formula_and_frozen_reference_value() {
        let p = RydbergParams::default();
        let got = delta_er(&p).unwrap();
        assert_relative_eq!(
            got,
            angular_from_mhz(-1.55075366753125),
            max_relative = 1e-12
        );
        // Equal legs leave only the quartic term.
        let mut eq = RydbergParams::default();
        eq.omega_b = eq.omega_r;
        let want = -eq.omega_r.powi(4) / (64.0 * eq.delta.powi(3));
        assert_relative_eq!(delta_er(&eq).unwrap(), want, max_relative = 1e-12);
        // Weaker upper leg means a negative shift.
        assert!(got < 0.0);
        let mut bad = RydbergParams::default();
        bad.delta = 0.0;
        assert!(delta_er(&bad).is_err());
    }

    #[test]
    fn effective_rabi_frozen_value_and_clean_limit() {
        let p = RydbergParams::default();
        assert_relative_eq!(
            effective_rabi(&p).unwrap(),
            angular_from_mhz(1.1500516637597516),
            max_relative = 1e-12
        );
        // Choose the upper leg so the level shift cancels exactly, and
        // switch off scattering; the textbook two-photon rate remains.
        let mut clean = RydbergParams::default();
        clean.delta = 1000.0;
        clean.omega_r = 100.0;
        clean.omega_b = (clean.omega_r.powi(2)
            + clean.omega_r.powi(4) / (16.0 * clean.delta.powi(2)))
        .sqrt();
        clean.gamma_p = 0.0;
        assert!(delta_er(&clean).unwrap().abs() < 1e-12);
        assert_relative_eq!(
            effective_rabi(&clean).unwrap(),
            clean.omega_r * clean.omega_b / (2.0 * clean.delta),
            max_relative = 1e-12
        );
    }

    #[test]
    fn hamiltonian_couples_only_the_two_photon_transition() {
        let p = RydbergParams::default();
        let h = single_atom_hamiltonian(&p).unwrap();
        let half = 0.5 * effective_rabi(&p).unwrap();
        assert_relative_eq!(h[[LVL1, LVLR]].re, half, max_relative = 1e-12);
        assert_relative_eq!(h[[LVLR, LVL1]].re, half, max_relative = 1e-12);
        // Default compensation removes the |0> shift entirely, and the
        // eliminated level stays decoupled.
        assert_eq!(h[[LVL0, LVL0]], C64::new(0.0, 0.0));
        for k in 0..4 {
            assert_eq!(h[[LVLP, k]], C64::new(0.0, 0.0));
            assert_eq!(h[[k, LVLP]], C64::new(0.0, 0.0));
        }
        // Without compensation the lower leg shifts |0> by its full value.
        let mut raw = p.clone();
        raw.delta_e0 = Some(0.0);
        let h_raw = single_atom_hamiltonian(&raw).unwrap();
        assert_relative_eq!(
            h_raw[[LVL0, LVL0]].re,
            -angular_from_mhz(1.7404959919749516),
            max_relative = 1e-12
        );
    }

    #[test]
    fn jump_operators_cover_all_channels_with_declared_branching() {
        let p = RydbergParams::default();
        let ops = single_atom_jump_ops(&p).unwrap();
        assert_eq!(ops.len(), 8);
        let labels: Vec<&str> = ops.iter().map(|o| o.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "scatter to 0",
                "scatter to 1",
                "scatter out",
                "rydberg dephasing",
                "rydberg decay",
                "settle to 0",
                "settle to 1",
                "settle out"
            ]
        );
        assert!(ops[2].disposes && ops[7].disposes);
        assert_eq!(ops[4].cascade, vec![5, 6, 7]);
        // Dephasing jumps at a state-independent rate.
        let d = &ops[3].matrix;
        let dd = dagger(d).dot(d);
        let want = identity(4).mapv(|z| z * C64::new(p.gamma_d, 0.0));
        assert!(max_abs_diff(&dd, &want) < 1e-15 * p.gamma_d.max(1.0));
        // Scattering amplitudes scale with the square roots of the
        // branching weights.
        let r01 = ops[0].matrix[[LVL0, LVL1]] / ops[1].matrix[[LVL1, LVL1]];
        assert_relative_eq!(r01.re, (0.12f64 / 0.32).sqrt(), max_relative = 1e-12);
        assert!(r01.im.abs() < 1e-15);
        // Settle weights reproduce the branching ratio too.
        let s01 = ops[5].matrix[[LVL0, LVLP]].re / ops[6].matrix[[LVL1, LVLP]].re;
        assert_relative_eq!(s01, (0.12f64 / 0.32).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn zero_rates_drop_their_channels() {
        let mut p = RydbergParams::default();
        p.gamma_p = 0.0;
        let ops = single_atom_jump_ops(&p).unwrap();
        let labels: Vec<&str> = ops.iter().map(|o| o.label.as_str()).collect();
        // Without transient scattering the decay operator has nothing to
        // cascade into; the trajectory parks in the transient level.
        assert_eq!(labels, ["rydberg dephasing", "rydberg decay"]);
        assert!(ops[1].cascade.is_empty());
        let mut quiet = RydbergParams::default();
        quiet.gamma_p = 0.0;
        quiet.gamma_r = 0.0;
        quiet.gamma_d = 0.0;
        assert!(single_atom_jump_ops(&quiet).unwrap().is_empty());
    }

    #[test]
    fn two_atom_model_has_the_pulse_schedule_and_blockade() {
        let p = RydbergParams::default();
        let model = build_cphase_model(&p).unwrap();
        assert_eq!(model.spec.full_dim, 16);
        assert_eq!(model.spec.qubit_index_map, vec![0, 1, 4, 5]);
        assert_eq!(model.schedule.len(), 3);
        let t_pi = std::f64::consts::PI / effective_rabi(&p).unwrap();
        assert_relative_eq!(model.schedule[0].duration, t_pi, max_relative = 1e-12);
        assert_relative_eq!(
            model.schedule[1].duration,
            2.0 * t_pi,
            max_relative = 1e-12
        );
        assert_relative_eq!(model.total_duration(), 4.0 * t_pi, max_relative = 1e-12);
        assert_relative_eq!(t_pi, 0.43476307696073307, max_relative = 1e-12);
        for seg in &model.schedule {
            assert_relative_eq!(seg.hamiltonian[[10, 10]].re, p.blockade, max_relative = 1e-12);
        }
        assert!(max_abs_diff(
            &model.schedule[0].hamiltonian,
            &model.schedule[2].hamiltonian
        ) < 1e-15);
        // First and second pulse act on different atoms.
        assert!(model.schedule[0].hamiltonian[[LVL1 * 4, LVLR * 4]].norm() > 0.0);
        assert!(model.schedule[1].hamiltonian[[LVL1, LVLR]].norm() > 0.0);
        // Both atoms carry the full channel set, with cascade indices
        // remapped into the second block.
        assert_eq!(model.jump_ops.len(), 16);
        assert_eq!(model.jump_ops[4].cascade, vec![5, 6, 7]);
        assert_eq!(model.jump_ops[12].cascade, vec![13, 14, 15]);
        assert!(model.jump_ops[12].label.starts_with("target"));
    }

    #[test]
    fn ideal_gate_squares_to_identity_and_matches_cz_frame() {
        let u = ideal_cphase();
        assert!(max_abs_diff(&u.dot(&u), &identity(4)) < 1e-15);
        // Z (x) Z times this gate is the usual controlled-Z.
        let mut zz = identity(4);
        zz[[1, 1]] = C64::new(-1.0, 0.0);
        zz[[2, 2]] = C64::new(-1.0, 0.0);
        let mut cz = identity(4);
        cz[[3, 3]] = C64::new(-1.0, 0.0);
        assert!(max_abs_diff(&zz.dot(&u), &cz) < 1e-15);
    }

    /// Dissipation-free qubit-subspace map of the composed pulse sequence,
    /// by direct matrix exponentials.
    fn lossless_qubit_map(p: &RydbergParams) -> Array2<C64> {
        let mut quiet = p.clone();
        quiet.gamma_p = 0.0;
        quiet.gamma_r = 0.0;
        quiet.gamma_d = 0.0;
        let model = build_cphase_model(&quiet).unwrap();
        let mut u = identity(16);
        for seg in &model.schedule {
            u = unitary_exp(&seg.hamiltonian, seg.duration).unwrap().dot(&u);
        }
        let map = &model.spec.qubit_index_map;
        Array2::from_shape_fn((4, 4), |(i, j)| u[[map[i], map[j]]])
    }

    #[test]
    fn strong_blockade_limit_approaches_the_ideal_gate() {
        let mut p = RydbergParams::default();
        p.blockade = 1e4 * effective_rabi(&p).unwrap();
        let m = lossless_qubit_map(&p);
        // |00> is exactly dark; the other diagonal entries approach -1
        // with an error set by the residual doubly-excited leakage.
        assert!(max_abs_diff(&m, &ideal_cphase()) < 1e-3);
        assert_relative_eq!(m[[0, 0]].re, 1.0, max_relative = 1e-9);
        assert_relative_eq!(m[[1, 1]].re, -1.0, max_relative = 1e-6);
        assert_relative_eq!(m[[2, 2]].re, -1.0, max_relative = 1e-6);
    }

    #[test]
    fn raising_the_blockade_improves_the_lossless_gate() {
        let basis = OperatorBasis::pauli(2);
        let ideal = ideal_chi(&basis, &ideal_cphase()).unwrap();
        let mut fids = Vec::new();
        for mhz in [20.0, 30.0] {
            let mut p = RydbergParams::default();
            p.blockade = angular_from_mhz(mhz);
            let chi = chi_of_operator(&basis, &lossless_qubit_map(&p)).unwrap();
            fids.push(fidelity(&chi, &ideal).unwrap());
        }
        assert!(
            fids[1] > fids[0],
            "fidelity should grow with the blockade: {fids:?}"
        );
        assert!(fids[0] > 0.9, "even the weaker blockade gives a gate: {fids:?}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut p = RydbergParams::default();
        p.branching = [0.5, 0.5, 0.5];
        assert!(p.validate().is_err());
        let mut p = RydbergParams::default();
        p.gamma_d = -1.0;
        assert!(p.validate().is_err());
        let mut p = RydbergParams::default();
        p.omega_b = 0.0;
        // Zero upper leg means zero effective Rabi frequency: no pulses.
        assert!(build_cphase_model(&p).is_err());
    }
}
