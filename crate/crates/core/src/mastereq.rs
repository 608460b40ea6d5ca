//! Dense master-equation propagation and the two density-matrix
//! characterization routes. Everything here is deterministic and runs at
//! tight tolerances; the trajectory pipeline is validated against it.
//!
//! The generator integrated is
//! `dM/dt = -i (G M - M G^dagger) + sum_k L_k M L_k^dagger`
//! with `G = H - (i/2) sum_k L_k^dagger L_k` over all jump operators.
//! Operators marked as disposing keep their decay contribution in `G` but
//! are excluded from the recycling sum, so the population they remove leaves
//! the trace instead of reappearing inside the retained space. That matches
//! how the trajectory engine discards those runs.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2};
use ndarray_linalg::LeastSquaresSvd;
use rayon::prelude::*;

use crate::linalg::{dagger, herm_eigvals, trace};
use crate::model::{maximally_entangled_input, LindbladModel, OperatorBasis};
use crate::ode::{Dopri5, IntegratorOpts, StepOutcome};
use crate::tomography::ChiMatrix;
use crate::{C64, Error, Result};

/// Default tolerances for oracle-grade propagation.
pub fn oracle_opts() -> IntegratorOpts {
    IntegratorOpts::with_tols(1e-9, 1e-12)
}

/// A validated density matrix.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    data: Array2<C64>,
}

impl DensityMatrix {
    /// Checks Hermiticity, trace at most 1 and positive semidefiniteness
    /// (up to small numerical slack). Trace below 1 is legitimate once
    /// population has been lost.
    pub fn new(data: Array2<C64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::Dimension {
                context: "density matrix must be square",
                expected: data.nrows(),
                got: data.ncols(),
            });
        }
        crate::linalg::require_hermitian(&data, "density matrix", 1e-10)?;
        let tr = trace(&data).re;
        if tr > 1.0 + 1e-10 {
            return Err(Error::NumericCheck(format!(
                "density matrix trace {tr:.12} exceeds 1"
            )));
        }
        let vals = herm_eigvals(&data)?;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-8 {
            return Err(Error::EigenvalueTooNegative {
                name: "density matrix".into(),
                value: min,
                floor: -1e-8,
            });
        }
        Ok(Self { data })
    }

    /// `|psi><psi|`. The norm of `psi` may be below 1 (a conditioned or
    /// partially lost state); above 1 the trace check rejects it.
    pub fn from_pure(psi: &Array1<C64>) -> Result<Self> {
        Self::new(crate::linalg::outer(psi, psi))
    }

    pub fn data(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace_real(&self) -> f64 {
        trace(&self.data).re
    }

    pub fn into_inner(self) -> Array2<C64> {
        self.data
    }
}

/// The channel images of all elementary inputs: `entries[[rs, pq]]` is the
/// `(p, q)` qubit-subspace element of the evolved `|r><s|`.
#[derive(Debug, Clone)]
pub struct LambdaTensor {
    pub dq: usize,
    pub entries: Array2<C64>,
}

impl LambdaTensor {
    /// The tensor of the do-nothing process, `delta_rp delta_sq`.
    pub fn identity(dq: usize) -> Self {
        let n = dq * dq;
        let mut entries = Array2::zeros((n, n));
        for r in 0..dq {
            for s in 0..dq {
                entries[[r * dq + s, r * dq + s]] = C64::new(1.0, 0.0);
            }
        }
        Self { dq, entries }
    }

    /// Row-major flattening, the right-hand side of the structural solve.
    pub fn flattened(&self) -> Array1<C64> {
        Array1::from_iter(self.entries.iter().cloned())
    }
}

/// Evolve an arbitrary matrix under the model's generator across the whole
/// schedule. The generator is linear, so nothing here assumes Hermiticity
/// or positivity; that makes it usable both for density matrices and for
/// the elementary non-Hermitian inputs `|r><s|`.
pub fn propagate_matrix(
    model: &LindbladModel,
    m0: &Array2<C64>,
    opts: &IntegratorOpts,
) -> Result<Array2<C64>> {
    let d = model.spec.full_dim;
    if m0.dim() != (d, d) {
        return Err(Error::Dimension {
            context: "matrix to propagate",
            expected: d,
            got: m0.nrows(),
        });
    }
    let mut half_decay: Array2<C64> = Array2::zeros((d, d));
    for op in &model.jump_ops {
        let ld = dagger(&op.matrix);
        general_mat_mul(
            C64::new(0.5, 0.0),
            &ld,
            &op.matrix,
            C64::new(1.0, 0.0),
            &mut half_decay,
        );
    }
    let recycle: Vec<(Array2<C64>, Array2<C64>)> = model
        .jump_ops
        .iter()
        .filter(|op| !op.disposes)
        .map(|op| (op.matrix.clone(), dagger(&op.matrix)))
        .collect();
    let recycle = &recycle;

    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let minus_i = C64::new(0.0, -1.0);
    let plus_i = C64::new(0.0, 1.0);

    let mut y = m0.to_owned();
    let mut t0 = 0.0;
    for (idx, seg) in model.schedule.iter().enumerate() {
        let g = &seg.hamiltonian - &half_decay.mapv(|z| z * plus_i);
        let gdag = dagger(&g);
        let mut tmp: Array2<C64> = Array2::zeros((d, d));
        let rhs = move |_t: f64, m: &Array2<C64>, out: &mut Array2<C64>| {
            general_mat_mul(minus_i, &g, m, zero, out);
            general_mat_mul(plus_i, m, &gdag, one, out);
            for (l, ldag) in recycle {
                general_mat_mul(one, l, m, zero, &mut tmp);
                general_mat_mul(one, &tmp, ldag, one, out);
            }
        };
        let mut integ = Dopri5::new(rhs, t0, t0 + seg.duration, y, *opts, idx)?;
        while integ.step()? != StepOutcome::Done {}
        y = integ.into_y();
        t0 += seg.duration;
    }
    Ok(y)
}

/// Exact solution of the master equation for a density-matrix input, with
/// trace accounting. With no loss channels the trace must come back intact;
/// with loss it may only shrink.
pub fn propagate_density(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    opts: &IntegratorOpts,
) -> Result<DensityMatrix> {
    let tr_in = rho0.trace_real();
    let mut out = propagate_matrix(model, rho0.data(), opts)?;
    // Population parked on loss levels counts as gone; remove it so the
    // trace deficit reports exactly the lost weight.
    for &l in &model.spec.loss_indices {
        out.row_mut(l).fill(C64::new(0.0, 0.0));
        out.column_mut(l).fill(C64::new(0.0, 0.0));
    }
    let tr_out = trace(&out).re;
    let lossless =
        model.spec.loss_indices.is_empty() && model.jump_ops.iter().all(|op| !op.disposes);
    if lossless {
        if (tr_out - tr_in).abs() > 1e-8 * tr_in.max(1.0) {
            return Err(Error::NumericCheck(format!(
                "trace drifted from {tr_in:.12} to {tr_out:.12} in a lossless model"
            )));
        }
    } else if tr_out > tr_in + 1e-8 {
        return Err(Error::NumericCheck(format!(
            "trace grew from {tr_in:.12} to {tr_out:.12} despite loss channels"
        )));
    }
    // The exact flow preserves Hermiticity; fold away integrator round-off
    // before validation.
    let herm = (&out + &dagger(&out)).mapv(|z| z * C64::new(0.5, 0.0));
    DensityMatrix::new(herm)
}

/// Solve the structural system for chi given a populated Lambda tensor.
fn chi_from_lambda(basis: &OperatorBasis, lambda: &LambdaTensor) -> Result<ChiMatrix> {
    let dq = basis.dim();
    if lambda.dq != dq {
        return Err(Error::Dimension {
            context: "lambda tensor vs basis dimension",
            expected: dq,
            got: lambda.dq,
        });
    }
    let k = basis.k_tensor()?;
    let rhs = lambda.flattened();
    let ls = k.least_squares(&rhs)?;
    let n4 = dq * dq * dq * dq;
    if (ls.rank as usize) < n4 {
        log::warn!(
            "structural tensor rank {} of {n4}; chi is the minimum-norm solution",
            ls.rank
        );
    }
    if let (Some(&smax), Some(&smin)) = (
        ls.singular_values.first(),
        ls.singular_values.iter().filter(|s| **s > 0.0).last(),
    ) {
        log::debug!("structural tensor condition {:.3e}", smax / smin);
    }
    let chi = ls
        .solution
        .into_shape((dq * dq, dq * dq))
        .expect("solution length is dq^4");
    // The least-squares solution carries no Hermiticity constraint; fold the
    // (tiny) skew part away before the constructor checks it.
    let herm = (&chi + &dagger(&chi)).mapv(|z| z * C64::new(0.5, 0.0));
    ChiMatrix::new(herm, basis.labels.clone())
}

/// Process characterization by direct propagation: evolve each elementary
/// input `|r><s|` through the master equation, read off the qubit-subspace
/// images, and solve the structural system for chi. The elementary inputs
/// are independent, so they are propagated in parallel and assembled in
/// index order.
pub fn sqpc_characterize(
    model: &LindbladModel,
    basis: &OperatorBasis,
    opts: &IntegratorOpts,
) -> Result<ChiMatrix> {
    let dq = model.spec.qubit_dim();
    if basis.dim() != dq {
        return Err(Error::Dimension {
            context: "basis vs model qubit dimension",
            expected: dq,
            got: basis.dim(),
        });
    }
    let d = model.spec.full_dim;
    let map = &model.spec.qubit_index_map;
    let rows: Vec<Array1<C64>> = (0..dq * dq)
        .into_par_iter()
        .map(|rs| {
            let (r, s) = (rs / dq, rs % dq);
            let mut o: Array2<C64> = Array2::zeros((d, d));
            o[[map[r], map[s]]] = C64::new(1.0, 0.0);
            let out = propagate_matrix(model, &o, opts)?;
            let mut row: Array1<C64> = Array1::zeros(dq * dq);
            for p in 0..dq {
                for q in 0..dq {
                    row[p * dq + q] = out[[map[p], map[q]]];
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut entries: Array2<C64> = Array2::zeros((dq * dq, dq * dq));
    for (rs, row) in rows.iter().enumerate() {
        entries.row_mut(rs).assign(row);
    }
    chi_from_lambda(basis, &LambdaTensor { dq, entries })
}

/// Process characterization through one propagation of the maximally
/// entangled system-ancilla density matrix. The evolved matrix contains
/// every elementary channel image at once; the `(r, s)` image sits in the
/// ancilla `(r, s)` sector, scaled by the input weight `1/dq`.
pub fn aapc_characterize_density(
    model: &LindbladModel,
    basis: &OperatorBasis,
    opts: &IntegratorOpts,
) -> Result<ChiMatrix> {
    let dq = model.spec.qubit_dim();
    if basis.dim() != dq {
        return Err(Error::Dimension {
            context: "basis vs model qubit dimension",
            expected: dq,
            got: basis.dim(),
        });
    }
    let ext = model.ancilla_extend();
    let input = maximally_entangled_input(&model.spec);
    let rho0 = DensityMatrix::from_pure(&input.state)?;
    let rho_out = propagate_density(&ext, &rho0, opts)?;
    let map = &model.spec.qubit_index_map;
    let scale = C64::new(dq as f64, 0.0);
    let mut entries: Array2<C64> = Array2::zeros((dq * dq, dq * dq));
    for r in 0..dq {
        for s in 0..dq {
            for p in 0..dq {
                for q in 0..dq {
                    entries[[r * dq + s, p * dq + q]] =
                        scale * rho_out.data()[[map[p] * dq + r, map[q] * dq + s]];
                }
            }
        }
    }
    chi_from_lambda(basis, &LambdaTensor { dq, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, max_abs_diff, outer, unitary_exp};
    use crate::model::{HilbertSpec, JumpOp, Segment};
    use approx::assert_relative_eq;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn qubit_model(h: Array2<C64>, duration: f64, jump_ops: Vec<JumpOp>) -> LindbladModel {
        LindbladModel::new(
            HilbertSpec::qubit_only(&[2]),
            vec![Segment {
                duration,
                hamiltonian: h,
            }],
            jump_ops,
        )
        .unwrap()
    }

    fn lowering(gamma: f64) -> JumpOp {
        let g = gamma.sqrt();
        JumpOp::new(
            "decay",
            array![[c(0.0, 0.0), c(g, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]],
        )
    }

    fn plus_state() -> DensityMatrix {
        let psi = Array1::from_vec(vec![c(1.0 / 2f64.sqrt(), 0.0), c(1.0 / 2f64.sqrt(), 0.0)]);
        DensityMatrix::from_pure(&psi).unwrap()
    }

    #[test]
    fn density_constructor_enforces_the_invariants() {
        let bad_herm = array![[c(0.5, 0.0), c(0.3, 0.0)], [c(0.1, 0.0), c(0.5, 0.0)]];
        assert!(matches!(
            DensityMatrix::new(bad_herm),
            Err(Error::NotHermitian { .. })
        ));
        let big_trace = array![[c(0.9, 0.0), c(0.0, 0.0)], [c(0.3, 0.0), c(0.3, 0.0)]];
        // Also not Hermitian, so fix that but keep trace 1.2.
        let big_trace = (&big_trace + &dagger(&big_trace)).mapv(|z| z * c(0.5, 0.0));
        assert!(DensityMatrix::new(big_trace).is_err());
        let indefinite = array![[c(1.5, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-0.5, 0.0)]];
        assert!(matches!(
            DensityMatrix::new(indefinite),
            Err(Error::EigenvalueTooNegative { .. })
        ));
    }

    #[test]
    fn unitary_limit_matches_matrix_exponential() {
        let h = array![[c(0.4, 0.0), c(0.3, -0.8)], [c(0.3, 0.8), c(-0.9, 0.0)]];
        let t = 0.7;
        let model = qubit_model(h.clone(), t, vec![]);
        let rho0 = plus_state();
        let out = propagate_density(&model, &rho0, &oracle_opts()).unwrap();
        let u = unitary_exp(&h, t).unwrap();
        let want = u.dot(rho0.data()).dot(&dagger(&u));
        assert!(max_abs_diff(out.data(), &want) < 1e-8);
    }

    #[test]
    fn two_segment_schedule_composes_in_order() {
        let h1 = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]];
        let h2 = array![[c(1.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(-1.0, 0.0)]];
        let model = LindbladModel::new(
            HilbertSpec::qubit_only(&[2]),
            vec![
                Segment {
                    duration: 0.4,
                    hamiltonian: h1.clone(),
                },
                Segment {
                    duration: 0.9,
                    hamiltonian: h2.clone(),
                },
            ],
            vec![],
        )
        .unwrap();
        let rho0 = plus_state();
        let out = propagate_density(&model, &rho0, &oracle_opts()).unwrap();
        let u = unitary_exp(&h2, 0.9).unwrap().dot(&unitary_exp(&h1, 0.4).unwrap());
        let want = u.dot(rho0.data()).dot(&dagger(&u));
        assert!(max_abs_diff(out.data(), &want) < 1e-8);
    }

    #[test]
    fn amplitude_damping_decays_populations_and_coherences() {
        let gamma = 1.3;
        let t = 0.6;
        let model = qubit_model(Array2::zeros((2, 2)), t, vec![lowering(gamma)]);
        let out = propagate_density(&model, &plus_state(), &oracle_opts()).unwrap();
        let p1 = 0.5 * (-gamma * t).exp();
        assert_relative_eq!(out.data()[[1, 1]].re, p1, max_relative = 1e-8);
        assert_relative_eq!(out.data()[[0, 0]].re, 1.0 - p1, max_relative = 1e-8);
        assert_relative_eq!(
            out.data()[[0, 1]].re,
            0.5 * (-0.5 * gamma * t).exp(),
            max_relative = 1e-8
        );
    }

    #[test]
    fn dephasing_kills_coherences_at_twice_the_rate() {
        let gd = 0.35f64;
        let t = 0.8;
        let z = array![[c(gd.sqrt(), 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-gd.sqrt(), 0.0)]];
        let model = qubit_model(Array2::zeros((2, 2)), t, vec![JumpOp::new("dephase", z)]);
        let out = propagate_density(&model, &plus_state(), &oracle_opts()).unwrap();
        assert_relative_eq!(
            out.data()[[0, 1]].re,
            0.5 * (-2.0 * gd * t).exp(),
            max_relative = 1e-8
        );
        assert_relative_eq!(out.data()[[0, 0]].re, 0.5, max_relative = 1e-8);
    }

    #[test]
    fn propagation_is_linear_in_the_input() {
        let h = array![[c(0.2, 0.0), c(0.5, 0.1)], [c(0.5, -0.1), c(-0.4, 0.0)]];
        let model = qubit_model(h, 0.9, vec![lowering(0.7)]);
        let m1 = array![[c(0.6, 0.0), c(0.1, 0.2)], [c(0.1, -0.2), c(0.4, 0.0)]];
        let m2 = array![[c(0.2, 0.0), c(-0.3, 0.1)], [c(-0.3, -0.1), c(0.8, 0.0)]];
        let opts = oracle_opts();
        let combo = m1.mapv(|z| z * c(0.3, 0.0)) + m2.mapv(|z| z * c(0.7, 0.0));
        let lhs = propagate_matrix(&model, &combo, &opts).unwrap();
        let r1 = propagate_matrix(&model, &m1, &opts).unwrap();
        let r2 = propagate_matrix(&model, &m2, &opts).unwrap();
        let rhs = r1.mapv(|z| z * c(0.3, 0.0)) + r2.mapv(|z| z * c(0.7, 0.0));
        assert!(max_abs_diff(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn identity_process_gives_elementary_chi_and_identity_lambda() {
        let model = qubit_model(Array2::zeros((2, 2)), 1.0, vec![]);
        let basis = OperatorBasis::pauli(1);
        let chi = sqpc_characterize(&model, &basis, &oracle_opts()).unwrap();
        let mut want: Array2<C64> = Array2::zeros((4, 4));
        want[[0, 0]] = c(1.0, 0.0);
        assert!(max_abs_diff(chi.data(), &want) < 1e-8);
        let ident = LambdaTensor::identity(2);
        assert_relative_eq!(ident.entries[[0, 0]].re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(ident.entries[[1, 1]].re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(ident.entries[[1, 2]].re, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn half_pi_rotation_puts_all_weight_on_x() {
        let h = array![
            [c(0.0, 0.0), c(std::f64::consts::FRAC_PI_2, 0.0)],
            [c(std::f64::consts::FRAC_PI_2, 0.0), c(0.0, 0.0)]
        ];
        let model = qubit_model(h, 1.0, vec![]);
        let basis = OperatorBasis::pauli(1);
        let chi = sqpc_characterize(&model, &basis, &oracle_opts()).unwrap();
        assert_relative_eq!(chi.data()[[1, 1]].re, 1.0, max_relative = 1e-8);
        assert_relative_eq!(chi.trace_real(), 1.0, max_relative = 1e-8);
    }

    #[test]
    fn damping_chi_matches_operator_sum_construction() {
        let gamma_t = 0.1;
        let model = qubit_model(Array2::zeros((2, 2)), gamma_t, vec![lowering(1.0)]);
        let basis = OperatorBasis::pauli(1);
        let chi = sqpc_characterize(&model, &basis, &oracle_opts()).unwrap();
        let p = 1.0 - (-gamma_t).exp();
        let k1 = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c((1.0 - p).sqrt(), 0.0)]];
        let k2 = array![[c(0.0, 0.0), c(p.sqrt(), 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let c1 = basis.expand(&k1).unwrap();
        let c2 = basis.expand(&k2).unwrap();
        let want = outer(&c1, &c1) + outer(&c2, &c2);
        assert!(max_abs_diff(chi.data(), &want) < 1e-7);
        // Complete positivity and trace preservation, as this channel has
        // neither leakage nor loss.
        assert!(chi.min_eigenvalue().unwrap() > -1e-6);
        assert_relative_eq!(chi.trace_real(), 1.0, max_relative = 1e-6);
    }

    #[test]
    fn ancilla_route_agrees_with_direct_route() {
        let h = array![[c(0.0, 0.0), c(0.8, 0.0)], [c(0.8, 0.0), c(0.0, 0.0)]];
        let model = qubit_model(h, 1.0, vec![lowering(0.6)]);
        let basis = OperatorBasis::pauli(1);
        let opts = oracle_opts();
        let direct = sqpc_characterize(&model, &basis, &opts).unwrap();
        let via_ancilla = aapc_characterize_density(&model, &basis, &opts).unwrap();
        assert!(max_abs_diff(direct.data(), via_ancilla.data()) < 1e-8);
    }

    #[test]
    fn ancilla_route_identity_process() {
        let model = qubit_model(Array2::zeros((2, 2)), 1.0, vec![]);
        let basis = OperatorBasis::pauli(1);
        let chi = aapc_characterize_density(&model, &basis, &oracle_opts()).unwrap();
        let mut want: Array2<C64> = Array2::zeros((4, 4));
        want[[0, 0]] = c(1.0, 0.0);
        assert!(max_abs_diff(chi.data(), &want) < 1e-8);
    }

    #[test]
    fn entangled_density_encodes_every_elementary_input() {
        // The maximally entangled density is, entry for entry, the stack of
        // all |r><s| inputs: dq * |Psi><Psi| = sum_rs |r><s| (x) |r><s|.
        let spec = HilbertSpec::qubit_only(&[2]);
        let dq = 2;
        let psi = maximally_entangled_input(&spec).state;
        let lhs = outer(&psi, &psi).mapv(|z| z * c(dq as f64, 0.0));
        let mut rhs: Array2<C64> = Array2::zeros((4, 4));
        for r in 0..dq {
            for s in 0..dq {
                let mut o: Array2<C64> = Array2::zeros((2, 2));
                o[[r, s]] = c(1.0, 0.0);
                rhs = rhs + ndarray::linalg::kron(&o, &o);
            }
        }
        assert!(max_abs_diff(&lhs, &rhs) < 1e-14);
    }

    #[test]
    fn structural_identity_holds_for_a_damped_model() {
        // Contract the structural tensor with chi and compare against the
        // directly propagated channel images, entry by entry.
        let h = array![[c(0.0, 0.0), c(0.8, 0.0)], [c(0.8, 0.0), c(0.0, 0.0)]];
        let model = qubit_model(h, 1.0, vec![lowering(0.6)]);
        let basis = OperatorBasis::pauli(1);
        let opts = oracle_opts();
        let chi = sqpc_characterize(&model, &basis, &opts).unwrap();
        let d = model.spec.full_dim;
        let dq = 2;
        let mut entries: Array2<C64> = Array2::zeros((4, 4));
        for r in 0..dq {
            for s in 0..dq {
                let mut o: Array2<C64> = Array2::zeros((d, d));
                o[[r, s]] = c(1.0, 0.0);
                let out = propagate_matrix(&model, &o, &opts).unwrap();
                for p in 0..dq {
                    for q in 0..dq {
                        entries[[r * dq + s, p * dq + q]] = out[[p, q]];
                    }
                }
            }
        }
        let lambda = LambdaTensor { dq, entries };
        let k = basis.k_tensor().unwrap();
        let chi_flat = Array1::from_iter(chi.data().iter().cloned());
        let predicted = k.dot(&chi_flat);
        let reference = lambda.flattened();
        let worst = predicted
            .iter()
            .zip(reference.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-6, "structural identity violated by {worst:.3e}");
    }

    #[test]
    fn disposal_drains_trace_without_recycling() {
        // A disposing channel keeps its decay in the drift but returns
        // nothing: the excited population must leave the trace entirely.
        let gamma = 0.9;
        let t = 0.7;
        let model = qubit_model(Array2::zeros((2, 2)), t, vec![{
            let mut op = lowering(gamma);
            op.disposes = true;
            op
        }]);
        let psi = Array1::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let rho0 = DensityMatrix::from_pure(&psi).unwrap();
        let out = propagate_density(&model, &rho0, &oracle_opts()).unwrap();
        let survive = (-gamma * t).exp();
        assert_relative_eq!(out.trace_real(), survive, max_relative = 1e-8);
        assert!(out.data()[[0, 0]].norm() < 1e-10);
    }

    #[test]
    fn identity_eye_check_on_unit_trace() {
        let u = identity(2);
        let rho = DensityMatrix::new(u.mapv(|z| z * c(0.5, 0.0))).unwrap();
        assert_relative_eq!(rho.trace_real(), 1.0, epsilon = 1e-14);
    }
}
