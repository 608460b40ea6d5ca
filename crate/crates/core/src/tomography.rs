//! From trajectory end states to the process matrix, plus the metrics used
//! to compare process matrices.
//!
//! Each surviving trajectory contributes one zeta vector: the solution of
//! `kappa zeta = lambda`, where lambda collects the trajectory's qubit-space
//! amplitudes (scaled back to the unnormalized pair-state convention). The
//! process matrix is then the ensemble average of `zeta zeta^dagger`. Since
//! zeta only ever enters through that outer product, global phases of the
//! final states are irrelevant and no phase fixing is performed anywhere.

use ndarray::{Array1, Array2};

use crate::linalg::{
    self, herm_eigvals, max_abs_diff, outer, require_hermitian, singular_values, sqrt_psd, trace,
};
use crate::mcwf::{run_ensemble, EnsembleOpts};
use crate::model::{maximally_entangled_input, HilbertSpec, LindbladModel, OperatorBasis};
use crate::{C64, Error, Result};

/// Eigenvalues of a chi matrix this far below zero are treated as statistical
/// noise and clipped when a positive-semidefinite square root is needed;
/// anything more negative is a real violation and becomes an error.
pub const FIDELITY_CLIP_FLOOR: f64 = -1e-3;

/// Expansion coefficients of one trajectory's effective evolution.
#[derive(Debug, Clone)]
pub struct ZetaVector {
    /// Coefficients over the operator basis, `dq^2` entries.
    pub coeffs: Array1<C64>,
    /// Trajectory id (its RNG stream index).
    pub source: u64,
    /// Whether the trajectory experienced at least one quantum jump.
    pub jumped: bool,
}

/// Ensemble bookkeeping carried along with an estimated chi matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleMeta {
    /// Total trajectories, disposed ones included.
    pub n: usize,
    /// Trajectories that finished without a single jump.
    pub zero_jump: usize,
    /// `n - zero_jump`; disposed trajectories count as jumped, because
    /// disposal is itself triggered by a jump.
    pub jumped: usize,
    /// Trajectories discarded after a loss event.
    pub disposed: usize,
    pub master_seed: u64,
}

/// A process matrix over an operator basis.
#[derive(Debug, Clone)]
pub struct ChiMatrix {
    data: Array2<C64>,
    labels: Vec<String>,
    meta: Option<EnsembleMeta>,
}

impl ChiMatrix {
    /// Wraps a matrix after checking it is square, Hermitian and has trace
    /// at most 1 (up to tolerance). Trace below 1 is fine; leakage and loss
    /// show up exactly that way.
    pub fn new(data: Array2<C64>, labels: Vec<String>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::Dimension {
                context: "chi matrix must be square",
                expected: data.nrows(),
                got: data.ncols(),
            });
        }
        if labels.len() != data.nrows() {
            return Err(Error::Dimension {
                context: "chi basis labels vs matrix size",
                expected: data.nrows(),
                got: labels.len(),
            });
        }
        require_hermitian(&data, "chi matrix", 1e-10)?;
        let tr = trace(&data);
        if tr.re > 1.0 + 1e-8 {
            return Err(Error::NumericCheck(format!(
                "chi trace {:.12} exceeds 1; the map would increase total probability",
                tr.re
            )));
        }
        Ok(Self {
            data,
            labels,
            meta: None,
        })
    }

    pub fn with_meta(mut self, meta: EnsembleMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn data(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn meta(&self) -> Option<&EnsembleMeta> {
        self.meta.as_ref()
    }

    /// Side length, i.e. the number of basis operators.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace_real(&self) -> f64 {
        trace(&self.data).re
    }

    /// Smallest eigenvalue; a complete-positivity diagnostic. Statistical
    /// estimates may dip slightly below zero.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let vals = herm_eigvals(&self.data)?;
        Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
    }
}

/// Extract the zeta coefficients from a final entangled state, given as the
/// `full_dim x dq` column block (column `a` is the system state entangled
/// with ancilla level `a`).
///
/// Amplitudes outside the qubit subspace are simply not sampled; leakage
/// therefore shows up as a reduced zeta norm rather than an error.
pub fn zeta_from_state(
    basis: &OperatorBasis,
    state: &Array2<C64>,
    spec: &HilbertSpec,
) -> Result<Array1<C64>> {
    let dq = spec.qubit_dim();
    if basis.dim() != dq {
        return Err(Error::Dimension {
            context: "operator basis vs qubit subspace",
            expected: dq,
            got: basis.dim(),
        });
    }
    if state.dim() != (spec.full_dim, dq) {
        return Err(Error::Dimension {
            context: "final state block shape",
            expected: spec.full_dim,
            got: state.nrows(),
        });
    }
    let scale = C64::new((dq as f64).sqrt(), 0.0);
    let mut lambda = Array1::zeros(dq * dq);
    for (r, &fr) in spec.qubit_index_map.iter().enumerate() {
        for a in 0..dq {
            lambda[r * dq + a] = scale * state[[fr, a]];
        }
    }
    basis.solve_zeta(&lambda)
}

/// Average the outer products of a batch of zeta vectors into a chi matrix.
///
/// Disposed trajectories carry no zeta; they enter only through the ensemble
/// size `n = zetas.len() + disposed`, which keeps the lost probability
/// visible as a trace deficit.
pub fn accumulate_chi(
    basis: &OperatorBasis,
    zetas: &[ZetaVector],
    disposed: usize,
    master_seed: u64,
) -> Result<ChiMatrix> {
    let n = zetas.len() + disposed;
    if n == 0 {
        return Err(Error::InvalidInput(
            "cannot accumulate chi from an empty ensemble".into(),
        ));
    }
    let d2 = basis.len();
    let mut sum: Array2<C64> = Array2::zeros((d2, d2));
    for z in zetas {
        if z.coeffs.len() != d2 {
            return Err(Error::Dimension {
                context: "zeta length vs basis size",
                expected: d2,
                got: z.coeffs.len(),
            });
        }
        for m in 0..d2 {
            let zm = z.coeffs[m];
            for k in 0..d2 {
                sum[[m, k]] += zm * z.coeffs[k].conj();
            }
        }
    }
    let w = C64::new(1.0 / n as f64, 0.0);
    sum.mapv_inplace(|v| v * w);
    let zero_jump = zetas.iter().filter(|z| !z.jumped).count();
    Ok(ChiMatrix::new(sum, basis.labels.clone())?.with_meta(EnsembleMeta {
        n,
        zero_jump,
        jumped: n - zero_jump,
        disposed,
        master_seed,
    }))
}

/// Chi matrix of the deterministic map `rho -> M rho M^dagger`.
///
/// `M` need not be unitary (sub-unitary blocks of leaky propagators are the
/// main customer), but it must not increase total probability, or the trace
/// check on the result rejects it.
pub fn chi_of_operator(basis: &OperatorBasis, m: &Array2<C64>) -> Result<ChiMatrix> {
    let c = basis.expand(m)?;
    ChiMatrix::new(outer(&c, &c), basis.labels.clone())
}

/// Chi matrix of an ideal target gate: rank one, unit trace.
pub fn ideal_chi(basis: &OperatorBasis, target_unitary: &Array2<C64>) -> Result<ChiMatrix> {
    let dq = basis.dim();
    if target_unitary.dim() != (dq, dq) {
        return Err(Error::Dimension {
            context: "target unitary",
            expected: dq,
            got: target_unitary.nrows(),
        });
    }
    let gram = linalg::dagger(target_unitary).dot(target_unitary);
    let dev = max_abs_diff(&gram, &linalg::identity(dq));
    if dev > 1e-10 {
        return Err(Error::NotUnitary {
            name: "target gate".into(),
            deviation: dev,
        });
    }
    chi_of_operator(basis, target_unitary)
}

fn check_same_dim(a: &ChiMatrix, b: &ChiMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            context: "chi matrices being compared",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Half the trace norm of `a - b`, for Hermitian arrays.
fn trace_distance_raw(a: &Array2<C64>, b: &Array2<C64>) -> Result<f64> {
    let diff = a - b;
    require_hermitian(&diff, "trace-distance difference", 1e-8)?;
    let vals = herm_eigvals(&diff)?;
    Ok(0.5 * vals.iter().map(|v| v.abs()).sum::<f64>())
}

/// Trace distance between two process matrices.
pub fn trace_distance(a: &ChiMatrix, b: &ChiMatrix) -> Result<f64> {
    check_same_dim(a, b)?;
    trace_distance_raw(a.data(), b.data())
}

/// Process fidelity: the trace norm of `sqrt(A) sqrt(B)`.
///
/// Eigenvalues in `[FIDELITY_CLIP_FLOOR, 0)` are clipped to zero before the
/// square roots are taken; statistical chi estimates routinely carry that
/// much negativity. Anything lower is refused.
pub fn fidelity(a: &ChiMatrix, b: &ChiMatrix) -> Result<f64> {
    check_same_dim(a, b)?;
    let sa = sqrt_psd(a.data(), FIDELITY_CLIP_FLOOR, "first chi argument")?;
    let sb = sqrt_psd(b.data(), FIDELITY_CLIP_FLOOR, "second chi argument")?;
    let sv = singular_values(&sa.dot(&sb))?;
    Ok(sv.sum())
}

/// Upper bound on the trace distance to the ideal gate using only the
/// no-jump component: distance of the `(zero_jump / n)`-weighted no-jump chi
/// from the ideal, plus half the jump fraction.
///
/// The caller-facing guarantee is that this value is never below the trace
/// distance computed from the full ensemble.
pub fn nojump_upper_bound(
    chi_ideal: &ChiMatrix,
    chi_nojump: &ChiMatrix,
    zero_jump: usize,
    n: usize,
) -> Result<f64> {
    if zero_jump == 0 {
        return Err(Error::NoSurvivors { n });
    }
    if zero_jump > n {
        return Err(Error::InvalidInput(format!(
            "zero-jump count {zero_jump} exceeds ensemble size {n}"
        )));
    }
    check_same_dim(chi_ideal, chi_nojump)?;
    let p = zero_jump as f64 / n as f64;
    let scaled = chi_nojump.data().mapv(|v| v * C64::new(p, 0.0));
    Ok(trace_distance_raw(chi_ideal.data(), &scaled)? + (1.0 - p) / 2.0)
}

/// The same bound estimated from a single no-jump trajectory: the squared
/// norm of its unnormalized final state estimates the no-jump fraction
/// directly, so one trajectory suffices.
pub fn nojump_bound_from_survival(
    chi_ideal: &ChiMatrix,
    chi_nojump: &ChiMatrix,
    survival: f64,
) -> Result<f64> {
    if !(survival > 0.0 && survival <= 1.0 + 1e-10) {
        return Err(Error::InvalidInput(format!(
            "survival probability {survival} outside (0, 1]"
        )));
    }
    check_same_dim(chi_ideal, chi_nojump)?;
    let p = survival.min(1.0);
    let scaled = chi_nojump.data().mapv(|v| v * C64::new(p, 0.0));
    Ok(trace_distance_raw(chi_ideal.data(), &scaled)? + (1.0 - p) / 2.0)
}

/// Everything one stochastic characterization run produces.
#[derive(Debug, Clone)]
pub struct AawfOutcome {
    /// The full ensemble estimate.
    pub chi: ChiMatrix,
    /// Average over jump-free trajectories only; absent when every
    /// trajectory jumped.
    pub chi_nojump: Option<ChiMatrix>,
    /// Average over trajectories with at least one jump, disposed ones
    /// included as zero contributions; absent when nothing jumped.
    pub chi_jump: Option<ChiMatrix>,
    /// Squared norm of the first jump-free trajectory's unnormalized final
    /// state. Within integrator tolerance this is the deterministic no-jump
    /// probability of the whole schedule, so one trajectory suffices.
    pub nojump_survival: Option<f64>,
}

/// Characterize a process by evolving the entangled pair input with the
/// stochastic engine. A single ensemble yields the process matrix together
/// with its exact decomposition into jump-free and jumped parts: with `S`
/// jump-free among `n`, `chi = (S/n) chi_nojump + (1 - S/n) chi_jump`.
pub fn characterize_aawf(
    model: &LindbladModel,
    basis: &OperatorBasis,
    opts: &EnsembleOpts,
) -> Result<AawfOutcome> {
    let dq = model.spec.qubit_dim();
    if basis.dim() != dq {
        return Err(Error::Dimension {
            context: "operator basis dimension vs model qubit dimension",
            expected: dq,
            got: basis.dim(),
        });
    }
    let input = maximally_entangled_input(&model.spec);
    let block = input.as_block(&model.spec);
    let trajectories = run_ensemble(model, &block, opts)?;

    let mut zetas = Vec::with_capacity(trajectories.len());
    let mut disposed = 0usize;
    let mut nojump_survival = None;
    for tr in &trajectories {
        let Some(state) = tr.final_state.as_ref() else {
            disposed += 1;
            continue;
        };
        if nojump_survival.is_none() {
            nojump_survival = tr.survival;
        }
        zetas.push(ZetaVector {
            coeffs: zeta_from_state(basis, state, &model.spec)?,
            source: tr.id,
            jumped: !tr.jumps.is_empty(),
        });
    }
    let chi = accumulate_chi(basis, &zetas, disposed, opts.master_seed)?;
    let meta = chi.meta().expect("an ensemble estimate always carries meta");
    let (zero_jump, jumped) = (meta.zero_jump, meta.jumped);

    let chi_nojump = if zero_jump > 0 {
        let nojump: Vec<ZetaVector> = zetas.iter().filter(|z| !z.jumped).cloned().collect();
        Some(accumulate_chi(basis, &nojump, 0, opts.master_seed)?)
    } else {
        None
    };
    let chi_jump = if jumped > 0 {
        let jump: Vec<ZetaVector> = zetas.into_iter().filter(|z| z.jumped).collect();
        Some(accumulate_chi(basis, &jump, disposed, opts.master_seed)?)
    } else {
        None
    };
    Ok(AawfOutcome {
        chi,
        chi_nojump,
        chi_jump,
        nojump_survival,
    })
}
