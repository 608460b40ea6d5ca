//! Model description shared by the trajectory engine and the dense oracles.
//!
//! A [`LindbladModel`] is a piecewise-constant Hamiltonian schedule plus a
//! set of jump operators on a `full_dim`-dimensional Hilbert space, of which
//! a subset of basis states forms the computational (qubit) subspace. The
//! map between qubit indices and full-space indices lives in
//! [`HilbertSpec`], so models are free to carry auxiliary levels that the
//! process matrix never sees.
//!
//! [`OperatorBasis`] owns the operator set chi is expressed in together with
//! the structural data derived from it: the matrix that converts bipartite
//! amplitudes into basis coefficients (with a reusable factorization), and,
//! built on demand, the tensor that maps a chi matrix to the action of the
//! channel on every elementary input.

use ndarray::{linalg::kron, Array1, Array2};
use ndarray_linalg::{Factorize, Solve, SVD};
use num_complex::Complex64 as C64;
use std::sync::OnceLock;

use crate::linalg;
use crate::{Error, Result};

type LuFactor = ndarray_linalg::LUFactorized<ndarray::OwnedRepr<C64>>;

/// How the computational subspace sits inside the full Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertSpec {
    /// Dimension of the space states and operators live in.
    pub full_dim: usize,
    /// Dimension of each computational subsystem (e.g. `[2, 2]` for two
    /// qubits). Their product is the qubit dimension `dq`.
    pub qubit_dims: Vec<usize>,
    /// `qubit_index_map[r]` is the full-space basis index of computational
    /// basis state `r`. Must be injective.
    pub qubit_index_map: Vec<usize>,
    /// Full-space basis indices representing population that is
    /// irreversibly lost. A trajectory whose state ends up supported only
    /// here is discarded. May be empty; models can also mark individual
    /// jump operators as disposing instead of spending basis indices on
    /// lost levels.
    pub loss_indices: Vec<usize>,
}

impl HilbertSpec {
    pub fn new(
        full_dim: usize,
        qubit_dims: Vec<usize>,
        qubit_index_map: Vec<usize>,
        loss_indices: Vec<usize>,
    ) -> Result<Self> {
        let spec = Self {
            full_dim,
            qubit_dims,
            qubit_index_map,
            loss_indices,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A space with no auxiliary levels: the qubit subspace is everything.
    pub fn qubit_only(qubit_dims: &[usize]) -> Self {
        let dq: usize = qubit_dims.iter().product();
        Self {
            full_dim: dq,
            qubit_dims: qubit_dims.to_vec(),
            qubit_index_map: (0..dq).collect(),
            loss_indices: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.qubit_dims.is_empty() || self.qubit_dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidInput(
                "qubit_dims must be non-empty with every entry >= 2".into(),
            ));
        }
        let dq = self.qubit_dim();
        if self.qubit_index_map.len() != dq {
            return Err(Error::Dimension {
                context: "qubit_index_map length vs product of qubit_dims",
                expected: dq,
                got: self.qubit_index_map.len(),
            });
        }
        let mut seen = vec![false; self.full_dim];
        for &i in &self.qubit_index_map {
            if i >= self.full_dim {
                return Err(Error::InvalidInput(format!(
                    "qubit_index_map entry {i} outside full dimension {}",
                    self.full_dim
                )));
            }
            if seen[i] {
                return Err(Error::InvalidInput(format!(
                    "qubit_index_map repeats full-space index {i}"
                )));
            }
            seen[i] = true;
        }
        for &l in &self.loss_indices {
            if l >= self.full_dim {
                return Err(Error::InvalidInput(format!(
                    "loss index {l} outside full dimension {}",
                    self.full_dim
                )));
            }
            if seen[l] {
                return Err(Error::InvalidInput(format!(
                    "loss index {l} collides with the computational subspace"
                )));
            }
        }
        Ok(())
    }

    /// Product of the computational subsystem dimensions.
    pub fn qubit_dim(&self) -> usize {
        self.qubit_dims.iter().product()
    }

    /// The same system with a `dq`-dimensional passive ancilla appended.
    /// Computational index `(r, a)` (row-major) maps to full-space index
    /// `qubit_index_map[r] * dq + a`.
    pub fn ancilla_extended(&self) -> HilbertSpec {
        let dq = self.qubit_dim();
        let mut dims = self.qubit_dims.clone();
        dims.push(dq);
        let mut map = Vec::with_capacity(dq * dq);
        for &fr in &self.qubit_index_map {
            for a in 0..dq {
                map.push(fr * dq + a);
            }
        }
        let mut loss = Vec::with_capacity(self.loss_indices.len() * dq);
        for &l in &self.loss_indices {
            for a in 0..dq {
                loss.push(l * dq + a);
            }
        }
        HilbertSpec {
            full_dim: self.full_dim * dq,
            qubit_dims: dims,
            qubit_index_map: map,
            loss_indices: loss,
        }
    }
}

/// One interval of constant Hamiltonian.
#[derive(Debug, Clone)]
pub struct Segment {
    /// Seconds; must be positive.
    pub duration: f64,
    /// Hermitian, `full_dim x full_dim`, angular-frequency units (rad/s).
    pub hamiltonian: Array2<C64>,
}

/// A Lindblad jump operator with bookkeeping for loss and cascades.
#[derive(Debug, Clone)]
pub struct JumpOp {
    pub label: String,
    /// `full_dim x full_dim`. For a disposing operator only `L^dagger L`
    /// is ever evaluated (no-jump drift, jump weights); its range is a
    /// placeholder inside the retained space and is never entered, because
    /// firing it ends the trajectory instead.
    pub matrix: Array2<C64>,
    /// Firing this operator moves all population to states outside the
    /// retained space, so the trajectory is discarded.
    pub disposes: bool,
    /// Indices (into the owning model's `jump_ops`) of operators competing
    /// to fire immediately after this one, at the same time stamp. Used for
    /// decay chains through a transiently populated level.
    pub cascade: Vec<usize>,
}

impl JumpOp {
    pub fn new(label: impl Into<String>, matrix: Array2<C64>) -> Self {
        Self {
            label: label.into(),
            matrix,
            disposes: false,
            cascade: Vec::new(),
        }
    }

    pub fn disposing(label: impl Into<String>, matrix: Array2<C64>) -> Self {
        Self {
            label: label.into(),
            matrix,
            disposes: true,
            cascade: Vec::new(),
        }
    }

    pub fn with_cascade(mut self, cascade: Vec<usize>) -> Self {
        self.cascade = cascade;
        self
    }
}

/// A complete open-system model: Hamiltonian schedule, jump operators and
/// the subspace layout.
#[derive(Debug, Clone)]
pub struct LindbladModel {
    pub spec: HilbertSpec,
    pub schedule: Vec<Segment>,
    pub jump_ops: Vec<JumpOp>,
}

impl LindbladModel {
    pub fn new(spec: HilbertSpec, schedule: Vec<Segment>, jump_ops: Vec<JumpOp>) -> Result<Self> {
        let model = Self {
            spec,
            schedule,
            jump_ops,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let d = self.spec.full_dim;
        if self.schedule.is_empty() {
            return Err(Error::InvalidInput("schedule must not be empty".into()));
        }
        for (i, seg) in self.schedule.iter().enumerate() {
            if !(seg.duration > 0.0 && seg.duration.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "segment {i} duration must be positive and finite, got {}",
                    seg.duration
                )));
            }
            if seg.hamiltonian.dim() != (d, d) {
                return Err(Error::Dimension {
                    context: "segment Hamiltonian",
                    expected: d,
                    got: seg.hamiltonian.nrows(),
                });
            }
            linalg::require_hermitian(&seg.hamiltonian, &format!("segment {i} Hamiltonian"), 1e-12)?;
        }
        for (k, op) in self.jump_ops.iter().enumerate() {
            if op.matrix.dim() != (d, d) {
                return Err(Error::Dimension {
                    context: "jump operator",
                    expected: d,
                    got: op.matrix.nrows(),
                });
            }
            if op.disposes && !op.cascade.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "jump operator `{}` both disposes and cascades",
                    op.label
                )));
            }
            for &c in &op.cascade {
                if c >= self.jump_ops.len() {
                    return Err(Error::InvalidInput(format!(
                        "jump operator `{}` cascades to missing index {c}",
                        op.label
                    )));
                }
                if c == k {
                    return Err(Error::InvalidInput(format!(
                        "jump operator `{}` cascades to itself",
                        op.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.schedule.iter().map(|s| s.duration).sum()
    }

    /// The same dynamics with a `dq`-dimensional passive ancilla attached:
    /// every Hamiltonian and jump operator becomes `op (x) identity`, and
    /// the spec gains the ancilla subsystem. Mainly for the dense oracles;
    /// the trajectory engine carries the ancilla as extra state columns
    /// instead, which is the same dynamics without the blown-up matrices.
    pub fn ancilla_extend(&self) -> LindbladModel {
        let dq = self.spec.qubit_dim();
        let eye = linalg::identity(dq);
        let schedule = self
            .schedule
            .iter()
            .map(|s| Segment {
                duration: s.duration,
                hamiltonian: kron(&s.hamiltonian, &eye),
            })
            .collect();
        let jump_ops = self
            .jump_ops
            .iter()
            .map(|op| JumpOp {
                label: op.label.clone(),
                matrix: kron(&op.matrix, &eye),
                disposes: op.disposes,
                cascade: op.cascade.clone(),
            })
            .collect();
        LindbladModel {
            spec: self.spec.ancilla_extended(),
            schedule,
            jump_ops,
        }
    }
}

/// The joint system-ancilla input state used for process characterisation.
#[derive(Debug, Clone)]
pub struct EntangledInput {
    /// Unit-norm state on the `full_dim * dq` product space, row-major in
    /// `(system, ancilla)`.
    pub state: Array1<C64>,
    /// Multiplying qubit-subspace amplitudes of an evolved copy of `state`
    /// by this factor yields amplitudes in the unnormalized pair-state
    /// convention the structural matrix is built in. Equals `sqrt(dq)`.
    pub normalization_scale: f64,
}

impl EntangledInput {
    /// View the same amplitudes as a `full_dim x dq` block whose column `a`
    /// is the system state entangled with ancilla level `a`.
    pub fn as_block(&self, spec: &HilbertSpec) -> Array2<C64> {
        let dq = spec.qubit_dim();
        self.state
            .to_owned()
            .into_shape((spec.full_dim, dq))
            .expect("entangled state length is full_dim * dq")
    }
}

/// Uniform superposition of `|qubit r> (x) |ancilla r>` over the
/// computational subspace, normalized to 1.
pub fn maximally_entangled_input(spec: &HilbertSpec) -> EntangledInput {
    let dq = spec.qubit_dim();
    let mut state = Array1::zeros(spec.full_dim * dq);
    let amp = C64::new(1.0 / (dq as f64).sqrt(), 0.0);
    for (r, &fr) in spec.qubit_index_map.iter().enumerate() {
        state[fr * dq + r] = amp;
    }
    EntangledInput {
        state,
        normalization_scale: (dq as f64).sqrt(),
    }
}

/// The `dq^2` tensor products of 1-qubit Pauli operators in lexicographic
/// label order (identity first, leftmost factor most significant), together
/// with their labels.
pub fn pauli_basis(num_qubits: usize) -> (Vec<Array2<C64>>, Vec<String>) {
    assert!(num_qubits >= 1, "pauli_basis needs at least one qubit");
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::i();
    let singles: [Array2<C64>; 4] = [
        ndarray::array![[one, z], [z, one]],
        ndarray::array![[z, one], [one, z]],
        ndarray::array![[z, -i], [i, z]],
        ndarray::array![[one, z], [z, -one]],
    ];
    let names = ["I", "X", "Y", "Z"];
    let count = 4usize.pow(num_qubits as u32);
    let mut ops = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for idx in 0..count {
        let mut digits = Vec::with_capacity(num_qubits);
        let mut rem = idx;
        for q in (0..num_qubits).rev() {
            digits.push(rem / 4usize.pow(q as u32));
            rem %= 4usize.pow(q as u32);
        }
        let mut op = singles[digits[0]].clone();
        let mut label = String::from(names[digits[0]]);
        for &d in &digits[1..] {
            op = kron(&op, &singles[d]);
            label.push_str(names[d]);
        }
        ops.push(op);
        labels.push(label);
    }
    (ops, labels)
}

/// Column `m` is the coefficient vector of `(E_m (x) 1)` applied to the
/// unnormalized maximally entangled pair state, expressed in `bip_basis`
/// (columns), or in the computational product basis when `bip_basis` is
/// `None`. With the computational basis this is just the row-major
/// vectorization of each `E_m`.
pub fn build_kappa(ops: &[Array2<C64>], bip_basis: Option<&Array2<C64>>) -> Result<Array2<C64>> {
    let dq = ops
        .first()
        .ok_or_else(|| Error::InvalidInput("operator basis is empty".into()))?
        .nrows();
    let n = dq * dq;
    if ops.len() != n {
        return Err(Error::Dimension {
            context: "operator basis size vs dq^2",
            expected: n,
            got: ops.len(),
        });
    }
    let mut kappa = Array2::zeros((n, n));
    for (m, e) in ops.iter().enumerate() {
        if e.dim() != (dq, dq) {
            return Err(Error::Dimension {
                context: "operator basis element",
                expected: dq,
                got: e.nrows(),
            });
        }
        for p in 0..dq {
            for a in 0..dq {
                kappa[[p * dq + a, m]] = e[[p, a]];
            }
        }
    }
    match bip_basis {
        None => Ok(kappa),
        Some(b) => {
            if b.dim() != (n, n) {
                return Err(Error::Dimension {
                    context: "bipartite basis",
                    expected: n,
                    got: b.nrows(),
                });
            }
            let f = b.factorize().map_err(|_| Error::SingularBasis {
                name: "bipartite basis".into(),
            })?;
            let mut out = Array2::zeros((n, n));
            for m in 0..n {
                let col = kappa.column(m).to_owned();
                let solved = f.solve(&col).map_err(|_| Error::SingularBasis {
                    name: "bipartite basis".into(),
                })?;
                out.column_mut(m).assign(&solved);
            }
            Ok(out)
        }
    }
}

/// An operator basis for chi together with its structural matrices.
pub struct OperatorBasis {
    pub ops: Vec<Array2<C64>>,
    pub labels: Vec<String>,
    /// See [`build_kappa`].
    pub kappa: Array2<C64>,
    kappa_factor: LuFactor,
    k_tensor: OnceLock<Array2<C64>>,
}

impl OperatorBasis {
    /// Tensor-product Pauli basis on `num_qubits` qubits, with the
    /// computational bipartite basis.
    pub fn pauli(num_qubits: usize) -> Self {
        let (ops, labels) = pauli_basis(num_qubits);
        Self::from_ops(ops, labels, None).expect("pauli basis is always well formed")
    }

    /// Any complete operator basis; `bip_basis` optionally re-expresses the
    /// bipartite amplitudes (columns are the basis vectors).
    pub fn from_ops(
        ops: Vec<Array2<C64>>,
        labels: Vec<String>,
        bip_basis: Option<&Array2<C64>>,
    ) -> Result<Self> {
        if labels.len() != ops.len() {
            return Err(Error::Dimension {
                context: "basis labels vs operators",
                expected: ops.len(),
                got: labels.len(),
            });
        }
        let kappa = build_kappa(&ops, bip_basis)?;
        // Catch linearly dependent operator sets up front; a rank-deficient
        // structural matrix would otherwise surface as mystery residuals.
        let (_, sv, _) = kappa.svd(false, false)?;
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(smin > 1e-12 * smax.max(1e-300)) {
            return Err(Error::SingularBasis {
                name: "operator basis".into(),
            });
        }
        let kappa_factor = kappa.factorize()?;
        Ok(Self {
            ops,
            labels,
            kappa,
            kappa_factor,
            k_tensor: OnceLock::new(),
        })
    }

    /// Dimension of the space the basis operators act on.
    pub fn dim(&self) -> usize {
        self.ops[0].nrows()
    }

    /// Number of basis operators (`dim()^2`).
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Solve `kappa zeta = lambda` through the stored factorization and
    /// verify the residual, so silently inaccurate solutions cannot leak
    /// into chi.
    pub fn solve_zeta(&self, lambda: &Array1<C64>) -> Result<Array1<C64>> {
        if lambda.len() != self.len() {
            return Err(Error::Dimension {
                context: "lambda length vs basis size",
                expected: self.len(),
                got: lambda.len(),
            });
        }
        let zeta = self.kappa_factor.solve(lambda)?;
        let mut residual = self.kappa.dot(&zeta);
        residual.scaled_add(C64::new(-1.0, 0.0), lambda);
        let res = residual.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let scale = lambda.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if res > 1e-10 * scale.max(1.0) {
            return Err(Error::NumericCheck(format!(
                "structural solve residual {res:.3e} exceeds 1e-10 (basis nearly singular?)"
            )));
        }
        Ok(zeta)
    }

    /// Coefficients of `m` in this basis: the `c` with `m = sum_k c_k E_k`.
    pub fn expand(&self, m: &Array2<C64>) -> Result<Array1<C64>> {
        let dq = self.dim();
        if m.dim() != (dq, dq) {
            return Err(Error::Dimension {
                context: "operator to expand",
                expected: dq,
                got: m.nrows(),
            });
        }
        let mut vec = Array1::zeros(dq * dq);
        for p in 0..dq {
            for a in 0..dq {
                vec[p * dq + a] = m[[p, a]];
            }
        }
        // Row-major vectorization is linear, so the expansion coefficients
        // solve the same structural system as the amplitude vectors do.
        self.solve_zeta(&vec)
    }

    /// The `dq^4 x dq^4` map from a flattened chi to the flattened channel
    /// images of all elementary inputs `|r><s|`:
    /// row `(r s p q)`, column `(m n)` holds `E_m[p, r] * conj(E_n[q, s])`.
    /// Built once on first use. Refuses `dq > 8`, where the dense tensor
    /// alone would cross 4 GiB.
    pub fn k_tensor(&self) -> Result<&Array2<C64>> {
        let dq = self.dim();
        if dq > 8 {
            return Err(Error::TensorTooLarge {
                dq,
                bytes: (dq as u128).pow(8) * 16,
            });
        }
        Ok(self.k_tensor.get_or_init(|| {
            let n = dq * dq;
            let mut k = Array2::zeros((n * n, n * n));
            for (m, em) in self.ops.iter().enumerate() {
                for (nn, en) in self.ops.iter().enumerate() {
                    let col = m * n + nn;
                    for r in 0..dq {
                        for s in 0..dq {
                            for p in 0..dq {
                                for q in 0..dq {
                                    let row = ((r * dq + s) * dq + p) * dq + q;
                                    k[[row, col]] = em[[p, r]] * en[[q, s]].conj();
                                }
                            }
                        }
                    }
                }
            }
            k
        }))
    }

    /// 2-norm condition number of the structural matrix, for diagnostics.
    pub fn kappa_condition(&self) -> Result<f64> {
        let (_, sv, _) = self.kappa.svd(false, false)?;
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(smax / smin)
    }
}

impl std::fmt::Debug for OperatorBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorBasis")
            .field("dim", &self.dim())
            .field("labels", &self.labels)
            .finish()
    }
}
