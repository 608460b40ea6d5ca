//! Stochastic wave-function trajectories.
//!
//! Jump timing uses the norm-threshold scheme: draw a uniform random number
//! r, integrate the state under the non-Hermitian effective Hamiltonian
//! until its squared norm first falls to r, apply one jump there, draw a
//! fresh threshold, and repeat until the schedule ends. The integrator's
//! dense output lets us locate the crossing by bisection without shrinking
//! the integration steps.
//!
//! States are dense column blocks, `full_dim x ncols`. A plain wave function
//! is one column; the entangled system-ancilla input is `dq` columns, one
//! per ancilla level. Because the ancilla never evolves, every operator acts
//! from the left on the whole block, which keeps the hot loop in small
//! matrix-matrix products instead of blown-up tensor-product matrices.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::linalg::dagger;
use crate::mastereq::DensityMatrix;
use crate::model::{JumpOp, LindbladModel};
use crate::ode::{Dopri5, IntegratorOpts, StepOutcome};
use crate::{C64, Error, Result};

/// Hard cap on jumps per trajectory; a model that trips this is runaway.
const MAX_JUMPS: usize = 100_000;

fn norm_sq(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// One schedule segment of the non-Hermitian drift generator.
#[derive(Debug, Clone)]
struct EffSegment {
    t0: f64,
    t1: f64,
    /// `H - (i/2) sum_k L_k^dagger L_k`.
    h: Array2<C64>,
}

/// The per-segment effective Hamiltonians of a model.
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    segments: Vec<EffSegment>,
    dim: usize,
}

impl EffectiveHamiltonian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.last().map(|s| s.t1).unwrap_or(0.0)
    }

    /// The effective Hamiltonian of schedule segment `idx`.
    pub fn segment_h(&self, idx: usize) -> &Array2<C64> {
        &self.segments[idx].h
    }
}

/// Build the effective Hamiltonian schedule of a model. The decay part is
/// shared by all segments; each segment contributes its own Hermitian part.
pub fn effective_hamiltonian(model: &LindbladModel) -> Result<EffectiveHamiltonian> {
    let d = model.spec.full_dim;
    let mut decay: Array2<C64> = Array2::zeros((d, d));
    for op in &model.jump_ops {
        let ld = dagger(&op.matrix);
        general_mat_mul(
            C64::new(1.0, 0.0),
            &ld,
            &op.matrix,
            C64::new(1.0, 0.0),
            &mut decay,
        );
    }
    // The decay matrix is a sum of A^dagger A terms, so it can only fail
    // positive semidefiniteness through numerical corruption. Catching that
    // here is cheap and protects the norm-monotonicity argument the whole
    // jump-timing scheme rests on.
    let vals = crate::linalg::herm_eigvals(&decay)?;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = vals.iter().cloned().fold(0.0f64, f64::max).max(1.0);
    if min < -1e-10 * scale {
        return Err(Error::NumericCheck(format!(
            "decay operator has negative eigenvalue {min:.3e}"
        )));
    }
    let half_i = C64::new(0.0, 0.5);
    let mut segments = Vec::with_capacity(model.schedule.len());
    let mut t0 = 0.0;
    for seg in &model.schedule {
        let h = &seg.hamiltonian - &decay.mapv(|z| z * half_i);
        segments.push(EffSegment {
            t0,
            t1: t0 + seg.duration,
            h,
        });
        t0 += seg.duration;
    }
    Ok(EffectiveHamiltonian {
        segments,
        dim: d,
    })
}

/// A reproducible RNG handle: trajectory `stream` of run `master_seed`.
/// Streams are independent, so trajectories can run in any order or in
/// parallel and still come out bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        Self {
            master_seed,
            stream,
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// One recorded quantum jump.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub t: f64,
    pub op_index: usize,
    pub label: String,
}

/// The outcome of one stochastic run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// The RNG stream that produced this trajectory.
    pub id: u64,
    /// Unit-norm final state block; absent when the trajectory was disposed.
    pub final_state: Option<Array2<C64>>,
    /// Jumps in time order. Cascade jumps share their parent's time stamp.
    pub jumps: Vec<JumpRecord>,
    pub disposed_at: Option<f64>,
    /// Squared norm of the unnormalized state at schedule end; recorded
    /// only for runs without any jump, where it estimates the no-jump
    /// probability of the whole ensemble.
    pub survival: Option<f64>,
}

/// What [`evolve_no_jump`] hands back.
#[derive(Debug, Clone)]
pub struct NoJumpOutcome {
    /// Unnormalized state: at the schedule end, or at the threshold
    /// crossing when `hit` is set.
    pub state: Array2<C64>,
    pub hit: Option<f64>,
}

/// Integrate the no-jump evolution from `t_start` until either the schedule
/// ends or the squared norm first falls to `threshold`. The crossing time is
/// located by bisection on the dense output of the step that crossed, to a
/// tolerance of 1e-12 of the schedule length.
pub fn evolve_no_jump(
    eff: &EffectiveHamiltonian,
    state: &Array2<C64>,
    t_start: f64,
    threshold: f64,
    opts: &IntegratorOpts,
) -> Result<NoJumpOutcome> {
    if state.nrows() != eff.dim {
        return Err(Error::Dimension {
            context: "state rows vs model dimension",
            expected: eff.dim,
            got: state.nrows(),
        });
    }
    let mut n2_prev = norm_sq(state);
    if !(threshold < n2_prev) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} is not below the current squared norm {n2_prev}"
        )));
    }
    let total = eff.total_duration();
    // Norm can only shrink between jumps; allow integrator-sized slack so
    // legitimate tolerance noise does not trip the check.
    let grow_slack = 200.0 * opts.rel_tol;
    let grow_abs = 200.0 * opts.abs_tol;
    let minus_i = C64::new(0.0, -1.0);
    let zero = C64::new(0.0, 0.0);

    let mut y = state.to_owned();
    for (idx, seg) in eff.segments.iter().enumerate() {
        if seg.t1 <= t_start {
            continue;
        }
        let begin = seg.t0.max(t_start);
        let h = &seg.h;
        let rhs = |_t: f64, y: &Array2<C64>, out: &mut Array2<C64>| {
            general_mat_mul(minus_i, h, y, zero, out);
        };
        let mut integ = Dopri5::new(rhs, begin, seg.t1, y, *opts, idx)?;
        loop {
            match integ.step()? {
                StepOutcome::Done => break,
                StepOutcome::Advanced { t_prev, t } => {
                    let n2 = norm_sq(integ.y());
                    if n2 > n2_prev * (1.0 + grow_slack) + grow_abs {
                        return Err(Error::NormGrew {
                            t,
                            from: n2_prev,
                            to: n2,
                        });
                    }
                    if n2 <= threshold {
                        let mut buf = Array2::zeros(integ.y().raw_dim());
                        let width = t - t_prev;
                        let tol = 1e-12 * total;
                        let (mut lo, mut hi) = (0.0f64, 1.0f64);
                        while width * (hi - lo) > tol {
                            let mid = 0.5 * (lo + hi);
                            integ.dense(mid, &mut buf);
                            if norm_sq(&buf) <= threshold {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        integ.dense(hi, &mut buf);
                        return Ok(NoJumpOutcome {
                            state: buf,
                            hit: Some(t_prev + hi * width),
                        });
                    }
                    n2_prev = n2;
                }
            }
        }
        y = integ.into_y();
    }
    Ok(NoJumpOutcome {
        state: y,
        hit: None,
    })
}

/// Pick which jump operator fires, by cumulative-sum inversion of the jump
/// weights `|L_k psi|^2` over `candidates` in their given order. `t` is
/// only for error reporting.
pub fn select_jump(
    state: &Array2<C64>,
    ops: &[JumpOp],
    candidates: &[usize],
    u: f64,
    t: f64,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::NoJumpChannel { t });
    }
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&k| norm_sq(&ops[k].matrix.dot(state)))
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoJumpChannel { t });
    }
    let target = u * total;
    let mut cum = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cum += w;
        if target < cum {
            return Ok(candidates[i]);
        }
    }
    // Only reachable through floating-point edge cases at u ~ 1.
    Ok(*candidates.last().unwrap())
}

/// Apply one jump operator and renormalize.
pub fn apply_jump(state: &Array2<C64>, op: &JumpOp, t: f64) -> Result<Array2<C64>> {
    let mut new = op.matrix.dot(state);
    let n = norm_sq(&new).sqrt();
    if !(n.is_finite() && n > 1e-150) {
        return Err(Error::ZeroPostJumpNorm {
            label: op.label.clone(),
            t,
        });
    }
    let inv = C64::new(1.0 / n, 0.0);
    new.mapv_inplace(|z| z * inv);
    Ok(new)
}

/// Whether a (normalized) state has all of its weight on loss levels.
fn supported_only_on_loss(state: &Array2<C64>, loss_indices: &[usize]) -> bool {
    if loss_indices.is_empty() {
        return false;
    }
    let mut kept = 0.0;
    for (i, row) in state.axis_iter(Axis(0)).enumerate() {
        if !loss_indices.contains(&i) {
            kept += row.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
    }
    kept < 1e-12
}

/// Reusable per-model context for running trajectories: the effective
/// Hamiltonian schedule is built once and shared.
pub struct TrajectoryRunner<'m> {
    model: &'m LindbladModel,
    eff: EffectiveHamiltonian,
    opts: IntegratorOpts,
    /// All operator indices, the candidate set for primary jumps. Cascade
    /// children carry zero weight whenever their source level is empty, so
    /// listing them here is harmless and keeps exotic models (a populated
    /// intermediate level) correct.
    all_ops: Vec<usize>,
}

impl<'m> TrajectoryRunner<'m> {
    pub fn new(model: &'m LindbladModel, opts: IntegratorOpts) -> Result<Self> {
        let eff = effective_hamiltonian(model)?;
        Ok(Self {
            model,
            eff,
            opts,
            all_ops: (0..model.jump_ops.len()).collect(),
        })
    }

    pub fn effective(&self) -> &EffectiveHamiltonian {
        &self.eff
    }

    /// Run a single trajectory from a unit-norm input block.
    pub fn run(&self, input: &Array2<C64>, stream: RngStream) -> Result<Trajectory> {
        let n2 = norm_sq(input);
        if (n2 - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "input state squared norm {n2} is not 1"
            )));
        }
        let ops = &self.model.jump_ops;
        let loss = &self.model.spec.loss_indices;
        let mut rng = stream.rng();
        let mut state = input.to_owned();
        let mut t = 0.0;
        let mut jumps: Vec<JumpRecord> = Vec::new();
        let mut disposed_at = None;

        'threshold: loop {
            let r: f64 = rng.gen();
            let out = evolve_no_jump(&self.eff, &state, t, r, &self.opts)?;
            state = out.state;
            let hit = match out.hit {
                None => break,
                Some(hit) => hit,
            };
            t = hit;
            if jumps.len() >= MAX_JUMPS {
                return Err(Error::NumericCheck(format!(
                    "trajectory exceeded {MAX_JUMPS} jumps; runaway jump rate"
                )));
            }
            let mut k = select_jump(&state, ops, &self.all_ops, rng.gen(), t)?;
            let mut chain = 0usize;
            loop {
                jumps.push(JumpRecord {
                    t,
                    op_index: k,
                    label: ops[k].label.clone(),
                });
                chain += 1;
                // A cascade chain that revisits an operator has followed a
                // cycle, which would emit forever at one instant.
                if chain > ops.len() {
                    return Err(Error::InvalidInput(
                        "cascade chain longer than the operator count; cyclic cascade?".into(),
                    ));
                }
                if ops[k].disposes {
                    disposed_at = Some(t);
                    break 'threshold;
                }
                state = apply_jump(&state, &ops[k], t)?;
                if supported_only_on_loss(&state, loss) {
                    disposed_at = Some(t);
                    break 'threshold;
                }
                if ops[k].cascade.is_empty() {
                    break;
                }
                // The follow-up jump happens at the same instant, chosen
                // among the declared children only.
                k = select_jump(&state, ops, &ops[k].cascade, rng.gen(), t)?;
            }
        }

        if disposed_at.is_some() {
            return Ok(Trajectory {
                id: stream.stream,
                final_state: None,
                jumps,
                disposed_at,
                survival: None,
            });
        }
        let survival = if jumps.is_empty() {
            Some(norm_sq(&state))
        } else {
            None
        };
        let n = norm_sq(&state).sqrt();
        let inv = C64::new(1.0 / n, 0.0);
        state.mapv_inplace(|z| z * inv);
        Ok(Trajectory {
            id: stream.stream,
            final_state: Some(state),
            jumps,
            disposed_at: None,
            survival,
        })
    }
}

/// Run one trajectory of a model without keeping a runner around.
pub fn run_trajectory(
    model: &LindbladModel,
    input: &Array2<C64>,
    stream: RngStream,
    opts: &IntegratorOpts,
) -> Result<Trajectory> {
    TrajectoryRunner::new(model, *opts)?.run(input, stream)
}

/// Ensemble parameters.
#[derive(Debug, Clone)]
pub struct EnsembleOpts {
    pub n: usize,
    pub master_seed: u64,
    /// First RNG stream index; trajectory `i` uses `stream_base + i`.
    /// Separate runs that must be statistically independent should not
    /// overlap their stream ranges.
    pub stream_base: u64,
    /// Worker threads; 0 means the global thread pool.
    pub workers: usize,
    pub integrator: IntegratorOpts,
}

impl EnsembleOpts {
    pub fn new(n: usize, master_seed: u64) -> Self {
        Self {
            n,
            master_seed,
            stream_base: 0,
            workers: 0,
            integrator: IntegratorOpts::default(),
        }
    }
}

/// Run `opts.n` trajectories. Results come back in stream order, and each
/// trajectory depends only on `(master_seed, stream_base + i)`, so the
/// output is identical for any worker count.
pub fn run_ensemble(
    model: &LindbladModel,
    input: &Array2<C64>,
    opts: &EnsembleOpts,
) -> Result<Vec<Trajectory>> {
    if opts.n == 0 {
        return Err(Error::InvalidInput("ensemble size must be positive".into()));
    }
    let runner = TrajectoryRunner::new(model, opts.integrator)?;
    let run_all = || {
        (0..opts.n)
            .into_par_iter()
            .map(|i| {
                runner.run(
                    input,
                    RngStream::new(opts.master_seed, opts.stream_base + i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()
    };
    if opts.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("could not build thread pool: {e}")))?;
        pool.install(run_all)
    } else {
        run_all()
    }
}

/// Ensemble-averaged density matrix over the flattened state blocks.
/// Disposed trajectories contribute zero but still count toward `n`, so the
/// trace reports the surviving fraction.
pub fn average_density(trajectories: &[Trajectory]) -> Result<DensityMatrix> {
    let n = trajectories.len();
    if n == 0 {
        return Err(Error::InvalidInput(
            "cannot average an empty trajectory set".into(),
        ));
    }
    let Some(reference) = trajectories.iter().find_map(|tr| tr.final_state.as_ref()) else {
        return Err(Error::InvalidInput(
            "every trajectory was disposed; no state left to average".into(),
        ));
    };
    let d = reference.len();
    let mut acc: Array2<C64> = Array2::zeros((d, d));
    for tr in trajectories {
        let Some(state) = tr.final_state.as_ref() else {
            continue;
        };
        // Row-major flattening matches the (system, ancilla) product-space
        // ordering the oracle uses.
        let flat: Vec<C64> = state.iter().cloned().collect();
        for i in 0..d {
            let fi = flat[i];
            for j in 0..d {
                acc[[i, j]] += fi * flat[j].conj();
            }
        }
    }
    let w = C64::new(1.0 / n as f64, 0.0);
    acc.mapv_inplace(|z| z * w);
    DensityMatrix::new(acc)
}
