//! Adaptive Dormand-Prince 5(4) integration for complex linear systems.
//!
//! The state is an `Array2<C64>` rather than a vector: a wave function is a
//! single column, a wave function dragging a passive ancilla along is a
//! `dim x ancilla_dim` block, and a density matrix is square. The integrator
//! never looks inside the state beyond elementwise arithmetic and a
//! Frobenius norm, so one implementation serves all three.
//!
//! Error control uses the embedded 4th-order solution with a single scale
//! `abs_tol + rel_tol * max(||y0||, ||y1||)` for the whole state. A
//! per-component scale would force the step size to resolve tiny fast
//! components (for instance a weakly populated, strongly detuned level) far
//! beyond their contribution to the state, which is the wrong trade for
//! quantum states where only the global error matters.
//!
//! Each accepted step also builds the classic quartic interpolant, so
//! callers can evaluate the solution anywhere inside the step. The jump-time
//! search in the trajectory engine depends on that.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::{Error, Result};

/// Tolerances and guard rails for one integration call.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorOpts {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Hard cap on accepted + rejected steps per integration interval.
    pub max_steps: usize,
}

impl Default for IntegratorOpts {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorOpts {
    pub fn with_tols(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }
}

// Dormand-Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
// Fifth-order weights double as the last stage row (first-same-as-last).
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights, for the error estimate.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Weights of the quartic dense-output term.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const SHRINK_FLOOR: f64 = 0.2;
const GROWTH_CAP: f64 = 5.0;

fn fro_norm(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// What [`Dopri5::step`] reports back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// One step was accepted; the solution now sits at `t`, and dense output
    /// covers `[t_prev, t]`.
    Advanced { t_prev: f64, t: f64 },
    /// The end of the interval had already been reached.
    Done,
}

/// One integration over `[t0, t_end]`, stepped manually by the caller.
///
/// `step()` performs exactly one *accepted* step (rejections are handled
/// internally), after which `y()` is the solution at `t()` and
/// [`Dopri5::dense`] evaluates the interpolant inside the last step. This
/// shape lets the trajectory engine inspect the norm after every accepted
/// step and bisect inside the step that crossed its threshold.
pub struct Dopri5<F>
where
    F: FnMut(f64, &Array2<C64>, &mut Array2<C64>),
{
    f: F,
    opts: IntegratorOpts,
    /// Label used in step-underflow errors so the caller can tell which
    /// schedule segment failed.
    segment: usize,
    t: f64,
    t_end: f64,
    y: Array2<C64>,
    k: Vec<Array2<C64>>,
    y_stage: Array2<C64>,
    err_buf: Array2<C64>,
    rcont: Vec<Array2<C64>>,
    h: f64,
    t_prev: f64,
    h_last: f64,
    last_was_rejected: bool,
    steps_taken: usize,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &Array2<C64>, &mut Array2<C64>),
{
    pub fn new(
        mut f: F,
        t0: f64,
        t_end: f64,
        y0: Array2<C64>,
        opts: IntegratorOpts,
        segment: usize,
    ) -> Result<Self> {
        assert!(
            t_end >= t0,
            "integration interval must run forward (t0 {t0}, t_end {t_end})"
        );
        let shape = y0.raw_dim();
        let mut k: Vec<Array2<C64>> = (0..7).map(|_| Array2::zeros(shape)).collect();
        f(t0, &y0, &mut k[0]);
        let h = initial_step(&mut f, t0, t_end, &y0, &k[0], &opts);
        Ok(Self {
            f,
            opts,
            segment,
            t: t0,
            t_end,
            y: y0,
            k,
            y_stage: Array2::zeros(shape),
            err_buf: Array2::zeros(shape),
            rcont: (0..5).map(|_| Array2::zeros(shape)).collect(),
            h,
            t_prev: t0,
            h_last: 0.0,
            last_was_rejected: false,
            steps_taken: 0,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &Array2<C64> {
        &self.y
    }

    pub fn into_y(self) -> Array2<C64> {
        self.y
    }

    /// Advance by one accepted step (or report that the interval is done).
    pub fn step(&mut self) -> Result<StepOutcome> {
        let span = self.t_end - self.t;
        if span <= 4.0 * f64::EPSILON * self.t_end.abs().max(1e-300) {
            return Ok(StepOutcome::Done);
        }
        loop {
            self.steps_taken += 1;
            if self.steps_taken > self.opts.max_steps {
                return Err(Error::StepUnderflow {
                    segment: self.segment,
                    t: self.t,
                });
            }
            let h = self.h.min(self.t_end - self.t);
            if h <= 16.0 * f64::EPSILON * self.t.abs().max(self.t_end.abs()) {
                return Err(Error::StepUnderflow {
                    segment: self.segment,
                    t: self.t,
                });
            }

            self.stages(h);

            // err_buf = h * sum_i e_i k_i
            self.err_buf.fill(C64::new(0.0, 0.0));
            for (coef, ki) in [
                (E1, 0usize),
                (E3, 2),
                (E4, 3),
                (E5, 4),
                (E6, 5),
                (E7, 6),
            ] {
                self.err_buf.scaled_add(C64::new(h * coef, 0.0), &self.k[ki]);
            }
            // y_stage currently holds the 5th-order candidate.
            let scale = self.opts.abs_tol
                + self.opts.rel_tol * fro_norm(&self.y).max(fro_norm(&self.y_stage));
            let err = fro_norm(&self.err_buf) / scale;

            if err <= 1.0 {
                self.build_dense(h);
                self.t_prev = self.t;
                self.h_last = h;
                self.t += h;
                std::mem::swap(&mut self.y, &mut self.y_stage);
                // First-same-as-last: the 7th stage is the derivative at the
                // accepted point.
                self.k.swap(0, 6);

                let mut factor = if err == 0.0 {
                    GROWTH_CAP
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(SHRINK_FLOOR, GROWTH_CAP)
                };
                if self.last_was_rejected {
                    factor = factor.min(1.0);
                }
                self.last_was_rejected = false;
                self.h = h * factor;
                return Ok(StepOutcome::Advanced {
                    t_prev: self.t_prev,
                    t: self.t,
                });
            }

            self.last_was_rejected = true;
            self.h = h * (SAFETY * err.powf(-0.2)).clamp(SHRINK_FLOOR, 1.0);
        }
    }

    /// Evaluate the interpolant of the last accepted step at
    /// `theta in [0, 1]` (0 = step start, 1 = step end) into `out`.
    pub fn dense(&self, theta: f64, out: &mut Array2<C64>) {
        debug_assert!(self.h_last > 0.0, "dense output before any accepted step");
        let th = theta;
        let th1 = 1.0 - theta;
        // rcont1 + th*(rcont2 + th1*(rcont3 + th*(rcont4 + th1*rcont5)))
        out.assign(&self.rcont[4]);
        out.mapv_inplace(|z| z * th1);
        *out += &self.rcont[3];
        out.mapv_inplace(|z| z * th);
        *out += &self.rcont[2];
        out.mapv_inplace(|z| z * th1);
        *out += &self.rcont[1];
        out.mapv_inplace(|z| z * th);
        *out += &self.rcont[0];
    }

    /// Start time of the last accepted step.
    pub fn t_prev(&self) -> f64 {
        self.t_prev
    }

    /// Width of the last accepted step.
    pub fn h_last(&self) -> f64 {
        self.h_last
    }

    fn stages(&mut self, h: f64) {
        let t = self.t;
        let ch = |x: f64| C64::new(h * x, 0.0);

        self.y_stage.assign(&self.y);
        self.y_stage.scaled_add(ch(A21), &self.k[0]);
        let (k1, rest) = self.k.split_at_mut(1);
        (self.f)(t + C2 * h, &self.y_stage, &mut rest[0]);
        let _ = k1;

        self.y_stage.assign(&self.y);
        self.y_stage.scaled_add(ch(A31), &self.k[0]);
        self.y_stage.scaled_add(ch(A32), &self.k[1]);
        let (head, rest) = self.k.split_at_mut(2);
        (self.f)(t + C3 * h, &self.y_stage, &mut rest[0]);
        let _ = head;

        self.y_stage.assign(&self.y);
        self.y_stage.scaled_add(ch(A41), &self.k[0]);
        self.y_stage.scaled_add(ch(A42), &self.k[1]);
        self.y_stage.scaled_add(ch(A43), &self.k[2]);
        let (head, rest) = self.k.split_at_mut(3);
        (self.f)(t + C4 * h, &self.y_stage, &mut rest[0]);
        let _ = head;

        self.y_stage.assign(&self.y);
        self.y_stage.scaled_add(ch(A51), &self.k[0]);
        self.y_stage.scaled_add(ch(A52), &self.k[1]);
        self.y_stage.scaled_add(ch(A53), &self.k[2]);
        self.y_stage.scaled_add(ch(A54), &self.k[3]);
        let (head, rest) = self.k.split_at_mut(4);
        (self.f)(t + C5 * h, &self.y_stage, &mut rest[0]);
        let _ = head;

        self.y_stage.assign(&self.y);
        self.y_stage.scaled_add(ch(A61), &self.k[0]);
        self.y_stage.scaled_add(ch(A62), &self.k[1]);
        self.y_stage.scaled_add(ch(A63), &self.k[2]);
        self.y_stage.scaled_add(ch(A64), &self.k[3]);
        self.y_stage.scaled_add(ch(A65), &self.k[4]);
        let (head, rest) = self.k.split_at_mut(5);
        (self.f)(t + h, &self.y_stage, &mut rest[0]);
        let _ = head;

        // 5th-order solution; also the argument of the final stage.
        self.y_stage.assign(&self.y);
        self.y_stage.scaled_add(ch(B1), &self.k[0]);
        self.y_stage.scaled_add(ch(B3), &self.k[2]);
        self.y_stage.scaled_add(ch(B4), &self.k[3]);
        self.y_stage.scaled_add(ch(B5), &self.k[4]);
        self.y_stage.scaled_add(ch(B6), &self.k[5]);
        let (head, rest) = self.k.split_at_mut(6);
        (self.f)(t + h, &self.y_stage, &mut rest[0]);
        let _ = head;
    }

    fn build_dense(&mut self, h: f64) {
        let ch = |x: f64| C64::new(h * x, 0.0);
        // rcont1 = y, rcont2 = y1 - y, rcont3 = h k1 - (y1 - y),
        // rcont4 = (y1 - y) - h k7 - rcont3, rcont5 = h sum_i d_i k_i.
        self.rcont[0].assign(&self.y);

        self.rcont[1].assign(&self.y_stage);
        self.rcont[1].scaled_add(C64::new(-1.0, 0.0), &self.y);

        let (head, tail) = self.rcont.split_at_mut(2);
        let ydiff = &head[1];
        let (r2, r3) = tail.split_at_mut(1);
        r2[0].fill(C64::new(0.0, 0.0));
        r2[0].scaled_add(ch(1.0), &self.k[0]);
        r2[0].scaled_add(C64::new(-1.0, 0.0), ydiff);

        r3[0].assign(ydiff);
        r3[0].scaled_add(ch(-1.0), &self.k[6]);
        r3[0].scaled_add(C64::new(-1.0, 0.0), &r2[0]);

        self.rcont[4].fill(C64::new(0.0, 0.0));
        for (coef, ki) in [
            (D1, 0usize),
            (D3, 2),
            (D4, 3),
            (D5, 4),
            (D6, 5),
            (D7, 6),
        ] {
            self.rcont[4].scaled_add(ch(coef), &self.k[ki]);
        }
    }
}

/// Standard two-probe heuristic for the very first step size.
fn initial_step<F>(
    f: &mut F,
    t0: f64,
    t_end: f64,
    y0: &Array2<C64>,
    f0: &Array2<C64>,
    opts: &IntegratorOpts,
) -> f64
where
    F: FnMut(f64, &Array2<C64>, &mut Array2<C64>),
{
    let span = t_end - t0;
    if span <= 0.0 {
        return f64::MIN_POSITIVE;
    }
    let scale = opts.abs_tol + opts.rel_tol * fro_norm(y0);
    let d0 = fro_norm(y0) / scale;
    let d1 = fro_norm(f0) / scale;
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * span
    } else {
        0.01 * (d0 / d1)
    }
    .min(span);

    // One explicit Euler probe to estimate the second derivative.
    let mut y1 = y0.clone();
    y1.scaled_add(C64::new(h0, 0.0), f0);
    let mut f1 = Array2::zeros(y0.raw_dim());
    f(t0 + h0, &y1, &mut f1);
    f1.scaled_add(C64::new(-1.0, 0.0), f0);
    let d2 = fro_norm(&f1) / scale / h0;

    let d12 = d1.max(d2);
    let h1 = if d12 <= 1e-15 {
        (h0 * 1e-3).max(1e-6 * span)
    } else {
        (0.01 / d12).powf(0.2)
    };
    h1.min(100.0 * h0).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn drive_to_end<F>(mut integ: Dopri5<F>) -> (Array2<C64>, usize)
    where
        F: FnMut(f64, &Array2<C64>, &mut Array2<C64>),
    {
        let mut steps = 0;
        loop {
            match integ.step().unwrap() {
                StepOutcome::Advanced { .. } => steps += 1,
                StepOutcome::Done => return (integ.into_y(), steps),
            }
        }
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let y0 = array![[C64::new(1.0, 0.0)]];
        let rhs = |_t: f64, y: &Array2<C64>, out: &mut Array2<C64>| {
            out.assign(y);
            out.mapv_inplace(|z| -z);
        };
        let integ = Dopri5::new(rhs, 0.0, 3.0, y0, IntegratorOpts::default(), 0).unwrap();
        let (y, _) = drive_to_end(integ);
        assert_relative_eq!(y[[0, 0]].re, (-3.0f64).exp(), max_relative = 1e-8);
        assert!(y[[0, 0]].im.abs() < 1e-14);
    }

    #[test]
    fn complex_rotation_preserves_norm_and_phase() {
        // y' = -i w y, over many periods.
        let w = 40.0;
        let y0 = array![[C64::new(1.0, 0.0)]];
        let rhs = move |_t: f64, y: &Array2<C64>, out: &mut Array2<C64>| {
            out.assign(y);
            out.mapv_inplace(|z| C64::new(0.0, -w) * z);
        };
        let integ = Dopri5::new(rhs, 0.0, 2.0, y0, IntegratorOpts::default(), 0).unwrap();
        let (y, steps) = drive_to_end(integ);
        let expect = (C64::new(0.0, -w) * 2.0).exp();
        assert!((y[[0, 0]] - expect).norm() < 1e-6);
        assert!(steps > 50, "oscillation at w=40 should need many steps, got {steps}");
    }

    #[test]
    fn dense_output_matches_analytic_solution_inside_steps() {
        let y0 = array![[C64::new(1.0, 0.0)], [C64::new(0.0, 0.5)]];
        let rhs = |_t: f64, y: &Array2<C64>, out: &mut Array2<C64>| {
            out[[0, 0]] = C64::new(0.0, -3.0) * y[[0, 0]];
            out[[1, 0]] = C64::new(-0.7, 0.0) * y[[1, 0]];
        };
        let mut integ = Dopri5::new(rhs, 0.0, 5.0, y0, IntegratorOpts::default(), 0).unwrap();
        let mut probe = Array2::zeros((2, 1));
        loop {
            match integ.step().unwrap() {
                StepOutcome::Advanced { t_prev, t } => {
                    for theta in [0.25, 0.5, 0.75] {
                        integ.dense(theta, &mut probe);
                        let tm = t_prev + theta * (t - t_prev);
                        let e0 = (C64::new(0.0, -3.0) * tm).exp();
                        let e1 = C64::new(0.0, 0.5) * C64::new(-0.7 * tm, 0.0).exp();
                        assert!(
                            (probe[[0, 0]] - e0).norm() < 1e-7,
                            "dense output drifted at t = {tm}"
                        );
                        assert!((probe[[1, 0]] - e1).norm() < 1e-7);
                    }
                }
                StepOutcome::Done => break,
            }
        }
    }

    #[test]
    fn dense_output_endpoints_agree_with_step_points() {
        let y0 = array![[C64::new(0.3, -0.2)]];
        let rhs = |t: f64, y: &Array2<C64>, out: &mut Array2<C64>| {
            out[[0, 0]] = C64::new(t.sin(), 0.0) * y[[0, 0]];
        };
        let mut integ = Dopri5::new(rhs, 0.0, 2.0, y0, IntegratorOpts::default(), 0).unwrap();
        let mut probe = Array2::zeros((1, 1));
        let mut y_before = integ.y().clone();
        while let StepOutcome::Advanced { .. } = integ.step().unwrap() {
            integ.dense(0.0, &mut probe);
            assert!((probe[[0, 0]] - y_before[[0, 0]]).norm() < 1e-12);
            integ.dense(1.0, &mut probe);
            assert!((probe[[0, 0]] - integ.y()[[0, 0]]).norm() < 1e-9);
            y_before = integ.y().clone();
        }
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        let run = |rel: f64| {
            let y0 = array![[C64::new(1.0, 0.0)]];
            let rhs = |_t: f64, y: &Array2<C64>, out: &mut Array2<C64>| {
                out[[0, 0]] = C64::new(0.0, -25.0) * y[[0, 0]];
            };
            let integ =
                Dopri5::new(rhs, 0.0, 1.0, y0, IntegratorOpts::with_tols(rel, 1e-14), 0).unwrap();
            let (y, _) = drive_to_end(integ);
            (y[[0, 0]] - (C64::new(0.0, -25.0)).exp()).norm()
        };
        let loose = run(1e-5);
        let tight = run(1e-10);
        assert!(
            tight < loose / 100.0,
            "expected much smaller error at tight tolerance (loose {loose:.3e}, tight {tight:.3e})"
        );
    }

    #[test]
    fn zero_length_interval_is_done_immediately() {
        let y0 = array![[C64::new(1.0, 0.0)]];
        let rhs = |_t: f64, y: &Array2<C64>, out: &mut Array2<C64>| out.assign(y);
        let mut integ = Dopri5::new(rhs, 2.0, 2.0, y0, IntegratorOpts::default(), 0).unwrap();
        assert_eq!(integ.step().unwrap(), StepOutcome::Done);
    }
}
