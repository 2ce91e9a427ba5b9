//! The constant step-size SGD recursion as a Markov chain.
//!
//! One step at step size g draws an atom index i with probability w_i and
//! moves theta <- theta - g grad_i(theta). The running Polyak-Ruppert
//! average over all visited iterates (including the start point) is
//! maintained incrementally alongside.
//!
//! Invariants:
//! * after n steps, `avg` equals the arithmetic mean of theta_0 .. theta_n;
//! * recorded indices are strictly increasing and end at the horizon;
//! * a run aborts with a divergence error once |theta - theta*| exceeds
//!   1e6 (1 + |theta_0 - theta*|);
//! * constant-step runs require g in (0, 2 / L), the open stability range.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::models::ObjectiveModel;

pub const DIVERGENCE_GUARD_FACTOR: f64 = 1e6;
pub const DEFAULT_SCHEDULE_RATIO: f64 = 1.15;

/// Current iterate, running average and step counter of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub theta: DVector<f64>,
    pub avg: DVector<f64>,
    pub k: u64,
    /// Constant step size, or the scale c of a decaying c / sqrt(k) run.
    pub gamma: f64,
}

impl ChainState {
    /// Validates the step size against the stability range (0, 2 / L).
    pub fn new(model: &ObjectiveModel, gamma: f64, theta0: DVector<f64>) -> Result<Self> {
        model.check_dim(&theta0)?;
        let limit = model.gamma_limit();
        if !(gamma > 0.0 && gamma < limit) {
            return Err(Error::StepSize { gamma, limit });
        }
        Ok(ChainState { avg: theta0.clone(), theta: theta0, k: 0, gamma })
    }

    /// Start state for decaying-step runs; `c` only needs to be positive
    /// because the steps c / sqrt(k) eventually enter the stable range.
    pub fn new_decaying(model: &ObjectiveModel, c: f64, theta0: DVector<f64>) -> Result<Self> {
        model.check_dim(&theta0)?;
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("decaying scale must be > 0, got {c}")));
        }
        Ok(ChainState { avg: theta0.clone(), theta: theta0, k: 0, gamma: c })
    }

    /// One transition with an explicit step size (decaying runs vary it).
    #[inline]
    pub fn step_with(
        &mut self,
        model: &ObjectiveModel,
        gamma: f64,
        idx: usize,
        grad_buf: &mut DVector<f64>,
    ) {
        model.atom_gradient_into(idx, &self.theta, grad_buf);
        self.theta.axpy(-gamma, grad_buf, 1.0);
        self.k += 1;
        // avg now lags by one iterate; fold theta_k in with weight 1/(k + 1).
        let w = 1.0 / (self.k as f64 + 1.0);
        grad_buf.copy_from(&self.theta);
        *grad_buf -= &self.avg;
        self.avg.axpy(w, grad_buf, 1.0);
    }

    /// One transition at the stored constant step size.
    #[inline]
    pub fn step(&mut self, model: &ObjectiveModel, idx: usize, grad_buf: &mut DVector<f64>) {
        self.step_with(model, self.gamma, idx, grad_buf)
    }
}

/// Metrics recorded along a run at scheduled step indices.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub ks: Vec<u64>,
    pub theta_gap: Vec<f64>,
    pub avg_gap: Vec<f64>,
    pub theta_dist2: Vec<f64>,
    pub avg_dist2: Vec<f64>,
    pub thetas: Vec<DVector<f64>>,
    pub avgs: Vec<DVector<f64>>,
}

impl Trajectory {
    fn with_capacity(n: usize) -> Self {
        Trajectory {
            ks: Vec::with_capacity(n),
            theta_gap: Vec::with_capacity(n),
            avg_gap: Vec::with_capacity(n),
            theta_dist2: Vec::with_capacity(n),
            avg_dist2: Vec::with_capacity(n),
            thetas: Vec::with_capacity(n),
            avgs: Vec::with_capacity(n),
        }
    }

    fn record(&mut self, model: &ObjectiveModel, state: &ChainState) {
        let star = model.theta_star();
        self.ks.push(state.k);
        self.theta_gap.push(model.gap(&state.theta));
        self.avg_gap.push(model.gap(&state.avg));
        self.theta_dist2.push((&state.theta - star).norm_squared());
        self.avg_dist2.push((&state.avg - star).norm_squared());
        self.thetas.push(state.theta.clone());
        self.avgs.push(state.avg.clone());
    }

    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }
}

/// Geometric recording grid: starts at 0, advances by at least 1 and at
/// most the given ratio, always ends at the horizon.
pub fn geometric_schedule(horizon: u64, ratio: f64) -> Vec<u64> {
    assert!(ratio > 1.0, "schedule ratio must exceed 1");
    let mut ks = vec![0];
    let mut k = 0u64;
    while k < horizon {
        let next = ((k as f64) * ratio).ceil() as u64;
        k = next.max(k + 1).min(horizon);
        ks.push(k);
    }
    ks
}

pub(crate) fn check_schedule(schedule: &[u64], horizon: u64) -> Result<()> {
    for pair in schedule.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::InvalidArgument(
                "record schedule must be strictly increasing".into(),
            ));
        }
    }
    if let Some(&last) = schedule.last() {
        if last > horizon {
            return Err(Error::InvalidArgument(format!(
                "record schedule exceeds horizon ({last} > {horizon})"
            )));
        }
    }
    Ok(())
}

/// Outcome of a run: final state plus the recorded trajectory.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub state: ChainState,
    pub trajectory: Trajectory,
}

fn run_impl<R: Rng + ?Sized>(
    model: &ObjectiveModel,
    mut state: ChainState,
    horizon: u64,
    schedule: &[u64],
    rng: &mut R,
    decaying: bool,
) -> Result<RunResult> {
    check_schedule(schedule, horizon)?;
    let sampler = model.sampler();
    let star = model.theta_star();
    let guard = DIVERGENCE_GUARD_FACTOR * (1.0 + (&state.theta - star).norm());
    let guard2 = guard * guard;
    let d = model.dim();
    let mut grad_buf = DVector::zeros(d);
    let mut diff = DVector::zeros(d);

    let mut traj = Trajectory::with_capacity(schedule.len());
    let mut next = 0usize;
    if schedule.first() == Some(&0) {
        traj.record(model, &state);
        next = 1;
    }
    let c = state.gamma;
    for k in 1..=horizon {
        let idx = sampler.sample(rng);
        let gamma = if decaying { c / (k as f64).sqrt() } else { c };
        state.step_with(model, gamma, idx, &mut grad_buf);
        diff.copy_from(&state.theta);
        diff -= star;
        let dist2 = diff.norm_squared();
        if !dist2.is_finite() || dist2 > guard2 {
            return Err(Error::Divergence { step: k, norm: dist2.sqrt(), guard });
        }
        if next < schedule.len() && schedule[next] == k {
            traj.record(model, &state);
            next += 1;
        }
    }
    Ok(RunResult { state, trajectory: traj })
}

/// Runs the constant step-size chain for `horizon` steps, recording at the
/// given schedule. A horizon of 0 records only the start point (when the
/// schedule includes index 0).
pub fn run_chain<R: Rng + ?Sized>(
    model: &ObjectiveModel,
    gamma: f64,
    theta0: DVector<f64>,
    horizon: u64,
    schedule: &[u64],
    rng: &mut R,
) -> Result<RunResult> {
    let state = ChainState::new(model, gamma, theta0)?;
    run_impl(model, state, horizon, schedule, rng, false)
}

/// Runs the decaying-step chain, step c / sqrt(k) at iteration k >= 1.
pub fn run_decaying<R: Rng + ?Sized>(
    model: &ObjectiveModel,
    c: f64,
    theta0: DVector<f64>,
    horizon: u64,
    schedule: &[u64],
    rng: &mut R,
) -> Result<RunResult> {
    let state = ChainState::new_decaying(model, c, theta0)?;
    run_impl(model, state, horizon, schedule, rng, true)
}
