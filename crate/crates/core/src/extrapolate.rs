//! Richardson-Romberg extrapolation across step sizes.
//!
//! The averaged iterate settles near theta* + g d1 + g^2 d2 + ... for
//! step-size-independent vectors d1, d2. Running chains at step sizes
//! (g, 2g) or (g, 2g, 4g) and combining their averages with weights that
//! annihilate the leading powers removes the bias terms order by order:
//!
//! * two-point: 2 avg(g) - avg(2g), kills d1;
//! * three-point: 8/3 avg(g) - 2 avg(2g) + 1/3 avg(4g), kills d1 and d2.
//!
//! Both weight sets sum to one, so the combinations are affine-invariant
//! and converge to theta* themselves. Member chains can share their data
//! draws (coupled) or consume independent streams; coupling leaves the
//! combined mean unchanged and shrinks its variance, because the leading
//! fluctuation of the averaged iterate does not depend on the step size
//! and the weights sum to one.

use nalgebra::DVector;

use crate::chain::{self, ChainState};
use crate::error::{Error, Result};
use crate::models::ObjectiveModel;
use crate::rng;

/// Step-size ladder and combination weights for one extrapolated run.
#[derive(Debug, Clone)]
pub struct RrScheme {
    pub gammas: Vec<f64>,
    pub weights: Vec<f64>,
    /// Share one atom stream across members instead of one per member.
    pub coupled: bool,
}

impl RrScheme {
    /// Two-point scheme at (g, 2g) with weights (2, -1).
    pub fn two(gamma: f64, coupled: bool) -> Self {
        RrScheme { gammas: vec![gamma, 2.0 * gamma], weights: vec![2.0, -1.0], coupled }
    }

    /// Three-point scheme at (g, 2g, 4g) with weights (8/3, -2, 1/3).
    pub fn three(gamma: f64, coupled: bool) -> Self {
        RrScheme {
            gammas: vec![gamma, 2.0 * gamma, 4.0 * gamma],
            weights: vec![8.0 / 3.0, -2.0, 1.0 / 3.0],
            coupled,
        }
    }

    pub fn members(&self) -> usize {
        self.gammas.len()
    }

    /// Weighted combination of one vector per member.
    pub fn combine(&self, members: &[DVector<f64>]) -> DVector<f64> {
        assert_eq!(members.len(), self.weights.len());
        let mut out = DVector::zeros(members[0].len());
        for (w, m) in self.weights.iter().zip(members) {
            out.axpy(*w, m, 1.0);
        }
        out
    }
}

/// 2 a - b.
pub fn rr2_combine(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    2.0 * a - b
}

/// 8/3 a - 2 b + 1/3 c.
pub fn rr3_combine(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    let mut out = a * (8.0 / 3.0);
    out.axpy(-2.0, b, 1.0);
    out.axpy(1.0 / 3.0, c, 1.0);
    out
}

/// Combined-iterate metrics recorded along an extrapolated run.
#[derive(Debug, Clone, Default)]
pub struct RrTrajectory {
    pub ks: Vec<u64>,
    pub gap: Vec<f64>,
    pub dist2: Vec<f64>,
    pub combined: Vec<DVector<f64>>,
}

/// Final member states plus the recorded combined trajectory.
#[derive(Debug, Clone)]
pub struct RrResult {
    pub states: Vec<ChainState>,
    pub trajectory: RrTrajectory,
}

impl RrResult {
    pub fn final_combined(&self) -> &DVector<f64> {
        self.trajectory.combined.last().expect("runs record at least the horizon")
    }
}

/// Runs all member chains of `scheme` from `theta0` in lockstep and records
/// the weighted combination of their running averages at the scheduled
/// indices. Every member step size must lie in (0, 2 / L); for the
/// three-point scheme this means g < 1 / (2 L) at the base rung.
pub fn run_rr(
    model: &ObjectiveModel,
    scheme: &RrScheme,
    theta0: &DVector<f64>,
    horizon: u64,
    schedule: &[u64],
    seed: u64,
    replica: u64,
) -> Result<RrResult> {
    if scheme.gammas.len() != scheme.weights.len() || scheme.gammas.is_empty() {
        return Err(Error::InvalidArgument("scheme needs matching step sizes and weights".into()));
    }
    let wsum: f64 = scheme.weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "extrapolation weights must sum to 1, got {wsum}"
        )));
    }
    let mut schedule = schedule.to_vec();
    if schedule.last() != Some(&horizon) {
        schedule.push(horizon);
    }
    chain::check_schedule(&schedule, horizon)?;

    let mut states: Vec<ChainState> = scheme
        .gammas
        .iter()
        .map(|&g| ChainState::new(model, g, theta0.clone()))
        .collect::<Result<_>>()?;
    let n = states.len();
    let sampler = model.sampler();
    let star = model.theta_star();
    let guard = chain::DIVERGENCE_GUARD_FACTOR * (1.0 + (theta0 - star).norm());
    let guard2 = guard * guard;
    let mut rngs: Vec<_> = if scheme.coupled {
        vec![rng::stream(seed, replica, "rr/shared")]
    } else {
        (0..n).map(|i| rng::stream(seed, replica, &format!("rr/member-{i}"))).collect()
    };
    let mut grad_buf = DVector::zeros(model.dim());

    let mut traj = RrTrajectory::default();
    let record = |states: &[ChainState], k: u64, traj: &mut RrTrajectory| {
        let avgs: Vec<DVector<f64>> = states.iter().map(|s| s.avg.clone()).collect();
        let combined = scheme.combine(&avgs);
        traj.ks.push(k);
        traj.gap.push(model.gap(&combined));
        traj.dist2.push((&combined - star).norm_squared());
        traj.combined.push(combined);
    };
    let mut next = 0usize;
    if schedule.first() == Some(&0) {
        record(&states, 0, &mut traj);
        next = 1;
    }
    for k in 1..=horizon {
        let shared = if scheme.coupled { Some(sampler.sample(&mut rngs[0])) } else { None };
        for (i, st) in states.iter_mut().enumerate() {
            let idx = match shared {
                Some(idx) => idx,
                None => sampler.sample(&mut rngs[i]),
            };
            st.step(model, idx, &mut grad_buf);
            let dist2 = (&st.theta - star).norm_squared();
            if !dist2.is_finite() || dist2 > guard2 {
                return Err(Error::Divergence { step: k, norm: dist2.sqrt(), guard });
            }
        }
        if next < schedule.len() && schedule[next] == k {
            record(&states, k, &mut traj);
            next += 1;
        }
    }
    Ok(RrResult { states, trajectory: traj })
}
