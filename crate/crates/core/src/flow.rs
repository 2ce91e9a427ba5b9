//! Gradient flow, its Poisson solutions, and the weak-error expansion.
//!
//! Purpose
//! -------
//! The flow theta' = -f'(theta) is the zero-step-size limit of the chain.
//! Averages of a test function g under the stationary law expand as
//! g(theta*) + (g/2) tr(h_g''(theta*) C(theta*)) + O(g^2) in the step size,
//! where h_g(theta) = integral of g(phi_s(theta)) - g(theta*) over s >= 0
//! solves the continuous Poisson equation. This module integrates the
//! flow, evaluates h_g by quadrature, and measures the expansion residual.
//!
//! Conventions
//! -----------
//! * All integrations are classical fourth-order Runge-Kutta with step
//!   halving until successive answers agree below the tolerance.
//! * Poisson truncation horizons come from the exponential contraction of
//!   the flow with the global mu: the discarded tail is below tol / 10.
//! * Vector-valued g (the identity) is handled coordinatewise, sharing one
//!   integration pass.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{ModelKind, ObjectiveModel};
use crate::stationary;
use crate::stats::{self, ScalingFit};

const MAX_STEPS: u64 = 1 << 22;

/// Scalar test functions with a known value at the optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    /// g(theta) = theta_l.
    Coordinate(usize),
    /// g(theta) = |theta - theta*|^2.
    SquaredDistance,
}

impl Observable {
    pub fn eval(&self, model: &ObjectiveModel, theta: &DVector<f64>) -> f64 {
        match *self {
            Observable::Coordinate(l) => theta[l],
            Observable::SquaredDistance => (theta - model.theta_star()).norm_squared(),
        }
    }

    pub fn at_optimum(&self, model: &ObjectiveModel) -> f64 {
        match *self {
            Observable::Coordinate(l) => model.theta_star()[l],
            Observable::SquaredDistance => 0.0,
        }
    }
}

/// One Runge-Kutta pass over [0, t_end] carrying quadrature accumulators
/// z' = integrand(theta); returns (theta_end, z_end) and optionally records
/// (t, theta) every `stride` steps.
fn rk4_pass(
    model: &ObjectiveModel,
    theta0: &DVector<f64>,
    t_end: f64,
    steps: u64,
    zdim: usize,
    integrand: &dyn Fn(&DVector<f64>, &mut DVector<f64>),
    mut record: Option<(&mut Vec<f64>, &mut Vec<DVector<f64>>, u64)>,
) -> (DVector<f64>, DVector<f64>) {
    let d = model.dim();
    let h = t_end / steps as f64;
    let grad = |th: &DVector<f64>| model.exact_gradient(th).expect("dimension fixed");
    let mut theta = theta0.clone();
    let mut z = DVector::zeros(zdim);
    let mut stage = DVector::zeros(d);
    let mut zi = DVector::zeros(zdim);
    let mut zsum = DVector::zeros(zdim);
    if let Some((ts, states, _)) = record.as_mut() {
        ts.push(0.0);
        states.push(theta.clone());
    }
    for n in 1..=steps {
        let k1 = -grad(&theta);
        if zdim > 0 {
            integrand(&theta, &mut zi);
            zsum.copy_from(&zi);
        }
        stage.copy_from(&theta);
        stage.axpy(h / 2.0, &k1, 1.0);
        let k2 = -grad(&stage);
        if zdim > 0 {
            integrand(&stage, &mut zi);
            zsum.axpy(2.0, &zi, 1.0);
        }
        stage.copy_from(&theta);
        stage.axpy(h / 2.0, &k2, 1.0);
        let k3 = -grad(&stage);
        if zdim > 0 {
            integrand(&stage, &mut zi);
            zsum.axpy(2.0, &zi, 1.0);
        }
        stage.copy_from(&theta);
        stage.axpy(h, &k3, 1.0);
        let k4 = -grad(&stage);
        if zdim > 0 {
            integrand(&stage, &mut zi);
            zsum.axpy(1.0, &zi, 1.0);
            z.axpy(h / 6.0, &zsum, 1.0);
        }
        theta.axpy(h / 6.0, &k1, 1.0);
        theta.axpy(h / 3.0, &k2, 1.0);
        theta.axpy(h / 3.0, &k3, 1.0);
        theta.axpy(h / 6.0, &k4, 1.0);
        if let Some((ts, states, stride)) = record.as_mut() {
            if n % *stride == 0 || n == steps {
                ts.push(n as f64 * h);
                states.push(theta.clone());
            }
        }
    }
    (theta, z)
}

fn initial_steps(model: &ObjectiveModel, t_end: f64) -> u64 {
    ((t_end * model.lip().max(1.0) * 2.0).ceil() as u64).max(16)
}

/// Flow trajectory on a uniform grid, with the step-halving error estimate.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub t_end: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub steps: u64,
    /// Sup-norm endpoint change at the accepted halving.
    pub error_estimate: f64,
}

impl FlowSolution {
    pub fn end(&self) -> &DVector<f64> {
        self.states.last().expect("grid contains the endpoint")
    }

    /// Checks |phi_t - theta*| <= e^(-mu t) |theta_0 - theta*| at every
    /// grid point, with relative headroom for integrator error.
    pub fn contraction_ok(&self, model: &ObjectiveModel, slack: f64) -> bool {
        let star = model.theta_star();
        let d0 = (&self.states[0] - star).norm();
        self.times.iter().zip(&self.states).all(|(&t, th)| {
            (th - star).norm() <= (-model.mu() * t).exp() * d0 * (1.0 + slack) + 1e-12
        })
    }
}

/// Integrates the gradient flow to `t_end`, halving the step until the
/// endpoint moves by less than `tol`.
pub fn integrate_flow(
    model: &ObjectiveModel,
    theta0: &DVector<f64>,
    t_end: f64,
    tol: f64,
) -> Result<FlowSolution> {
    model.check_dim(theta0)?;
    if !(t_end > 0.0 && tol > 0.0) {
        return Err(Error::InvalidArgument("flow horizon and tolerance must be positive".into()));
    }
    let noop = |_: &DVector<f64>, _: &mut DVector<f64>| {};
    let mut steps = initial_steps(model, t_end);
    let (mut prev, _) = rk4_pass(model, theta0, t_end, steps, 0, &noop, None);
    loop {
        steps *= 2;
        let (cur, _) = rk4_pass(model, theta0, t_end, steps, 0, &noop, None);
        let diff = (&cur - &prev).amax();
        if diff < tol {
            let stride = (steps / 1024).max(1);
            let mut times = Vec::new();
            let mut states = Vec::new();
            rk4_pass(model, theta0, t_end, steps, 0, &noop, Some((&mut times, &mut states, stride)));
            return Ok(FlowSolution { t_end, times, states, steps, error_estimate: diff });
        }
        if steps > MAX_STEPS {
            return Err(Error::ToleranceNotReached(format!(
                "flow integrator still moving by {diff:.3e} at {steps} steps"
            )));
        }
        prev = cur;
    }
}

/// Truncation horizon making the tail of the Poisson integral, bounded by
/// scale * exp(-rate t) / rate, smaller than tol / 10.
fn poisson_horizon(scale: f64, rate: f64, tol: f64) -> f64 {
    if scale <= tol / 10.0 {
        return 1.0;
    }
    ((10.0 * scale / (tol * rate)).ln() / rate).max(1.0)
}

/// Value of the Poisson solution h_g at one point.
#[derive(Debug, Clone)]
pub struct PoissonValue {
    pub value: f64,
    pub horizon: f64,
    /// Quadrature change at the accepted halving plus the tail bound.
    pub error_estimate: f64,
}

fn poisson_quadrature(
    model: &ObjectiveModel,
    theta: &DVector<f64>,
    zdim: usize,
    integrand: &dyn Fn(&DVector<f64>, &mut DVector<f64>),
    scale: f64,
    rate: f64,
    tol: f64,
) -> Result<(DVector<f64>, f64, f64)> {
    let t_end = poisson_horizon(scale, rate, tol);
    let mut steps = initial_steps(model, t_end);
    let (_, mut prev) = rk4_pass(model, theta, t_end, steps, zdim, integrand, None);
    loop {
        steps *= 2;
        let (_, cur) = rk4_pass(model, theta, t_end, steps, zdim, integrand, None);
        let diff = (&cur - &prev).amax();
        if diff < tol / 2.0 {
            return Ok((cur, t_end, diff + tol / 10.0));
        }
        if steps > MAX_STEPS {
            return Err(Error::ToleranceNotReached(format!(
                "Poisson quadrature still moving by {diff:.3e} at {steps} steps"
            )));
        }
        prev = cur;
    }
}

/// Evaluates h_g(theta) = integral over s of g(phi_s(theta)) - g(theta*).
pub fn poisson_h(
    model: &ObjectiveModel,
    g: Observable,
    theta: &DVector<f64>,
    tol: f64,
) -> Result<PoissonValue> {
    model.check_dim(theta)?;
    if let Observable::Coordinate(l) = g {
        if l >= model.dim() {
            return Err(Error::InvalidArgument(format!("coordinate {l} out of range")));
        }
    }
    let star = model.theta_star();
    let dist0 = (theta - star).norm();
    if dist0 == 0.0 {
        return Ok(PoissonValue { value: 0.0, horizon: 0.0, error_estimate: 0.0 });
    }
    // The integrand decays like the distance (identity) or its square.
    let (scale, rate) = match g {
        Observable::Coordinate(_) => (dist0, model.mu()),
        Observable::SquaredDistance => (dist0 * dist0, 2.0 * model.mu()),
    };
    let gstar = g.at_optimum(model);
    let integrand = |th: &DVector<f64>, out: &mut DVector<f64>| {
        out[0] = g.eval(model, th) - gstar;
    };
    let (z, horizon, err) = poisson_quadrature(model, theta, 1, &integrand, scale, rate, tol)?;
    Ok(PoissonValue { value: z[0], horizon, error_estimate: err })
}

/// Evaluates all coordinates of h_Id(theta) in one integration pass.
pub fn poisson_h_id(
    model: &ObjectiveModel,
    theta: &DVector<f64>,
    tol: f64,
) -> Result<(DVector<f64>, PoissonValue)> {
    model.check_dim(theta)?;
    let star = model.theta_star().clone();
    let d = model.dim();
    let dist0 = (theta - &star).norm();
    if dist0 == 0.0 {
        let meta = PoissonValue { value: 0.0, horizon: 0.0, error_estimate: 0.0 };
        return Ok((DVector::zeros(d), meta));
    }
    let integrand = |th: &DVector<f64>, out: &mut DVector<f64>| {
        out.copy_from(th);
        *out -= &star;
    };
    let (z, horizon, err) =
        poisson_quadrature(model, theta, d, &integrand, dist0, model.mu(), tol)?;
    let meta = PoissonValue { value: z.amax(), horizon, error_estimate: err };
    Ok((z, meta))
}

/// Closed form of the Jacobian of h_Id at the optimum: f''(theta*)^{-1}.
pub fn h_id_gradient_at_opt(model: &ObjectiveModel) -> Result<DMatrix<f64>> {
    model
        .exact_hessian(model.theta_star())
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Hessian at the optimum".into()))
}

/// Central-difference Jacobian of h_Id at the optimum; cross-check for the
/// closed form. Column j holds d h_Id / d theta_j.
pub fn h_id_jacobian_fd(model: &ObjectiveModel, h: f64, tol: f64) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let star = model.theta_star();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut plus = star.clone();
        plus[j] += h;
        let mut minus = star.clone();
        minus[j] -= h;
        let (hp, _) = poisson_h_id(model, &plus, tol)?;
        let (hm, _) = poisson_h_id(model, &minus, tol)?;
        for i in 0..d {
            jac[(i, j)] = (hp[i] - hm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Finite-difference Hessian of coordinate l of h_Id at the optimum, with
/// one Richardson refinement (h and h/2).
///
/// Every evaluation shares one truncation horizon and step count, fixed by
/// a pilot halving run, so the integrator error varies smoothly with the
/// start point and cancels in the second differences; without this the
/// division by h^2 would amplify independent quadrature errors.
fn h_id_coordinate_hessian_fd(
    model: &ObjectiveModel,
    l: usize,
    h: f64,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let star = model.theta_star().clone();
    let integrand = |th: &DVector<f64>, out: &mut DVector<f64>| {
        out.copy_from(th);
        *out -= &star;
    };
    let scale = 2.0 * h * (d as f64).sqrt();
    let t_end = poisson_horizon(scale, model.mu(), tol);
    let mut pilot = star.clone();
    pilot[l] += h;
    let mut steps = initial_steps(model, t_end);
    let (_, mut prev) = rk4_pass(model, &pilot, t_end, steps, d, &integrand, None);
    loop {
        steps *= 2;
        let (_, cur) = rk4_pass(model, &pilot, t_end, steps, d, &integrand, None);
        let diff = (&cur - &prev).amax();
        if diff < tol / 2.0 {
            break;
        }
        if steps > MAX_STEPS {
            return Err(Error::ToleranceNotReached(format!(
                "Poisson quadrature still moving by {diff:.3e} at {steps} steps"
            )));
        }
        prev = cur;
    }

    let eval = |offsets: &[(usize, f64)]| -> f64 {
        let mut th = star.clone();
        for &(j, dx) in offsets {
            th[j] += dx;
        }
        rk4_pass(model, &th, t_end, steps, d, &integrand, None).1[l]
    };
    let hess_at = |h: f64| -> DMatrix<f64> {
        let center = eval(&[]);
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            let p = eval(&[(i, h)]);
            let q = eval(&[(i, -h)]);
            m[(i, i)] = (p - 2.0 * center + q) / (h * h);
            for j in (i + 1)..d {
                let pp = eval(&[(i, h), (j, h)]);
                let pm = eval(&[(i, h), (j, -h)]);
                let mp = eval(&[(i, -h), (j, h)]);
                let mm = eval(&[(i, -h), (j, -h)]);
                let v = (pp - pm - mp + mm) / (4.0 * h * h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    };
    let coarse = hess_at(h);
    let fine = hess_at(h / 2.0);
    // Central differences carry O(h^2) error: (4 fine - coarse) / 3.
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// Leading weak-error coefficient of the identity observable, one entry
/// per coordinate: (1/2) tr(h''_{Id_l}(theta*) C(theta*)) by quadrature
/// and finite differences. Agrees with the closed-form averaged-bias
/// constant computed in tensorops; the two routes share no code.
pub fn weak_error_leading_identity(model: &ObjectiveModel, tol: f64) -> Result<DVector<f64>> {
    let d = model.dim();
    let c = model.noise_covariance(model.theta_star())?;
    let mut out = DVector::zeros(d);
    for l in 0..d {
        let hess = h_id_coordinate_hessian_fd(model, l, 1e-3, tol)?;
        out[l] = 0.5 * (&hess * &c).trace();
    }
    Ok(out)
}

/// Maximum residual of the generator identity d/dt h_g(phi_t) =
/// -(g(phi_t) - g(theta*)) at the requested times along one flow.
pub fn generator_max_residual(
    model: &ObjectiveModel,
    g: Observable,
    theta0: &DVector<f64>,
    times: &[f64],
    dt: f64,
    tol: f64,
) -> Result<f64> {
    let gstar = g.at_optimum(model);
    let mut worst = 0.0f64;
    for &t in times {
        if t <= dt {
            return Err(Error::InvalidArgument(format!("time {t} too close to 0 for dt {dt}")));
        }
        let at = |s: f64| -> Result<DVector<f64>> {
            Ok(integrate_flow(model, theta0, s, tol)?.end().clone())
        };
        let mid = at(t)?;
        let plus = at(t + dt)?;
        let minus = at(t - dt)?;
        let hp = poisson_h(model, g, &plus, tol)?.value;
        let hm = poisson_h(model, g, &minus, tol)?.value;
        let lhs = (hp - hm) / (2.0 * dt);
        let rhs = -(g.eval(model, &mid) - gstar);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Residuals of the first-order weak-error expansion over a step-size grid.
#[derive(Debug, Clone)]
pub struct WeakErrorReport {
    pub gammas: Vec<f64>,
    /// Stationary time averages of g with standard errors.
    pub g_mean: Vec<f64>,
    pub g_se: Vec<f64>,
    /// (1/2) tr(h_g''(theta*) C(theta*)).
    pub lead_coeff: f64,
    /// Telescoping Poisson corrections (h(start) - h(end)) / (n gamma).
    pub corrections: Vec<f64>,
    /// |g_mean - gamma lead - correction|.
    pub residuals: Vec<f64>,
    pub residual_se: Vec<f64>,
    pub fit: ScalingFit,
}

/// Measures E_pi[g] - g(theta*) for g = squared distance on a quadratic
/// model, subtracts the first-order term gamma/2 tr(h_g'' C) with the
/// closed-form h_g'' = Sigma^{-1}, and fits the residual's step-size slope.
/// `samples` gives the per-gamma chain length (smaller steps need more).
pub fn weak_error_check(
    model: &ObjectiveModel,
    grid: &[f64],
    samples: &[u64],
    seed: u64,
) -> Result<WeakErrorReport> {
    if model.kind() != ModelKind::LeastSquares {
        return Err(Error::InvalidModel(
            "closed-form h_g for the squared distance needs a quadratic objective".into(),
        ));
    }
    if grid.len() != samples.len() || grid.len() < 4 {
        return Err(Error::InvalidArgument("need one sample budget per grid point, >= 4".into()));
    }
    let star = model.theta_star();
    let sigma_inv = model
        .sigma()
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("second-moment matrix".into()))?;
    let lead = 0.5 * (&sigma_inv * model.noise_covariance(star)?).trace();
    // h_g(theta) = (theta - theta*)' (2 Sigma)^{-1} (theta - theta*).
    let h_g = |theta: &DVector<f64>| {
        let d = theta - star;
        0.5 * (&sigma_inv * &d).dot(&d)
    };

    let mut g_mean = Vec::with_capacity(grid.len());
    let mut g_se = Vec::with_capacity(grid.len());
    let mut corrections = Vec::with_capacity(grid.len());
    let mut residuals = Vec::with_capacity(grid.len());
    for (i, (&g, &n)) in grid.iter().zip(samples).enumerate() {
        let est = stationary::estimate_stationary(
            model,
            g,
            n,
            stationary::DEFAULT_BATCHES,
            None,
            seed,
            i as u64,
            "weak-error",
        )?;
        let corr = (h_g(&est.start) - h_g(&est.end.theta)) / (n as f64 * g);
        g_mean.push(est.m2);
        g_se.push(est.m2_se);
        corrections.push(corr);
        residuals.push((est.m2 - g * lead - corr).abs());
    }
    let fit = stats::fit_loglog(grid, &residuals, &g_se)?;
    Ok(WeakErrorReport {
        gammas: grid.to_vec(),
        g_mean,
        residual_se: g_se.clone(),
        g_se,
        lead_coeff: lead,
        corrections,
        residuals,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{presets, DataAtom, ObjectiveModel};
    use crate::tensorops;
    use rand::Rng;

    fn scalar_quadratic() -> ObjectiveModel {
        ObjectiveModel::least_squares(vec![DataAtom::new(vec![1.0], 0.0, 1.0)]).unwrap()
    }

    fn diag_quadratic() -> ObjectiveModel {
        // Sigma = diag(1, 2), theta* = 0.
        ObjectiveModel::least_squares(vec![
            DataAtom::new(vec![2.0_f64.sqrt(), 0.0], 0.0, 0.5),
            DataAtom::new(vec![0.0, 2.0], 0.0, 0.5),
        ])
        .unwrap()
    }

    #[test]
    fn scalar_flow_matches_the_exponential() {
        let m = scalar_quadratic();
        let sol = integrate_flow(&m, &DVector::from_vec(vec![1.0]), 1.0, 1e-10).unwrap();
        assert!((sol.end()[0] - (-1.0_f64).exp()).abs() < 1e-8);
        assert!(sol.error_estimate < 1e-10);
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let m = presets::logistic1();
        let sol = integrate_flow(&m, m.theta_star(), 5.0, 1e-10).unwrap();
        for th in &sol.states {
            assert!((th - m.theta_star()).amax() < 1e-12);
        }
        let h = poisson_h(&m, Observable::SquaredDistance, m.theta_star(), 1e-8).unwrap();
        assert_eq!(h.value, 0.0);
    }

    #[test]
    fn flow_descends_the_objective() {
        let m = presets::logistic1();
        let sol = integrate_flow(&m, &DVector::from_vec(vec![3.0]), 20.0, 1e-9).unwrap();
        for w in sol.states.windows(2) {
            assert!(m.value(&w[1]) <= m.value(&w[0]) + 1e-12);
        }
        // The flow reaches the optimum at this horizon.
        assert!((sol.end() - m.theta_star()).norm() < 1e-2);
    }

    #[test]
    fn flow_contracts_at_the_global_rate() {
        let models = [presets::lms3(), presets::logistic2()];
        let mut rg = crate::rng::stream(61, 0, "flow-contraction");
        for m in &models {
            for _ in 0..50 {
                let theta0 = DVector::from_fn(m.dim(), |i, _| {
                    m.theta_star()[i] + 3.0 * (2.0 * rg.gen::<f64>() - 1.0)
                });
                let sol = integrate_flow(m, &theta0, 8.0, 1e-9).unwrap();
                assert!(sol.contraction_ok(m, 1e-6), "start {theta0:?}");
            }
        }
    }

    #[test]
    fn poisson_identity_on_quadratics_is_the_inverse_hessian_map() {
        // h_Id(theta) = Sigma^{-1} (theta - theta*), exactly.
        let m = scalar_quadratic();
        let (h, meta) = poisson_h_id(&m, &DVector::from_vec(vec![1.0]), 1e-9).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-8, "h = {}", h[0]);
        assert!(meta.error_estimate < 1e-8);

        let m2 = diag_quadratic();
        let (h2, _) = poisson_h_id(&m2, &DVector::from_vec(vec![1.0, 1.0]), 1e-9).unwrap();
        assert!((h2[0] - 1.0).abs() < 1e-6);
        assert!((h2[1] - 0.5).abs() < 1e-6);

        let mut rg = crate::rng::stream(62, 0, "flow-poisson");
        for _ in 0..5 {
            let theta = DVector::from_fn(2, |_, _| 4.0 * rg.gen::<f64>() - 2.0);
            let (h, _) = poisson_h_id(&m2, &theta, 1e-8).unwrap();
            let exact = m2.sigma().clone().lu().solve(&theta).unwrap();
            assert!((h - exact).amax() < 1e-6);
        }
    }

    #[test]
    fn poisson_scalar_observable_matches_identity_component() {
        let m = diag_quadratic();
        let theta = DVector::from_vec(vec![0.7, -0.4]);
        let (hv, _) = poisson_h_id(&m, &theta, 1e-9).unwrap();
        let h0 = poisson_h(&m, Observable::Coordinate(0), &theta, 1e-9).unwrap();
        assert!((hv[0] - h0.value).abs() < 1e-8);
    }

    #[test]
    fn jacobian_of_h_id_at_the_optimum_is_the_inverse_hessian() {
        let m = presets::logistic1();
        let closed = h_id_gradient_at_opt(&m).unwrap();
        let fd = h_id_jacobian_fd(&m, 1e-3, 1e-9).unwrap();
        assert!(
            (closed.clone() - fd.clone()).amax() < 1e-4,
            "closed {closed}, fd {fd}"
        );
        let m2 = diag_quadratic();
        let closed2 = h_id_gradient_at_opt(&m2).unwrap();
        assert!((closed2[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((closed2[(1, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn generator_identity_along_flows() {
        let ts = [0.5, 1.0, 2.0, 5.0];
        let mq = scalar_quadratic();
        let r = generator_max_residual(
            &mq,
            Observable::SquaredDistance,
            &DVector::from_vec(vec![2.0]),
            &ts,
            1e-3,
            1e-9,
        )
        .unwrap();
        assert!(r < 1e-5, "quadratic residual {r}");
        let ml = presets::logistic1();
        let r2 = generator_max_residual(
            &ml,
            Observable::SquaredDistance,
            &DVector::from_vec(vec![2.0]),
            &ts,
            1e-3,
            1e-9,
        )
        .unwrap();
        assert!(r2 < 1e-5, "logistic residual {r2}");
        let r3 = generator_max_residual(
            &ml,
            Observable::Coordinate(0),
            &DVector::from_vec(vec![-1.5]),
            &ts,
            1e-3,
            1e-9,
        )
        .unwrap();
        assert!(r3 < 1e-5, "identity residual {r3}");
    }

    #[test]
    fn weak_error_residual_is_second_order_on_the_coin_model() {
        // Exact stationary mean of the squared distance is g / (2 - g); the
        // first-order term is g / 2, so the residual g^2 / (2 (2 - g)).
        let m = presets::scalar_coin();
        let grid = [0.025, 0.05, 0.1, 0.2];
        let samples = [4_000_000, 1_500_000, 600_000, 400_000];
        let rep = weak_error_check(&m, &grid, &samples, 71).unwrap();
        assert!((rep.lead_coeff - 0.5).abs() < 1e-12);
        for (i, &g) in grid.iter().enumerate() {
            let exact = g * g / (2.0 * (2.0 - g));
            assert!(
                (rep.residuals[i] - exact).abs() <= 4.0 * rep.residual_se[i] + 0.05 * exact,
                "gamma {g}: residual {} vs exact {exact} (se {})",
                rep.residuals[i],
                rep.residual_se[i]
            );
            assert!(rep.corrections[i].abs() < 1e-3);
        }
        assert!(rep.fit.slope >= 1.6, "slope {}", rep.fit.slope);
    }

    #[test]
    fn weak_error_leading_term_matches_the_tensor_route() {
        // Two independent computations of the first-order coefficient of
        // the stationary mean: finite differences of the flow Poisson
        // solution versus the closed-form tensor calculus. For a scalar
        // model both reduce to -f''' C / (4 f''^2).
        let m = presets::logistic1();
        let via_flow = weak_error_leading_identity(&m, 1e-10).unwrap();
        let via_tensors =
            tensorops::averaged_bias_constant(&m, tensorops::AVERAGED_BIAS_FACTOR).unwrap();
        assert!(
            (via_flow[0] - via_tensors[0]).abs() < 1e-5 + 1e-3 * via_tensors[0].abs(),
            "flow {} vs tensors {}",
            via_flow[0],
            via_tensors[0]
        );
        // Quadratics carry no first-order bias at all.
        let mq = diag_quadratic();
        let flow_q = weak_error_leading_identity(&mq, 1e-10).unwrap();
        assert!(flow_q.amax() < 1e-6);
    }
}
