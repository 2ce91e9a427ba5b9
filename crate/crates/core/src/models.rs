//! Finite-support stochastic objectives with exact oracles.
//!
//! Purpose
//! -------
//! Every experiment in this crate runs on an objective of the form
//! f(theta) = sum_i w_i loss(atom_i, theta), a finite mixture of per-sample
//! losses. Sampling atom i with probability w_i makes the per-sample
//! gradient an unbiased estimate of f', and because the support is finite
//! every population quantity (gradient, Hessian, third derivative, noise
//! covariance, noise moments) is an exact weighted sum rather than an
//! estimate. That is what lets the Monte Carlo side of the crate be checked
//! against closed forms.
//!
//! Supported losses:
//! * `LeastSquares`: loss(x, y, theta) = (x' theta - y)^2 / 2.
//! * `LogisticL2`:   loss(x, y, theta) = ln(1 + exp(-y x' theta))
//!                   + lambda |theta|^2 / 2, with the ridge term folded into
//!                   every per-sample gradient so the noise at the optimum
//!                   carries no lambda contribution.
//!
//! Invariants and assumptions
//! --------------------------
//! * Atom weights are strictly positive and sum to 1 within 1e-12.
//! * For `LeastSquares` the second-moment matrix Sigma = E[x x'] must be
//!   positive definite (unique optimum).
//! * For `LogisticL2` lambda > 0, which makes f strongly convex with global
//!   constant lambda.
//! * `mu()` is the global strong-convexity constant; `mu_local()` is the
//!   smallest Hessian eigenvalue at the optimum (they coincide for
//!   least squares). `lip()` bounds the Hessian everywhere. Step sizes are
//!   stable for gamma in (0, 2 / lip()).

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 200;
const NEWTON_GRAD_TOL: f64 = 1e-12;

/// Numerically stable logistic sigmoid 1 / (1 + exp(-t)).
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + exp(-t)).
fn log1p_exp_neg(t: f64) -> f64 {
    if t >= 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LeastSquares,
    LogisticL2,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::LeastSquares => "least-squares",
            ModelKind::LogisticL2 => "logistic-l2",
        }
    }
}

/// One support point of the data distribution.
#[derive(Debug, Clone)]
pub struct DataAtom {
    pub x: DVector<f64>,
    pub y: f64,
    pub w: f64,
}

impl DataAtom {
    pub fn new(x: Vec<f64>, y: f64, w: f64) -> Self {
        DataAtom { x: DVector::from_vec(x), y, w }
    }
}

/// Fully symmetric rank-3 tensor stored dense; entry (i, j, k) at
/// `data[(i * d + j) * d + k]`.
#[derive(Debug, Clone)]
pub struct Tensor3 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d: usize) -> Self {
        Tensor3 { d, data: vec![0.0; d * d * d] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.d + j) * self.d + k]
    }

    /// Adds c * v (x) v (x) v.
    pub fn add_outer_cube(&mut self, c: f64, v: &DVector<f64>) {
        let d = self.d;
        for i in 0..d {
            let ci = c * v[i];
            for j in 0..d {
                let cij = ci * v[j];
                for k in 0..d {
                    self.data[(i * d + j) * d + k] += cij * v[k];
                }
            }
        }
    }

    /// Contracts the first two slots with a matrix:
    /// out[k] = sum_ij T[i, j, k] m[i, j]. Symmetry makes the slot choice
    /// immaterial.
    pub fn contract_matrix(&self, m: &DMatrix<f64>) -> DVector<f64> {
        assert_eq!(m.nrows(), self.d);
        assert_eq!(m.ncols(), self.d);
        let d = self.d;
        let mut out = DVector::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let mij = m[(i, j)];
                for k in 0..d {
                    out[k] += self.data[(i * d + j) * d + k] * mij;
                }
            }
        }
        out
    }

    /// Trilinear form T[u, v, w].
    pub fn apply3(&self, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let d = self.d;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                let uv = u[i] * v[j];
                for k in 0..d {
                    acc += self.data[(i * d + j) * d + k] * uv * w[k];
                }
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }
}

/// Draws atom indices with probability proportional to the weights.
///
/// One uniform draw per sample; shared-noise couplings reuse the drawn index
/// across chains so their noise realizations coincide.
#[derive(Debug, Clone)]
pub struct AtomSampler {
    cum: Vec<f64>,
}

impl AtomSampler {
    fn new(weights: &[f64]) -> Self {
        let mut cum = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in weights {
            acc += w;
            cum.push(acc);
        }
        // Guard against rounding: the final cell must catch u -> 1.
        if let Some(last) = cum.last_mut() {
            *last = f64::INFINITY;
        }
        AtomSampler { cum }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cum.partition_point(|&c| c <= u)
    }
}

/// A finite-support objective with cached curvature constants and optimum.
#[derive(Debug, Clone)]
pub struct ObjectiveModel {
    kind: ModelKind,
    d: usize,
    lambda: f64,
    atoms: Vec<DataAtom>,
    sigma: DMatrix<f64>,
    theta_star: DVector<f64>,
    f_star: f64,
    mu: f64,
    mu_local: f64,
    lip: f64,
    radius2: f64,
    r2_ls: Option<f64>,
}

impl ObjectiveModel {
    pub fn least_squares(atoms: Vec<DataAtom>) -> Result<Self> {
        Self::new(ModelKind::LeastSquares, atoms, 0.0)
    }

    pub fn logistic(atoms: Vec<DataAtom>, lambda: f64) -> Result<Self> {
        Self::new(ModelKind::LogisticL2, atoms, lambda)
    }

    pub fn new(kind: ModelKind, atoms: Vec<DataAtom>, lambda: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidModel("no atoms".into()));
        }
        let d = atoms[0].x.len();
        if d == 0 {
            return Err(Error::InvalidModel("atoms must have dimension >= 1".into()));
        }
        let mut wsum = 0.0;
        for (i, a) in atoms.iter().enumerate() {
            if a.x.len() != d {
                return Err(Error::InvalidModel(format!(
                    "atom {i} has dimension {}, expected {d}",
                    a.x.len()
                )));
            }
            if !a.x.iter().all(|v| v.is_finite()) || !a.y.is_finite() {
                return Err(Error::InvalidModel(format!("atom {i} has non-finite entries")));
            }
            if !(a.w > 0.0) || !a.w.is_finite() {
                return Err(Error::InvalidModel(format!("atom {i} has weight {}, need > 0", a.w)));
            }
            wsum += a.w;
        }
        if (wsum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidModel(format!(
                "weights sum to {wsum}, need 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        match kind {
            ModelKind::LeastSquares => {
                if lambda != 0.0 {
                    return Err(Error::InvalidModel(
                        "least-squares objective takes no ridge term".into(),
                    ));
                }
            }
            ModelKind::LogisticL2 => {
                if !(lambda > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "logistic objective needs lambda > 0, got {lambda}"
                    )));
                }
            }
        }

        let mut sigma = DMatrix::zeros(d, d);
        let mut radius2: f64 = 0.0;
        for a in &atoms {
            sigma.syger(a.w, &a.x, &a.x, 1.0);
            radius2 = radius2.max(a.x.norm_squared());
        }
        // syger fills the lower triangle; mirror it.
        for i in 0..d {
            for j in (i + 1)..d {
                sigma[(i, j)] = sigma[(j, i)];
            }
        }

        let sig_eig = SymmetricEigen::new(sigma.clone());
        let sig_min = sig_eig.eigenvalues.min();
        let sig_max = sig_eig.eigenvalues.max();

        let mut model = ObjectiveModel {
            kind,
            d,
            lambda,
            atoms,
            sigma,
            theta_star: DVector::zeros(d),
            f_star: 0.0,
            mu: 0.0,
            mu_local: 0.0,
            lip: 0.0,
            radius2,
            r2_ls: None,
        };

        match kind {
            ModelKind::LeastSquares => {
                if sig_min <= 1e-12 * sig_max.max(1.0) {
                    return Err(Error::InvalidModel(format!(
                        "second-moment matrix is singular (min eigenvalue {sig_min:.3e})"
                    )));
                }
                model.mu = sig_min;
                model.mu_local = sig_min;
                model.lip = sig_max;
                let mut b = DVector::zeros(d);
                for a in &model.atoms {
                    b.axpy(a.w * a.y, &a.x, 1.0);
                }
                model.theta_star = model
                    .sigma
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Singular("second-moment matrix".into()))?
                    .solve(&b);
                // Smallest r^2 with E[|x|^2 x x'] <= r^2 Sigma.
                let mut s = DMatrix::zeros(d, d);
                for a in &model.atoms {
                    s.syger(a.w * a.x.norm_squared(), &a.x, &a.x, 1.0);
                }
                for i in 0..d {
                    for j in (i + 1)..d {
                        s[(i, j)] = s[(j, i)];
                    }
                }
                let chol = Cholesky::new(model.sigma.clone())
                    .ok_or_else(|| Error::Singular("second-moment matrix".into()))?;
                let li = chol.l().try_inverse().ok_or_else(|| {
                    Error::Singular("Cholesky factor of second-moment matrix".into())
                })?;
                let m = &li * s * li.transpose();
                model.r2_ls =
                    Some(SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.max());
            }
            ModelKind::LogisticL2 => {
                model.mu = lambda;
                model.lip = sig_max / 4.0 + lambda;
                model.theta_star = model.newton_optimum()?;
                let hess = model.exact_hessian(&model.theta_star);
                model.mu_local = SymmetricEigen::new(hess).eigenvalues.min();
            }
        }
        model.f_star = model.value(&model.theta_star);
        Ok(model)
    }

    fn newton_optimum(&self) -> Result<DVector<f64>> {
        let mut theta = DVector::zeros(self.d);
        let mut grad = self.exact_gradient(&theta)?;
        for _ in 0..NEWTON_MAX_ITERS {
            let tol = NEWTON_GRAD_TOL * (1.0 + theta.norm());
            if grad.norm() <= tol {
                return Ok(theta);
            }
            let hess = self.exact_hessian(&theta);
            let dir = hess
                .cholesky()
                .ok_or_else(|| Error::Singular("Hessian in Newton solve".into()))?
                .solve(&grad);
            // Backtrack on the gradient norm; full steps win near the optimum.
            let g0 = grad.norm();
            let mut t = 1.0;
            loop {
                let cand = &theta - t * &dir;
                let gc = self.exact_gradient(&cand)?;
                if gc.norm() < g0 || t < 1e-8 {
                    theta = cand;
                    grad = gc;
                    break;
                }
                t *= 0.5;
            }
        }
        let g = grad.norm();
        if g <= 1e-9 * (1.0 + theta.norm()) {
            // Flat tail of backtracking; accept the slightly looser point.
            return Ok(theta);
        }
        Err(Error::OptimumNotFound { iterations: NEWTON_MAX_ITERS, grad_norm: g })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn atoms(&self) -> &[DataAtom] {
        &self.atoms
    }

    /// E[x x'] under the atom weights.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// Global strong-convexity constant.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Smallest Hessian eigenvalue at the optimum.
    pub fn mu_local(&self) -> f64 {
        self.mu_local
    }

    /// Gradient Lipschitz constant.
    pub fn lip(&self) -> f64 {
        self.lip
    }

    /// Largest squared atom norm.
    pub fn radius2(&self) -> f64 {
        self.radius2
    }

    /// Least squares only: smallest r^2 with E[|x|^2 x x'] <= r^2 E[x x'].
    pub fn r2_ls(&self) -> Option<f64> {
        self.r2_ls
    }

    /// Upper end of the stable step-size range (0, 2 / L).
    pub fn gamma_limit(&self) -> f64 {
        2.0 / self.lip
    }

    pub fn sampler(&self) -> AtomSampler {
        AtomSampler::new(&self.atoms.iter().map(|a| a.w).collect::<Vec<_>>())
    }

    pub fn check_dim(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: theta.len() });
        }
        Ok(())
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        match self.kind {
            ModelKind::LeastSquares => {
                let mut acc = 0.0;
                for a in &self.atoms {
                    let r = a.x.dot(theta) - a.y;
                    acc += a.w * 0.5 * r * r;
                }
                acc
            }
            ModelKind::LogisticL2 => {
                let mut acc = 0.0;
                for a in &self.atoms {
                    acc += a.w * log1p_exp_neg(a.y * a.x.dot(theta));
                }
                acc + 0.5 * self.lambda * theta.norm_squared()
            }
        }
    }

    /// f(theta) - f(theta*). Mathematically nonnegative; tiny negative
    /// values from cancellation are possible and left untouched.
    pub fn gap(&self, theta: &DVector<f64>) -> f64 {
        self.value(theta) - self.f_star
    }

    pub fn exact_gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(theta)?;
        let mut g = DVector::zeros(self.d);
        match self.kind {
            ModelKind::LeastSquares => {
                for a in &self.atoms {
                    g.axpy(a.w * (a.x.dot(theta) - a.y), &a.x, 1.0);
                }
            }
            ModelKind::LogisticL2 => {
                for a in &self.atoms {
                    let t = a.y * a.x.dot(theta);
                    g.axpy(-a.w * sigmoid(-t) * a.y, &a.x, 1.0);
                }
                g.axpy(self.lambda, theta, 1.0);
            }
        }
        Ok(g)
    }

    /// Per-atom gradient written into `out` without allocating. This is the
    /// hot path of every chain step.
    #[inline]
    pub fn atom_gradient_into(&self, idx: usize, theta: &DVector<f64>, out: &mut DVector<f64>) {
        let a = &self.atoms[idx];
        match self.kind {
            ModelKind::LeastSquares => {
                let s = a.x.dot(theta) - a.y;
                out.copy_from(&a.x);
                *out *= s;
            }
            ModelKind::LogisticL2 => {
                let t = a.y * a.x.dot(theta);
                let s = -sigmoid(-t) * a.y;
                out.copy_from(&a.x);
                *out *= s;
                out.axpy(self.lambda, theta, 1.0);
            }
        }
    }

    /// Per-atom gradient; sampling the atom index by weight makes this an
    /// unbiased estimate of `exact_gradient`.
    pub fn stochastic_gradient(&self, idx: usize, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(theta)?;
        if idx >= self.atoms.len() {
            return Err(Error::InvalidArgument(format!(
                "atom index {idx} out of range ({} atoms)",
                self.atoms.len()
            )));
        }
        let mut out = DVector::zeros(self.d);
        self.atom_gradient_into(idx, theta, &mut out);
        Ok(out)
    }

    pub fn exact_hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        match self.kind {
            ModelKind::LeastSquares => self.sigma.clone(),
            ModelKind::LogisticL2 => {
                let d = self.d;
                let mut h = DMatrix::zeros(d, d);
                for a in &self.atoms {
                    let t = a.y * a.x.dot(theta);
                    let c = a.w * sigmoid(t) * sigmoid(-t) * a.y * a.y;
                    h.syger(c, &a.x, &a.x, 1.0);
                }
                for i in 0..d {
                    for j in (i + 1)..d {
                        h[(i, j)] = h[(j, i)];
                    }
                }
                for i in 0..d {
                    h[(i, i)] += self.lambda;
                }
                h
            }
        }
    }

    pub fn exact_third_derivative(&self, theta: &DVector<f64>) -> Tensor3 {
        let mut t3 = Tensor3::zeros(self.d);
        if self.kind == ModelKind::LogisticL2 {
            for a in &self.atoms {
                let t = a.y * a.x.dot(theta);
                let s = sigmoid(t);
                let c = a.w * s * (1.0 - s) * (1.0 - 2.0 * s) * a.y * a.y * a.y;
                t3.add_outer_cube(c, &a.x);
            }
        }
        t3
    }

    /// Exact noise covariance C(theta) = E[(g_i - f')(g_i - f')'].
    pub fn noise_covariance(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(theta)?;
        let grad = self.exact_gradient(theta)?;
        let d = self.d;
        let mut c = DMatrix::zeros(d, d);
        let mut buf = DVector::zeros(d);
        for (i, a) in self.atoms.iter().enumerate() {
            self.atom_gradient_into(i, theta, &mut buf);
            buf -= &grad;
            c.syger(a.w, &buf, &buf, 1.0);
        }
        for i in 0..d {
            for j in (i + 1)..d {
                c[(i, j)] = c[(j, i)];
            }
        }
        Ok(c)
    }

    /// Noise covariance accumulated into `out` without allocating; used when
    /// time-averaging C along a chain.
    pub fn noise_covariance_add(
        &self,
        theta: &DVector<f64>,
        grad_buf: &mut DVector<f64>,
        atom_buf: &mut DVector<f64>,
        out: &mut [f64],
        weight: f64,
    ) {
        let d = self.d;
        grad_buf.fill(0.0);
        match self.kind {
            ModelKind::LeastSquares => {
                for a in &self.atoms {
                    grad_buf.axpy(a.w * (a.x.dot(theta) - a.y), &a.x, 1.0);
                }
            }
            ModelKind::LogisticL2 => {
                for a in &self.atoms {
                    let t = a.y * a.x.dot(theta);
                    grad_buf.axpy(-a.w * sigmoid(-t) * a.y, &a.x, 1.0);
                }
                grad_buf.axpy(self.lambda, theta, 1.0);
            }
        }
        for (i, a) in self.atoms.iter().enumerate() {
            self.atom_gradient_into(i, theta, atom_buf);
            *atom_buf -= &*grad_buf;
            let w = weight * a.w;
            for c in 0..d {
                let vc = atom_buf[c] * w;
                for r in 0..d {
                    out[c * d + r] += vc * atom_buf[r];
                }
            }
        }
    }

    /// p-th root of the p-th absolute noise moment at the optimum,
    /// E^(1/p) |eps(theta*)|^p. Exact atom sum.
    pub fn noise_moment(&self, p: u32) -> f64 {
        assert!(p >= 1);
        let grad = self.exact_gradient(&self.theta_star).expect("cached optimum has model dim");
        let mut acc = 0.0;
        let mut buf = DVector::zeros(self.d);
        for (i, a) in self.atoms.iter().enumerate() {
            self.atom_gradient_into(i, &self.theta_star, &mut buf);
            buf -= &grad;
            acc += a.w * buf.norm().powi(p as i32);
        }
        acc.powf(1.0 / p as f64)
    }

    /// Multi-line human-readable summary used by the CLI.
    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("kind            {}\n", self.kind.as_str()));
        s.push_str(&format!("dim             {}\n", self.d));
        s.push_str(&format!("atoms           {}\n", self.atoms.len()));
        if self.kind == ModelKind::LogisticL2 {
            s.push_str(&format!("lambda          {}\n", self.lambda));
        }
        s.push_str(&format!("mu (global)     {:.12e}\n", self.mu));
        s.push_str(&format!("mu (at optimum) {:.12e}\n", self.mu_local));
        s.push_str(&format!("L               {:.12e}\n", self.lip));
        s.push_str(&format!("R^2             {:.12e}\n", self.radius2));
        if let Some(r2) = self.r2_ls {
            s.push_str(&format!("r^2             {:.12e}\n", r2));
        }
        s.push_str(&format!("gamma limit     {:.12e}\n", self.gamma_limit()));
        s.push_str(&format!("tau_2^2         {:.12e}\n", self.noise_moment(2).powi(2)));
        let theta: Vec<String> = self.theta_star.iter().map(|v| format!("{v:.12e}")).collect();
        s.push_str(&format!("theta*          [{}]\n", theta.join(", ")));
        s.push_str(&format!("f(theta*)       {:.12e}\n", self.f_star));
        s
    }
}

#[derive(Deserialize)]
struct AtomFile {
    x: Vec<f64>,
    y: f64,
    w: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    kind: String,
    #[serde(default)]
    lambda: Option<f64>,
    atoms: Vec<AtomFile>,
}

/// Loads a model description from a TOML file.
///
/// ```toml
/// kind = "logistic-l2"      # or "least-squares"
/// lambda = 0.1              # logistic only
///
/// [[atoms]]
/// x = [1.0]
/// y = 1.0
/// w = 0.7
/// ```
pub fn load_model(path: &std::path::Path) -> Result<ObjectiveModel> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::file(path.display().to_string(), e))?;
    parse_model(&text).map_err(|e| match e {
        Error::InvalidModel(m) | Error::Parse { message: m, .. } => {
            Error::parse(path.display().to_string(), m)
        }
        other => other,
    })
}

/// Parses the TOML model description from a string.
pub fn parse_model(text: &str) -> Result<ObjectiveModel> {
    let raw: ModelFile =
        toml::from_str(text).map_err(|e| Error::parse("model", e.to_string()))?;
    let kind = match raw.kind.as_str() {
        "least-squares" => ModelKind::LeastSquares,
        "logistic-l2" => ModelKind::LogisticL2,
        other => {
            return Err(Error::InvalidModel(format!(
                "unknown kind {other:?}, expected \"least-squares\" or \"logistic-l2\""
            )))
        }
    };
    let atoms: Vec<DataAtom> =
        raw.atoms.into_iter().map(|a| DataAtom::new(a.x, a.y, a.w)).collect();
    ObjectiveModel::new(kind, atoms, raw.lambda.unwrap_or(0.0))
}

/// Canonical instances used across tests and the verification harness.
pub mod presets {
    use super::*;

    /// d = 1 least squares with x = 1 and targets +-1, equally weighted.
    /// The chain is theta <- (1 - gamma) theta + gamma y, an AR(1) recursion
    /// with every constant equal to 1 (mu = L = R^2 = tau_2^2 = 1) and
    /// stationary second moment gamma / (2 - gamma).
    pub fn scalar_coin() -> ObjectiveModel {
        ObjectiveModel::least_squares(vec![
            DataAtom::new(vec![1.0], 1.0, 0.5),
            DataAtom::new(vec![1.0], -1.0, 0.5),
        ])
        .expect("valid preset")
    }

    /// d = 3 least squares with four skewed atoms; Sigma is positive
    /// definite and anisotropic, and the multiplicative noise makes the
    /// fourth-moment operator differ from Sigma (x) Sigma.
    pub fn lms3() -> ObjectiveModel {
        ObjectiveModel::least_squares(vec![
            DataAtom::new(vec![1.0, 0.0, 0.5], 1.0, 0.3),
            DataAtom::new(vec![0.0, 1.0, -0.5], -1.0, 0.3),
            DataAtom::new(vec![0.5, 0.5, 1.0], 0.5, 0.2),
            DataAtom::new(vec![-1.0, 0.5, 0.0], 0.25, 0.2),
        ])
        .expect("valid preset")
    }

    /// d = 1 logistic with unbalanced labels; the asymmetry gives a
    /// non-trivial third derivative at the optimum, hence a first-order
    /// averaged bias.
    pub fn logistic1() -> ObjectiveModel {
        ObjectiveModel::logistic(
            vec![DataAtom::new(vec![1.0], 1.0, 0.7), DataAtom::new(vec![1.0], -1.0, 0.3)],
            0.1,
        )
        .expect("valid preset")
    }

    /// d = 2 logistic with no symmetry; exercises the general-dimension
    /// paths (Newton optimum, finite-difference cross-checks).
    pub fn logistic2() -> ObjectiveModel {
        ObjectiveModel::logistic(
            vec![
                DataAtom::new(vec![1.0, 0.3], 1.0, 0.4),
                DataAtom::new(vec![0.2, -1.0], -1.0, 0.35),
                DataAtom::new(vec![0.8, 0.8], 1.0, 0.25),
            ],
            0.05,
        )
        .expect("valid preset")
    }

    /// d = 2 logistic symmetric under label flips: the optimum is 0 and the
    /// third derivative vanishes there, so the averaged bias constant is 0.
    pub fn logistic2_symmetric() -> ObjectiveModel {
        ObjectiveModel::logistic(
            vec![
                DataAtom::new(vec![1.0, 0.0], 1.0, 0.25),
                DataAtom::new(vec![1.0, 0.0], -1.0, 0.25),
                DataAtom::new(vec![0.0, 1.0], 1.0, 0.25),
                DataAtom::new(vec![0.0, 1.0], -1.0, 0.25),
            ],
            0.1,
        )
        .expect("valid preset")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn vec1(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    #[test]
    fn least_squares_gradient_hand_value() {
        // f(theta) = (theta^2 + (theta - 1)^2) / 4, f'(theta) = theta - 1/2.
        let m = ObjectiveModel::least_squares(vec![
            DataAtom::new(vec![1.0], 0.0, 0.5),
            DataAtom::new(vec![1.0], 1.0, 0.5),
        ])
        .unwrap();
        let g = m.exact_gradient(&vec1(1.0)).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15);
        assert!((m.theta_star()[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn logistic_gradient_hand_value() {
        // At theta = 0 both labels see sigmoid(0) = 1/2:
        // 0.7 * (-1/2) + 0.3 * (1/2) = -0.2, ridge term zero.
        let m = presets::logistic1();
        let g = m.exact_gradient(&vec1(0.0)).unwrap();
        assert!((g[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn scalar_coin_constants_are_unit() {
        let m = presets::scalar_coin();
        assert!((m.mu() - 1.0).abs() < 1e-14);
        assert!((m.lip() - 1.0).abs() < 1e-14);
        assert!((m.radius2() - 1.0).abs() < 1e-14);
        assert!((m.r2_ls().unwrap() - 1.0).abs() < 1e-12);
        assert!(m.theta_star()[0].abs() < 1e-14);
        assert!((m.noise_moment(2) - 1.0).abs() < 1e-14);
        // C(theta) = 1 for every theta: the noise is the label itself.
        for t in [-2.0, 0.0, 0.7] {
            let c = m.noise_covariance(&vec1(t)).unwrap();
            assert!((c[(0, 0)] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn logistic1_constants() {
        let m = presets::logistic1();
        assert!((m.lip() - 0.35).abs() < 1e-14);
        assert!((m.mu() - 0.1).abs() < 1e-15);
        assert!(m.mu_local() > m.mu());
    }

    #[test]
    fn logistic_optimum_matches_bisection_oracle() {
        // Independent route to theta*: bisection on the scalar gradient.
        let m = presets::logistic1();
        let grad = |t: f64| -0.7 * sigmoid(-t) + 0.3 * sigmoid(t) + 0.1 * t;
        let (mut lo, mut hi) = (0.0_f64, 2.0_f64);
        assert!(grad(lo) < 0.0 && grad(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if grad(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((m.theta_star()[0] - oracle).abs() < 1e-10);
    }

    #[test]
    fn stochastic_gradient_is_unbiased() {
        for m in [presets::logistic2(), presets::lms3()] {
            let mut rg = rng::stream(11, 0, "models-unbiased");
            for _ in 0..25 {
                let theta =
                    DVector::from_fn(m.dim(), |_, _| rg.gen_range(-3.0..3.0));
                let exact = m.exact_gradient(&theta).unwrap();
                let mut avg = DVector::zeros(m.dim());
                for (i, a) in m.atoms().iter().enumerate() {
                    avg.axpy(a.w, &m.stochastic_gradient(i, &theta).unwrap(), 1.0);
                }
                assert!((avg - exact).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn derivatives_agree_with_finite_differences() {
        let m = presets::logistic2();
        let theta = DVector::from_vec(vec![0.4, -0.8]);
        let h = 1e-5;
        let d = m.dim();
        // Gradient vs value differences.
        let g = m.exact_gradient(&theta).unwrap();
        for i in 0..d {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (m.value(&tp) - m.value(&tm)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "grad[{i}]");
        }
        // Hessian vs gradient differences.
        let hess = m.exact_hessian(&theta);
        for i in 0..d {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (m.exact_gradient(&tp).unwrap() - m.exact_gradient(&tm).unwrap()) / (2.0 * h);
            for j in 0..d {
                assert!((fd[j] - hess[(j, i)]).abs() <= 1e-5 * (1.0 + hess[(j, i)].abs()));
            }
        }
        // Third derivative vs Hessian differences.
        let t3 = m.exact_third_derivative(&theta);
        for i in 0..d {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (m.exact_hessian(&tp) - m.exact_hessian(&tm)) / (2.0 * h);
            for j in 0..d {
                for k in 0..d {
                    assert!((fd[(j, k)] - t3.get(j, k, i)).abs() <= 1e-4);
                }
            }
        }
    }

    #[test]
    fn third_derivative_is_symmetric_and_zero_for_least_squares() {
        let t3 = presets::lms3().exact_third_derivative(&DVector::zeros(3));
        assert_eq!(t3.max_abs(), 0.0);
        let m = presets::logistic2();
        let t3 = m.exact_third_derivative(&DVector::from_vec(vec![0.3, 0.1]));
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let v = t3.get(i, j, k);
                    assert!((v - t3.get(j, i, k)).abs() < 1e-15);
                    assert!((v - t3.get(k, j, i)).abs() < 1e-15);
                    assert!((v - t3.get(i, k, j)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn strong_convexity_holds_on_a_grid() {
        // Global constant must lower-bound the Hessian everywhere, also far
        // from the optimum where the logistic curvature decays.
        for m in [presets::logistic1(), presets::logistic2(), presets::lms3()] {
            let mut rg = rng::stream(5, 0, "models-convexity");
            for _ in 0..50 {
                let theta = DVector::from_fn(m.dim(), |i, _| {
                    m.theta_star()[i] + rg.gen_range(-3.0..3.0)
                });
                let eig = SymmetricEigen::new(m.exact_hessian(&theta)).eigenvalues;
                assert!(eig.min() >= m.mu() - 1e-9);
                assert!(eig.max() <= m.lip() + 1e-9);
            }
        }
    }

    #[test]
    fn co_coercivity_of_the_gradient() {
        // <f'(a) - f'(b), a - b> >= |f'(a) - f'(b)|^2 / L for L-smooth convex f.
        for m in [presets::logistic2(), presets::lms3()] {
            let mut rg = rng::stream(6, 0, "models-cocoercive");
            for _ in 0..10_000 {
                let a = DVector::from_fn(m.dim(), |_, _| rg.gen_range(-5.0..5.0));
                let b = DVector::from_fn(m.dim(), |_, _| rg.gen_range(-5.0..5.0));
                let ga = m.exact_gradient(&a).unwrap();
                let gb = m.exact_gradient(&b).unwrap();
                let dg = &ga - &gb;
                let lhs = dg.dot(&(&a - &b));
                assert!(lhs >= dg.norm_squared() / m.lip() - 1e-9);
            }
        }
    }

    #[test]
    fn sampler_frequencies_match_weights() {
        let m = presets::logistic1();
        let sampler = m.sampler();
        let mut rg = rng::stream(9, 0, "models-sampler");
        let n = 200_000;
        let mut counts = [0u64; 2];
        for _ in 0..n {
            counts[sampler.sample(&mut rg)] += 1;
        }
        let f0 = counts[0] as f64 / n as f64;
        // Binomial sd ~ 0.001; allow 5 sigma.
        assert!((f0 - 0.7).abs() < 0.005, "frequency {f0}");
    }

    #[test]
    fn model_file_round_trip_and_validation() {
        let good = r#"
            kind = "logistic-l2"
            lambda = 0.1
            [[atoms]]
            x = [1.0]
            y = 1.0
            w = 0.7
            [[atoms]]
            x = [1.0]
            y = -1.0
            w = 0.3
        "#;
        let m = parse_model(good).unwrap();
        assert_eq!(m.kind(), ModelKind::LogisticL2);
        assert_eq!(m.dim(), 1);

        // Weights off by more than 1e-12.
        let bad_weights = good.replace("w = 0.3", "w = 0.300001");
        assert!(matches!(parse_model(&bad_weights), Err(Error::InvalidModel(_))));

        // Mixed dimensions.
        let bad_dim = good.replace("x = [1.0]\n            y = -1.0", "x = [1.0, 2.0]\n            y = -1.0");
        assert!(matches!(parse_model(&bad_dim), Err(Error::InvalidModel(_))));

        // Logistic without lambda.
        let no_lambda = good.replace("lambda = 0.1\n", "");
        assert!(matches!(parse_model(&no_lambda), Err(Error::InvalidModel(_))));

        // Degenerate least squares: all atoms on one axis in d = 2.
        let singular = r#"
            kind = "least-squares"
            [[atoms]]
            x = [1.0, 0.0]
            y = 1.0
            w = 0.5
            [[atoms]]
            x = [1.0, 0.0]
            y = -1.0
            w = 0.5
        "#;
        assert!(matches!(parse_model(singular), Err(Error::InvalidModel(_))));

        // Syntax error surfaces as a parse error.
        assert!(matches!(parse_model("kind = ["), Err(Error::Parse { .. })));
    }

    #[test]
    fn noise_moments_are_exact_sums() {
        let m = presets::scalar_coin();
        // eps at the optimum is -y, so every absolute moment is 1.
        for p in [1, 2, 3, 4, 6, 8] {
            assert!((m.noise_moment(p) - 1.0).abs() < 1e-13);
        }
        let l = presets::logistic1();
        // Hand sum: g1 = -sigmoid(-t*) + 0.1 t*, g2 = sigmoid(t*) + 0.1 t*.
        let t = l.theta_star()[0];
        let g1 = -sigmoid(-t) + 0.1 * t;
        let g2 = sigmoid(t) + 0.1 * t;
        let tau2 = (0.7 * g1 * g1 + 0.3 * g2 * g2).sqrt();
        assert!((l.noise_moment(2) - tau2).abs() < 1e-12);
    }
}
