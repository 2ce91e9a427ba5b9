//! Dense operator calculus on d x d matrices.
//!
//! Purpose
//! -------
//! The stationary second moment of a constant step-size least-squares chain
//! solves a linear equation in matrix space. This module represents linear
//! maps on d x d matrices, materializes them as d^2 x d^2 matrices through
//! the column-stacking isomorphism vec, and solves the two moment equations:
//!
//! * generic quadratic: (Sigma (x) I + I (x) Sigma - g Sigma (x) Sigma) M
//!   = g Cbar, where Cbar is a stationary average of the noise covariance;
//! * least squares with exact multiplicative noise:
//!   (Sigma (x) I + I (x) Sigma - g T) M = g E[xi xi'], where
//!   T A = E[(x' A x) x x'] is the fourth-moment operator.
//!
//! It also builds the map A = (H (x) I + I (x) H)^{-1} for symmetric
//! positive definite H, the ratio operator Omega relating the two moment
//! equations, and the first-order constant of the averaged-iterate bias.
//!
//! Conventions
//! -----------
//! * vec stacks columns (the native dense layout), so the matrix of
//!   P -> M P N is N' (x) M.
//! * Operators built from factor pairs keep the pairs; maps defined as
//!   inverses carry only their dense form. `apply` prefers the pair form,
//!   `materialize` always yields the dense form, and the two routes are
//!   cross-checked in the tests.
//! * Everything here is dense and meant for small dimension; materializing
//!   is rejected for d > 30.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::models::{ModelKind, ObjectiveModel};

/// Dense materialization is O(d^4) memory; this cap keeps it honest.
pub const MAX_DENSE_DIM: usize = 30;

/// Relative scale of the first-order averaged bias with respect to
/// f''(theta*)^{-1} applied to the contraction of f''' with A C(theta*).
/// The -1/2 arises from expanding 0 = E[f'(theta)] under the stationary law
/// to second order; the Monte Carlo slope measurements in the test suite
/// confirm it against the +1 alternative.
pub const AVERAGED_BIAS_FACTOR: f64 = -0.5;

/// Column-stacking isomorphism.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`] for square matrices.
pub fn mat_of(d: usize, v: &DVector<f64>) -> DMatrix<f64> {
    assert_eq!(v.len(), d * d, "vec length must be d^2");
    DMatrix::from_column_slice(d, d, v.as_slice())
}

/// Applies P -> M P N with dimension checks.
pub fn kron_apply(m: &DMatrix<f64>, p: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = p.nrows();
    if p.ncols() != d || m.nrows() != d || m.ncols() != d || n.nrows() != d || n.ncols() != d {
        return Err(Error::InvalidArgument(format!(
            "kron_apply needs square d x d factors, got {}x{}, {}x{}, {}x{}",
            m.nrows(),
            m.ncols(),
            p.nrows(),
            p.ncols(),
            n.nrows(),
            n.ncols()
        )));
    }
    Ok(m * p * n)
}

/// A linear map on d x d matrices.
#[derive(Debug, Clone)]
pub struct MatrixOperator {
    d: usize,
    /// Factor pairs; the action is P -> sum_j M_j P N_j.
    pairs: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// Dense d^2 x d^2 form, the only representation for inverse maps.
    dense: Option<DMatrix<f64>>,
}

impl MatrixOperator {
    pub fn from_pairs(d: usize, pairs: Vec<(DMatrix<f64>, DMatrix<f64>)>) -> Result<Self> {
        for (m, n) in &pairs {
            if m.nrows() != d || m.ncols() != d || n.nrows() != d || n.ncols() != d {
                return Err(Error::InvalidArgument(format!(
                    "operator factor is {}x{} / {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols(),
                    n.nrows(),
                    n.ncols()
                )));
            }
        }
        Ok(MatrixOperator { d, pairs, dense: None })
    }

    pub fn from_dense(d: usize, dense: DMatrix<f64>) -> Result<Self> {
        if dense.nrows() != d * d || dense.ncols() != d * d {
            return Err(Error::InvalidArgument(format!(
                "dense operator is {}x{}, expected {}x{}",
                dense.nrows(),
                dense.ncols(),
                d * d,
                d * d
            )));
        }
        Ok(MatrixOperator { d, pairs: Vec::new(), dense: Some(dense) })
    }

    pub fn identity(d: usize) -> Self {
        let id = DMatrix::identity(d, d);
        MatrixOperator { d, pairs: vec![(id.clone(), id)], dense: None }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Applies the operator, preferring the exact pair form.
    pub fn apply(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if p.nrows() != self.d || p.ncols() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: p.nrows() });
        }
        if !self.pairs.is_empty() {
            let mut out = DMatrix::zeros(self.d, self.d);
            for (m, n) in &self.pairs {
                out += m * p * n;
            }
            return Ok(out);
        }
        let dense = self.dense.as_ref().expect("operator has pairs or dense form");
        Ok(mat_of(self.d, &(dense * vec_of(p))))
    }

    /// Applies through the materialized form regardless of representation;
    /// the redundant route exists to cross-check `apply`.
    pub fn apply_dense(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dense = self.materialize()?;
        Ok(mat_of(self.d, &(dense * vec_of(p))))
    }

    /// Dense d^2 x d^2 matrix of the operator in the vec basis.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        if let Some(dense) = &self.dense {
            return Ok(dense.clone());
        }
        if self.d > MAX_DENSE_DIM {
            return Err(Error::InvalidArgument(format!(
                "refusing dense {0}^2 x {0}^2 materialization (cap d <= {MAX_DENSE_DIM})",
                self.d
            )));
        }
        let mut acc = DMatrix::zeros(self.d * self.d, self.d * self.d);
        for (m, n) in &self.pairs {
            acc += n.transpose().kronecker(m);
        }
        Ok(acc)
    }

    /// Dense composition self . other.
    pub fn compose(&self, other: &MatrixOperator) -> Result<MatrixOperator> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: other.d });
        }
        MatrixOperator::from_dense(self.d, self.materialize()? * other.materialize()?)
    }

    /// Dense inverse.
    pub fn inverse(&self) -> Result<MatrixOperator> {
        let dense = self.materialize()?;
        let inv = dense
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular("matrix-space operator".into()))?;
        MatrixOperator::from_dense(self.d, inv)
    }

    /// Solves self X = rhs in matrix space.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dense = self.materialize()?;
        let sol = dense
            .lu()
            .solve(&vec_of(rhs))
            .ok_or_else(|| Error::Singular("matrix-space operator".into()))?;
        Ok(mat_of(self.d, &sol))
    }

    /// The operator restricted to symmetric matrices, expressed in an
    /// orthonormal basis of the symmetric subspace (dimension d(d+1)/2).
    /// Only meaningful for operators that preserve symmetry.
    pub fn symmetric_restriction(&self) -> Result<DMatrix<f64>> {
        let d = self.d;
        let dense = self.materialize()?;
        let nsym = d * (d + 1) / 2;
        let mut basis = DMatrix::zeros(d * d, nsym);
        let mut col = 0;
        let inv_sqrt2 = 0.5_f64.sqrt();
        for i in 0..d {
            for j in i..d {
                let mut b = DMatrix::zeros(d, d);
                if i == j {
                    b[(i, i)] = 1.0;
                } else {
                    b[(i, j)] = inv_sqrt2;
                    b[(j, i)] = inv_sqrt2;
                }
                basis.set_column(col, &vec_of(&b));
                col += 1;
            }
        }
        Ok(basis.transpose() * dense * basis)
    }
}

/// The map P -> H P + P H in pair form [(H, I), (I, H)].
pub fn sylvester_map(h: &DMatrix<f64>) -> Result<MatrixOperator> {
    let d = h.nrows();
    if h.ncols() != d {
        return Err(Error::InvalidArgument("sylvester_map needs a square matrix".into()));
    }
    let id = DMatrix::identity(d, d);
    MatrixOperator::from_pairs(d, vec![(h.clone(), id.clone()), (id, h.clone())])
}

fn require_spd(h: &DMatrix<f64>, what: &str) -> Result<()> {
    let d = h.nrows();
    let mut asym: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * (1.0 + h.amax()) {
        return Err(Error::InvalidArgument(format!("{what} must be symmetric")));
    }
    let min = SymmetricEigen::new(h.clone()).eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{what} must be positive definite (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

/// Inverse of P -> H P + P H for symmetric positive definite H. In the
/// eigenbasis of H the map divides the (i, j) coefficient by
/// lambda_i + lambda_j.
pub fn operator_a(h: &DMatrix<f64>) -> Result<MatrixOperator> {
    require_spd(h, "operator_a argument")?;
    sylvester_map(h)?.inverse()
}

/// The quadratic stationary map Sigma (x) I + I (x) Sigma - g Sigma (x) Sigma
/// in pair form (acting as P -> Sigma P + P Sigma - g Sigma P Sigma).
pub fn stationary_map(sigma: &DMatrix<f64>, gamma: f64) -> Result<MatrixOperator> {
    let d = sigma.nrows();
    let id = DMatrix::identity(d, d);
    MatrixOperator::from_pairs(
        d,
        vec![(sigma.clone(), id.clone()), (id, sigma.clone()), (-gamma * sigma, sigma.clone())],
    )
}

/// Fourth-moment operator T: A -> E[(x' A x) x x'] = sum_i w_i P_i A P_i
/// with P_i = x_i x_i'. Pure pair form because (x' A x) x x' = P A P.
pub fn operator_t(model: &ObjectiveModel) -> Result<MatrixOperator> {
    let d = model.dim();
    let pairs = model
        .atoms()
        .iter()
        .map(|a| {
            let p = &a.x * a.x.transpose();
            (a.w * &p, p.clone())
        })
        .collect();
    MatrixOperator::from_pairs(d, pairs)
}

fn check_gamma(gamma: f64, limit: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < limit) {
        return Err(Error::StepSize { gamma, limit });
    }
    Ok(())
}

/// Solves (Sigma (x) I + I (x) Sigma - g Sigma (x) Sigma) M = g Cbar for the
/// stationary second moment of a quadratic objective with noise-covariance
/// average Cbar. Valid for g in (0, 2 / lambda_max(Sigma)).
pub fn stationary_second_moment_quadratic(
    sigma: &DMatrix<f64>,
    gamma: f64,
    cbar: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    require_spd(sigma, "stationary solve Sigma")?;
    let lmax = SymmetricEigen::new(sigma.clone()).eigenvalues.max();
    check_gamma(gamma, 2.0 / lmax)?;
    let op = stationary_map(sigma, gamma)?;
    let m = op.solve(&(gamma * cbar))?;
    // The equation preserves symmetry; strip rounding asymmetry.
    Ok((&m + m.transpose()) * 0.5)
}

/// Exact stationary second moment of a least-squares chain, solving
/// (Sigma (x) I + I (x) Sigma - g T) M = g E[xi xi'] with the exact
/// fourth-moment operator. Valid for g in (0, 1 / r^2).
pub fn stationary_second_moment_lms(model: &ObjectiveModel, gamma: f64) -> Result<DMatrix<f64>> {
    if model.kind() != ModelKind::LeastSquares {
        return Err(Error::InvalidArgument(
            "exact multiplicative-noise solve applies to least squares only".into(),
        ));
    }
    let r2 = model.r2_ls().expect("least-squares model carries r^2");
    check_gamma(gamma, 1.0 / r2)?;
    let d = model.dim();
    let sylv = sylvester_map(model.sigma())?.materialize()?;
    let t = operator_t(model)?.materialize()?;
    let lhs = sylv - gamma * t;
    let rhs = gamma * model.noise_covariance(model.theta_star())?;
    let sol = lhs
        .lu()
        .solve(&vec_of(&rhs))
        .ok_or_else(|| Error::Singular("least-squares stationary operator".into()))?;
    let m = mat_of(d, &sol);
    Ok((&m + m.transpose()) * 0.5)
}

/// The ratio operator Omega = (Sigma (x) I + I (x) Sigma - g Sigma (x) Sigma)
/// . (Sigma (x) I + I (x) Sigma - g T)^{-1} connecting the two stationary
/// solves. Reduces to the identity when T = Sigma (x) Sigma.
pub fn omega_operator(model: &ObjectiveModel, gamma: f64) -> Result<MatrixOperator> {
    if model.kind() != ModelKind::LeastSquares {
        return Err(Error::InvalidArgument(
            "ratio operator applies to least squares only".into(),
        ));
    }
    let r2 = model.r2_ls().expect("least-squares model carries r^2");
    check_gamma(gamma, 1.0 / r2)?;
    let sylv = sylvester_map(model.sigma())?.materialize()?;
    let t = operator_t(model)?.materialize()?;
    let num = stationary_map(model.sigma(), gamma)?.materialize()?;
    let den = sylv - gamma * t;
    let inv = den
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("least-squares stationary operator".into()))?;
    MatrixOperator::from_dense(model.dim(), num * inv)
}

/// First-order constant of the averaged-iterate bias: the averaged chain
/// sits at theta* + g * Delta + O(g^2) with
/// Delta = factor * f''(theta*)^{-1} [ f'''(theta*) : A C(theta*) ].
/// Zero for quadratics (f''' = 0). `factor` defaults to
/// [`AVERAGED_BIAS_FACTOR`]; the +1 alternative is kept reachable for the
/// resolution test.
pub fn averaged_bias_constant(model: &ObjectiveModel, factor: f64) -> Result<DVector<f64>> {
    let theta_star = model.theta_star();
    let hess = model.exact_hessian(theta_star);
    let cov = model.noise_covariance(theta_star)?;
    let a = operator_a(&hess)?;
    let ac = a.apply(&cov)?;
    let v = model.exact_third_derivative(theta_star).contract_matrix(&ac);
    let u = hess
        .cholesky()
        .ok_or_else(|| Error::Singular("Hessian at the optimum".into()))?
        .solve(&v);
    Ok(factor * u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{presets, sigmoid, DataAtom};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_mat(d: usize, rg: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |_, _| rg.gen_range(-2.0..2.0))
    }

    #[test]
    fn kron_apply_scalar_case() {
        let m = DMatrix::from_element(1, 1, 2.0);
        let p = DMatrix::from_element(1, 1, 3.0);
        let n = DMatrix::from_element(1, 1, 5.0);
        assert_eq!(kron_apply(&m, &p, &n).unwrap()[(0, 0)], 30.0);
        assert!(kron_apply(&m, &DMatrix::zeros(2, 2), &n).is_err());
    }

    #[test]
    fn pair_action_matches_materialized_action() {
        let mut rg = rng::stream(21, 0, "tensorops-vec");
        for _ in 0..50 {
            let d = rg.gen_range(1..=4);
            let op = MatrixOperator::from_pairs(
                d,
                (0..rg.gen_range(1..=3)).map(|_| (random_mat(d, &mut rg), random_mat(d, &mut rg))).collect(),
            )
            .unwrap();
            let p = random_mat(d, &mut rg);
            let direct = op.apply(&p).unwrap();
            let via_vec = op.apply_dense(&p).unwrap();
            assert!((direct - via_vec).amax() < 1e-10);
        }
    }

    #[test]
    fn operator_a_scalar_and_identity_cases() {
        // d = 1, H = 2: H P + P H = 4 P, so A divides by 4.
        let a = operator_a(&DMatrix::from_element(1, 1, 2.0)).unwrap();
        let got = a.apply(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((got[(0, 0)] - 0.25).abs() < 1e-14);

        // H = I in d = 3 halves everything.
        let a = operator_a(&DMatrix::identity(3, 3)).unwrap();
        let p = DMatrix::from_row_slice(3, 3, &[1., 2., 3., 2., 5., 6., 3., 6., 9.]);
        assert!((a.apply(&p).unwrap() - 0.5 * &p).amax() < 1e-12);

        // Rejects indefinite input.
        let ind = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(operator_a(&ind).is_err());
    }

    #[test]
    fn operator_a_spectral_oracle() {
        // Independent route: in the eigenbasis of H the inverse map divides
        // the (i, j) coefficient by lambda_i + lambda_j.
        let mut rg = rng::stream(22, 0, "tensorops-spectral");
        for _ in 0..10 {
            let d = 3;
            let raw = random_mat(d, &mut rg);
            let q = raw.qr().q();
            let lambdas = DVector::from_fn(d, |_, _| rg.gen_range(0.3..3.0));
            let h = &q * DMatrix::from_diagonal(&lambdas) * q.transpose();
            let h = (&h + h.transpose()) * 0.5;
            let a = operator_a(&h).unwrap();
            for i in 0..d {
                for j in 0..d {
                    let qi = q.column(i).clone_owned();
                    let qj = q.column(j).clone_owned();
                    let sym = &qi * qj.transpose() + &qj * qi.transpose();
                    let expected = &sym / (lambdas[i] + lambdas[j]);
                    assert!((a.apply(&sym).unwrap() - expected).amax() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn scalar_coin_second_moment_closed_form() {
        // AR(1) oracle: m = g / (2 - g); both solve routes must agree with it.
        let m = presets::scalar_coin();
        for gamma in [0.05, 0.1, 0.2, 0.5] {
            let expected = gamma / (2.0 - gamma);
            let c = m.noise_covariance(m.theta_star()).unwrap();
            let generic = stationary_second_moment_quadratic(m.sigma(), gamma, &c).unwrap();
            assert!((generic[(0, 0)] - expected).abs() < 1e-14, "generic at {gamma}");
            let exact = stationary_second_moment_lms(&m, gamma).unwrap();
            assert!((exact[(0, 0)] - expected).abs() < 1e-14, "lms at {gamma}");
        }
    }

    #[test]
    fn lms_and_generic_solves_agree_to_first_order() {
        // With Cbar frozen at C(theta*) the generic solve differs from the
        // exact multiplicative-noise solve at O(g^2), so the relative gap
        // closes linearly in g.
        let m = presets::lms3();
        let c = m.noise_covariance(m.theta_star()).unwrap();
        let rel_gap = |gamma: f64| {
            let exact = stationary_second_moment_lms(&m, gamma).unwrap();
            let generic = stationary_second_moment_quadratic(m.sigma(), gamma, &c).unwrap();
            (&exact - &generic).amax() / exact.amax()
        };
        let g1 = rel_gap(1e-2);
        let g2 = rel_gap(1e-3);
        assert!(g1 < 0.05, "gap at 1e-2 is {g1}");
        let ratio = g1 / g2;
        assert!((5.0..20.0).contains(&ratio), "gap ratio {ratio} not linear in g");
    }

    #[test]
    fn small_gamma_limit_is_a_applied_to_c() {
        // m(g) / g -> A[C] as g -> 0.
        let m = presets::lms3();
        let c = m.noise_covariance(m.theta_star()).unwrap();
        let ac = operator_a(m.sigma()).unwrap().apply(&c).unwrap();
        let gamma = 1e-5;
        let sol = stationary_second_moment_quadratic(m.sigma(), gamma, &c).unwrap();
        assert!((sol / gamma - &ac).amax() < 1e-3 * ac.amax());
    }

    #[test]
    fn fourth_moment_operator_hand_values() {
        // Scalar +-1 data: T is the identity on 1 x 1 matrices.
        let t = operator_t(&presets::scalar_coin()).unwrap();
        assert!((t.apply(&DMatrix::from_element(1, 1, 3.0)).unwrap()[(0, 0)] - 3.0).abs() < 1e-14);

        // Axis-aligned atoms keep only diagonal entries:
        // T[A] = 0.5 A00 e0 e0' + 0.5 A11 e1 e1'.
        let axis = crate::models::ObjectiveModel::least_squares(vec![
            DataAtom::new(vec![1.0, 0.0], 1.0, 0.5),
            DataAtom::new(vec![0.0, 1.0], -1.0, 0.5),
        ])
        .unwrap();
        let t = operator_t(&axis).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 7.0, 7.0, 4.0]);
        let got = t.apply(&a).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        assert!((got - want).amax() < 1e-14);
    }

    #[test]
    fn fourth_moment_operator_norm_bound() {
        // lambda_max(T) <= r^2 lambda_max(Sigma) on random least-squares models.
        let mut rg = rng::stream(23, 0, "tensorops-tbound");
        for _ in 0..25 {
            let d = rg.gen_range(2..=3);
            let natoms = rg.gen_range(d + 1..=6);
            let mut atoms: Vec<DataAtom> = (0..natoms)
                .map(|_| {
                    DataAtom::new(
                        (0..d).map(|_| rg.gen_range(-2.0..2.0)).collect(),
                        rg.gen_range(-1.0..1.0),
                        1.0,
                    )
                })
                .collect();
            let w = 1.0 / natoms as f64;
            atoms.iter_mut().for_each(|a| a.w = w);
            let Ok(m) = crate::models::ObjectiveModel::least_squares(atoms) else {
                continue; // degenerate draw
            };
            let tmat = operator_t(&m).unwrap().materialize().unwrap();
            let tmax = SymmetricEigen::new((&tmat + tmat.transpose()) * 0.5).eigenvalues.max();
            let bound = m.r2_ls().unwrap() * m.lip();
            assert!(tmax <= bound + 1e-9, "lambda_max(T) = {tmax} > {bound}");
        }
    }

    #[test]
    fn omega_is_identity_when_t_equals_sigma_kron_sigma() {
        let m = presets::scalar_coin();
        let omega = omega_operator(&m, 0.1).unwrap().materialize().unwrap();
        assert!((omega - DMatrix::identity(1, 1)).amax() < 1e-14);
    }

    #[test]
    fn stationary_map_is_positive_definite_on_symmetric_matrices() {
        let m = presets::lms3();
        let lmax = m.lip();
        for frac in [0.05, 0.5, 0.95, 1.5, 1.95] {
            let gamma = frac / lmax;
            let restr = stationary_map(m.sigma(), gamma).unwrap().symmetric_restriction().unwrap();
            let min = SymmetricEigen::new((&restr + restr.transpose()) * 0.5).eigenvalues.min();
            assert!(min > 0.0, "gamma = {gamma}: min eigenvalue {min}");
        }
    }

    #[test]
    fn averaged_bias_constant_vanishes_without_third_derivative() {
        let zero = averaged_bias_constant(&presets::lms3(), AVERAGED_BIAS_FACTOR).unwrap();
        assert!(zero.amax() == 0.0);
        let sym = averaged_bias_constant(&presets::logistic2_symmetric(), AVERAGED_BIAS_FACTOR)
            .unwrap();
        assert!(sym.amax() < 1e-12);
    }

    #[test]
    fn averaged_bias_constant_matches_scalar_arithmetic() {
        // Independent scalar route in d = 1: A C = C / (2 f''), then
        // Delta = factor * f''' * C / (2 f''^2).
        let m = presets::logistic1();
        let t = m.theta_star()[0];
        let s = sigmoid(t);
        let d2 = 0.1 + s * (1.0 - s); // both atoms contribute sigma(t)sigma(-t)
        // y^3 flips together with sigma''(-t), so both atoms add the same
        // term: f''' = (0.7 + 0.3) s(1-s)(1-2s).
        let d3 = s * (1.0 - s) * (1.0 - 2.0 * s);
        let g1 = -sigmoid(-t) + 0.1 * t;
        let g2 = sigmoid(t) + 0.1 * t;
        let c = 0.7 * g1 * g1 + 0.3 * g2 * g2;
        let expected = AVERAGED_BIAS_FACTOR * d3 * c / (2.0 * d2 * d2);
        let got = averaged_bias_constant(&m, AVERAGED_BIAS_FACTOR).unwrap();
        assert!((got[0] - expected).abs() < 1e-12 * expected.abs().max(1.0));
        assert!(got[0] > 0.0, "bias constant for this model points above theta*");
    }

    #[test]
    fn materialization_cap_is_enforced() {
        let d = MAX_DENSE_DIM + 1;
        let op = MatrixOperator::identity(d);
        assert!(op.materialize().is_err());
        // Within the cap a d = 30 materialization is legal (just large).
        let op = MatrixOperator::identity(MAX_DENSE_DIM);
        assert!(op.materialize().is_ok());
    }

    proptest! {
        #[test]
        fn prop_vec_identity(entries in prop::collection::vec(-10.0f64..10.0, 27)) {
            // vec(M P N) = (N' (x) M) vec(P) for random 3 x 3 triples.
            let m = DMatrix::from_column_slice(3, 3, &entries[0..9]);
            let p = DMatrix::from_column_slice(3, 3, &entries[9..18]);
            let n = DMatrix::from_column_slice(3, 3, &entries[18..27]);
            let direct = kron_apply(&m, &p, &n).unwrap();
            let kron = n.transpose().kronecker(&m);
            let via_vec = mat_of(3, &(kron * vec_of(&p)));
            prop_assert!((direct - via_vec).amax() < 1e-9);
        }

        #[test]
        fn prop_symmetric_pairs_preserve_symmetry(entries in prop::collection::vec(-5.0f64..5.0, 18)) {
            // P -> sum_j S_j P S_j with symmetric S_j maps symmetric to symmetric.
            let raw1 = DMatrix::from_column_slice(3, 3, &entries[0..9]);
            let raw2 = DMatrix::from_column_slice(3, 3, &entries[9..18]);
            let s1 = (&raw1 + raw1.transpose()) * 0.5;
            let p = (&raw2 + raw2.transpose()) * 0.5;
            let op = MatrixOperator::from_pairs(3, vec![(s1.clone(), s1.clone())]).unwrap();
            let out = op.apply(&p).unwrap();
            prop_assert!((&out - out.transpose()).amax() < 1e-10);
        }

        #[test]
        fn prop_operator_linearity(entries in prop::collection::vec(-5.0f64..5.0, 36), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let m = DMatrix::from_column_slice(3, 3, &entries[0..9]);
            let n = DMatrix::from_column_slice(3, 3, &entries[9..18]);
            let p = DMatrix::from_column_slice(3, 3, &entries[18..27]);
            let q = DMatrix::from_column_slice(3, 3, &entries[27..36]);
            let op = MatrixOperator::from_pairs(3, vec![(m, n)]).unwrap();
            let lhs = op.apply(&(a * &p + b * &q)).unwrap();
            let rhs = a * op.apply(&p).unwrap() + b * op.apply(&q).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }
    }
}
