//! Statistical utilities shared by the estimation modules.
//!
//! Key behaviors:
//! * Batch means turn one long correlated series into `nb` nearly
//!   independent batch averages; the reported standard error is the sample
//!   standard deviation of the batch means divided by sqrt(nb).
//! * Log-log slope fits run ordinary least squares on (ln x, ln y) after
//!   discarding points indistinguishable from zero (value below 3 standard
//!   errors); the slope uncertainty is a delete-one jackknife half-width.
//!
//! Conventions: standard errors are one-sigma; fits require at least four
//! grid points spanning close to a decade before exclusions.

use crate::error::{Error, Result};

/// Streaming batch-means accumulator for a fixed-length vector observable.
///
/// The total number of pushes must be `nb * batch_len`; construction picks
/// `batch_len = total / nb` and `finish` truncates any remainder.
pub struct BatchMeans {
    dim: usize,
    nb: usize,
    batch_len: u64,
    in_batch: u64,
    batch_sum: Vec<f64>,
    batch_means: Vec<Vec<f64>>,
}

impl BatchMeans {
    pub fn new(dim: usize, total: u64, nb: usize) -> Result<Self> {
        if nb < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 batches, got {nb}")));
        }
        let batch_len = total / nb as u64;
        if batch_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "{total} samples cannot fill {nb} batches"
            )));
        }
        Ok(BatchMeans {
            dim,
            nb,
            batch_len,
            in_batch: 0,
            batch_sum: vec![0.0; dim],
            batch_means: Vec::with_capacity(nb),
        })
    }

    pub fn push(&mut self, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.dim);
        if self.batch_means.len() == self.nb {
            return; // remainder beyond nb * batch_len is ignored
        }
        for (acc, v) in self.batch_sum.iter_mut().zip(sample) {
            *acc += v;
        }
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            let len = self.batch_len as f64;
            self.batch_means.push(self.batch_sum.iter().map(|s| s / len).collect());
            self.batch_sum.iter_mut().for_each(|s| *s = 0.0);
            self.in_batch = 0;
        }
    }

    /// Overall mean and one-sigma standard error per component.
    pub fn finish(self) -> (Vec<f64>, Vec<f64>, usize) {
        let nb = self.batch_means.len();
        assert!(nb >= 2, "batch means accumulator under-filled");
        let mut mean = vec![0.0; self.dim];
        for bm in &self.batch_means {
            for (m, v) in mean.iter_mut().zip(bm) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nb as f64);
        let mut var = vec![0.0; self.dim];
        for bm in &self.batch_means {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(bm) {
                *v += (x - m) * (x - m);
            }
        }
        let se: Vec<f64> =
            var.iter().map(|v| (v / ((nb - 1) as f64 * nb as f64)).sqrt()).collect();
        (mean, se, nb)
    }
}

/// Sample mean and one-sigma standard error of the mean.
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    assert!(n >= 2, "need at least two samples");
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Result of a log-log slope fit y ~ exp(intercept) * x^slope.
#[derive(Debug, Clone)]
pub struct ScalingFit {
    pub abscissae: Vec<f64>,
    pub ordinates: Vec<f64>,
    /// One-sigma errors on `ordinates` (pre-log); zero means "exact".
    pub std_errors: Vec<f64>,
    /// Points kept by the noise-floor filter.
    pub used: Vec<bool>,
    pub slope: f64,
    /// Natural-log intercept: fitted value at x = 1 is exp(intercept).
    pub intercept: f64,
    /// Root-mean-square residual in log space over used points.
    pub rms_residual: f64,
    /// Delete-one jackknife half-width (2 sigma) on the slope.
    pub slope_half_width: f64,
}

impl ScalingFit {
    /// Fitted ordinate at abscissa `x`.
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

/// Minimum ratio between the largest and smallest abscissa of a scaling
/// fit. Octave-doubled step-size grids like {g, 2g, 4g, 8g} span exactly
/// 8x, so the floor sits just below that rather than at a full decade.
pub const MIN_GRID_SPAN: f64 = 7.5;

/// Fits a power law through `(x, y)` points with one-sigma errors `se`.
///
/// Points with `y < 3 se` are treated as unresolved noise and excluded.
/// Requires at least 4 grid points spanning close to a decade (at least
/// 7.5x), and at least 3 surviving points.
pub fn fit_loglog(xs: &[f64], ys: &[f64], ses: &[f64]) -> Result<ScalingFit> {
    if xs.len() != ys.len() || xs.len() != ses.len() {
        return Err(Error::InvalidArgument("scaling fit arrays differ in length".into()));
    }
    if xs.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "scaling fit needs at least 4 grid points, got {}",
            xs.len()
        )));
    }
    let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(lo > 0.0) || hi / lo < MIN_GRID_SPAN {
        return Err(Error::InvalidArgument(format!(
            "scaling grid must span close to a decade (>= {MIN_GRID_SPAN}x): [{lo:.3e}, {hi:.3e}]"
        )));
    }
    let used: Vec<bool> =
        ys.iter().zip(ses).map(|(&y, &se)| y.is_finite() && y > 3.0 * se && y > 0.0).collect();
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|((&x, &y), _)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::NoiseFloor(format!(
            "only {} of {} points resolved above 3 standard errors",
            pts.len(),
            xs.len()
        )));
    }
    let (slope, intercept) = ols(&pts);
    let rms = (pts.iter().map(|&(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>()
        / pts.len() as f64)
        .sqrt();
    // Delete-one jackknife on the slope.
    let n = pts.len();
    let mut jack = Vec::with_capacity(n);
    for i in 0..n {
        let sub: Vec<(f64, f64)> =
            pts.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &p)| p).collect();
        jack.push(ols(&sub).0);
    }
    let jmean = jack.iter().sum::<f64>() / n as f64;
    let jvar = jack.iter().map(|s| (s - jmean) * (s - jmean)).sum::<f64>() * (n - 1) as f64
        / n as f64;
    Ok(ScalingFit {
        abscissae: xs.to_vec(),
        ordinates: ys.to_vec(),
        std_errors: ses.to_vec(),
        used,
        slope,
        intercept,
        rms_residual: rms,
        slope_half_width: 2.0 * jvar.sqrt(),
    })
}

/// Weighted least squares for y = sum_j c_j basis_j(x), weights 1/se^2.
///
/// Returns the coefficients. Used for 1/k + 1/k^2 decompositions where a
/// log-log fit would mix the two orders.
pub fn weighted_basis_fit(
    xs: &[f64],
    ys: &[f64],
    ses: &[f64],
    basis: &[&dyn Fn(f64) -> f64],
) -> Result<Vec<f64>> {
    let m = basis.len();
    let n = xs.len();
    if n < m {
        return Err(Error::InvalidArgument(format!("{n} points cannot determine {m} coefficients")));
    }
    let mut ata = vec![0.0; m * m];
    let mut atb = vec![0.0; m];
    for i in 0..n {
        let w = if ses[i] > 0.0 { 1.0 / (ses[i] * ses[i]) } else { 1.0 };
        let row: Vec<f64> = basis.iter().map(|b| b(xs[i])).collect();
        for a in 0..m {
            atb[a] += w * row[a] * ys[i];
            for b in 0..m {
                ata[a * m + b] += w * row[a] * row[b];
            }
        }
    }
    let ata = nalgebra::DMatrix::from_row_slice(m, m, &ata);
    let atb = nalgebra::DVector::from_row_slice(&atb);
    ata.lu()
        .solve(&atb)
        .map(|c| c.iter().copied().collect())
        .ok_or_else(|| Error::Singular("normal equations of weighted fit".into()))
}
