use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigenvalues below this (relative to the matrix scale) are an error rather
/// than round-off.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::InvalidInput(format!(
                "covariance {}x{} for a mean of length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        Ok(FeatureStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean and unbiased covariance over rows of `samples` (`n x d`, n >= 2).
    pub fn from_rows(samples: &DMatrix<f64>) -> Result<Self> {
        let n = samples.nrows();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 feature vectors, got {n}"
            )));
        }
        let mean = DVector::from_iterator(samples.ncols(), samples.column_iter().map(|c| c.mean()));
        let mut centered = samples.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        Ok(FeatureStats { mean, cov })
    }

    /// Statistics over the spatial positions of a `[1, d, h, w]` feature map.
    pub fn from_feature_map(f: &Tensor) -> Result<Self> {
        let [n, d, h, w] = f.shape();
        if n != 1 {
            return Err(Error::InvalidInput(format!("expected one feature map, got {n}")));
        }
        let hw = h * w;
        let data = f.data();
        let rows = DMatrix::from_fn(hw, d, |p, c| data[c * hw + p]);
        FeatureStats::from_rows(&rows)
    }
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0)
}

/// Eigen-decomposition of a symmetric PSD matrix; tiny negative eigenvalues
/// are clipped to zero.
fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let tol = PSD_TOLERANCE * scale_of(m);
    let asym = (m - m.transpose()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if asym > tol {
        return Err(Error::Numeric(format!("{what} is not symmetric (off by {asym:e})")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} has non-finite entries")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut e = SymmetricEigen::new(sym);
    for l in e.eigenvalues.iter_mut() {
        if *l < -tol {
            return Err(Error::Numeric(format!(
                "{what} has eigenvalue {l:e} below -{tol:e}"
            )));
        }
        *l = l.max(0.0);
    }
    Ok(e)
}

/// Square root of a symmetric PSD matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = psd_eigen(m, "matrix")?;
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    Ok(&e.eigenvectors * d * e.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The cross term uses `Tr((S_a S_b)^(1/2)) = Tr((A S_b A)^(1/2))` with
/// `A = S_a^(1/2)`, which keeps every root symmetric.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let ea = psd_eigen(&a.cov, "first covariance")?;
    psd_eigen(&b.cov, "second covariance")?;
    let ra = &ea.eigenvectors
        * DMatrix::from_diagonal(&ea.eigenvalues.map(f64::sqrt))
        * ea.eigenvectors.transpose();
    let inner = &ra * &b.cov * &ra;
    let cross: f64 = psd_eigen(&inner, "covariance product")?
        .eigenvalues
        .iter()
        .map(|l| l.sqrt())
        .sum();
    let dm = (&a.mean - &b.mean).norm_squared();
    let d = dm + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::Numeric("Frechet distance is not finite".into()));
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: &[f64], cov: &[f64]) -> FeatureStats {
        let d = mean.len();
        FeatureStats::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(d, d, cov)).unwrap()
    }

    #[test]
    fn scalar_case() {
        let a = stats(&[0.0], &[1.0]);
        let b = stats(&[1.0], &[1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn diagonal_closed_form() {
        let a = stats(&[0.5, -1.0, 2.0], &[4.0, 0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, 9.0]);
        let b = stats(&[0.0, 1.0, 2.5], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let want: f64 = [(0.5, 4.0, 0.0, 1.0), (-1.0, 0.25, 1.0, 1.0), (2.0, 9.0, 2.5, 2.0)]
            .iter()
            .map(|&(m, s, m2, s2): &(f64, f64, f64, f64)| (m - m2).powi(2) + (s.sqrt() - s2.sqrt()).powi(2))
            .sum();
        let got = frechet_distance(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn symmetric_for_full_covariances() {
        let a = stats(&[0.0, 1.0], &[2.0, 0.5, 0.5, 1.0]);
        let b = stats(&[1.0, 0.0], &[1.0, -0.3, -0.3, 3.0]);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-10);
        assert!(ab > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, -1.0]);
        let b = stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Numeric(_))));
        let c = stats(&[0.0], &[1.0]);
        assert!(matches!(frechet_distance(&b, &c), Err(Error::InvalidInput(_))));
        let asym = stats(&[0.0, 0.0], &[1.0, 0.5, 0.0, 1.0]);
        assert!(frechet_distance(&asym, &b).is_err());
    }

    #[test]
    fn unbiased_covariance() {
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 2.0, 5.0, 8.0]);
        let s = FeatureStats::from_rows(&rows).unwrap();
        assert_eq!(s.mean.as_slice(), &[3.0, 4.0]);
        assert!((s.cov[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((s.cov[(1, 1)] - 12.0).abs() < 1e-12);
        assert!((s.cov[(0, 1)] - 6.0).abs() < 1e-12);
    }
}
