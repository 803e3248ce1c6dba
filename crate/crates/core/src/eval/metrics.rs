use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::frechet::{frechet_distance, FeatureStats};
use crate::error::{Error, Result};
use crate::pyramid::ImageBuffer;

/// Single-image FID: Frechet distance between the spatial feature statistics
/// of two images.
pub fn sifid(real: &ImageBuffer, fake: &ImageBuffer, extractor: &dyn FeatureExtractor) -> Result<f64> {
    let a = FeatureStats::from_feature_map(&extractor.features(real)?)?;
    let b = FeatureStats::from_feature_map(&extractor.features(fake)?)?;
    frechet_distance(&a, &b)
}

fn population_std(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = v.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    let m = s / n as f64;
    (v.map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt()
}

/// Mean over pixels (and channels) of the standard deviation across samples,
/// divided by the standard deviation of the reference's intensities. Both
/// deviations are population deviations.
pub fn diversity(samples: &[ImageBuffer], reference: &ImageBuffer) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "diversity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.size() != reference.size()) {
        return Err(Error::Geometry(format!(
            "sample size {:?} differs from the reference {:?}",
            s.size(),
            reference.size()
        )));
    }
    let ref_std = population_std(reference.tensor().data().iter().copied());
    if ref_std == 0.0 {
        return Err(Error::Numeric("reference image has zero intensity spread".into()));
    }
    let len = reference.tensor().len();
    let per_pixel: f64 = (0..len)
        .map(|i| population_std(samples.iter().map(move |s| s.tensor().data()[i])))
        .sum();
    Ok(per_pixel / len as f64 / ref_std)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd::default();
        }
        MeanStd {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            std: population_std(values.iter().copied()),
        }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} +- {:.4}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub diversity: MeanStd,
    pub sifid: MeanStd,
    /// Absent when no NIQE model was configured.
    pub niqe: Option<MeanStd>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "samples,diversity_mean,diversity_std,sifid_mean,sifid_std,niqe_mean,niqe_std";

    pub fn to_csv(&self) -> String {
        let (nm, ns) = match self.niqe {
            Some(n) => (n.mean.to_string(), n.std.to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{}\n{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.samples,
            self.diversity.mean,
            self.diversity.std,
            self.sifid.mean,
            self.sifid.std,
            nm,
            ns
        )
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.diversity.mean, self.diversity.std, self.sifid.mean, self.sifid.std];
        let niqe = self.niqe.map(|n| [n.mean, n.std]).unwrap_or([0.0; 2]);
        if self.samples == 0 || vals.iter().chain(niqe.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("invalid metric report {self:?}")));
        }
        Ok(())
    }
}

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::features::StubExtractor;
    use crate::tensor::Tensor;

    fn img(f: impl Fn(usize, usize, usize) -> f64) -> ImageBuffer {
        ImageBuffer::from_tensor_clamped(Tensor::from_fn([1, 3, 8, 10], |[_, c, y, x]| f(c, y, x)))
    }

    #[test]
    fn sifid_self_is_zero_and_matches_hand_rolled() {
        let ex = StubExtractor::new(3, 11);
        let a = img(|c, y, x| ((c + 2 * y + 3 * x) as f64 * 0.41).sin() * 0.8);
        let b = img(|c, y, x| ((c * 5 + y * x) as f64 * 0.13).cos() * 0.5);
        assert!(sifid(&a, &a, &ex).unwrap().abs() < 1e-8);

        // hand-rolled: per-pixel projections, then the closed form on 3x3 stats
        let feats = |im: &ImageBuffer| -> Vec<[f64; 3]> {
            let mut out = vec![];
            for y in 0..8 {
                for x in 0..10 {
                    let mut f = [0.0; 3];
                    for (d, fd) in f.iter_mut().enumerate() {
                        *fd = (0..3).map(|c| ex.weight[d * 3 + c] * im.tensor().at(0, c, y, x)).sum();
                    }
                    out.push(f);
                }
            }
            out
        };
        let st = |v: &[[f64; 3]]| {
            let n = v.len() as f64;
            let m = nalgebra::DVector::from_fn(3, |d, _| v.iter().map(|f| f[d]).sum::<f64>() / n);
            let c = nalgebra::DMatrix::from_fn(3, 3, |i, j| {
                v.iter().map(|f| (f[i] - m[i]) * (f[j] - m[j])).sum::<f64>() / (n - 1.0)
            });
            FeatureStats::new(m, c).unwrap()
        };
        let want = frechet_distance(&st(&feats(&a)), &st(&feats(&b))).unwrap();
        let got = sifid(&a, &b, &ex).unwrap();
        assert!((got - want).abs() < 1e-9 * want.max(1.0));
    }

    #[test]
    fn diversity_closed_forms() {
        let r = img(|c, y, x| ((c + y + x) % 5) as f64 * 0.2 - 0.4);
        assert_eq!(diversity(&[r.clone(), r.clone()], &r).unwrap(), 0.0);
        let delta = 0.05;
        let up = ImageBuffer::from_tensor(r.tensor().map(|v| v + delta)).unwrap();
        let down = ImageBuffer::from_tensor(r.tensor().map(|v| v - delta)).unwrap();
        let sd = population_std(r.tensor().data().iter().copied());
        let got = diversity(&[up.clone(), down.clone()], &r).unwrap();
        assert!((got - delta / sd).abs() < 1e-12);
        // a shared offset on every sample leaves it unchanged
        let up2 = ImageBuffer::from_tensor(up.tensor().map(|v| v + 0.1)).unwrap();
        let down2 = ImageBuffer::from_tensor(down.tensor().map(|v| v + 0.1)).unwrap();
        assert!((diversity(&[up2, down2], &r).unwrap() - got).abs() < 1e-12);
        assert!(diversity(&[r.clone()], &r).is_err());
        assert!(diversity(&[r.clone(), ImageBuffer::constant(3, 3, 0.0)], &r).is_err());
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(ranks(&[3.0, 1.0, 2.0, 1.0]), vec![4.0, 1.5, 3.0, 1.5]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn report_csv() {
        let r = MetricReport {
            samples: 3,
            diversity: MeanStd::of(&[0.5]),
            sifid: MeanStd::of(&[1.0, 3.0]),
            niqe: None,
        };
        let csv = r.to_csv();
        assert!(csv.starts_with(MetricReport::CSV_HEADER));
        assert!(csv.lines().nth(1).unwrap().starts_with("3,0.5,0,2,1,,"));
        r.validate().unwrap();
    }
}
