//! Sample-based comparisons: 1D Wasserstein-2, KS, moments, mode masses,
//! bootstrap standard errors and kNN precision/recall/density/coverage.

mod prdc;

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::rng::{stream, tags};
use crate::Point;

pub use prdc::{prdc, prdc_brute_force, prdc_grid, Prdc, DEFAULT_NEIGHBORS};

/// A labelled ensemble of points.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<Point>,
    label: String,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptySample)?;
        let dim = first.len();
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
        }
        Ok(Self { points, label: label.into() })
    }

    pub fn from_scalars(label: impl Into<String>, xs: &[f64]) -> Result<Self> {
        Self::new(label, xs.iter().map(|x| Point::from_element(1, *x)).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Coordinate `axis` of every point.
    pub fn column(&self, axis: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[axis]).collect()
    }

    fn sorted_scalars(&self) -> Result<Vec<f64>> {
        if self.dim() != 1 {
            return Err(Error::Unsupported(format!("needs one-dimensional samples, got d = {}", self.dim())));
        }
        let mut xs = self.column(0);
        xs.sort_by(f64::total_cmp);
        Ok(xs)
    }
}

/// Empirical quantile at level `p`: linear interpolation between order
/// statistics placed at `(i + ½)/n`.
fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = (p * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 || lo + 1 == n {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Wasserstein-2 distance between two one-dimensional samples.
///
/// Equal sizes pair order statistics; otherwise both quantile functions are
/// evaluated on `max(n_a, n_b)` midpoints.
pub fn wasserstein2_1d(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    let xa = a.sorted_scalars()?;
    let xb = b.sorted_scalars()?;
    let sum: f64 = if xa.len() == xb.len() {
        xa.iter().zip(&xb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / xa.len() as f64
    } else {
        let m = xa.len().max(xb.len());
        (0..m)
            .map(|i| {
                let p = (i as f64 + 0.5) / m as f64;
                let d = interpolated_quantile(&xa, p) - interpolated_quantile(&xb, p);
                d * d
            })
            .sum::<f64>()
            / m as f64
    };
    Ok(sum.sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    let xa = a.sorted_scalars()?;
    let xb = b.sorted_scalars()?;
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic p-value of a two-sample KS statistic.
pub fn ks_p_value(d: f64, na: usize, nb: usize) -> f64 {
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Mean followed by central moments of orders `2..=max_order` (≤ 4); the
/// second is the unbiased variance, higher ones are plain averages.
pub fn moments(xs: &[f64], max_order: usize) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(1..=4).contains(&max_order) {
        return Err(invalid(format!("moment order must be 1..=4, got {max_order}")));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mut out = vec![mean];
    for order in 2..=max_order {
        let s: f64 = xs.iter().map(|x| (x - mean).powi(order as i32)).sum();
        if order == 2 {
            if xs.len() < 2 {
                return Err(invalid("variance needs at least two points"));
            }
            out.push(s / (n - 1.0));
        } else {
            out.push(s / n);
        }
    }
    Ok(out)
}

/// Fraction of points whose coordinate `axis` lies below `threshold`.
pub fn mass_below(set: &SampleSet, axis: usize, threshold: f64) -> f64 {
    set.points.iter().filter(|p| p[axis] < threshold).count() as f64 / set.len() as f64
}

/// Standard error of `statistic(xs, ws)` from `replicates` resamples with
/// replacement of the index set.
pub fn bootstrap_se(
    xs: &[f64],
    weights: &[f64],
    statistic: impl Fn(&[f64], &[f64]) -> f64,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    if xs.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: weights.len() });
    }
    if replicates < 2 {
        return Err(invalid("bootstrap needs at least two replicates"));
    }
    let n = xs.len();
    let mut rng = stream(seed, 0, 0, tags::BOOTSTRAP);
    let mut bx = vec![0.0; n];
    let mut bw = vec![0.0; n];
    let stats: Vec<f64> = (0..replicates)
        .map(|_| {
            for k in 0..n {
                let i = rng.random_range(0..n);
                bx[k] = xs[i];
                bw[k] = weights[i];
            }
            statistic(&bx, &bw)
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / replicates as f64;
    let var = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (replicates - 1) as f64;
    Ok(var.sqrt())
}

/// Flat record comparing a sample against a reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub sample: String,
    pub reference: String,
    pub n_sample: usize,
    pub n_reference: usize,
    pub mean: f64,
    pub variance: f64,
    pub reference_mean: f64,
    pub reference_variance: f64,
    pub w2: Option<f64>,
    pub ks: Option<f64>,
    pub ks_p_value: Option<f64>,
    pub minor_mode_mass: Option<f64>,
    pub reference_minor_mode_mass: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub density: Option<f64>,
    pub coverage: Option<f64>,
}

/// Which comparisons to include in a [`MetricsReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSelection {
    pub w2: bool,
    pub ks: bool,
    pub prdc: Option<usize>,
    /// Minor mode taken as the region below this coordinate on axis 0.
    pub mode_threshold: Option<f64>,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self { w2: true, ks: true, prdc: None, mode_threshold: None }
    }
}

impl MetricsReport {
    pub fn compute(sample: &SampleSet, reference: &SampleSet, select: &MetricSelection) -> Result<Self> {
        if sample.dim() != reference.dim() {
            return Err(Error::DimensionMismatch { expected: reference.dim(), got: sample.dim() });
        }
        let scalar = sample.dim() == 1;
        let m = moments(&sample.column(0), 2.min(sample.len()))?;
        let r = moments(&reference.column(0), 2.min(reference.len()))?;
        let (ks, ks_p) = if select.ks && scalar {
            let d = ks_statistic(sample, reference)?;
            (Some(d), Some(ks_p_value(d, sample.len(), reference.len())))
        } else {
            (None, None)
        };
        let pr = match select.prdc {
            Some(k) => Some(prdc(reference, sample, k)?),
            None => None,
        };
        Ok(Self {
            sample: sample.label().into(),
            reference: reference.label().into(),
            n_sample: sample.len(),
            n_reference: reference.len(),
            mean: m[0],
            variance: m.get(1).copied().unwrap_or(0.0),
            reference_mean: r[0],
            reference_variance: r.get(1).copied().unwrap_or(0.0),
            w2: if select.w2 && scalar { Some(wasserstein2_1d(sample, reference)?) } else { None },
            ks,
            ks_p_value: ks_p,
            minor_mode_mass: select.mode_threshold.map(|t| mass_below(sample, 0, t)),
            reference_minor_mode_mass: select.mode_threshold.map(|t| mass_below(reference, 0, t)),
            precision: pr.map(|p| p.precision),
            recall: pr.map(|p| p.recall),
            density: pr.map(|p| p.density),
            coverage: pr.map(|p| p.coverage),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_vector;
    use proptest::prelude::*;

    fn set(xs: &[f64]) -> SampleSet {
        SampleSet::from_scalars("t", xs).unwrap()
    }

    fn normals(n: usize, shift: f64, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, 0, 0, 0);
        normal_vector(&mut rng, n).iter().map(|z| z + shift).collect()
    }

    #[test]
    fn w2_trivial_cases() {
        let a = set(&[0.5, -1.0, 2.0]);
        assert_eq!(wasserstein2_1d(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein2_1d(&set(&[0.0; 5]), &set(&[3.0; 7])).unwrap(), 3.0);
    }

    #[test]
    fn w2_gaussian_shift() {
        let a = set(&normals(100_000, 0.0, 1));
        let b = set(&normals(100_000, 1.0, 2));
        assert!((wasserstein2_1d(&a, &b).unwrap() - 1.0).abs() < 0.02);
    }

    #[test]
    fn w2_interpolates_unequal_sizes() {
        // Quantiles of {0, 1} at 1/6, 1/2, 5/6: 0, 0.5, 1 against {0, 0.5, 1}.
        assert!(wasserstein2_1d(&set(&[0.0, 1.0]), &set(&[0.0, 0.5, 1.0])).unwrap() < 1e-15);
    }

    #[test]
    fn w2_rejects_vectors() {
        let s = SampleSet::new("v", vec![Point::from_vec(vec![1.0, 2.0])]).unwrap();
        assert!(wasserstein2_1d(&s, &s).is_err());
    }

    #[test]
    fn ks_trivial_cases() {
        let a = set(&[0.1, 0.2, 0.3]);
        assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_statistic(&a, &set(&[5.0, 6.0])).unwrap(), 1.0);
        assert!(ks_p_value(0.0, 100, 100) == 1.0);
        assert!(ks_p_value(0.5, 1000, 1000) < 1e-10);
    }

    #[test]
    fn ks_same_law_has_large_p() {
        let a = set(&normals(5000, 0.0, 3));
        let b = set(&normals(5000, 0.0, 4));
        let d = ks_statistic(&a, &b).unwrap();
        assert!(ks_p_value(d, 5000, 5000) > 0.01);
    }

    #[test]
    fn moments_of_normal_sample() {
        let n = 100_000;
        let m = moments(&normals(n, 0.0, 5), 4).unwrap();
        assert!((m[1] - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
        assert!((m[3] - 3.0).abs() < 0.1);
        assert!(moments(&[], 2).is_err());
        assert_eq!(moments(&[1.0, 3.0], 2).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn bootstrap_se_of_mean() {
        let n = 4000;
        let xs = normals(n, 0.0, 6);
        let w = vec![1.0; n];
        let se = bootstrap_se(&xs, &w, |x, _| x.iter().sum::<f64>() / x.len() as f64, 400, 1).unwrap();
        let expected = 1.0 / (n as f64).sqrt();
        assert!((se / expected - 1.0).abs() < 0.15, "{se} vs {expected}");
    }

    #[test]
    fn report_serializes() {
        let a = set(&normals(200, 0.0, 7));
        let b = set(&normals(200, 0.2, 8));
        let sel = MetricSelection { prdc: Some(3), mode_threshold: Some(0.0), ..Default::default() };
        let r = MetricsReport::compute(&a, &b, &sel).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(v["w2"].as_f64().unwrap() > 0.0);
        assert!(v["coverage"].as_f64().is_some());
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(SampleSet::new("e", vec![]).is_err());
        assert!(SampleSet::from_scalars("n", &[f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn w2_triangle(a in prop::collection::vec(-5.0..5.0f64, 1..40),
                       b in prop::collection::vec(-5.0..5.0f64, 1..40),
                       c in prop::collection::vec(-5.0..5.0f64, 1..40)) {
            let (a, b, c) = (set(&a), set(&b), set(&c));
            let ab = wasserstein2_1d(&a, &b).unwrap();
            let bc = wasserstein2_1d(&b, &c).unwrap();
            let ac = wasserstein2_1d(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-10);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn ks_in_unit_interval(a in prop::collection::vec(-5.0..5.0f64, 1..40),
                               b in prop::collection::vec(-5.0..5.0f64, 1..40)) {
            let d = ks_statistic(&set(&a), &set(&b)).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn w2_zero_iff_sorted_equal(a in prop::collection::vec(-5.0..5.0f64, 1..30), shift in 1e-6..1.0f64) {
            let mut perm = a.clone();
            perm.reverse();
            prop_assert_eq!(wasserstein2_1d(&set(&a), &set(&perm)).unwrap(), 0.0);
            let moved: Vec<f64> = a.iter().map(|x| x + shift).collect();
            prop_assert!(wasserstein2_1d(&set(&a), &set(&moved)).unwrap() > 0.0);
        }
    }
}
