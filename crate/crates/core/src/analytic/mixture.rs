//! Gaussian mixtures and their closed-form smoothed scores.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::Point;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Finite mixture of Gaussians in dimension 1, 2 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Point>,
    covariances: Vec<DMatrix<f64>>,
    dim: usize,
    /// Per component: `ln w − ½(d ln 2π + ln det Σ)` and `Σ⁻¹` row-major.
    packed: Vec<(f64, [f64; 9])>,
}

fn pack(weights: &[f64], covariances: &[DMatrix<f64>]) -> Vec<(f64, [f64; 9])> {
    weights
        .iter()
        .zip(covariances)
        .map(|(w, c)| {
            let d = c.nrows();
            let chol = c.clone().cholesky().expect("checked positive definite");
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let inv = chol.inverse();
            let mut p = [0.0; 9];
            for i in 0..d {
                for j in 0..d {
                    p[i * d + j] = inv[(i, j)];
                }
            }
            (w.ln() - 0.5 * (d as f64 * LN_2PI + log_det), p)
        })
        .collect()
}

/// Log-density, score and posterior mean of a mixture smoothed by
/// `N(0, σ²I)`, evaluated at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedEval {
    pub log_density: f64,
    pub score: Point,
    pub denoiser: Point,
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_point(x: &Point, dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("noise level must be finite and non-negative, got {sigma}")));
    }
    Ok(())
}

impl GaussianMixture {
    /// Weights must be non-negative and sum to one within 1e-9; they are
    /// renormalized exactly.
    pub fn new(weights: Vec<f64>, means: Vec<Point>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("mixture needs at least one component"));
        }
        if weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(invalid("weights, means and covariances must have equal length"));
        }
        let dim = means[0].len();
        if !(1..=3).contains(&dim) {
            return Err(Error::Unsupported(format!("mixture dimension {dim} (1 to 3 supported)")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights sum to {total}, expected 1")));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: m.len() });
            }
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.nrows() });
            }
            if m.iter().chain(c.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
            if (c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
                return Err(invalid("covariance must be symmetric"));
            }
            if c.clone().cholesky().is_none() {
                return Err(invalid("covariance must be positive definite"));
            }
        }
        let packed = pack(&weights, &covariances);
        Ok(Self { weights, means, covariances, dim, packed })
    }

    pub fn gaussian(mean: Point, covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![covariance])
    }

    /// One-dimensional mixture from (weight, mean, variance) triples.
    pub fn univariate(components: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            components.iter().map(|c| c.0).collect(),
            components.iter().map(|c| DVector::from_element(1, c.1)).collect(),
            components.iter().map(|c| DMatrix::from_element(1, 1, c.2)).collect(),
        )
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Result<Self> {
        Self::gaussian(Point::zeros(dim), DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Point] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn mean(&self) -> Point {
        self.weights
            .iter()
            .zip(&self.means)
            .fold(Point::zeros(self.dim), |acc, (w, m)| acc + m * *w)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            let dm = m - &mu;
            out += (c + &dm * dm.transpose()) * *w;
        }
        out
    }

    /// Mixture convolved with `N(0, σ²I)`.
    pub fn smoothed(&self, sigma: f64) -> Self {
        let s2 = sigma * sigma;
        let covariances: Vec<DMatrix<f64>> = self
            .covariances
            .iter()
            .map(|c| c + DMatrix::identity(self.dim, self.dim) * s2)
            .collect();
        let packed = pack(&self.weights, &covariances);
        Self { weights: self.weights.clone(), means: self.means.clone(), covariances, dim: self.dim, packed }
    }

    /// Joint evaluation of the smoothed log-density, score and denoiser.
    pub fn evaluate(&self, x: &Point, sigma: f64) -> Result<SmoothedEval> {
        check_point(x, self.dim)?;
        check_sigma(sigma)?;
        if self.dim == 1 {
            return Ok(self.evaluate_scalar(x[0], sigma));
        }
        let s2 = sigma * sigma;
        let k = self.len();
        let mut log_terms = Vec::with_capacity(k);
        let mut scores = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        for ((w, mu), cov) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            let s = cov + DMatrix::identity(self.dim, self.dim) * s2;
            let chol = s
                .cholesky()
                .ok_or_else(|| invalid("smoothed covariance lost positive definiteness"))?;
            let diff = x - mu;
            let z = chol.solve(&diff);
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let quad = diff.dot(&z);
            log_terms.push(w.ln() - 0.5 * (self.dim as f64 * LN_2PI + log_det + quad));
            means.push(mu + cov * &z);
            scores.push(-z);
        }
        let log_density = log_sum_exp(&log_terms);
        let mut score = Point::zeros(self.dim);
        let mut denoiser = Point::zeros(self.dim);
        for i in 0..k {
            let r = (log_terms[i] - log_density).exp();
            score += &scores[i] * r;
            denoiser += &means[i] * r;
        }
        Ok(SmoothedEval { log_density, score, denoiser })
    }

    fn evaluate_scalar(&self, x: f64, sigma: f64) -> SmoothedEval {
        let s2 = sigma * sigma;
        let k = self.len();
        let mut log_terms = [0.0f64; 8];
        let mut heap;
        let terms: &mut [f64] = if k <= 8 {
            &mut log_terms[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        for (i, t) in terms.iter_mut().enumerate() {
            let v = self.covariances[i][(0, 0)] + s2;
            let d = x - self.means[i][0];
            *t = self.weights[i].ln() - 0.5 * (LN_2PI + v.ln() + d * d / v);
        }
        let log_density = log_sum_exp(terms);
        let mut score = 0.0;
        let mut denoiser = 0.0;
        for (i, t) in terms.iter().enumerate() {
            let r = (t - log_density).exp();
            let c = self.covariances[i][(0, 0)];
            let z = (x - self.means[i][0]) / (c + s2);
            score -= r * z;
            denoiser += r * (self.means[i][0] + c * z);
        }
        SmoothedEval {
            log_density,
            score: Point::from_element(1, score),
            denoiser: Point::from_element(1, denoiser),
        }
    }

    pub fn log_density(&self, x: &Point) -> Result<f64> {
        Ok(self.evaluate(x, 0.0)?.log_density)
    }

    /// Density at a raw coordinate slice (used by quadrature).
    pub fn density_at(&self, p: &[f64]) -> f64 {
        self.log_density_at(p).exp()
    }

    /// Log-density at a raw coordinate slice of length `dim`, without
    /// allocating; quadrature calls this millions of times.
    pub fn log_density_at(&self, p: &[f64]) -> f64 {
        let d = self.dim;
        debug_assert_eq!(p.len(), d);
        let mut terms = [0.0f64; 8];
        let mut heap;
        let terms: &mut [f64] = if self.len() <= 8 {
            &mut terms[..self.len()]
        } else {
            heap = vec![0.0; self.len()];
            &mut heap
        };
        for (t, ((log_norm, prec), mu)) in terms.iter_mut().zip(self.packed.iter().zip(&self.means)) {
            let mut diff = [0.0f64; 3];
            for i in 0..d {
                diff[i] = p[i] - mu[i];
            }
            let mut quad = 0.0;
            for i in 0..d {
                for j in 0..d {
                    quad += diff[i] * prec[i * d + j] * diff[j];
                }
            }
            *t = log_norm - 0.5 * quad;
        }
        log_sum_exp(terms)
    }

    pub fn smoothed_log_density(&self, x: &Point, sigma: f64) -> Result<f64> {
        Ok(self.evaluate(x, sigma)?.log_density)
    }

    pub fn smoothed_score(&self, x: &Point, sigma: f64) -> Result<Point> {
        Ok(self.evaluate(x, sigma)?.score)
    }

    pub fn denoise(&self, x: &Point, sigma: f64) -> Result<Point> {
        Ok(self.evaluate(x, sigma)?.denoiser)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z = Point::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let l = self.covariances[k].clone().cholesky().expect("validated covariance").unpack();
        &self.means[k] + l * z
    }

    fn scalar_components(&self) -> Result<impl Iterator<Item = (f64, f64, f64)> + '_> {
        if self.dim != 1 {
            return Err(Error::Unsupported("operation requires a one-dimensional mixture".into()));
        }
        Ok((0..self.len()).map(|i| (self.weights[i], self.means[i][0], self.covariances[i][(0, 0)].sqrt())))
    }

    /// Distribution function of a one-dimensional mixture.
    pub fn cdf_1d(&self, t: f64) -> Result<f64> {
        Ok(self
            .scalar_components()?
            .map(|(w, m, s)| w * normal_cdf((t - m) / s))
            .sum())
    }

    /// Quantile of a one-dimensional mixture by safeguarded Newton.
    pub fn quantile_1d(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(invalid(format!("quantile level must lie in (0, 1), got {u}")));
        }
        let comps: Vec<_> = self.scalar_components()?.collect();
        let mut lo = comps.iter().map(|c| c.1 - 40.0 * c.2).fold(f64::INFINITY, f64::min);
        let mut hi = comps.iter().map(|c| c.1 + 40.0 * c.2).fold(f64::NEG_INFINITY, f64::max);
        let cdf = |t: f64| comps.iter().map(|(w, m, s)| w * normal_cdf((t - m) / s)).sum::<f64>();
        let pdf = |t: f64| {
            comps
                .iter()
                .map(|(w, m, s)| {
                    let z = (t - m) / s;
                    w * (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
                })
                .sum::<f64>()
        };
        let mut t = comps.iter().map(|c| c.0 * c.1).sum::<f64>();
        for _ in 0..200 {
            let f = cdf(t) - u;
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let p = pdf(t);
            let mut next = if p > 0.0 { t - f / p } else { 0.5 * (lo + hi) };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) || hi - lo <= 1e-15 * (1.0 + t.abs()) {
                return Ok(next);
            }
            t = next;
        }
        Ok(t)
    }

    /// Breakpoints per axis at the component means, plus the box edges 12
    /// standard deviations beyond the outermost components.
    pub fn quadrature_breaks(&self, extra_scale: f64) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|j| {
                let mut out = Vec::new();
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for (m, c) in self.means.iter().zip(&self.covariances) {
                    let sd = (c[(j, j)] + extra_scale * extra_scale).sqrt();
                    lo = lo.min(m[j] - 12.0 * sd);
                    hi = hi.max(m[j] + 12.0 * sd);
                    out.push(m[j]);
                }
                out.push(lo);
                out.push(hi);
                out.sort_by(f64::total_cmp);
                out.dedup();
                out
            })
            .collect()
    }
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(u: f64) -> f64 {
    let z = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * u);
    if !z.is_finite() {
        return z;
    }
    // One Newton step against the accurate distribution function.
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        z - (normal_cdf(z) - u) / pdf
    } else {
        z
    }
}
