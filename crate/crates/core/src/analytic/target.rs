//! Priors paired with a classifier: conditionals, tilts and their smoothed
//! scores.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use super::mixture::{log_sum_exp, GaussianMixture, SmoothedEval};
use super::quadrature::{Domain, Oracle, SmoothedMoments};
use crate::error::{invalid, Error, Result};
use crate::guidance::{Denoiser, GuidanceBase};
use crate::Point;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Likelihood `g(c | x₀)` of a context given clean data.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    /// `g(c | x₀) = N(c; A x₀, γ² I)`.
    LinearGaussian { observation: DMatrix<f64>, gamma: f64 },
    /// `g(c | x₀) = π_c p(x₀ | c) / p(x₀)` over a finite set of classes.
    ClassMixture { class_priors: Vec<f64>, class_conditionals: Vec<GaussianMixture> },
    /// `g ≡ 1`: the context carries no information.
    Constant,
}

/// Conditioning information passed alongside a target.
#[derive(Debug, Clone, PartialEq)]
pub enum Context {
    Observation(Point),
    Class(usize),
    None,
}

impl Context {
    pub fn scalar(c: f64) -> Self {
        Context::Observation(Point::from_element(1, c))
    }
}

/// A prior together with a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticTarget {
    prior: GaussianMixture,
    classifier: Classifier,
}

impl AnalyticTarget {
    pub fn new(prior: GaussianMixture, classifier: Classifier) -> Result<Self> {
        match &classifier {
            Classifier::LinearGaussian { observation, gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(invalid(format!("gamma must be positive, got {gamma}")));
                }
                if observation.ncols() != prior.dim() || observation.nrows() == 0 {
                    return Err(Error::DimensionMismatch { expected: prior.dim(), got: observation.ncols() });
                }
                if observation.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteInput);
                }
            }
            Classifier::ClassMixture { class_priors, class_conditionals } => {
                if class_priors.is_empty() || class_priors.len() != class_conditionals.len() {
                    return Err(invalid("need one conditional mixture per class"));
                }
                if class_priors.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                    return Err(invalid("class priors must be positive"));
                }
                if (class_priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(invalid("class priors must sum to 1"));
                }
                if class_conditionals.iter().any(|m| m.dim() != prior.dim()) {
                    return Err(invalid("class conditionals must share the prior dimension"));
                }
                check_class_consistency(&prior, class_priors, class_conditionals)?;
            }
            Classifier::Constant => {}
        }
        Ok(Self { prior, classifier })
    }

    /// Class-mixture target whose prior is assembled from the classes, so
    /// the consistency invariant holds by construction.
    pub fn from_classes(class_priors: Vec<f64>, class_conditionals: Vec<GaussianMixture>) -> Result<Self> {
        if class_priors.len() != class_conditionals.len() || class_priors.is_empty() {
            return Err(invalid("need one conditional mixture per class"));
        }
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for (p, m) in class_priors.iter().zip(&class_conditionals) {
            for i in 0..m.len() {
                weights.push(p * m.weights()[i]);
                means.push(m.means()[i].clone());
                covs.push(m.covariances()[i].clone());
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let prior = GaussianMixture::new(weights, means, covs)?;
        Self::new(prior, Classifier::ClassMixture { class_priors, class_conditionals })
    }

    /// One-dimensional standard normal prior with `g(c | x₀) = N(c; x₀, γ²)`.
    pub fn gaussian_case(gamma: f64) -> Result<Self> {
        Self::new(
            GaussianMixture::standard(1)?,
            Classifier::LinearGaussian { observation: DMatrix::identity(1, 1), gamma },
        )
    }

    pub fn prior(&self) -> &GaussianMixture {
        &self.prior
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn check_context(&self, c: &Context) -> Result<()> {
        match (&self.classifier, c) {
            (Classifier::LinearGaussian { observation, .. }, Context::Observation(v)) => {
                if v.len() != observation.nrows() {
                    return Err(Error::DimensionMismatch { expected: observation.nrows(), got: v.len() });
                }
                if v.iter().any(|t| !t.is_finite()) {
                    return Err(Error::NonFiniteInput);
                }
                Ok(())
            }
            (Classifier::ClassMixture { class_priors, .. }, Context::Class(k)) => {
                if *k >= class_priors.len() {
                    Err(Error::UnknownClass(*k))
                } else {
                    Ok(())
                }
            }
            (Classifier::Constant, _) => Ok(()),
            (_, other) => Err(Error::ContextMismatch(format!("{other:?} does not fit this classifier"))),
        }
    }

    /// `ln g(c | x₀)`.
    pub fn log_likelihood(&self, c: &Context, x0: &Point) -> Result<f64> {
        self.check_context(c)?;
        match (&self.classifier, c) {
            (Classifier::LinearGaussian { observation, gamma }, Context::Observation(v)) => {
                let r = v - observation * x0;
                let m = v.len() as f64;
                Ok(-0.5 * (m * (LN_2PI + 2.0 * gamma.ln()) + r.norm_squared() / (gamma * gamma)))
            }
            (Classifier::ClassMixture { class_priors, class_conditionals }, Context::Class(k)) => {
                Ok(class_priors[*k].ln() + class_conditionals[*k].log_density(x0)? - self.prior.log_density(x0)?)
            }
            _ => Ok(0.0),
        }
    }

    /// `w ln g(c | x₀) + ln p(x₀)`.
    pub fn tilted_log_density(&self, c: &Context, w: f64, x0: &Point) -> Result<f64> {
        check_tilt_scale(w)?;
        if let (Classifier::ClassMixture { class_priors, class_conditionals }, Context::Class(k)) =
            (&self.classifier, c)
        {
            // Direct form avoids ln p appearing twice with opposite signs.
            self.check_context(c)?;
            return Ok(w * class_priors[*k].ln()
                + w * class_conditionals[*k].log_density(x0)?
                + (1.0 - w) * self.prior.log_density(x0)?);
        }
        Ok(w * self.log_likelihood(c, x0)? + self.prior.log_density(x0)?)
    }

    /// Posterior `p(x₀ | c)`, always a Gaussian mixture.
    pub fn conditional(&self, c: &Context) -> Result<GaussianMixture> {
        self.check_context(c)?;
        match (&self.classifier, c) {
            (Classifier::LinearGaussian { observation, gamma }, Context::Observation(v)) => {
                Ok(linear_gaussian_posterior(&self.prior, observation, gamma * gamma, v)?.0)
            }
            (Classifier::ClassMixture { class_conditionals, .. }, Context::Class(k)) => {
                Ok(class_conditionals[*k].clone())
            }
            _ => Ok(self.prior.clone()),
        }
    }

    /// Normalized tilt `π(x₀ | c; w) ∝ g(c | x₀)^w p(x₀)`.
    pub fn tilt(&self, c: &Context, w: f64) -> Result<TiltedTarget> {
        check_tilt_scale(w)?;
        self.check_context(c)?;
        match (&self.classifier, c) {
            (Classifier::LinearGaussian { observation, gamma }, Context::Observation(v)) => {
                let g2 = gamma * gamma;
                let (mixture, log_evidence) = linear_gaussian_posterior(&self.prior, observation, g2 / w, v)?;
                // N(c; Ax, γ²)^w = (2πγ²)^{-mw/2} (2πγ²/w)^{m/2} N(c; Ax, γ²/w).
                let m = v.len() as f64;
                let log_const = -0.5 * m * w * (LN_2PI + g2.ln()) + 0.5 * m * (LN_2PI + g2.ln() - w.ln());
                Ok(TiltedTarget::Mixture { mixture, log_normalizer: log_const + log_evidence })
            }
            (Classifier::ClassMixture { class_conditionals, class_priors }, Context::Class(k)) => {
                if w == 1.0 {
                    return Ok(TiltedTarget::Mixture {
                        mixture: class_conditionals[*k].clone(),
                        log_normalizer: class_priors[*k].ln(),
                    });
                }
                if self.dim() > 2 {
                    return Err(Error::Unsupported(
                        "class-mixture tilts are computed by quadrature in dimension 1 or 2 only".into(),
                    ));
                }
                NumericTilt::new(self.clone(), *k, w).map(|t| TiltedTarget::Numeric(Box::new(t)))
            }
            _ => Ok(TiltedTarget::Mixture { mixture: self.prior.clone(), log_normalizer: 0.0 }),
        }
    }

    /// Quadrature box covering the prior to 12 standard deviations.
    pub fn quadrature_domain(&self) -> Result<Domain> {
        let breaks = self.prior.quadrature_breaks(0.0);
        if breaks.len() > 2 {
            return Err(Error::Unsupported(format!("quadrature in dimension {}", breaks.len())));
        }
        Domain::new(breaks)
    }

    /// Target frozen at one context, with the posterior precomputed.
    pub fn condition(&self, c: &Context) -> Result<ConditionedTarget> {
        let conditional = self.conditional(c)?;
        Ok(ConditionedTarget { target: Arc::new(self.clone()), context: c.clone(), conditional })
    }
}

fn check_tilt_scale(w: f64) -> Result<()> {
    if !(w.is_finite() && w >= 1.0) {
        return Err(invalid(format!("tilt exponent must be at least 1, got {w}")));
    }
    Ok(())
}

/// Posterior of a mixture prior under `N(c; A x₀, var·I)`, with the log
/// evidence `ln Σ_k w_k N(c; A μ_k, A Σ_k Aᵀ + var·I)`.
fn linear_gaussian_posterior(
    prior: &GaussianMixture,
    a: &DMatrix<f64>,
    var: f64,
    c: &Point,
) -> Result<(GaussianMixture, f64)> {
    let m = a.nrows();
    let mut log_w = Vec::with_capacity(prior.len());
    let mut means = Vec::with_capacity(prior.len());
    let mut covs = Vec::with_capacity(prior.len());
    for ((w, mu), sigma) in prior.weights().iter().zip(prior.means()).zip(prior.covariances()) {
        let a_sigma = a * sigma;
        let s = &a_sigma * a.transpose() + DMatrix::identity(m, m) * var;
        let chol = s.cholesky().ok_or_else(|| invalid("innovation covariance is not positive definite"))?;
        let r = c - a * mu;
        // K = Σ Aᵀ S⁻¹ = (S⁻¹ A Σ)ᵀ.
        let gain = chol.solve(&a_sigma).transpose();
        let mean = mu + &gain * &r;
        let cov = sigma - &gain * &a_sigma;
        let cov = (&cov + cov.transpose()) * 0.5;
        let z = chol.solve(&r);
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        log_w.push(w.ln() - 0.5 * (m as f64 * LN_2PI + log_det + r.dot(&z)));
        means.push(mean);
        covs.push(cov);
    }
    let log_evidence = log_sum_exp(&log_w);
    let weights: Vec<f64> = log_w.iter().map(|l| (l - log_evidence).exp()).collect();
    let total: f64 = weights.iter().sum();
    let weights = weights.iter().map(|w| w / total).collect();
    Ok((GaussianMixture::new(weights, means, covs)?, log_evidence))
}

fn check_class_consistency(prior: &GaussianMixture, priors: &[f64], classes: &[GaussianMixture]) -> Result<()> {
    let breaks = prior.quadrature_breaks(0.0);
    let n = match prior.dim() {
        1 => 401,
        2 => 61,
        _ => 25,
    };
    let axes: Vec<Vec<f64>> = breaks
        .iter()
        .map(|b| {
            let (lo, hi) = (b[0], b[b.len() - 1]);
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    for flat in 0..total {
        let mut rem = flat;
        let coords: Vec<f64> = axes
            .iter()
            .map(|a| {
                let v = a[rem % a.len()];
                rem /= a.len();
                v
            })
            .collect();
        let x = Point::from_vec(coords);
        let p = prior.log_density(&x)?.exp();
        let q: f64 = priors
            .iter()
            .zip(classes)
            .map(|(pi, m)| m.log_density(&x).map(|l| pi * l.exp()))
            .sum::<Result<f64>>()?;
        if (p - q).abs() > 1e-8 {
            return Err(invalid(format!(
                "class conditionals do not reconstruct the prior at {:?} ({p} vs {q})",
                x.as_slice()
            )));
        }
    }
    Ok(())
}

/// Tilt of a class-mixture target, evaluated by quadrature.
#[derive(Debug, Clone)]
pub struct NumericTilt {
    target: AnalyticTarget,
    class: usize,
    w: f64,
    domain: Domain,
    oracle: Oracle,
    log_prior_total: f64,
    log_normalizer: OnceLock<f64>,
}

impl NumericTilt {
    fn new(target: AnalyticTarget, class: usize, w: f64) -> Result<Self> {
        let domain = target.quadrature_domain()?;
        let log_prior_total = match &target.classifier {
            Classifier::ClassMixture { class_priors, .. } => class_priors.iter().sum::<f64>().ln(),
            _ => return Err(Error::Unsupported("numeric tilts need a class-mixture classifier".into())),
        };
        Ok(Self {
            target,
            class,
            w,
            domain,
            oracle: Oracle::default(),
            log_prior_total,
            log_normalizer: OnceLock::new(),
        })
    }

    /// `ln ∫ g^w p`, integrated on first use.
    fn log_normalizer(&self) -> Result<f64> {
        if let Some(z) = self.log_normalizer.get() {
            return Ok(*z);
        }
        let z = self.oracle.log_integral(&|p: &[f64]| self.log_unnormalized(p), &self.domain)?;
        Ok(*self.log_normalizer.get_or_init(|| z))
    }

    /// `w ln π_k + w ln p(x₀ | k) + (1 − w) ln p(x₀)`, with the prior
    /// assembled from the per-class terms so each component is evaluated once.
    fn log_unnormalized(&self, p: &[f64]) -> f64 {
        let Classifier::ClassMixture { class_priors, class_conditionals } = &self.target.classifier else {
            unreachable!("numeric tilts are built for class mixtures only")
        };
        let mut stack = [0.0f64; 8];
        let mut heap;
        let terms: &mut [f64] = if class_priors.len() <= 8 {
            &mut stack[..class_priors.len()]
        } else {
            heap = vec![0.0; class_priors.len()];
            &mut heap
        };
        for (t, (pi, cond)) in terms.iter_mut().zip(class_priors.iter().zip(class_conditionals)) {
            *t = pi.ln() + cond.log_density_at(p);
        }
        let log_prior = log_sum_exp(terms) - self.log_prior_total;
        self.w * terms[self.class] + (1.0 - self.w) * log_prior
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Unnormalized mass and mean of the tilt smoothed at `sigma`.
    fn moments(&self, x: &Point, sigma: f64) -> Result<SmoothedMoments> {
        if x.len() != self.target.dim() {
            return Err(Error::DimensionMismatch { expected: self.target.dim(), got: x.len() });
        }
        self.oracle.smoothed_moments_log(&|p: &[f64]| self.log_unnormalized(p), &self.domain, x, sigma)
    }
}

/// Normalized tilted distribution.
#[derive(Debug, Clone)]
pub enum TiltedTarget {
    /// Closed form, with `ln ∫ g^w p`.
    Mixture { mixture: GaussianMixture, log_normalizer: f64 },
    Numeric(Box<NumericTilt>),
}

impl TiltedTarget {
    pub fn dim(&self) -> usize {
        match self {
            TiltedTarget::Mixture { mixture, .. } => mixture.dim(),
            TiltedTarget::Numeric(t) => t.target.dim(),
        }
    }

    /// `ln ∫ g(c | x₀)^w p(x₀) dx₀`.
    pub fn log_normalizer(&self) -> Result<f64> {
        match self {
            TiltedTarget::Mixture { log_normalizer, .. } => Ok(*log_normalizer),
            TiltedTarget::Numeric(t) => t.log_normalizer(),
        }
    }

    pub fn mixture(&self) -> Option<&GaussianMixture> {
        match self {
            TiltedTarget::Mixture { mixture, .. } => Some(mixture),
            TiltedTarget::Numeric(_) => None,
        }
    }

    /// Normalized log-density at `x₀`.
    pub fn log_density(&self, x0: &Point) -> Result<f64> {
        match self {
            TiltedTarget::Mixture { mixture, .. } => mixture.log_density(x0),
            TiltedTarget::Numeric(t) => Ok(t.log_unnormalized(x0.as_slice()) - t.log_normalizer()?),
        }
    }

    /// Smoothed log-density, score and denoiser at level `sigma > 0`.
    pub fn evaluate(&self, x: &Point, sigma: f64) -> Result<SmoothedEval> {
        match self {
            TiltedTarget::Mixture { mixture, .. } => mixture.evaluate(x, sigma),
            TiltedTarget::Numeric(t) => {
                let m = t.moments(x, sigma)?;
                Ok(SmoothedEval {
                    log_density: m.log_mass - t.log_normalizer()?,
                    score: m.score(x, sigma),
                    denoiser: m.mean,
                })
            }
        }
    }

    pub fn smoothed_score(&self, x: &Point, sigma: f64) -> Result<Point> {
        match self {
            TiltedTarget::Mixture { mixture, .. } => mixture.smoothed_score(x, sigma),
            TiltedTarget::Numeric(t) => Ok(t.moments(x, sigma)?.score(x, sigma)),
        }
    }
}

impl Denoiser for TiltedTarget {
    fn dim(&self) -> usize {
        TiltedTarget::dim(self)
    }

    fn denoise(&self, x: &Point, sigma: f64) -> Result<Point> {
        match self {
            TiltedTarget::Mixture { mixture, .. } => mixture.denoise(x, sigma),
            TiltedTarget::Numeric(t) => Ok(t.moments(x, sigma)?.mean),
        }
    }
}

/// A target frozen at one context.
#[derive(Debug, Clone)]
pub struct ConditionedTarget {
    target: Arc<AnalyticTarget>,
    context: Context,
    conditional: GaussianMixture,
}

impl ConditionedTarget {
    pub fn target(&self) -> &AnalyticTarget {
        &self.target
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn conditional_mixture(&self) -> &GaussianMixture {
        &self.conditional
    }
}

impl GuidanceBase for ConditionedTarget {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn conditional(&self, x: &Point, sigma: f64) -> Result<Point> {
        self.conditional.denoise(x, sigma)
    }

    fn unconditional(&self, x: &Point, sigma: f64) -> Result<Point> {
        self.target.prior.denoise(x, sigma)
    }

    fn tilted(&self, w: f64) -> Result<Arc<dyn Denoiser>> {
        Ok(Arc::new(self.target.tilt(&self.context, w)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(c: f64) -> Context {
        Context::scalar(c)
    }

    #[test]
    fn gaussian_conditional_denoiser() {
        // γ²x/(γ²(1+σ²)+σ²) + σ²c/(γ²(1+σ²)+σ²) at γ = σ = 1.
        let t = AnalyticTarget::gaussian_case(1.0).unwrap();
        let x = Point::from_element(1, 3.0);
        let d0 = t.conditional(&obs(0.0)).unwrap().denoise(&x, 1.0).unwrap()[0];
        let d3 = t.conditional(&obs(3.0)).unwrap().denoise(&x, 1.0).unwrap()[0];
        assert!((d0 - 1.0).abs() < 1e-14);
        assert!((d3 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn uninformative_likelihood_recovers_prior() {
        let t = AnalyticTarget::gaussian_case(1e6).unwrap();
        let x = Point::from_element(1, 1.7);
        let c = t.conditional(&obs(0.4)).unwrap().denoise(&x, 0.8).unwrap()[0];
        let u = t.prior().denoise(&x, 0.8).unwrap()[0];
        assert!((c - u).abs() < 1e-6);
    }

    #[test]
    fn gaussian_tilt_parameters() {
        let t = AnalyticTarget::gaussian_case(1.0).unwrap();
        let tilt = t.tilt(&obs(3.0), 2.0).unwrap();
        let m = tilt.mixture().unwrap();
        assert!((m.means()[0][0] - 2.0).abs() < 1e-14);
        assert!((m.covariances()[0][(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        let post = t.tilt(&obs(3.0), 1.0).unwrap();
        let p = post.mixture().unwrap();
        assert!((p.means()[0][0] - 1.5).abs() < 1e-14);
        assert!((p.covariances()[0][(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tilt_normalizer_matches_quadrature() {
        let prior = GaussianMixture::univariate(&[(0.4, -1.0, 0.3), (0.6, 2.0, 0.7)]).unwrap();
        let t = AnalyticTarget::new(
            prior,
            Classifier::LinearGaussian { observation: DMatrix::from_element(1, 1, 0.8), gamma: 0.9 },
        )
        .unwrap();
        let c = obs(0.5);
        let tilt = t.tilt(&c, 3.0).unwrap();
        let dom = t.quadrature_domain().unwrap();
        let z = Oracle::default()
            .log_integral(&|p: &[f64]| t.tilted_log_density(&c, 3.0, &Point::from_column_slice(p)).unwrap(), &dom)
            .unwrap();
        assert!((z - tilt.log_normalizer().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn class_mixture_reconstructs_prior() {
        let a = GaussianMixture::univariate(&[(1.0, -2.0, 0.5)]).unwrap();
        let b = GaussianMixture::univariate(&[(0.5, 1.0, 0.3), (0.5, 2.5, 0.4)]).unwrap();
        let t = AnalyticTarget::from_classes(vec![0.3, 0.7], vec![a.clone(), b]).unwrap();
        // A prior that disagrees with the classes is rejected.
        let wrong = GaussianMixture::univariate(&[(1.0, 0.0, 1.0)]).unwrap();
        assert!(AnalyticTarget::new(wrong, t.classifier().clone()).is_err());
        assert_eq!(t.conditional(&Context::Class(0)).unwrap(), a);
        assert!(matches!(t.conditional(&Context::Class(2)), Err(Error::UnknownClass(2))));
        assert!(matches!(t.conditional(&obs(0.0)), Err(Error::ContextMismatch(_))));
    }

    #[test]
    fn constant_classifier_tilt_is_prior() {
        let prior = GaussianMixture::univariate(&[(0.5, -1.0, 0.2), (0.5, 1.0, 0.2)]).unwrap();
        let t = AnalyticTarget::new(prior.clone(), Classifier::Constant).unwrap();
        assert_eq!(t.tilt(&Context::None, 3.0).unwrap().mixture().unwrap(), &prior);
        assert_eq!(t.conditional(&Context::None).unwrap(), prior);
    }

    #[test]
    fn tilt_rejects_small_exponent() {
        let t = AnalyticTarget::gaussian_case(1.0).unwrap();
        assert!(t.tilt(&obs(0.0), 0.5).is_err());
    }
}
