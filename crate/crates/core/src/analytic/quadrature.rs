//! Brute-force integration used as ground truth for every closed form.
//!
//! Globally adaptive Gauss–Kronrod (10/21) quadrature on intervals, nested for
//! two-dimensional boxes. Integrands are vector valued so the mass and the
//! first moment of a smoothed density come out of a single pass.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::Point;

// Kronrod 21-point abscissae on [0, 1] (the odd entries are the 10-point
// Gauss nodes) and the matching weights; the centre is a Kronrod node only.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_640_700_465,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

fn rule<const K: usize>(f: &mut impl FnMut(f64) -> Result<[f64; K]>, a: f64, b: f64) -> Result<([f64; K], f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut values = [[0.0; K]; 21];
    values[10] = f(mid)?;
    for j in 0..10 {
        values[j] = f(mid - half * XGK[j])?;
        values[20 - j] = f(mid + half * XGK[j])?;
    }
    let mut out = [0.0; K];
    let mut error = 0.0f64;
    for k in 0..K {
        let mut kron = WGK[10] * values[10][k];
        let mut gauss = 0.0;
        let mut abs = WGK[10] * values[10][k].abs();
        for j in 0..10 {
            let pair = values[j][k] + values[20 - j][k];
            kron += WGK[j] * pair;
            abs += WGK[j] * (values[j][k].abs() + values[20 - j][k].abs());
            if j % 2 == 1 {
                gauss += WG[j / 2] * pair;
            }
        }
        let mean = 0.5 * kron;
        let mut asc = WGK[10] * (values[10][k] - mean).abs();
        for j in 0..10 {
            asc += WGK[j] * ((values[j][k] - mean).abs() + (values[20 - j][k] - mean).abs());
        }
        let (kron, abs, asc) = (kron * half.abs(), abs * half.abs(), asc * half.abs());
        let mut err = (kron - gauss * half).abs();
        if asc != 0.0 && err != 0.0 {
            err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
        }
        err = err.max(50.0 * f64::EPSILON * abs);
        out[k] = kron;
        error = error.max(err);
    }
    Ok((out, error))
}

struct Panel<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    error: f64,
}

impl<const K: usize> Panel<K> {
    fn new(f: &mut impl FnMut(f64) -> Result<[f64; K]>, a: f64, b: f64) -> Result<Self> {
        let (value, error) = rule(f, a, b)?;
        Ok(Self { a, b, value, error })
    }
}

impl<const K: usize> PartialEq for Panel<K> {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl<const K: usize> Eq for Panel<K> {}
impl<const K: usize> PartialOrd for Panel<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const K: usize> Ord for Panel<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod integrator.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveQuadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for AdaptiveQuadrature {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-12, max_panels: 4000 }
    }
}

impl AdaptiveQuadrature {
    /// Integrates `f` over `[breaks[0], breaks[last]]`, starting from one
    /// panel per breakpoint interval.
    pub fn integrate<const K: usize>(
        &self,
        mut f: impl FnMut(f64) -> Result<[f64; K]>,
        breaks: &[f64],
    ) -> Result<[f64; K]> {
        let mut heap = BinaryHeap::new();
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            heap.push(Panel::new(&mut f, a, b)?);
        }
        loop {
            let mut total = [0.0; K];
            let mut error = 0.0;
            for p in heap.iter() {
                for k in 0..K {
                    total[k] += p.value[k];
                }
                error += p.error;
            }
            let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if error <= self.abs_tol.max(self.rel_tol * scale) || heap.is_empty() {
                return Ok(total);
            }
            if heap.len() >= self.max_panels {
                return Err(Error::QuadratureNotConverged { panels: heap.len(), estimate: error });
            }
            let worst = heap.pop().expect("non-empty heap");
            let m = 0.5 * (worst.a + worst.b);
            if m <= worst.a || m >= worst.b {
                // Panel can no longer be split in floating point.
                return Err(Error::QuadratureNotConverged { panels: heap.len() + 1, estimate: error });
            }
            heap.push(Panel::new(&mut f, worst.a, m)?);
            heap.push(Panel::new(&mut f, m, worst.b)?);
        }
    }
}

/// Integration box with per-axis breakpoints (sorted, first and last are the
/// bounds).
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    axes: Vec<Vec<f64>>,
}

impl Domain {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Unsupported(format!(
                "quadrature supports 1 or 2 dimensions, got {}",
                axes.len()
            )));
        }
        let axes = axes
            .into_iter()
            .map(|mut a| {
                a.retain(|v| v.is_finite());
                a.sort_by(f64::total_cmp);
                a.dedup();
                a
            })
            .collect::<Vec<_>>();
        if axes.iter().any(|a| a.len() < 2) {
            return Err(Error::InvalidParameter("each axis needs two distinct bounds".into()));
        }
        Ok(Self { axes })
    }

    /// Box `[lo, hi]` in every axis.
    pub fn interval(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![vec![lo, hi]; dim])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn bounds(&self, axis: usize) -> (f64, f64) {
        let a = &self.axes[axis];
        (a[0], a[a.len() - 1])
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        &self.axes[axis]
    }

    /// Adds breakpoints around a Gaussian kernel centred at `x` with scale
    /// `sigma`, clipped to the box. The box itself is cut back to `x ± 40σ`
    /// where that leaves something, since the kernel is below `e^-800` there.
    pub fn with_kernel(&self, x: &Point, sigma: f64) -> Self {
        let axes = self
            .axes
            .iter()
            .enumerate()
            .map(|(j, a)| {
                let (mut lo, mut hi) = (a[0], a[a.len() - 1]);
                let (wlo, whi) = (x[j] - 40.0 * sigma, x[j] + 40.0 * sigma);
                if wlo.max(lo) < whi.min(hi) {
                    lo = lo.max(wlo);
                    hi = hi.min(whi);
                }
                let mut out: Vec<f64> = a.iter().cloned().filter(|v| *v > lo && *v < hi).collect();
                out.push(lo);
                out.push(hi);
                for k in [-12.0, -3.0, 0.0, 3.0, 12.0] {
                    let v = x[j] + k * sigma;
                    if v > lo && v < hi {
                        out.push(v);
                    }
                }
                out.sort_by(f64::total_cmp);
                out.dedup();
                out
            })
            .collect();
        Self { axes }
    }
}

/// Which moment of the smoothed density to return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    Zeroth,
    First,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleValue {
    Mass(f64),
    FirstMoment(Point),
}

/// Mass `∫ ρ(x₀) N(x; x₀, σ²I) dx₀` (kept as a logarithm) and the posterior
/// mean `E[X₀ | X_σ = x]` under density ρ.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMoments {
    pub log_mass: f64,
    pub mean: Point,
}

impl SmoothedMoments {
    pub fn mass(&self) -> f64 {
        self.log_mass.exp()
    }

    /// `∫ x₀ ρ(x₀) N(x; x₀, σ²I) dx₀`.
    pub fn first(&self) -> Point {
        &self.mean * self.mass()
    }

    /// Smoothed score `(E[X₀ | x] − x)/σ²`.
    pub fn score(&self, x: &Point, sigma: f64) -> Point {
        (&self.mean - x) / (sigma * sigma)
    }
}

/// Quadrature oracle over densities on boxes of dimension ≤ 2.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub outer: AdaptiveQuadrature,
    pub inner: AdaptiveQuadrature,
}

impl Default for Oracle {
    fn default() -> Self {
        Self {
            outer: AdaptiveQuadrature::default(),
            inner: AdaptiveQuadrature { abs_tol: 1e-12, rel_tol: 1e-12, max_panels: 4000 },
        }
    }
}

impl Oracle {
    /// `∫ ρ` over the box.
    pub fn integrate(&self, density: &dyn Fn(&[f64]) -> f64, domain: &Domain) -> Result<f64> {
        let v = self.integrate_vec::<1>(&|p: &[f64]| [density(p)], domain)?;
        Ok(v[0])
    }

    /// Integrates a vector-valued function of a point over the box.
    pub fn integrate_vec<const K: usize>(
        &self,
        f: &dyn Fn(&[f64]) -> [f64; K],
        domain: &Domain,
    ) -> Result<[f64; K]> {
        match domain.dim() {
            1 => self.outer.integrate(|t| Ok(f(&[t])), domain.axis(0)),
            2 => self.outer.integrate(
                |y| self.inner.integrate(|x| Ok(f(&[x, y])), domain.axis(0)),
                domain.axis(1),
            ),
            d => Err(Error::Unsupported(format!("quadrature in dimension {d}"))),
        }
    }

    /// Mass and first moment of `ρ(x₀) N(x; x₀, σ²I)`.
    pub fn smoothed_moments(
        &self,
        density: &dyn Fn(&[f64]) -> f64,
        domain: &Domain,
        x: &Point,
        sigma: f64,
    ) -> Result<SmoothedMoments> {
        self.smoothed_moments_log(&|p: &[f64]| density(p).ln(), domain, x, sigma)
    }

    /// As [`Oracle::smoothed_moments`] for a density given by its logarithm.
    /// The integrand is rescaled by its largest probed value, so tails far
    /// from `x` neither underflow nor overflow.
    pub fn smoothed_moments_log(
        &self,
        log_density: &dyn Fn(&[f64]) -> f64,
        domain: &Domain,
        x: &Point,
        sigma: f64,
    ) -> Result<SmoothedMoments> {
        if x.len() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: x.len() });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let dom = domain.with_kernel(x, sigma);
        let d = x.len();
        let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        let inv_two_var = 0.5 / (sigma * sigma);
        let log_f = |p: &[f64]| -> f64 {
            let sq: f64 = p.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            log_density(p) + log_norm - sq * inv_two_var
        };
        let shift = probe_max(&log_f, &dom);
        if !shift.is_finite() {
            return Err(Error::QuadratureNotConverged { panels: 0, estimate: f64::NAN });
        }
        let (mass, first) = match d {
            1 => {
                let v = self.integrate_vec::<2>(
                    &|p: &[f64]| {
                        let g = (log_f(p) - shift).exp();
                        [g, p[0] * g]
                    },
                    &dom,
                )?;
                (v[0], Point::from_vec(vec![v[1]]))
            }
            2 => {
                let v = self.integrate_vec::<3>(
                    &|p: &[f64]| {
                        let g = (log_f(p) - shift).exp();
                        [g, p[0] * g, p[1] * g]
                    },
                    &dom,
                )?;
                (v[0], Point::from_vec(vec![v[1], v[2]]))
            }
            _ => return Err(Error::Unsupported(format!("quadrature in dimension {d}"))),
        };
        if !(mass > 0.0) {
            return Err(Error::QuadratureNotConverged { panels: 0, estimate: mass });
        }
        Ok(SmoothedMoments { log_mass: mass.ln() + shift, mean: first / mass })
    }
}

impl Oracle {
    /// `ln ∫ exp(log_density)` over the box, rescaled like
    /// [`Oracle::smoothed_moments_log`].
    pub fn log_integral(&self, log_density: &dyn Fn(&[f64]) -> f64, domain: &Domain) -> Result<f64> {
        let shift = probe_max(log_density, domain);
        if !shift.is_finite() {
            return Err(Error::QuadratureNotConverged { panels: 0, estimate: f64::NAN });
        }
        let v = self.integrate(&|p: &[f64]| (log_density(p) - shift).exp(), domain)?;
        if !(v > 0.0) {
            return Err(Error::QuadratureNotConverged { panels: 0, estimate: v });
        }
        Ok(v.ln() + shift)
    }
}

fn probe_max(f: &dyn Fn(&[f64]) -> f64, domain: &Domain) -> f64 {
    let probes = |axis: &[f64]| -> Vec<f64> {
        let mut out = axis.to_vec();
        out.extend(axis.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        out
    };
    let mut best = f64::NEG_INFINITY;
    match domain.dim() {
        1 => {
            for a in probes(domain.axis(0)) {
                best = best.max(f(&[a]));
            }
        }
        _ => {
            let ys = probes(domain.axis(1));
            for a in probes(domain.axis(0)) {
                for b in &ys {
                    best = best.max(f(&[a, *b]));
                }
            }
        }
    }
    best
}

/// Single-moment form of [`Oracle::smoothed_moments`] with default settings.
pub fn quadrature_oracle(
    density: &dyn Fn(&[f64]) -> f64,
    domain: &Domain,
    x: &Point,
    sigma: f64,
    moment: Moment,
) -> Result<OracleValue> {
    let m = Oracle::default().smoothed_moments(density, domain, x, sigma)?;
    Ok(match moment {
        Moment::Zeroth => OracleValue::Mass(m.mass()),
        Moment::First => OracleValue::FirstMoment(m.first()),
    })
}
