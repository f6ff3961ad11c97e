//! k-nearest-neighbour precision, recall, density and coverage.
//!
//! Two implementations share one distance routine and one set of
//! comparisons, so the grid path reproduces the brute-force path bit for bit.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::SampleSet;
use crate::error::{invalid, Error, Result};
use crate::Point;

pub const DEFAULT_NEIGHBORS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prdc {
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
}

fn dist2(a: &Point, b: &Point) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn check(real: &SampleSet, fake: &SampleSet, k: usize) -> Result<()> {
    if real.dim() != fake.dim() {
        return Err(Error::DimensionMismatch { expected: real.dim(), got: fake.dim() });
    }
    if k == 0 || k >= real.len().min(fake.len()) {
        return Err(invalid(format!(
            "neighbour count must satisfy 1 <= k < min(n_real, n_fake) = {}, got {k}",
            real.len().min(fake.len())
        )));
    }
    Ok(())
}

/// k-th smallest of `d2`, which includes the zero self-distance.
fn kth(mut d2: Vec<f64>, k: usize) -> f64 {
    let (_, v, _) = d2.select_nth_unstable_by(k, f64::total_cmp);
    *v
}

/// Squared distance to the k-th nearest other point, by brute force.
fn radii_brute(points: &[Point], k: usize) -> Vec<f64> {
    points
        .par_iter()
        .map(|p| kth(points.iter().map(|q| dist2(p, q)).collect(), k))
        .collect()
}

struct Tally {
    precision: usize,
    density: usize,
    recall: usize,
    coverage: usize,
}

fn finish(t: Tally, n_real: usize, n_fake: usize, k: usize) -> Prdc {
    Prdc {
        precision: t.precision as f64 / n_fake as f64,
        recall: t.recall as f64 / n_real as f64,
        density: t.density as f64 / (k * n_fake) as f64,
        coverage: t.coverage as f64 / n_real as f64,
    }
}

/// Reference O(n²) implementation.
pub fn prdc_brute_force(real: &SampleSet, fake: &SampleSet, k: usize) -> Result<Prdc> {
    check(real, fake, k)?;
    let (r, f) = (real.points(), fake.points());
    let rr = radii_brute(r, k);
    let rf = radii_brute(f, k);
    let per_fake: Vec<usize> = f
        .par_iter()
        .map(|y| r.iter().zip(&rr).filter(|(x, rad)| dist2(y, x) <= **rad).count())
        .collect();
    let per_real: Vec<(bool, bool)> = r
        .par_iter()
        .zip(&rr)
        .map(|(x, rad)| {
            let recalled = f.iter().zip(&rf).any(|(y, fr)| dist2(x, y) <= *fr);
            let covered = f.iter().any(|y| dist2(x, y) <= *rad);
            (recalled, covered)
        })
        .collect();
    Ok(finish(
        Tally {
            precision: per_fake.iter().filter(|c| **c > 0).count(),
            density: per_fake.iter().sum(),
            recall: per_real.iter().filter(|p| p.0).count(),
            coverage: per_real.iter().filter(|p| p.1).count(),
        },
        r.len(),
        f.len(),
        k,
    ))
}

/// Uniform hash grid over a point set.
struct Grid<'a> {
    points: &'a [Point],
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Point], k: usize) -> Self {
        let dim = points[0].len();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for i in 0..dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a).max(1e-12)).product();
        // Roughly k+1 points per cell.
        let cell = (volume * (k + 1) as f64 / points.len() as f64).powf(1.0 / dim as f64).max(1e-12);
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut grid = Self { points, cell, cells: HashMap::new() };
        for (i, p) in points.iter().enumerate() {
            cells.entry(grid.key(p)).or_default().push(i);
        }
        grid.cells = cells;
        grid
    }

    fn key(&self, p: &Point) -> Vec<i64> {
        p.iter().map(|v| (v / self.cell).floor() as i64).collect()
    }

    /// Indices in cells at Chebyshev offset exactly `ring` from `center`.
    fn ring(&self, center: &[i64], ring: i64, out: &mut Vec<usize>) {
        let dim = center.len();
        let mut offset = vec![-ring; dim];
        loop {
            if offset.iter().any(|o| o.abs() == ring) {
                let key: Vec<i64> = center.iter().zip(&offset).map(|(c, o)| c + o).collect();
                if let Some(ids) = self.cells.get(&key) {
                    out.extend_from_slice(ids);
                }
            }
            let mut i = 0;
            loop {
                if i == dim {
                    return;
                }
                offset[i] += 1;
                if offset[i] <= ring {
                    break;
                }
                offset[i] = -ring;
                i += 1;
            }
        }
    }

    /// All indices within squared distance `r2` of `q` are among the returned.
    fn candidates(&self, q: &Point, r2: f64) -> Vec<usize> {
        let center = self.key(q);
        let rings = (r2.sqrt() / self.cell).ceil() as i64 + 1;
        let mut out = Vec::new();
        for ring in 0..=rings {
            self.ring(&center, ring, &mut out);
        }
        out
    }

    /// Same value as the brute-force k-th squared distance.
    fn kth_dist2(&self, q: &Point, k: usize) -> f64 {
        let center = self.key(q);
        let mut found = Vec::new();
        let mut ring = 0;
        loop {
            let mut ids = Vec::new();
            self.ring(&center, ring, &mut ids);
            found.extend(ids.iter().map(|&i| dist2(q, &self.points[i])));
            // Unvisited points are at least `ring · cell` away.
            if found.len() > k {
                let bound = ring as f64 * self.cell;
                let v = kth(found.clone(), k);
                if v <= bound * bound || found.len() == self.points.len() {
                    return v;
                }
            }
            ring += 1;
        }
    }
}

/// Grid-accelerated implementation; returns exactly the brute-force values.
pub fn prdc_grid(real: &SampleSet, fake: &SampleSet, k: usize) -> Result<Prdc> {
    check(real, fake, k)?;
    let (r, f) = (real.points(), fake.points());
    let gr = Grid::new(r, k);
    let gf = Grid::new(f, k);
    let rr: Vec<f64> = r.par_iter().map(|p| gr.kth_dist2(p, k)).collect();
    let rf: Vec<f64> = f.par_iter().map(|p| gf.kth_dist2(p, k)).collect();
    let max_rr = rr.iter().copied().fold(0.0, f64::max);
    let max_rf = rf.iter().copied().fold(0.0, f64::max);
    let per_fake: Vec<usize> = f
        .par_iter()
        .map(|y| {
            gr.candidates(y, max_rr)
                .into_iter()
                .filter(|&i| dist2(y, &r[i]) <= rr[i])
                .count()
        })
        .collect();
    let per_real: Vec<(bool, bool)> = r
        .par_iter()
        .zip(&rr)
        .map(|(x, rad)| {
            let recalled = gf.candidates(x, max_rf).into_iter().any(|j| dist2(x, &f[j]) <= rf[j]);
            let covered = gf.candidates(x, *rad).into_iter().any(|j| dist2(x, &f[j]) <= *rad);
            (recalled, covered)
        })
        .collect();
    Ok(finish(
        Tally {
            precision: per_fake.iter().filter(|c| **c > 0).count(),
            density: per_fake.iter().sum(),
            recall: per_real.iter().filter(|p| p.0).count(),
            coverage: per_real.iter().filter(|p| p.1).count(),
        },
        r.len(),
        f.len(),
        k,
    ))
}

/// Precision, recall, density and coverage of `fake` against `real`.
pub fn prdc(real: &SampleSet, fake: &SampleSet, k: usize) -> Result<Prdc> {
    if real.len() * fake.len() > 4_000_000 {
        prdc_grid(real, fake, k)
    } else {
        prdc_brute_force(real, fake, k)
    }
}
