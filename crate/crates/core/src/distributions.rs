//! Coarse grids on `[-1, 1]`, polynomial logits, the Concrete distribution
//! and its coarse-grained pushforward `z = y^T zeta`.

use crate::autodiff::{logsumexp, softmax_into, Graph, NodeId, Tensor};
use crate::error::{invalid, Error, Result};
use crate::parallel::{chunks, Exec, CHUNK};
use crate::sampling::Rng;

/// `R` evenly spaced points `zeta_r = (2r - (R + 1)) / (R - 1)`, `r = 1..=R`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    zeta: Vec<f64>,
}

impl Grid {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(invalid(format!("grid resolution must be at least 2, got {resolution}")));
        }
        let r = resolution as f64;
        let zeta = (1..=resolution)
            .map(|i| (2.0 * i as f64 - (r + 1.0)) / (r - 1.0))
            .collect();
        Ok(Self { zeta })
    }

    pub fn resolution(&self) -> usize {
        self.zeta.len()
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    /// `zeta` as an `R×1` column, the right factor of `z = y zeta`.
    pub fn zeta_column(&self) -> Tensor {
        Tensor::matrix(self.zeta.len(), 1, self.zeta.clone()).unwrap()
    }

    /// The `M×R` table of powers `zeta_r^m`, `m = 1..=M`.
    ///
    /// Polynomial logits of a `d×M` coefficient matrix are then one product:
    /// `coeffs · powers`.
    pub fn powers(&self, order: usize) -> Tensor {
        let r = self.zeta.len();
        let mut data = vec![0.0; order * r];
        for (k, z) in self.zeta.iter().enumerate() {
            let mut p = 1.0;
            for m in 0..order {
                p *= z;
                data[m * r + k] = p;
            }
        }
        Tensor::matrix(order, r, data).unwrap()
    }
}

pub fn make_grid(resolution: usize) -> Result<Grid> {
    Grid::new(resolution)
}

/// `d×M` polynomial coefficients; row `j` gives the logits of latent `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyCoeffs {
    d: usize,
    order: usize,
    coeffs: Vec<f64>,
}

impl PolyCoeffs {
    pub fn new(d: usize, order: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != d * order {
            return Err(invalid(format!("{d}x{order} coefficients need {} values, got {}", d * order, coeffs.len())));
        }
        Ok(Self { d, order, coeffs })
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.coeffs[j * self.order..(j + 1) * self.order]
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::matrix(self.d, self.order, self.coeffs.clone()).unwrap()
    }
}

/// Checks `M < R - 1`: beyond that the polynomial can interpolate any logits.
pub fn check_order(order: usize, grid: &Grid) -> Result<()> {
    if order + 1 >= grid.resolution() {
        return Err(invalid(format!(
            "polynomial order M={order} must be below R-1={}",
            grid.resolution() - 1
        )));
    }
    Ok(())
}

/// `d×R` logits `Σ_{m=1..M} c_jm zeta_r^m`. There is no constant term.
pub fn poly_logits(coeffs: &PolyCoeffs, grid: &Grid) -> Result<Tensor> {
    check_order(coeffs.order, grid)?;
    let r = grid.resolution();
    let mut out = vec![0.0; coeffs.d * r];
    for j in 0..coeffs.d {
        for (k, z) in grid.zeta().iter().enumerate() {
            let mut p = 1.0;
            let mut acc = 0.0;
            for c in coeffs.row(j) {
                p *= z;
                acc += c * p;
            }
            out[j * r + k] = acc;
        }
    }
    Tensor::matrix(coeffs.d, r, out)
}

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalPmf {
    probs: Vec<f64>,
}

impl CategoricalPmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(invalid("weights must be nonnegative with positive total"));
        }
        Ok(Self {
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    /// Wraps values already known to form a distribution up to rounding.
    pub(crate) fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Log-probabilities, usable as logits (`-inf` for empty cells).
    pub fn logits(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }
}

/// Softmax of finite logits.
pub fn category_probs(logits: &[f64]) -> Result<CategoricalPmf> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(invalid("logits must be finite and nonempty"));
    }
    let lse = logsumexp(logits);
    Ok(CategoricalPmf {
        probs: logits.iter().map(|v| (v - lse).exp()).collect(),
    })
}

/// The bounded polynomial exponential family law restricted to the grid: `p(zeta_r) ∝ exp(Σ c_m zeta_r^m)`.
pub fn bpef_pmf(coeffs: &[f64], grid: &Grid) -> Result<CategoricalPmf> {
    let pc = PolyCoeffs::new(1, coeffs.len(), coeffs.to_vec())?;
    category_probs(poly_logits(&pc, grid)?.data())
}

/// Relaxed one-hot rows `y_j ∈ Δ^{R-1}` and their temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcreteSample {
    pub y: Tensor,
    pub temperature: f64,
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// `y_j = softmax((g_j + logits_j) / T)` row by row.
pub fn sample_concrete(logits: &Tensor, temperature: f64, gumbel: &Tensor) -> Result<ConcreteSample> {
    check_temperature(temperature)?;
    if logits.shape() != gumbel.shape() {
        return Err(Error::Shape {
            op: "sample_concrete",
            detail: format!("logits {:?} vs noise {:?}", logits.shape(), gumbel.shape()),
        });
    }
    let (d, r) = logits
        .dims2()
        .ok_or_else(|| invalid("logits must be a d×R matrix"))?;
    let shifted: Vec<f64> = logits.data().iter().zip(gumbel.data()).map(|(a, g)| a + g).collect();
    let mut y = vec![0.0; d * r];
    for (row, out) in shifted.chunks(r).zip(y.chunks_mut(r)) {
        softmax_into(row, temperature, out);
    }
    Ok(ConcreteSample {
        y: Tensor::new(logits.shape().to_vec(), y)?,
        temperature,
    })
}

/// Graph form of [`sample_concrete`], differentiable in the logits.
pub fn concrete_node(graph: &mut Graph, logits: NodeId, gumbel: NodeId, temperature: f64) -> NodeId {
    let shifted = graph.add(logits, gumbel);
    graph.softmax_rows(shifted, temperature)
}

/// `z_j = Σ_r y_jr zeta_r`.
pub fn coarse_grain(sample: &ConcreteSample, grid: &Grid) -> Result<Vec<f64>> {
    let (_, r) = sample
        .y
        .dims2()
        .ok_or_else(|| invalid("Concrete sample must be a matrix"))?;
    if r != grid.resolution() {
        return Err(Error::Shape {
            op: "coarse_grain",
            detail: format!("rows of width {r} on a grid of {} points", grid.resolution()),
        });
    }
    Ok(sample
        .y
        .data()
        .chunks(r)
        .map(|row| row.iter().zip(grid.zeta()).map(|(y, z)| y * z).sum())
        .collect())
}

/// `z = μ + λ ∘ ε` with `λ` the standard deviations.
pub fn gaussian_reparameterize(mu: &[f64], lambda: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != lambda.len() || mu.len() != eps.len() {
        return Err(invalid("mu, lambda and eps must have equal lengths"));
    }
    if lambda.iter().any(|l| !(*l > 0.0)) {
        return Err(invalid("lambda must be positive"));
    }
    Ok(mu.iter().zip(lambda).zip(eps).map(|((m, l), e)| m + l * e).collect())
}

/// Draws one Concrete row with fresh Gumbel noise.
///
/// Leaves the perturbed logits `(g + logits) / T` in `scratch` and the sample
/// in `y`; returns the index of the largest coordinate.
pub(crate) fn draw_concrete_row(logits: &[f64], temperature: f64, rng: &mut Rng, scratch: &mut [f64], y: &mut [f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, (s, l)) in scratch.iter_mut().zip(logits).enumerate() {
        *s = (rng.gumbel() + l) / temperature;
        if *s > best_val {
            best_val = *s;
            best = k;
        }
    }
    let mut z = 0.0;
    for (o, s) in y.iter_mut().zip(scratch.iter()) {
        *o = (s - best_val).exp();
        z += *o;
    }
    for o in y.iter_mut() {
        *o /= z;
    }
    best
}

/// Frequency with which each coordinate is the largest in `n` Concrete
/// draws. For every temperature the limit is `softmax(logits)`.
pub fn verify_limit_property(logits: &[f64], temperature: f64, n: usize, rng: &Rng, exec: &Exec) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(invalid("logits must be finite"));
    }
    let r = logits.len();
    let parts = chunks(n, CHUNK);
    let counts = exec.map(parts.len(), |i| {
        let mut rng = rng.split(i as u64);
        let mut counts = vec![0u64; r];
        let (mut scratch, mut y) = (vec![0.0; r], vec![0.0; r]);
        for _ in 0..parts[i].1 {
            // argmax of (g + logits) does not depend on T; the draw is kept
            // complete so every temperature consumes the same stream.
            counts[draw_concrete_row(logits, temperature, &mut rng, &mut scratch, &mut y)] += 1;
        }
        counts
    });
    let mut total = vec![0u64; r];
    for c in counts {
        total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
    }
    Ok(total.into_iter().map(|c| c as f64 / n.max(1) as f64).collect())
}

/// Threshold on the largest coordinate for a sample to count as near a vertex.
pub const NEAR_VERTEX: f64 = 0.99;

/// Histogram of Concrete samples over the 2-simplex.
///
/// Each edge of the triangle is cut into `bins` pieces, giving `bins²` small
/// triangles. A sample `y` falls in the cell whose barycentric indices are
/// `(⌊y_1 bins⌋, ⌊y_2 bins⌋, ⌊y_3 bins⌋)`; these sum to `bins - 1` for
/// upward cells and `bins - 2` for downward ones. Permuting the coordinates
/// of the samples permutes the cells exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    bins: usize,
    temperature: f64,
    counts: Vec<u64>,
    total: u64,
    near_vertex: u64,
}

/// One histogram cell: barycentric indices, centre in the plane, count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityCell {
    pub index: [usize; 3],
    pub upward: bool,
    pub x: f64,
    pub y: f64,
    pub count: u64,
}

impl DensityGrid {
    fn empty(bins: usize, temperature: f64) -> Self {
        Self {
            bins,
            temperature,
            counts: vec![0; 2 * bins * bins],
            total: 0,
            near_vertex: 0,
        }
    }

    fn slot(&self, a: usize, b: usize, upward: bool) -> usize {
        (a * self.bins + b) * 2 + usize::from(!upward)
    }

    fn add(&mut self, y: &[f64]) {
        let n = self.bins;
        let scaled = [y[0] * n as f64, y[1] * n as f64];
        let mut a = (scaled[0] as usize).min(n - 1);
        let mut b = (scaled[1] as usize).min(n - 1);
        while a + b > n - 1 {
            if a >= b {
                a -= 1;
            } else {
                b -= 1;
            }
        }
        let frac = (scaled[0] - a as f64) + (scaled[1] - b as f64);
        let upward = a + b == n - 1 || frac < 1.0;
        let s = self.slot(a, b, upward);
        self.counts[s] += 1;
        self.total += 1;
        if y.iter().any(|&v| v > NEAR_VERTEX) {
            self.near_vertex += 1;
        }
    }

    fn merge(&mut self, other: &DensityGrid) {
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.total += other.total;
        self.near_vertex += other.near_vertex;
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Samples whose largest coordinate exceeds [`NEAR_VERTEX`].
    pub fn near_vertex(&self) -> u64 {
        self.near_vertex
    }

    pub fn near_vertex_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.near_vertex as f64 / self.total as f64
        }
    }

    /// Count of the cell with barycentric indices `index`, or `None` if the
    /// indices do not name a cell.
    pub fn count(&self, index: [usize; 3]) -> Option<u64> {
        let n = self.bins;
        let sum = index.iter().sum::<usize>();
        let upward = sum + 1 == n;
        if !(upward || sum + 2 == n) || index.iter().any(|&i| i >= n) {
            return None;
        }
        Some(self.counts[self.slot(index[0], index[1], upward)])
    }

    /// All `bins²` cells, upward cells first within each `(a, b)`.
    pub fn cells(&self) -> Vec<DensityCell> {
        let n = self.bins;
        let h = 3f64.sqrt() / 2.0;
        let mut out = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n - a {
                for upward in [true, false] {
                    let Some(c) = (n + usize::from(upward)).checked_sub(2 + a + b) else { continue };
                    let off = if upward { 1.0 / 3.0 } else { 2.0 / 3.0 };
                    let bary = [a as f64 + off, b as f64 + off, c as f64 + off].map(|v| v / n as f64);
                    out.push(DensityCell {
                        index: [a, b, c],
                        upward,
                        x: bary[1] + 0.5 * bary[2],
                        y: h * bary[2],
                        count: self.counts[self.slot(a, b, upward)],
                    });
                }
            }
        }
        out
    }

    /// Largest relative deviation of a cell count from the mean over its
    /// orbit under the six coordinate permutations, over cells holding at
    /// least `min_count` samples.
    pub fn permutation_deviation(&self, min_count: u64) -> f64 {
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut worst: f64 = 0.0;
        for cell in self.cells().iter().filter(|c| c.count >= min_count) {
            let orbit: Vec<u64> = PERMS
                .iter()
                .map(|p| self.count([cell.index[p[0]], cell.index[p[1]], cell.index[p[2]]]).unwrap())
                .collect();
            let mean = orbit.iter().sum::<u64>() as f64 / orbit.len() as f64;
            worst = worst.max((cell.count as f64 - mean).abs() / mean);
        }
        worst
    }

    /// Total count in the cells whose `k`-th barycentric index is at least
    /// `bins - depth`, i.e. the corner region of vertex `k`.
    pub fn corner_mass(&self, k: usize, depth: usize) -> u64 {
        self.cells()
            .iter()
            .filter(|c| c.index[k] + depth >= self.bins)
            .map(|c| c.count)
            .sum()
    }
}

/// Histogram of `n` draws from `Con(alpha, T)` on the 2-simplex.
pub fn density_grid(alpha: &CategoricalPmf, temperature: f64, n: usize, bins: usize, rng: &Rng, exec: &Exec) -> Result<DensityGrid> {
    if alpha.len() != 3 {
        return Err(invalid(format!("density grids live on the 2-simplex, got {} categories", alpha.len())));
    }
    if bins == 0 {
        return Err(invalid("bins must be positive"));
    }
    check_temperature(temperature)?;
    let logits = alpha.logits();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(invalid("alpha must have full support"));
    }
    let parts = chunks(n, CHUNK);
    let grids = exec.map(parts.len(), |i| {
        let mut rng = rng.split(i as u64);
        let mut grid = DensityGrid::empty(bins, temperature);
        let (mut scratch, mut y) = ([0.0; 3], [0.0; 3]);
        for _ in 0..parts[i].1 {
            draw_concrete_row(&logits, temperature, &mut rng, &mut scratch, &mut y);
            grid.add(&y);
        }
        grid
    });
    let mut out = DensityGrid::empty(bins, temperature);
    for g in &grids {
        out.merge(g);
    }
    Ok(out)
}
