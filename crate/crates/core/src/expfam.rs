//! Discrete exponential families `p_k ∝ exp(t_k · φ)` on a finite support.
//!
//! On a finite support the cumulant `F`, the negative entropy `𝓘` and the
//! entropy of mixtures are all exact finite sums, which makes the duality
//! between natural parameters `φ` and moments `η = ∇F(φ)` checkable to
//! machine precision.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::logsumexp;
use crate::distributions::{CategoricalPmf, Grid};
use crate::error::{invalid, Error, Result};
use crate::sampling::Rng;

/// Gradient ∞-norm at which the Legendre inversion stops.
pub const NEWTON_TOLERANCE: f64 = 1e-10;
/// Largest Newton step accepted at convergence.
pub const NEWTON_STEP_TOLERANCE: f64 = 1e-6;
pub const NEWTON_MAX_ITERS: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct NaturalParam(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct MomentParam(pub Vec<f64>);

/// Sufficient statistics `t` (a `K×S` table) over a support of size `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteExpFam {
    support: usize,
    stats: usize,
    table: Vec<f64>,
}

impl DiscreteExpFam {
    /// Rejects tables whose centred columns are linearly dependent, since
    /// then `φ ↦ η` is not injective.
    pub fn new(support: usize, stats: usize, table: Vec<f64>) -> Result<Self> {
        if support < 2 || stats == 0 || table.len() != support * stats {
            return Err(invalid(format!("a {support}x{stats} statistic table needs {} values", support * stats)));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(invalid("statistics must be finite"));
        }
        let fam = Self { support, stats, table };
        let centred = fam.centred_table();
        let sv = centred.singular_values();
        let top = sv.max();
        if sv.iter().filter(|s| **s > 1e-9 * top.max(1e-300)).count() < stats {
            return Err(invalid("statistics are not affinely independent"));
        }
        Ok(fam)
    }

    /// The full categorical family: indicator statistics of the first
    /// `K - 1` atoms, the last atom pinned at logit 0.
    pub fn categorical(support: usize) -> Result<Self> {
        let s = support.saturating_sub(1);
        let mut table = vec![0.0; support * s];
        for k in 0..s {
            table[k * s + k] = 1.0;
        }
        Self::new(support, s, table)
    }

    /// Polynomial statistics `(ζ, ζ², …, ζ^M)` on a grid.
    pub fn polynomial(grid: &Grid, order: usize) -> Result<Self> {
        let mut table = Vec::with_capacity(grid.resolution() * order);
        for z in grid.zeta() {
            let mut p = 1.0;
            for _ in 0..order {
                p *= z;
                table.push(p);
            }
        }
        Self::new(grid.resolution(), order, table)
    }

    /// Gaussian statistics, scaled by `scale`.
    pub fn random(support: usize, stats: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        let table = (0..support * stats).map(|_| scale * rng.gaussian()).collect();
        Self::new(support, stats, table)
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn stats(&self) -> usize {
        self.stats
    }

    pub fn statistic(&self, k: usize) -> &[f64] {
        &self.table[k * self.stats..(k + 1) * self.stats]
    }

    fn centred_table(&self) -> DMatrix<f64> {
        let t = DMatrix::from_row_slice(self.support, self.stats, &self.table);
        let means = t.row_mean();
        DMatrix::from_fn(self.support, self.stats, |i, j| t[(i, j)] - means[j])
    }

    fn check_param(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.stats {
            return Err(invalid(format!("expected {} parameters, got {}", self.stats, v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(())
    }

    /// Logits `t_k · φ` over the support.
    pub fn logits(&self, phi: &NaturalParam) -> Vec<f64> {
        (0..self.support)
            .map(|k| self.statistic(k).iter().zip(&phi.0).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Logits shifted so that the last atom has logit 0.
    pub fn canonical_logits(&self, phi: &NaturalParam) -> Vec<f64> {
        let l = self.logits(phi);
        let last = l[self.support - 1];
        l.iter().map(|v| v - last).collect()
    }

    pub fn pmf(&self, phi: &NaturalParam) -> CategoricalPmf {
        let l = self.logits(phi);
        let lse = logsumexp(&l);
        CategoricalPmf::from_probs_unchecked(l.iter().map(|v| (v - lse).exp()).collect())
    }

    /// `F(φ) = log Σ_k exp(t_k · φ)`.
    pub fn cumulant(&self, phi: &NaturalParam) -> Result<f64> {
        self.check_param(&phi.0)?;
        Ok(logsumexp(&self.logits(phi)))
    }

    /// Moments `η = E_p[t]` of the pmf `p`.
    pub fn moments_of(&self, p: &CategoricalPmf) -> MomentParam {
        let mut eta = vec![0.0; self.stats];
        for (k, pk) in p.probs().iter().enumerate() {
            eta.iter_mut().zip(self.statistic(k)).for_each(|(e, t)| *e += pk * t);
        }
        MomentParam(eta)
    }

    /// `η = ∇F(φ)`.
    pub fn to_moment(&self, phi: &NaturalParam) -> Result<MomentParam> {
        self.check_param(&phi.0)?;
        Ok(self.moments_of(&self.pmf(phi)))
    }

    fn covariance(&self, p: &CategoricalPmf, eta: &[f64]) -> DMatrix<f64> {
        let s = self.stats;
        let mut h = DMatrix::zeros(s, s);
        for (k, pk) in p.probs().iter().enumerate() {
            let t = self.statistic(k);
            for a in 0..s {
                let da = t[a] - eta[a];
                for b in 0..s {
                    h[(a, b)] += pk * da * (t[b] - eta[b]);
                }
            }
        }
        h
    }

    /// Inverts `η = ∇F(φ)` by minimizing the convex `F(φ) - η · φ`.
    ///
    /// Damped Newton steps with backtracking; a gradient step is taken when
    /// the Hessian is not numerically positive definite. Stops once the
    /// gradient ∞-norm is at most [`NEWTON_TOLERANCE`].
    pub fn to_natural(&self, eta: &MomentParam) -> Result<NaturalParam> {
        self.check_param(&eta.0)?;
        let target = DVector::from_column_slice(&eta.0);
        let objective = |phi: &DVector<f64>| -> f64 {
            logsumexp(&self.logits(&NaturalParam(phi.as_slice().to_vec()))) - phi.dot(&target)
        };
        let mut phi = DVector::zeros(self.stats);
        let mut value = objective(&phi);
        let gradient = |phi: &DVector<f64>| -> (CategoricalPmf, MomentParam, DVector<f64>) {
            let p = self.pmf(&NaturalParam(phi.as_slice().to_vec()));
            let m = self.moments_of(&p);
            let g = DVector::from_column_slice(&m.0) - &target;
            (p, m, g)
        };
        let (mut p, mut m, mut grad) = gradient(&phi);
        for _ in 0..NEWTON_MAX_ITERS {
            let hess = self.covariance(&p, &m.0);
            let newton = hess.cholesky().map(|ch| -ch.solve(&grad));
            // On the boundary the gradient decays while the Newton step
            // stays of order one, so both must be small.
            if let Some(dir) = &newton {
                if grad.amax() <= NEWTON_TOLERANCE && dir.amax() <= NEWTON_STEP_TOLERANCE {
                    return Ok(NaturalParam(phi.as_slice().to_vec()));
                }
            }
            let dir = match newton {
                Some(dir) if grad.dot(&dir) < 0.0 => dir,
                _ => -grad.clone(),
            };
            let slope = grad.dot(&dir);
            let mut step = 1.0;
            loop {
                let cand = &phi + step * &dir;
                let v = objective(&cand);
                let next = gradient(&cand);
                // Near the optimum the objective stops resolving decreases,
                // so a smaller gradient also counts as progress.
                if v <= value + 1e-4 * step * slope || next.2.amax() < grad.amax() || step < 1e-12 {
                    phi = cand;
                    value = v;
                    (p, m, grad) = next;
                    break;
                }
                step *= 0.5;
            }
            if phi.amax() > 1e8 {
                return Err(Error::NoConvergence(format!(
                    "natural parameters diverge; moments {:?} are on or outside the boundary",
                    eta.0
                )));
            }
        }
        Err(Error::NoConvergence(format!(
            "no convergence within {NEWTON_MAX_ITERS} iterations for moments {:?}",
            eta.0
        )))
    }

    /// `𝓘(η) = Σ p log p` of the member with moments `η`.
    pub fn neg_entropy(&self, eta: &MomentParam) -> Result<f64> {
        let phi = self.to_natural(eta)?;
        Ok(neg_entropy_of_pmf(&self.pmf(&phi)))
    }

    /// `|𝓘(η(φ)) - η(φ) · φ + F(φ)|`, zero for every member.
    pub fn lemma_check(&self, phi: &NaturalParam) -> Result<f64> {
        let eta = self.to_moment(phi)?;
        let dot: f64 = eta.0.iter().zip(&phi.0).map(|(a, b)| a * b).sum();
        Ok((self.neg_entropy(&eta)? - dot + self.cumulant(phi)?).abs())
    }

    /// `(1/n) Σ_k [𝓘(η^k) - η^k · φ^z + F(φ^z)]`, the mean KL from the
    /// members `φ^k` to the reference `φ^z`.
    pub fn term1_average(&self, phis: &[NaturalParam], phi_z: &NaturalParam) -> Result<f64> {
        if phis.is_empty() {
            return Err(invalid("need at least one member"));
        }
        let f = self.cumulant(phi_z)?;
        let mut acc = 0.0;
        for phi in phis {
            self.check_param(&phi.0)?;
            let p = self.pmf(phi);
            let eta = self.moments_of(&p);
            let dot: f64 = eta.0.iter().zip(&phi_z.0).map(|(a, b)| a * b).sum();
            acc += neg_entropy_of_pmf(&p) - dot + f;
        }
        Ok(acc / phis.len() as f64)
    }

    /// The minimizer of [`Self::term1_average`] over `φ^z`: its moments are
    /// the mean of the members' moments.
    pub fn bregman_centroid(&self, phis: &[NaturalParam]) -> Result<(MomentParam, NaturalParam)> {
        if phis.is_empty() {
            return Err(invalid("need at least one member"));
        }
        let mut mean = vec![0.0; self.stats];
        for phi in phis {
            let eta = self.to_moment(phi)?;
            mean.iter_mut().zip(&eta.0).for_each(|(m, e)| *m += e / phis.len() as f64);
        }
        let eta = MomentParam(mean);
        let phi = self.to_natural(&eta)?;
        Ok((eta, phi))
    }

    /// `(1/n) Σ 𝓘(η^k) - 𝓘((1/n) Σ η^k)`, the least value of the mean KL to
    /// any member of the family.
    pub fn parametric_bound(&self, phis: &[NaturalParam]) -> Result<f64> {
        let (eta_star, _) = self.bregman_centroid(phis)?;
        let mean_member: f64 = phis.iter().map(|p| neg_entropy_of_pmf(&self.pmf(p))).sum::<f64>() / phis.len() as f64;
        Ok(mean_member - self.neg_entropy(&eta_star)?)
    }
}

/// `Σ p log p`.
pub fn neg_entropy_of_pmf(p: &CategoricalPmf) -> f64 {
    p.probs().iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum()
}

/// `(1/n) Σ 𝓘(q_k) - 𝓘(m)` with `m` the uniform mixture of the `q_k`.
pub fn nonparametric_bound(pmfs: &[CategoricalPmf]) -> Result<f64> {
    let Some(first) = pmfs.first() else {
        return Err(invalid("need at least one member"));
    };
    if pmfs.iter().any(|p| p.len() != first.len()) {
        return Err(invalid("members must share a support"));
    }
    let n = pmfs.len() as f64;
    let mut mix = vec![0.0; first.len()];
    for p in pmfs {
        mix.iter_mut().zip(p.probs()).for_each(|(m, v)| *m += v / n);
    }
    let mean_member = pmfs.iter().map(neg_entropy_of_pmf).sum::<f64>() / n;
    Ok(mean_member - neg_entropy_of_pmf(&CategoricalPmf::from_probs_unchecked(mix)))
}

/// One row of the lower-bound chain for a random instance.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundChain {
    pub instance: usize,
    pub term1_at_random_phi: f64,
    pub term1_at_centroid: f64,
    pub parametric_bound: f64,
    pub nonparametric_bound: f64,
}

impl BoundChain {
    /// `term1(random) ≥ term1(centroid) = parametric ≥ nonparametric ≥ 0`,
    /// with the equality held to `eq_tol` and the inequalities to `slack`.
    pub fn holds(&self, eq_tol: f64, slack: f64) -> bool {
        self.term1_at_random_phi + slack >= self.term1_at_centroid
            && (self.term1_at_centroid - self.parametric_bound).abs() <= eq_tol
            && self.parametric_bound + slack >= self.nonparametric_bound
            && self.nonparametric_bound >= -slack
    }
}

/// Evaluates the chain for `n` members of `fam` against a reference `phi_z`.
pub fn bound_chain(instance: usize, fam: &DiscreteExpFam, phis: &[NaturalParam], phi_z: &NaturalParam) -> Result<BoundChain> {
    let (_, phi_star) = fam.bregman_centroid(phis)?;
    let pmfs: Vec<CategoricalPmf> = phis.iter().map(|p| fam.pmf(p)).collect();
    Ok(BoundChain {
        instance,
        term1_at_random_phi: fam.term1_average(phis, phi_z)?,
        term1_at_centroid: fam.term1_average(phis, &phi_star)?,
        parametric_bound: fam.parametric_bound(phis)?,
        nonparametric_bound: nonparametric_bound(&pmfs)?,
    })
}

/// Random instance: family with `support ≤ max_support` atoms and
/// `stats ≤ max_stats` statistics, `n ≤ max_members` members and a random
/// reference parameter.
pub fn random_instance(
    rng: &mut Rng,
    max_support: usize,
    max_stats: usize,
    max_members: usize,
) -> Result<(DiscreteExpFam, Vec<NaturalParam>, NaturalParam)> {
    let support = 3 + rng.below(max_support.max(3) - 2);
    let stats = 1 + rng.below(max_stats.min(support - 1));
    let members = 1 + rng.below(max_members);
    let fam = DiscreteExpFam::random(support, stats, 1.0, rng)?;
    let draw = |rng: &mut Rng| NaturalParam((0..stats).map(|_| rng.gaussian()).collect());
    let phis = (0..members).map(|_| draw(rng)).collect();
    let phi_z = draw(rng);
    Ok((fam, phis, phi_z))
}
