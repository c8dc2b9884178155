//! Server-side aggregation rules.
//!
//! Every rule takes the round's submissions indexed by client id. Reductions
//! run in a fixed order so the outcome never depends on scheduling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, StreamRng};
use crate::vecmath::{cosine_similarity, mean_of, ParamVector, NORM_EPS};

/// Weiszfeld distance floor.
const RFA_DIST_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregatorSpec {
    Mean,
    /// Centered clipping around the previous aggregate, `iters` refinements.
    Cc { tau: f64, iters: usize },
    /// Coordinate-wise trimmed mean; `trim = None` trims the configured k_m.
    Tm { trim: Option<usize> },
    /// Geometric median by smoothed Weiszfeld iterations.
    Rfa { max_iters: usize, tol: f64 },
    /// Sequential centered clipping over cosine-clustered buckets.
    Scc { tau: f64, clusters: usize, seed: u64 },
}

impl AggregatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorSpec::Mean => "mean",
            AggregatorSpec::Cc { .. } => "cc",
            AggregatorSpec::Tm { .. } => "tm",
            AggregatorSpec::Rfa { .. } => "rfa",
            AggregatorSpec::Scc { .. } => "scc",
        }
    }

    pub fn validate(&self, k: usize, k_m: usize) -> Result<()> {
        match *self {
            AggregatorSpec::Mean => Ok(()),
            AggregatorSpec::Cc { tau, iters } => {
                check_tau(tau)?;
                if iters == 0 {
                    return Err(Error::invalid("cc needs at least one clipping iteration"));
                }
                Ok(())
            }
            AggregatorSpec::Tm { trim } => check_trim(k, trim.unwrap_or(k_m)),
            AggregatorSpec::Rfa { max_iters, tol } => {
                if max_iters == 0 || tol.is_nan() || tol < 0.0 {
                    return Err(Error::invalid("rfa needs max_iters >= 1 and tol >= 0"));
                }
                Ok(())
            }
            AggregatorSpec::Scc { tau, clusters, .. } => {
                check_tau(tau)?;
                if clusters == 0 || clusters > k {
                    return Err(Error::invalid(format!("scc needs 1 <= n <= k, got n = {clusters}, k = {k}")));
                }
                Ok(())
            }
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid(format!("clipping radius must be > 0, got {tau}")));
    }
    Ok(())
}

fn check_trim(k: usize, trim: usize) -> Result<()> {
    if 2 * trim >= k {
        return Err(Error::invalid(format!("cannot trim {trim} from each end of {k} values")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateOutcome {
    pub aggregate: ParamVector,
    /// Clip factor per client id; 1.0 for rules that do not clip.
    pub clip_factors: Vec<f64>,
}

impl AggregateOutcome {
    fn unclipped(aggregate: ParamVector, k: usize) -> Self {
        Self {
            aggregate,
            clip_factors: vec![1.0; k],
        }
    }
}

/// Runs `spec` for round `round` (1-based). `prev` is the previous aggregate
/// and `k_m` the configured Byzantine count (default trim for TM).
pub fn aggregate(
    spec: &AggregatorSpec,
    ms: &[ParamVector],
    prev: &ParamVector,
    round: usize,
    k_m: usize,
) -> Result<AggregateOutcome> {
    match *spec {
        AggregatorSpec::Mean => mean_agg(ms),
        AggregatorSpec::Cc { tau, iters } => cc_agg(ms, prev, tau, iters),
        AggregatorSpec::Tm { trim } => trimmed_mean_agg(ms, trim.unwrap_or(k_m)),
        AggregatorSpec::Rfa { max_iters, tol } => rfa_agg(ms, max_iters, tol),
        AggregatorSpec::Scc { tau, clusters, seed } => {
            scc_agg(ms, prev, tau, clusters, derive_seed(seed, round as u64))
        }
    }
}

pub fn mean_agg(ms: &[ParamVector]) -> Result<AggregateOutcome> {
    Ok(AggregateOutcome::unclipped(mean_of(ms)?, ms.len()))
}

/// Pulls `m` back onto the ball of radius `tau` around `center`.
pub fn cc_clip(m: &ParamVector, center: &ParamVector, tau: f64) -> (ParamVector, f64) {
    let gap = m.sub(center);
    let norm = gap.norm();
    let factor = if norm <= NORM_EPS { 1.0 } else { (tau / norm).min(1.0) };
    if factor == 1.0 {
        return (m.clone(), 1.0);
    }
    let mut out = center.clone();
    out.axpy(factor, &gap);
    (out, factor)
}

pub fn cc_agg(ms: &[ParamVector], prev: &ParamVector, tau: f64, iters: usize) -> Result<AggregateOutcome> {
    check_tau(tau)?;
    if iters == 0 {
        return Err(Error::invalid("cc needs at least one clipping iteration"));
    }
    let mut center = prev.clone();
    let mut factors = Vec::new();
    for _ in 0..iters {
        let (clipped, fs): (Vec<_>, Vec<_>) = ms.iter().map(|m| cc_clip(m, &center, tau)).unzip();
        center = mean_of(&clipped)?;
        factors = fs;
    }
    Ok(AggregateOutcome {
        aggregate: center,
        clip_factors: factors,
    })
}

pub fn trimmed_mean_agg(ms: &[ParamVector], trim: usize) -> Result<AggregateOutcome> {
    let first = ms.first().ok_or(Error::Empty("submissions"))?;
    let k = ms.len();
    check_trim(k, trim)?;
    let d = first.dim();
    if let Some(bad) = ms.iter().find(|m| m.dim() != d) {
        return Err(Error::DimMismatch { left: d, right: bad.dim() });
    }
    let kept = (k - 2 * trim) as f64;
    let mut column = vec![0.0; k];
    let out = (0..d)
        .map(|j| {
            for (slot, m) in column.iter_mut().zip(ms) {
                *slot = m[j];
            }
            column.sort_by(f64::total_cmp);
            column[trim..k - trim].iter().sum::<f64>() / kept
        })
        .collect();
    Ok(AggregateOutcome::unclipped(ParamVector::from_vec_unchecked(out), k))
}

/// Sum of Euclidean distances from `x` to every submission.
pub fn rfa_objective(x: &ParamVector, ms: &[ParamVector]) -> f64 {
    ms.iter().map(|m| x.sub(m).norm()).sum()
}

/// All Weiszfeld iterates, starting from the mean.
pub fn weiszfeld_path(ms: &[ParamVector], max_iters: usize, tol: f64) -> Result<Vec<ParamVector>> {
    let mut x = mean_of(ms)?;
    let mut path = vec![x.clone()];
    for _ in 0..max_iters {
        let weights: Vec<f64> = ms.iter().map(|m| 1.0 / x.sub(m).norm().max(RFA_DIST_FLOOR)).collect();
        let total: f64 = weights.iter().sum();
        let mut next = ParamVector::zeros(x.dim());
        for (w, m) in weights.iter().zip(ms) {
            next.axpy(w / total, m);
        }
        debug_assert!(
            rfa_objective(&next, ms) <= rfa_objective(&x, ms) * (1.0 + 1e-12) + 1e-12,
            "weiszfeld objective increased"
        );
        let step = next.sub(&x).norm();
        x = next;
        path.push(x.clone());
        if step <= tol {
            break;
        }
    }
    Ok(path)
}

pub fn rfa_agg(ms: &[ParamVector], max_iters: usize, tol: f64) -> Result<AggregateOutcome> {
    let path = weiszfeld_path(ms, max_iters, tol)?;
    let x = path.into_iter().last().expect("path holds the starting point");
    Ok(AggregateOutcome::unclipped(x, ms.len()))
}

/// Client ids ordered by cosine similarity to `reference` (descending, ties
/// by id), cut into `n` contiguous clusters whose sizes differ by at most one.
pub fn cosine_clusters(ms: &[ParamVector], reference: &ParamVector, n: usize) -> Result<Vec<Vec<usize>>> {
    let k = ms.len();
    if n == 0 || n > k {
        return Err(Error::invalid(format!("scc needs 1 <= n <= k, got n = {n}, k = {k}")));
    }
    let sims = ms
        .iter()
        .map(|m| cosine_similarity(m, reference))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    let (base, extra) = (k / n, k % n);
    let mut clusters = Vec::with_capacity(n);
    let mut rest = order.as_slice();
    for c in 0..n {
        let (head, tail) = rest.split_at(base + usize::from(c < extra));
        clusters.push(head.to_vec());
        rest = tail;
    }
    Ok(clusters)
}

/// Buckets built by drawing one remaining member from each cluster in turn.
pub fn draw_buckets(mut clusters: Vec<Vec<usize>>, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let total: usize = clusters.iter().map(Vec::len).sum();
    let rounds = clusters.iter().map(Vec::len).max().unwrap_or(0);
    let mut buckets = Vec::with_capacity(rounds);
    let mut placed = 0;
    while placed < total {
        let bucket: Vec<usize> = clusters
            .iter_mut()
            .filter(|c| !c.is_empty())
            .map(|c| c.remove(rng.random_range(0..c.len())))
            .collect();
        placed += bucket.len();
        buckets.push(bucket);
    }
    buckets
}

pub fn scc_agg(ms: &[ParamVector], prev: &ParamVector, tau: f64, n: usize, seed: u64) -> Result<AggregateOutcome> {
    check_tau(tau)?;
    let clusters = cosine_clusters(ms, prev, n)?;
    let mut rng = rng::stream(seed, rng::tag::SCC);
    let buckets = draw_buckets(clusters, &mut rng);
    debug_assert_eq!(buckets.len(), ms.len().div_ceil(n));

    let mut reference = prev.clone();
    let mut factors = vec![1.0; ms.len()];
    for bucket in &buckets {
        let members: Vec<ParamVector> = bucket.iter().map(|&i| ms[i].clone()).collect();
        let (clipped, factor) = cc_clip(&mean_of(&members)?, &reference, tau);
        reference = clipped;
        for &i in bucket {
            factors[i] = factor;
        }
    }
    Ok(AggregateOutcome {
        aggregate: reference,
        clip_factors: factors,
    })
}
