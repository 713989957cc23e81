//! Distribution-comparison metrics: exact 1-D Wasserstein-1, empirical
//! Wasserstein-1/2 via optimal assignment, Gaussian Fréchet distance in raw
//! data space, and k-NN precision/recall.

use crate::models::{fit_gaussian, Dataset, GaussianParams};
use crate::rng::{substream, Purpose};
use crate::{linalg, Error, Result};
use rand::Rng;

/// Exact assignment is used up to this many points per side; larger inputs
/// are uniformly subsampled.
pub const ASSIGNMENT_CAP: usize = 2048;

/// Default neighborhood size for precision/recall.
pub const DEFAULT_KNN_K: usize = 4;

/// Whether a metric evaluation was clean or hit a documented degeneracy
/// (e.g. zero k-NN radii on duplicate-heavy data).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricStatus {
    Ok,
    Degenerate,
}

/// Metric identifiers accepted in experiment configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricId {
    W1,
    W2,
    Frechet,
    Precision,
    Recall,
    /// Trace of the model's total covariance; a model statistic rather than
    /// a two-sample comparison, used to track covariance collapse.
    CovTrace,
}

impl MetricId {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "w1" => Ok(MetricId::W1),
            "w2" => Ok(MetricId::W2),
            "frechet" => Ok(MetricId::Frechet),
            "precision" => Ok(MetricId::Precision),
            "recall" => Ok(MetricId::Recall),
            "cov_trace" => Ok(MetricId::CovTrace),
            other => Err(Error::InvalidInput(format!(
                "unknown metric {other:?} (expected w1, w2, frechet, precision, recall, cov_trace)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricId::W1 => "w1",
            MetricId::W2 => "w2",
            MetricId::Frechet => "frechet",
            MetricId::Precision => "precision",
            MetricId::Recall => "recall",
            MetricId::CovTrace => "cov_trace",
        }
    }

    /// Whether evaluating this metric requires drawing model samples.
    pub fn needs_samples(&self) -> bool {
        !matches!(self, MetricId::CovTrace)
    }
}

/// A named metric evaluation.
#[derive(Debug, Clone)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub sample_sizes: (usize, usize),
    pub status: MetricStatus,
    /// Set when the inputs were subsampled to fit the assignment cap.
    pub subsampled: bool,
}

/// Exact 1-D empirical Wasserstein-1 distance.
///
/// Equal sizes: mean absolute difference of sorted samples. Unequal sizes:
/// the sorted-quantile coupling, integrating `|F_a^{-1} - F_b^{-1}|`.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("empty sample in wasserstein1_1d".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite sample in wasserstein1_1d".into(),
        ));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());

    if sa.len() == sb.len() {
        let n = sa.len() as f64;
        return Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n);
    }

    // Quantile coupling over the merged breakpoint grid.
    let (m, n) = (sa.len(), sb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut q_prev = 0.0f64;
    let mut total = 0.0f64;
    while i < m && j < n {
        let qa = (i + 1) as f64 / m as f64;
        let qb = (j + 1) as f64 / n as f64;
        let q = qa.min(qb);
        total += (q - q_prev) * (sa[i] - sb[j]).abs();
        q_prev = q;
        if qa <= qb {
            i += 1;
        }
        if qb <= qa {
            j += 1;
        }
    }
    Ok(total)
}

const UNASSIGNED: usize = usize::MAX;

/// Exact Jonker-Volgenant solver for the dense square assignment problem.
///
/// `cost` is row-major `n x n`. Returns the column assigned to each row.
/// Column reduction and two augmenting-row-reduction sweeps resolve most
/// rows cheaply; the remainder go through shortest augmenting paths over
/// reduced costs.
fn solve_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    debug_assert_eq!(cost.len(), n * n);
    let mut row_to_col = vec![UNASSIGNED; n];
    let mut col_to_row = vec![UNASSIGNED; n];
    let mut v = vec![0.0f64; n];

    // Column reduction, scanning columns in reverse.
    for j in (0..n).rev() {
        let mut imin = 0usize;
        let mut min = cost[j];
        for i in 1..n {
            let c = cost[i * n + j];
            if c < min {
                min = c;
                imin = i;
            }
        }
        v[j] = min;
        if row_to_col[imin] == UNASSIGNED {
            row_to_col[imin] = j;
            col_to_row[j] = imin;
        }
    }

    // Reduction transfer for singly-assigned rows.
    let mut free: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let j1 = row_to_col[i];
        if j1 == UNASSIGNED {
            free.push(i);
        } else if n > 1 {
            let base = i * n;
            let mut min = f64::INFINITY;
            for j in 0..n {
                if j != j1 {
                    let r = cost[base + j] - v[j];
                    if r < min {
                        min = r;
                    }
                }
            }
            v[j1] -= min;
        }
    }

    // Two sweeps of augmenting row reduction. On continuous costs the
    // re-examination loop can degenerate into a slow price war over nearly
    // tied columns, so each sweep gets a hard iteration budget; rows still
    // unassigned fall through to the exact augmentation phase below.
    for _ in 0..2 {
        let mut k = 0usize;
        let in_count = free.len();
        let mut out_count = 0usize;
        let mut budget = 4 * in_count;
        while k < in_count {
            if budget == 0 {
                // Spill the unprocessed tail into the next round.
                while k < in_count {
                    free[out_count] = free[k];
                    out_count += 1;
                    k += 1;
                }
                break;
            }
            budget -= 1;
            let i = free[k];
            k += 1;
            let base = i * n;
            // First and second minima of the reduced row.
            let mut u1 = cost[base] - v[0];
            let mut j1 = 0usize;
            let mut u2 = f64::INFINITY;
            let mut j2 = UNASSIGNED;
            for j in 1..n {
                let h = cost[base + j] - v[j];
                if h < u2 {
                    if h >= u1 {
                        u2 = h;
                        j2 = j;
                    } else {
                        u2 = u1;
                        j2 = j1;
                        u1 = h;
                        j1 = j;
                    }
                }
            }
            let mut displaced = col_to_row[j1];
            if u1 < u2 {
                // Price down j1 so the second-best column becomes tight.
                v[j1] -= u2 - u1;
            } else if displaced != UNASSIGNED && j2 != UNASSIGNED {
                j1 = j2;
                displaced = col_to_row[j1];
            }
            row_to_col[i] = j1;
            col_to_row[j1] = i;
            if displaced != UNASSIGNED {
                if u1 < u2 {
                    // Re-examine the displaced row right away.
                    k -= 1;
                    free[k] = displaced;
                } else {
                    free[out_count] = displaced;
                    out_count += 1;
                }
            }
        }
        free.truncate(out_count);
    }

    // Shortest augmenting path for each remaining free row.
    let mut d = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut collist: Vec<usize> = (0..n).collect();
    for f in 0..free.len() {
        let free_row = free[f];
        let base_f = free_row * n;
        for j in 0..n {
            d[j] = cost[base_f + j] - v[j];
            pred[j] = free_row;
            collist[j] = j;
        }
        let mut low = 0usize; // collist[..low] scanned
        let mut up = 0usize; // collist[low..up] to scan at current minimum
        let mut last = 0usize;
        let mut min = 0.0f64;
        let endofpath;
        'path: loop {
            if low == up {
                // Rebuild the to-scan block with the new minimum distance.
                last = low;
                min = d[collist[up]];
                up += 1;
                for k in up..n {
                    let j = collist[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        collist.swap(k, up);
                        up += 1;
                    }
                }
                for k in low..up {
                    let j = collist[k];
                    if col_to_row[j] == UNASSIGNED {
                        endofpath = j;
                        break 'path;
                    }
                }
            }
            let j1 = collist[low];
            low += 1;
            let i = col_to_row[j1];
            let base = i * n;
            let u1 = cost[base + j1] - v[j1] - min;
            for k in up..n {
                let j = collist[k];
                let h = cost[base + j] - v[j] - u1;
                if h < d[j] {
                    d[j] = h;
                    pred[j] = i;
                    if h == min {
                        if col_to_row[j] == UNASSIGNED {
                            endofpath = j;
                            break 'path;
                        }
                        collist.swap(k, up);
                        up += 1;
                    }
                }
            }
        }
        // Price update for columns scanned strictly below the path length.
        for &j in &collist[..last] {
            v[j] += d[j] - min;
        }
        // Walk the alternating path back to the free row.
        let mut j = endofpath;
        loop {
            let i = pred[j];
            col_to_row[j] = i;
            std::mem::swap(&mut row_to_col[i], &mut j);
            if i == free_row {
                break;
            }
        }
    }

    row_to_col
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sums a set of matched costs in sorted order so that the result is
/// independent of which argument came first.
fn ordered_sum(mut costs: Vec<f64>) -> f64 {
    costs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    costs.iter().sum()
}

fn assignment_distance(a: &Dataset, b: &Dataset, squared: bool) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "assignment metric needs equal sizes, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty point sets".into()));
    }
    let n = a.len();
    let mut cost = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let d2 = sq_dist(a.point(i), b.point(j));
            cost[i * n + j] = if squared { d2 } else { d2.sqrt() };
        }
    }
    let assigned = solve_assignment(n, &cost);
    let matched: Vec<f64> = assigned
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .collect();
    let mean = ordered_sum(matched) / n as f64;
    Ok(if squared { mean.sqrt() } else { mean })
}

fn subsample(data: &Dataset, target: usize, stream: u64) -> Dataset {
    let n = data.len();
    if n <= target {
        return data.clone();
    }
    // Deterministic partial Fisher-Yates on the index set.
    const SUBSAMPLE_SEED: u64 = 0x5eb5a3b1e;
    let mut rng = substream(SUBSAMPLE_SEED, stream, Purpose::MonteCarlo);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..target {
        let j = i + rng.random_range(0..n - i);
        idx.swap(i, j);
    }
    let mut rows = Vec::with_capacity(target);
    for &i in &idx[..target] {
        rows.push(data.point(i).to_vec());
    }
    Dataset::from_rows(rows, data.source()).unwrap()
}

/// Equalizes sizes (subsampling the larger side) and applies the assignment
/// cap; returns the prepared pair plus whether anything was subsampled.
fn prepare_assignment_pair(a: &Dataset, b: &Dataset, cap: usize) -> (Dataset, Dataset, bool) {
    let target = a.len().min(b.len()).min(cap);
    let subsampled = a.len() > target || b.len() > target;
    (subsample(a, target, 1), subsample(b, target, 2), subsampled)
}

/// Empirical Wasserstein-2: square root of the minimal mean squared
/// Euclidean cost over perfect matchings. Exact up to [`ASSIGNMENT_CAP`]
/// points; see [`wasserstein2_capped`] for the subsampling variant.
pub fn wasserstein2_assignment(a: &Dataset, b: &Dataset) -> Result<f64> {
    if a.len() > ASSIGNMENT_CAP || b.len() > ASSIGNMENT_CAP {
        return Err(Error::InvalidInput(format!(
            "input exceeds assignment cap {ASSIGNMENT_CAP}; use wasserstein2_capped"
        )));
    }
    assignment_distance(a, b, true)
}

/// Empirical Wasserstein-1 over an optimal assignment (used for d >= 2).
pub fn wasserstein1_assignment(a: &Dataset, b: &Dataset) -> Result<f64> {
    if a.len() > ASSIGNMENT_CAP || b.len() > ASSIGNMENT_CAP {
        return Err(Error::InvalidInput(format!(
            "input exceeds assignment cap {ASSIGNMENT_CAP}; use wasserstein1_capped"
        )));
    }
    assignment_distance(a, b, false)
}

/// W2 with uniform subsampling above `cap`; flag reports whether
/// subsampling happened.
pub fn wasserstein2_capped(a: &Dataset, b: &Dataset, cap: usize) -> Result<MetricValue> {
    let sizes = (a.len(), b.len());
    let (sa, sb, subsampled) = prepare_assignment_pair(a, b, cap);
    let value = assignment_distance(&sa, &sb, true)?;
    Ok(MetricValue {
        name: "w2".into(),
        value,
        sample_sizes: sizes,
        status: MetricStatus::Ok,
        subsampled,
    })
}

/// W1 with uniform subsampling above `cap` (1-D inputs use the exact sorted
/// estimator instead and never subsample).
pub fn wasserstein1_capped(a: &Dataset, b: &Dataset, cap: usize) -> Result<MetricValue> {
    let sizes = (a.len(), b.len());
    if a.dim() == 1 {
        let av: Vec<f64> = a.iter().map(|p| p[0]).collect();
        let bv: Vec<f64> = b.iter().map(|p| p[0]).collect();
        return Ok(MetricValue {
            name: "w1".into(),
            value: wasserstein1_1d(&av, &bv)?,
            sample_sizes: sizes,
            status: MetricStatus::Ok,
            subsampled: false,
        });
    }
    let (sa, sb, subsampled) = prepare_assignment_pair(a, b, cap);
    let value = assignment_distance(&sa, &sb, false)?;
    Ok(MetricValue {
        name: "w1".into(),
        value,
        sample_sizes: sizes,
        status: MetricStatus::Ok,
        subsampled,
    })
}

/// Fréchet distance between two Gaussians:
/// `||mu_a - mu_b||^2 + tr(cov_a + cov_b - 2 (cov_a^{1/2} cov_b cov_a^{1/2})^{1/2})`.
///
/// Tiny negative trace residue (roundoff, > -1e-8) is clamped to zero;
/// anything more negative is a numerical failure.
pub fn frechet_gaussian(a: &GaussianParams, b: &GaussianParams) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term = (a.mean() - b.mean()).norm_squared();
    let root_a = a.sqrt_cov();
    let inner = &root_a * b.cov() * &root_a;
    let cross = linalg::sym_sqrt(&inner);
    let residue = a.cov().trace() + b.cov().trace() - 2.0 * cross.trace();
    let residue = if residue < 0.0 {
        if residue > -1e-8 {
            0.0
        } else {
            return Err(Error::NumericalFailure(format!(
                "frechet trace residue {residue:e} is negative beyond roundoff"
            )));
        }
    } else {
        residue
    };
    Ok(mean_term + residue)
}

/// k-NN precision/recall outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub status: MetricStatus,
}

/// Distance to the k-th nearest neighbor within `data` for every point of
/// `data`, excluding the point itself. Zero radii are floored at 1e-12.
fn knn_radii(data: &Dataset, k: usize) -> (Vec<f64>, bool) {
    let n = data.len();
    let mut radii = vec![0.0; n];
    let mut degenerate = false;
    let mut best = vec![f64::INFINITY; k];
    for i in 0..n {
        best.iter_mut().for_each(|b| *b = f64::INFINITY);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d2 = sq_dist(data.point(i), data.point(j));
            // Insertion into the running k smallest.
            if d2 < best[k - 1] {
                let mut pos = k - 1;
                while pos > 0 && best[pos - 1] > d2 {
                    best[pos] = best[pos - 1];
                    pos -= 1;
                }
                best[pos] = d2;
            }
        }
        let r = best[k - 1].sqrt();
        if r == 0.0 {
            degenerate = true;
            radii[i] = 1e-12;
        } else {
            radii[i] = r;
        }
    }
    (radii, degenerate)
}

/// Fraction of `queries` lying inside the union of balls centered at
/// `support` points with the given radii.
fn coverage(queries: &Dataset, support: &Dataset, radii: &[f64]) -> f64 {
    let mut inside = 0usize;
    for q in queries.iter() {
        for (j, s) in support.iter().enumerate() {
            if sq_dist(q, s) <= radii[j] * radii[j] {
                inside += 1;
                break;
            }
        }
    }
    inside as f64 / queries.len() as f64
}

/// Improved-precision-and-recall style k-NN manifold estimate in raw data
/// space: precision is the fraction of generated points inside the union of
/// k-NN balls of the real points, recall the symmetric quantity.
pub fn precision_recall_knn(real: &Dataset, gen: &Dataset, k: usize) -> Result<PrecisionRecall> {
    if real.dim() != gen.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            real.dim(),
            gen.dim()
        )));
    }
    if real.len() <= k || gen.len() <= k {
        return Err(Error::InvalidInput(format!(
            "precision/recall with k = {k} needs more than {k} points per side"
        )));
    }
    let (real_radii, deg_r) = knn_radii(real, k);
    let (gen_radii, deg_g) = knn_radii(gen, k);
    let precision = coverage(gen, real, &real_radii);
    let recall = coverage(real, gen, &gen_radii);
    Ok(PrecisionRecall {
        precision,
        recall,
        status: if deg_r || deg_g {
            MetricStatus::Degenerate
        } else {
            MetricStatus::Ok
        },
    })
}

/// Raw-space Fréchet between moment-matched Gaussians of two point sets
/// (the FID recipe without a feature network).
pub fn frechet_between_samples(real: &Dataset, gen: &Dataset) -> Result<f64> {
    let a = fit_gaussian(real)?;
    let b = fit_gaussian(gen)?;
    frechet_gaussian(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::SourceTag;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;

    fn points(rows: &[[f64; 2]]) -> Dataset {
        Dataset::from_rows(rows.iter().map(|r| r.to_vec()).collect(), SourceTag::Real).unwrap()
    }

    fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let rows = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        Dataset::from_rows(rows, SourceTag::Real).unwrap()
    }

    /// Brute-force optimal matching cost by enumerating all permutations.
    fn brute_force_mean_cost(a: &Dataset, b: &Dataset, squared: bool) -> f64 {
        fn permute(
            a: &Dataset,
            b: &Dataset,
            used: &mut Vec<bool>,
            picks: &mut Vec<usize>,
            best: &mut f64,
            squared: bool,
        ) {
            if picks.len() == a.len() {
                let total: f64 = picks
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| {
                        let d2 = sq_dist(a.point(i), b.point(j));
                        if squared {
                            d2
                        } else {
                            d2.sqrt()
                        }
                    })
                    .sum();
                *best = best.min(total);
                return;
            }
            for j in 0..a.len() {
                if !used[j] {
                    used[j] = true;
                    picks.push(j);
                    permute(a, b, used, picks, best, squared);
                    picks.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        permute(
            a,
            b,
            &mut vec![false; a.len()],
            &mut Vec::new(),
            &mut best,
            squared,
        );
        best / a.len() as f64
    }

    /// Independent exact reference: single-phase shortest augmenting path
    /// with potentials (no reduction preprocessing), for differential
    /// testing of the production solver.
    fn reference_assignment_cost(n: usize, cost: &[f64]) -> f64 {
        let mut u = vec![0.0f64; n + 1];
        let mut v = vec![0.0f64; n + 1];
        let mut matched = vec![0usize; n + 1];
        let mut way = vec![0usize; n + 1];
        for i in 1..=n {
            matched[0] = i;
            let mut j0 = 0usize;
            let mut minv = vec![f64::INFINITY; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = matched[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = 0usize;
                for j in 1..=n {
                    if !used[j] {
                        let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                        if cur < minv[j] {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if minv[j] < delta {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        u[matched[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if matched[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                matched[j0] = matched[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        (1..=n).map(|j| cost[(matched[j] - 1) * n + (j - 1)]).sum()
    }

    #[test]
    fn lapjv_matches_reference_solver() {
        let mut rng = crate::rng::substream(40, 0, Purpose::MonteCarlo);
        for trial in 0..200 {
            let n = rng.random_range(1..=40);
            let mut cost = vec![0.0f64; n * n];
            // Mix continuous and heavily tied integer costs.
            let tied = trial % 3 == 0;
            for c in cost.iter_mut() {
                *c = if tied {
                    rng.random_range(0..4) as f64
                } else {
                    rng.random_range(0.0..10.0)
                };
            }
            let assigned = solve_assignment(n, &cost);
            // Valid permutation.
            let mut seen = vec![false; n];
            for &j in &assigned {
                assert!(!seen[j]);
                seen[j] = true;
            }
            let total: f64 = assigned
                .iter()
                .enumerate()
                .map(|(i, &j)| cost[i * n + j])
                .sum();
            let want = reference_assignment_cost(n, &cost);
            assert!(
                (total - want).abs() < 1e-9,
                "trial {trial} (n={n}): lapjv {total} vs reference {want}"
            );
        }
    }

    #[test]
    fn lapjv_handles_degenerate_structure() {
        // Identical columns, identical rows, constant matrices.
        for n in [1usize, 2, 3, 8, 17] {
            let cost = vec![1.5f64; n * n];
            let total: f64 = solve_assignment(n, &cost)
                .iter()
                .enumerate()
                .map(|(i, &j)| cost[i * n + j])
                .sum();
            assert!((total - 1.5 * n as f64).abs() < 1e-12);
        }
        // One row hugely expensive except one column.
        let n = 5;
        let mut cost = vec![1.0f64; n * n];
        for j in 0..n {
            cost[3 * n + j] = 1e9;
        }
        cost[3 * n + 2] = 0.0;
        let assigned = solve_assignment(n, &cost);
        assert_eq!(assigned[3], 2);
    }

    #[test]
    fn w1_1d_reference_values() {
        assert_relative_eq!(wasserstein1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_relative_eq!(
            wasserstein1_1d(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap(),
            0.0
        );
        assert_relative_eq!(
            wasserstein1_1d(&[0.0, 0.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 2.0]).unwrap(),
            0.5
        );
        assert!(wasserstein1_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1_1d_matches_brute_force_couplings() {
        // For equal-size empiricals the optimal coupling is a permutation.
        let mut rng = crate::rng::substream(21, 0, Purpose::MonteCarlo);
        for _ in 0..50 {
            let n = rng.random_range(2..=6);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let sorted = wasserstein1_1d(&a, &b).unwrap();
            let da = Dataset::from_rows(a.iter().map(|&v| vec![v]).collect(), SourceTag::Real)
                .unwrap();
            let db = Dataset::from_rows(b.iter().map(|&v| vec![v]).collect(), SourceTag::Real)
                .unwrap();
            let brute = brute_force_mean_cost(&da, &db, false);
            assert!(
                (sorted - brute).abs() < 1e-12,
                "sorted {sorted} vs brute {brute}"
            );
        }
    }

    #[test]
    fn w1_1d_unequal_sizes_quantile_coupling() {
        // {0} vs {0, 1}: half the mass moves by 1.
        assert_relative_eq!(wasserstein1_1d(&[0.0], &[0.0, 1.0]).unwrap(), 0.5);
        // Doubling multiplicities must not change the distance.
        let a = [0.0, 1.0, 4.0];
        let a2 = [0.0, 0.0, 1.0, 1.0, 4.0, 4.0];
        let b = [2.0, 2.5, 3.0];
        let w_equal = wasserstein1_1d(&a, &b).unwrap();
        let w_mixed = wasserstein1_1d(&a2, &b).unwrap();
        assert_relative_eq!(w_equal, w_mixed, epsilon = 1e-12);
    }

    #[test]
    fn w2_reference_values() {
        let a = points(&[[0.0, 0.0], [1.0, 0.0]]);
        let b = points(&[[1.0, 0.0], [0.0, 0.0]]);
        assert_relative_eq!(wasserstein2_assignment(&a, &b).unwrap(), 0.0);

        let a = points(&[[0.0, 0.0], [2.0, 0.0]]);
        let b = points(&[[1.0, 0.0], [3.0, 0.0]]);
        // Both matchings give mean squared cost 1.
        assert_relative_eq!(wasserstein2_assignment(&a, &b).unwrap(), 1.0);

        let mut rng = crate::rng::substream(5, 0, Purpose::MonteCarlo);
        let c = random_points(10, 2, &mut rng);
        assert_relative_eq!(wasserstein2_assignment(&c, &c).unwrap(), 0.0);
        assert!(wasserstein2_assignment(&a, &c).is_err());
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = crate::rng::substream(6, 0, Purpose::MonteCarlo);
        for trial in 0..50 {
            let n = rng.random_range(2..=7);
            let a = random_points(n, 2, &mut rng);
            let b = random_points(n, 2, &mut rng);
            let solver = wasserstein2_assignment(&a, &b).unwrap();
            let brute = brute_force_mean_cost(&a, &b, true).sqrt();
            assert!(
                (solver - brute).abs() < 1e-10,
                "trial {trial}: solver {solver} vs brute {brute}"
            );
        }
    }

    #[test]
    fn w1_w2_are_symmetric() {
        let mut rng = crate::rng::substream(7, 0, Purpose::MonteCarlo);
        for _ in 0..100 {
            let n = rng.random_range(2..=12);
            let a = random_points(n, 2, &mut rng);
            let b = random_points(n, 2, &mut rng);
            let w2ab = wasserstein2_assignment(&a, &b).unwrap();
            let w2ba = wasserstein2_assignment(&b, &a).unwrap();
            assert_eq!(w2ab, w2ba);
            let w1ab = wasserstein1_assignment(&a, &b).unwrap();
            let w1ba = wasserstein1_assignment(&b, &a).unwrap();
            assert_eq!(w1ab, w1ba);
        }
    }

    #[test]
    fn w2_identity_of_indiscernibles() {
        let mut rng = crate::rng::substream(8, 0, Purpose::MonteCarlo);
        for _ in 0..50 {
            let n = rng.random_range(2..=8);
            let a = random_points(n, 2, &mut rng);
            let mut shuffled: Vec<Vec<f64>> = a.iter().map(|p| p.to_vec()).collect();
            // Reverse is a permutation: same multiset.
            shuffled.reverse();
            let b = Dataset::from_rows(shuffled, SourceTag::Real).unwrap();
            assert_relative_eq!(wasserstein2_assignment(&a, &b).unwrap(), 0.0);

            let c = random_points(n, 2, &mut rng);
            let differs = a.iter().zip(c.iter()).any(|(x, y)| x != y);
            if differs {
                assert!(wasserstein2_assignment(&a, &c).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn w2_triangle_inequality() {
        let mut rng = crate::rng::substream(9, 0, Purpose::MonteCarlo);
        for _ in 0..100 {
            let n = rng.random_range(2..=10);
            let a = random_points(n, 2, &mut rng);
            let b = random_points(n, 2, &mut rng);
            let c = random_points(n, 2, &mut rng);
            let ab = wasserstein2_assignment(&a, &b).unwrap();
            let bc = wasserstein2_assignment(&b, &c).unwrap();
            let ac = wasserstein2_assignment(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-9, "{ac} > {ab} + {bc}");
        }
    }

    #[test]
    fn w2_subsampling_flag() {
        let mut rng = crate::rng::substream(10, 0, Purpose::MonteCarlo);
        let a = random_points(40, 2, &mut rng);
        let b = random_points(40, 2, &mut rng);
        let exact = wasserstein2_capped(&a, &b, 64).unwrap();
        assert!(!exact.subsampled);
        let capped = wasserstein2_capped(&a, &b, 16).unwrap();
        assert!(capped.subsampled);
        assert!(capped.value.is_finite());
        // Deterministic subsampling: same call, same value.
        let again = wasserstein2_capped(&a, &b, 16).unwrap();
        assert_eq!(capped.value, again.value);
    }

    #[test]
    fn frechet_reference_values() {
        use nalgebra::{DMatrix, DVector};
        let std2 = GaussianParams::standard(2);
        assert_relative_eq!(frechet_gaussian(&std2, &std2).unwrap(), 0.0);

        let shifted = GaussianParams::new(
            DVector::from_vec(vec![3.0, 4.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_relative_eq!(
            frechet_gaussian(&std2, &shifted).unwrap(),
            25.0,
            epsilon = 1e-10
        );

        let narrow = GaussianParams::standard(1);
        let wide = GaussianParams::new(
            DVector::from_vec(vec![0.0]),
            DMatrix::from_element(1, 1, 4.0),
        )
        .unwrap();
        // (sigma_a - sigma_b)^2 = (1 - 2)^2 = 1 + 4 - 2 * 2.
        assert_relative_eq!(frechet_gaussian(&narrow, &wide).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn frechet_rotation_invariance() {
        use nalgebra::{DMatrix, DVector};
        let a = GaussianParams::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]),
        )
        .unwrap();
        let b = GaussianParams::new(
            DVector::from_vec(vec![-0.5, 2.0]),
            DMatrix::from_row_slice(2, 2, &[0.7, -0.2, -0.2, 1.4]),
        )
        .unwrap();
        let base = frechet_gaussian(&a, &b).unwrap();
        for angle in [0.3, 1.1, 2.7] {
            let (s, c) = f64::sin_cos(angle);
            let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let ra = GaussianParams::new(&rot * a.mean(), &rot * a.cov() * rot.transpose())
                .unwrap();
            let rb = GaussianParams::new(&rot * b.mean(), &rot * b.cov() * rot.transpose())
                .unwrap();
            let rotated = frechet_gaussian(&ra, &rb).unwrap();
            assert!((rotated - base).abs() < 1e-8, "{rotated} vs {base}");
        }
        // Equal covariances: distance reduces to the mean shift.
        let c = GaussianParams::new(DVector::from_vec(vec![3.0, 3.0]), a.cov().clone()).unwrap();
        assert_relative_eq!(
            frechet_gaussian(&a, &c).unwrap(),
            (a.mean() - c.mean()).norm_squared(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn precision_recall_identical_and_disjoint() {
        let mut rng = crate::rng::substream(11, 0, Purpose::MonteCarlo);
        let a = random_points(50, 2, &mut rng);
        let pr = precision_recall_knn(&a, &a, 4).unwrap();
        assert_relative_eq!(pr.precision, 1.0);
        assert_relative_eq!(pr.recall, 1.0);

        let far: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + 1e6, p[1]]).collect();
        let b = Dataset::from_rows(far, SourceTag::Real).unwrap();
        let pr = precision_recall_knn(&a, &b, 4).unwrap();
        assert_relative_eq!(pr.precision, 0.0);
        assert_relative_eq!(pr.recall, 0.0);
    }

    #[test]
    fn precision_recall_mode_coverage() {
        // Real data has two tight modes; generated data covers only one.
        let mut rng = crate::rng::substream(12, 0, Purpose::MonteCarlo);
        let mut rows = Vec::new();
        for _ in 0..100 {
            rows.push(vec![rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]);
        }
        for _ in 0..100 {
            rows.push(vec![
                20.0 + rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            ]);
        }
        let real = Dataset::from_rows(rows, SourceTag::Real).unwrap();
        let gen_rows: Vec<Vec<f64>> = (0..80)
            .map(|_| vec![rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08)])
            .collect();
        let gen = Dataset::from_rows(gen_rows, SourceTag::Synthetic).unwrap();
        let pr = precision_recall_knn(&real, &gen, 4).unwrap();
        assert!(pr.precision > 0.95, "precision {}", pr.precision);
        assert!(
            (pr.recall - 0.5).abs() < 0.1,
            "recall {} should be near the covered mode mass",
            pr.recall
        );
    }

    #[test]
    fn precision_recall_monotone_in_k() {
        let mut rng = crate::rng::substream(13, 0, Purpose::MonteCarlo);
        let a = random_points(60, 2, &mut rng);
        let b = random_points(60, 2, &mut rng);
        let mut prev = precision_recall_knn(&a, &b, 1).unwrap();
        for k in 2..=8 {
            let cur = precision_recall_knn(&a, &b, k).unwrap();
            assert!(cur.precision >= prev.precision - 1e-15);
            assert!(cur.recall >= prev.recall - 1e-15);
            prev = cur;
        }
    }

    #[test]
    fn duplicate_heavy_sets_flagged_degenerate() {
        let rows = vec![vec![1.0, 1.0]; 10];
        let dup = Dataset::from_rows(rows, SourceTag::Real).unwrap();
        let pr = precision_recall_knn(&dup, &dup, 4).unwrap();
        assert_eq!(pr.status, MetricStatus::Degenerate);
        // Identical duplicates still cover each other (distance 0 <= floor).
        assert_relative_eq!(pr.precision, 1.0);
    }
}
