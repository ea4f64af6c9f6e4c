//! Verification metrics and the reject-verification protocol: TAR@FAR with a
//! deterministic threshold rule, rejection curves with normalized AUC,
//! confidence baselines, retrieval precision-recall, and Box-Cox histograms.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{PairSet, UnitEmbeddings};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::similarity::PairScores;

/// Where a set of per-pair uncertainties came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Scale,
    Norm,
    Random,
    Oracle,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::Scale => "scale",
            Provenance::Norm => "norm",
            Provenance::Random => "random",
            Provenance::Oracle => "oracle",
        };
        write!(f, "{}", s)
    }
}

#[derive(Debug, Clone)]
pub struct UncertaintyScores {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl UncertaintyScores {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::NonFinite("uncertainty values (must be finite, >= 0)"));
        }
        Ok(UncertaintyScores { values, provenance })
    }
}

/// TAR at the largest acceptance region whose false acceptance rate stays at
/// or below `far`. Acceptance is score >= threshold. Threshold candidates are
/// the observed negative scores (the attained false-acceptance boundaries),
/// the observed scores outside the negatives' range, and +inf; the smallest
/// candidate meeting the FAR budget wins. Within a band of thresholds sharing
/// one false-acceptance count, the operating point stays anchored at the
/// accepted negative (the conservative end of the band).
pub fn tar_at_far(scores: &[f64], labels: &[u8], far: f64) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::dims(
            labels.len().to_string(),
            scores.len().to_string(),
            "scores vs labels",
        ));
    }
    if !(0.0..=1.0).contains(&far) {
        return Err(Error::InvalidConfig(format!("FAR target {} not in [0, 1]", far)));
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::NonFinite("pair scores"));
    }
    let mut negatives: Vec<f64> = Vec::new();
    let mut positives: Vec<f64> = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 1 {
            positives.push(s);
        } else {
            negatives.push(s);
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Infeasible(
            "TAR@FAR needs at least one positive and one negative pair".into(),
        ));
    }
    negatives.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n_neg = negatives.len() as f64;
    let min_neg = negatives[0];
    let max_neg = *negatives.last().unwrap();

    let mut candidates: Vec<f64> = negatives.clone();
    for &s in scores {
        if s > max_neg || s < min_neg {
            candidates.push(s);
        }
    }
    candidates.push(f64::INFINITY);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let mut threshold = f64::INFINITY;
    for &tau in &candidates {
        let accepted_neg = negatives.len() - lower_bound(&negatives, tau);
        if accepted_neg as f64 / n_neg <= far {
            threshold = tau;
            break;
        }
    }
    let tar = positives.iter().filter(|&&p| p >= threshold).count() as f64
        / positives.len() as f64;
    Ok((tar, threshold))
}

/// First index with v[i] >= x in an ascending slice.
fn lower_bound(v: &[f64], x: f64) -> usize {
    let mut lo = 0;
    let mut hi = v.len();
    while lo < hi {
        let mid = (lo + hi) / 2;
        if v[mid] < x {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Geometric mean of two per-image uncertainties for every pair.
pub fn pair_uncertainty(u_single: &[f64], pairs: &PairSet) -> Result<Vec<f64>> {
    if !u_single.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return Err(Error::NonFinite("per-image uncertainties (must be finite, >= 0)"));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for &(a, b, _) in pairs.pairs() {
        if a >= u_single.len() {
            return Err(Error::IndexOutOfRange { index: a, len: u_single.len() });
        }
        if b >= u_single.len() {
            return Err(Error::IndexOutOfRange { index: b, len: u_single.len() });
        }
        out.push((u_single[a] * u_single[b]).sqrt());
    }
    Ok(out)
}

/// Per-image uncertainty from a predicted scale: u(x) = 1/s(x).
pub fn scale_uncertainty(scales: &[f64]) -> Result<Vec<f64>> {
    for (i, &s) in scales.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "scale for sample {} is {} (must be > 0)",
                i, s
            )));
        }
    }
    Ok(scales.iter().map(|&s| 1.0 / s).collect())
}

/// The pre-normalization norm as confidence; uncertainty is its reciprocal.
pub fn norm_confidence(unit: &UnitEmbeddings) -> Vec<f64> {
    unit.raw_norms().to_vec()
}

pub fn norm_uncertainty(unit: &UnitEmbeddings) -> Vec<f64> {
    unit.raw_norms().iter().map(|&n| 1.0 / n).collect()
}

/// Seeded uniform [0, 1) confidence values, the random baseline.
pub fn random_confidence(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Pairs on the wrong side of the no-rejection threshold get uncertainty 1,
/// everything else 0; the strongest legitimate rejector under the protocol.
pub fn oracle_uncertainty(scores: &[f64], labels: &[u8], far: f64) -> Result<Vec<f64>> {
    let (_, threshold) = tar_at_far(scores, labels, far)?;
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| {
            let accepted = s >= threshold;
            if (l == 1 && !accepted) || (l == 0 && accepted) {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divide by the grid width so a constant-1 curve scores 1.
    Unit,
    None,
}

/// TAR@FAR as the most-uncertain share of pairs is rejected over a grid.
#[derive(Debug, Clone)]
pub struct RejectionCurve {
    pub grid: Vec<f64>,
    pub tar_values: Vec<f64>,
    pub far_target: f64,
    pub auc_raw: f64,
    pub auc_normalized: f64,
}

/// Default grid r = 0, 0.02, ..., 0.5 (26 points).
pub fn default_rejection_grid() -> Vec<f64> {
    (0..=25).map(|k| k as f64 * 0.02).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("rejection grid is empty".into()));
    }
    for w in grid.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidConfig("rejection grid must be sorted ascending".into()));
        }
    }
    if grid[0] < 0.0 || *grid.last().unwrap() > 0.5 {
        return Err(Error::InvalidConfig("rejection grid must lie within [0, 0.5]".into()));
    }
    Ok(())
}

pub fn reject_verification(
    scores: &[f64],
    labels: &[u8],
    uncertainties: &[f64],
    far: f64,
    grid: &[f64],
) -> Result<RejectionCurve> {
    check_grid(grid)?;
    let n = scores.len();
    if labels.len() != n || uncertainties.len() != n {
        return Err(Error::dims(
            n.to_string(),
            format!("labels {} / uncertainties {}", labels.len(), uncertainties.len()),
            "reject-verification inputs",
        ));
    }
    // rejection order: highest uncertainty first, ties by pair index
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        uncertainties[b]
            .partial_cmp(&uncertainties[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut tar_values = Vec::with_capacity(grid.len());
    for &r in grid {
        let drop = ((r * n as f64).ceil() as usize).min(n);
        let keep = &order[drop..];
        let kept_scores: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
        let kept_labels: Vec<u8> = keep.iter().map(|&i| labels[i]).collect();
        let (tar, _) = tar_at_far(&kept_scores, &kept_labels, far).map_err(|e| match e {
            Error::Infeasible(msg) => Error::Infeasible(format!(
                "rejection rate {} leaves an infeasible subset: {}",
                r, msg
            )),
            other => other,
        })?;
        tar_values.push(tar);
    }
    let auc_raw = curve_auc(grid, &tar_values, Normalization::None)?;
    let auc_normalized = curve_auc(grid, &tar_values, Normalization::Unit)?;
    Ok(RejectionCurve {
        grid: grid.to_vec(),
        tar_values,
        far_target: far,
        auc_raw,
        auc_normalized,
    })
}

/// Trapezoidal area under (grid, values). Unit mode divides by the grid
/// width; a single-point grid in unit mode evaluates to the point itself.
pub fn curve_auc(grid: &[f64], values: &[f64], normalization: Normalization) -> Result<f64> {
    check_grid(grid)?;
    if grid.len() != values.len() {
        return Err(Error::dims(
            grid.len().to_string(),
            values.len().to_string(),
            "curve values",
        ));
    }
    let mut area = 0.0;
    for k in 1..grid.len() {
        area += (grid[k] - grid[k - 1]) * 0.5 * (values[k] + values[k - 1]);
    }
    match normalization {
        Normalization::None => Ok(area),
        Normalization::Unit => {
            let width = grid.last().unwrap() - grid[0];
            if width > 0.0 {
                Ok(area / width)
            } else {
                Ok(values[0])
            }
        }
    }
}

/// Threshold-swept retrieval evaluation; exactly one relevant gallery item
/// per query.
#[derive(Debug, Clone)]
pub struct RetrievalEval {
    /// (recall, precision) points, recall ascending.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub top1: bool,
}

pub fn precision_recall(scores: &Matrix, relevant: &[usize], top1: bool) -> Result<RetrievalEval> {
    let q = scores.rows();
    let g = scores.cols();
    if g == 0 {
        return Err(Error::InvalidConfig("empty gallery".into()));
    }
    if relevant.len() != q {
        return Err(Error::dims(
            q.to_string(),
            relevant.len().to_string(),
            "relevance entries",
        ));
    }
    for &idx in relevant {
        if idx >= g {
            return Err(Error::IndexOutOfRange { index: idx, len: g });
        }
    }
    // top1 mode: each query retrieves at most its argmax (ties by index)
    let argmax: Vec<usize> = (0..q)
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();

    let mut thresholds: Vec<f64> = scores.data().to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut points = Vec::new();
    for &tau in &thresholds {
        let mut retrieved = 0usize;
        let mut hits = 0usize;
        if top1 {
            for i in 0..q {
                if scores[(i, argmax[i])] >= tau {
                    retrieved += 1;
                    if argmax[i] == relevant[i] {
                        hits += 1;
                    }
                }
            }
        } else {
            for i in 0..q {
                for j in 0..g {
                    if scores[(i, j)] >= tau {
                        retrieved += 1;
                        if j == relevant[i] {
                            hits += 1;
                        }
                    }
                }
            }
        }
        if retrieved == 0 {
            continue;
        }
        let precision = hits as f64 / retrieved as f64;
        let recall = hits as f64 / q as f64;
        points.push((recall, precision));
    }
    // threshold descending makes recall non-decreasing; anchor at recall 0
    // with the first attained precision
    let auc = if points.is_empty() {
        0.0
    } else {
        let mut area = 0.0;
        let mut prev = (0.0, points[0].1);
        for &(r, p) in &points {
            area += (r - prev.0) * 0.5 * (p + prev.1);
            prev = (r, p);
        }
        area
    };
    Ok(RetrievalEval { points, auc, top1 })
}

/// Box-Cox transform, min-max normalization to [0, 1], fixed-width binning.
#[derive(Debug, Clone)]
pub struct ConfidenceHistogram {
    pub counts: Vec<usize>,
    /// Transformed-and-normalized values, aligned with the input.
    pub normalized: Vec<f64>,
    /// True when all inputs were equal and everything landed in one bin.
    pub degenerate: bool,
}

pub fn boxcox_confidence_histogram(
    scales: &[f64],
    lambda: f64,
    bins: usize,
) -> Result<ConfidenceHistogram> {
    if scales.is_empty() || bins == 0 {
        return Err(Error::InvalidConfig("need at least one value and one bin".into()));
    }
    if lambda == 0.0 {
        return Err(Error::InvalidConfig("lambda must be nonzero".into()));
    }
    for (i, &x) in scales.iter().enumerate() {
        if !(x > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "scale at index {} is {} (Box-Cox needs positive inputs)",
                i, x
            )));
        }
    }
    let transformed: Vec<f64> = scales.iter().map(|&x| (x.powf(lambda) - 1.0) / lambda).collect();
    let min = transformed.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = transformed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min < 1e-300 {
        return Ok(ConfidenceHistogram {
            counts: vec![scales.len()],
            normalized: vec![0.0; scales.len()],
            degenerate: true,
        });
    }
    let normalized: Vec<f64> = transformed.iter().map(|&y| (y - min) / (max - min)).collect();
    let mut counts = vec![0usize; bins];
    for &y in &normalized {
        let bin = ((y * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    Ok(ConfidenceHistogram {
        counts,
        normalized,
        degenerate: false,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidConfig(
            "spearman needs two equal-length sequences of length >= 2".into(),
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        let xa = ra[i] - mean;
        let xb = rb[i] - mean;
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    if da == 0.0 || db == 0.0 {
        return Err(Error::DegenerateInput("constant sequence has no rank correlation".into()));
    }
    Ok(num / (da * db).sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&x, &y| values[x].partial_cmp(&values[y]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Curve file: header "rejection_rate,tar" then one line per grid point.
pub fn write_curve(path: &Path, curve: &RejectionCurve) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "rejection_rate,tar")?;
    for (r, tar) in curve.grid.iter().zip(&curve.tar_values) {
        writeln!(w, "{},{:.17e}", r, tar)?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluation summary: structured key=value text.
pub fn write_curve_summary(
    path: &Path,
    curve: &RejectionCurve,
    provenance: Provenance,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "far={}", curve.far_target)?;
    writeln!(w, "auc_raw={:.17e}", curve.auc_raw)?;
    writeln!(w, "auc_normalized={:.17e}", curve.auc_normalized)?;
    let grid: Vec<String> = curve.grid.iter().map(|r| r.to_string()).collect();
    writeln!(w, "grid={}", grid.join(" "))?;
    writeln!(w, "provenance={}", provenance)?;
    w.flush()?;
    Ok(())
}

/// Convenience: run the rejection protocol straight off PairScores.
pub fn reject_verification_scores(
    scores: &PairScores,
    uncertainties: &UncertaintyScores,
    far: f64,
    grid: &[f64],
) -> Result<RejectionCurve> {
    reject_verification(&scores.scores, &scores.labels, &uncertainties.values, far, grid)
}
