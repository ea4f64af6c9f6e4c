//! Uncertainty-aware similarity: cosine, the scale-modified pair score
//! sqrt(s1*s2)*(cos - mu), template fusion, and mu calibration from
//! validation pairs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::embeddings::{PairSet, UnitEmbeddings};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimilarityMode {
    Cosine,
    /// Scale-weighted cosine; behaves as MuScaled with mu = 0.
    Scaled,
    MuScaled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    pub mode: SimilarityMode,
    /// Shift applied in MuScaled mode (Scaled uses 0).
    pub mu: f64,
}

impl SimilarityConfig {
    pub fn cosine() -> Self {
        SimilarityConfig {
            mode: SimilarityMode::Cosine,
            mu: 0.0,
        }
    }

    pub fn scaled() -> Self {
        SimilarityConfig {
            mode: SimilarityMode::Scaled,
            mu: 0.0,
        }
    }

    pub fn mu_scaled(mu: f64) -> Self {
        SimilarityConfig {
            mode: SimilarityMode::MuScaled,
            mu,
        }
    }

    pub fn effective_mu(&self) -> f64 {
        match self.mode {
            SimilarityMode::MuScaled => self.mu,
            _ => 0.0,
        }
    }
}

/// Per-pair similarity scores aligned with the pair set that produced them.
#[derive(Debug, Clone)]
pub struct PairScores {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub config: SimilarityConfig,
}

impl PairScores {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Per-identity fused unit vectors.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub fused: Matrix,
    pub member_counts: Vec<usize>,
}

pub fn cosine_pairs(unit: &UnitEmbeddings, pairs: &PairSet) -> Result<PairScores> {
    let n = unit.len();
    let mut scores = Vec::with_capacity(pairs.len());
    for &(a, b, _) in pairs.pairs() {
        if a >= n {
            return Err(Error::IndexOutOfRange { index: a, len: n });
        }
        if b >= n {
            return Err(Error::IndexOutOfRange { index: b, len: n });
        }
        scores.push(dot(unit.unit_vectors().row(a), unit.unit_vectors().row(b)));
    }
    Ok(PairScores {
        scores,
        labels: pairs.labels(),
        config: SimilarityConfig::cosine(),
    })
}

/// Geometric-mean pair scale sqrt(s1*s2).
pub fn pair_scale(s1: f64, s2: f64) -> Result<f64> {
    if !(s1 > 0.0) || !(s2 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "pair scale needs positive inputs, got ({}, {})",
            s1, s2
        )));
    }
    Ok((s1 * s2).sqrt())
}

/// score = sqrt(s_a * s_b) * (cos - mu) per pair. `scales_a`/`scales_b` are
/// per-pair and may come from two different heads (the dual-head retrieval
/// setting uses one head per side).
pub fn modified_similarity(
    unit: &UnitEmbeddings,
    pairs: &PairSet,
    scales_a: &[f64],
    scales_b: &[f64],
    mu: f64,
) -> Result<PairScores> {
    if scales_a.len() != pairs.len() || scales_b.len() != pairs.len() {
        return Err(Error::dims(
            pairs.len().to_string(),
            format!("{} / {}", scales_a.len(), scales_b.len()),
            "per-pair scales",
        ));
    }
    let cosines = cosine_pairs(unit, pairs)?;
    let mut scores = Vec::with_capacity(pairs.len());
    for (i, &cos) in cosines.scores.iter().enumerate() {
        let s = pair_scale(scales_a[i], scales_b[i])?;
        scores.push(s * (cos - mu));
    }
    Ok(PairScores {
        scores,
        labels: pairs.labels(),
        config: if mu == 0.0 {
            SimilarityConfig::scaled()
        } else {
            SimilarityConfig::mu_scaled(mu)
        },
    })
}

/// N-to-1 score s * (<e, u> - mu) of a query against a fused template.
pub fn template_similarity(query: &[f64], scale: f64, template: &[f64], mu: f64) -> Result<f64> {
    if query.len() != template.len() {
        return Err(Error::dims(
            template.len().to_string(),
            query.len().to_string(),
            "template similarity dimensions",
        ));
    }
    for (v, what) in [(query, "query"), (template, "template")] {
        let n = norm(v);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::DegenerateInput(format!(
                "{} vector has norm {} (unit norm required)",
                what, n
            )));
        }
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidConfig(format!("scale {} must be > 0", scale)));
    }
    Ok(scale * (dot(query, template) - mu))
}

/// l2-normalized arithmetic mean of member unit vectors.
pub fn fuse_template(members: &Matrix) -> Result<Vec<f64>> {
    if members.rows() == 0 {
        return Err(Error::InvalidConfig("template needs at least one member".into()));
    }
    let d = members.cols();
    let mut mean = vec![0.0; d];
    for i in 0..members.rows() {
        for (m, &v) in mean.iter_mut().zip(members.row(i)) {
            *m += v;
        }
    }
    let k = members.rows() as f64;
    for m in &mut mean {
        *m /= k;
    }
    let len = norm(&mean);
    if len < 1e-12 {
        return Err(Error::DegenerateInput(
            "template member mean is (near) zero".into(),
        ));
    }
    for m in &mut mean {
        *m /= len;
    }
    Ok(mean)
}

/// Fuse every identity's members into one unit template.
pub fn build_templates(unit: &UnitEmbeddings) -> Result<TemplateSet> {
    let c = unit.num_classes() as usize;
    let d = unit.dim();
    let mut fused = Matrix::zeros(c, d);
    let mut member_counts = vec![0usize; c];
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &label) in unit.labels().iter().enumerate() {
        by_class[label as usize].push(i);
    }
    for (j, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::DegenerateInput(format!("class {} has no members", j)));
        }
        let mut m = Matrix::zeros(members.len(), d);
        for (row, &idx) in members.iter().enumerate() {
            m.row_mut(row).copy_from_slice(unit.unit_vectors().row(idx));
        }
        fused.row_mut(j).copy_from_slice(&fuse_template(&m)?);
        member_counts[j] = members.len();
    }
    Ok(TemplateSet {
        fused,
        member_counts,
    })
}

/// mu = (mean positive cosine + mean negative cosine) / 2 over validation
/// scores. Operates on unmodified cosine scores.
pub fn calibrate_mu(scores: &PairScores) -> Result<f64> {
    let (mut pos_sum, mut pos_n, mut neg_sum, mut neg_n) = (0.0, 0usize, 0.0, 0usize);
    for (&score, &label) in scores.scores.iter().zip(&scores.labels) {
        if label == 1 {
            pos_sum += score;
            pos_n += 1;
        } else {
            neg_sum += score;
            neg_n += 1;
        }
    }
    if pos_n == 0 || neg_n == 0 {
        return Err(Error::Infeasible(
            "mu calibration needs at least one positive and one negative pair".into(),
        ));
    }
    Ok(0.5 * (pos_sum / pos_n as f64 + neg_sum / neg_n as f64))
}

/// Scores file: header "index_a,index_b,label,score", one line per pair.
pub fn write_scores(path: &Path, pairs: &PairSet, scores: &PairScores) -> Result<()> {
    if pairs.len() != scores.len() {
        return Err(Error::dims(
            pairs.len().to_string(),
            scores.len().to_string(),
            "scores vs pairs",
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "index_a,index_b,label,score")?;
    for (i, &(a, b, label)) in pairs.pairs().iter().enumerate() {
        writeln!(w, "{},{},{},{:.17e}", a, b, label, scores.scores[i])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a scores file back; returns (pairs-with-labels, scores).
pub fn read_scores(path: &Path) -> Result<(Vec<(usize, usize)>, PairScores)> {
    let r = BufReader::new(File::open(path)?);
    let mut indices = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !saw_header {
            if trimmed != "index_a,index_b,label,score" {
                return Err(Error::Format(format!(
                    "scores line {}: expected header row",
                    lineno + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "scores line {}: expected 4 fields",
                lineno + 1
            )));
        }
        let bad = |what: &str| Error::Format(format!("scores line {}: bad {}", lineno + 1, what));
        let a: usize = fields[0].trim().parse().map_err(|_| bad("index_a"))?;
        let b: usize = fields[1].trim().parse().map_err(|_| bad("index_b"))?;
        let label: u8 = fields[2].trim().parse().map_err(|_| bad("label"))?;
        let score: f64 = fields[3].trim().parse().map_err(|_| bad("score"))?;
        indices.push((a, b));
        labels.push(label);
        scores.push(score);
    }
    if !saw_header {
        return Err(Error::Format("scores file has no header row".into()));
    }
    Ok((
        indices,
        PairScores {
            scores,
            labels,
            config: SimilarityConfig::cosine(),
        },
    ))
}
