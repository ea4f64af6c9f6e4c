//! Embedding data model, binary file I/O, verification-pair construction, and
//! the synthetic Gaussian generator (x = s·w + eps) used by every experiment.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Raw (pre-normalization) labeled embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Matrix,
    labels: Vec<u32>,
    num_classes: u32,
}

impl EmbeddingSet {
    pub fn new(vectors: Matrix, labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        if vectors.rows() == 0 || vectors.cols() < 2 {
            return Err(Error::InvalidConfig(
                "embedding set needs n >= 1 rows and d >= 2 columns".into(),
            ));
        }
        if labels.len() != vectors.rows() {
            return Err(Error::dims(
                vectors.rows().to_string(),
                labels.len().to_string(),
                "label count",
            ));
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite("embedding components"));
        }
        for &label in &labels {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: num_classes,
                });
            }
        }
        Ok(EmbeddingSet {
            vectors,
            labels,
            num_classes,
        })
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Unit-norm embeddings plus the raw norms they were normalized away from.
/// The raw norms feed the Norm confidence baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEmbeddings {
    unit_vectors: Matrix,
    raw_norms: Vec<f64>,
    labels: Vec<u32>,
    num_classes: u32,
}

impl UnitEmbeddings {
    pub fn unit_vectors(&self) -> &Matrix {
        &self.unit_vectors
    }

    pub fn raw_norms(&self) -> &[f64] {
        &self.raw_norms
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.unit_vectors.cols()
    }
}

/// Unit-norm class centroid rows (the last-layer parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidMatrix {
    centroids: Matrix,
    frozen: bool,
}

impl CentroidMatrix {
    pub fn new(centroids: Matrix, frozen: bool) -> Result<Self> {
        for j in 0..centroids.rows() {
            let n = norm(centroids.row(j));
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::DegenerateInput(format!(
                    "centroid row {} has norm {} (must be unit)",
                    j, n
                )));
            }
        }
        Ok(CentroidMatrix { centroids, frozen })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.centroids
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.rows()
    }

    /// Apply an in-place update and renormalize every row back to unit length.
    pub fn update_renormalized(&mut self, f: impl FnOnce(&mut Matrix)) -> Result<()> {
        f(&mut self.centroids);
        for j in 0..self.centroids.rows() {
            let n = norm(self.centroids.row(j));
            if n < 1e-12 || !n.is_finite() {
                return Err(Error::DegenerateInput(format!(
                    "centroid row {} collapsed during update",
                    j
                )));
            }
            for v in self.centroids.row_mut(j) {
                *v /= n;
            }
        }
        Ok(())
    }
}

/// Verification pairs: (index_a, index_b, same-identity label).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pairs: Vec<(usize, usize, u8)>,
}

impl PairSet {
    pub fn new(pairs: Vec<(usize, usize, u8)>, n_items: usize) -> Result<Self> {
        for &(a, b, label) in &pairs {
            if a >= n_items {
                return Err(Error::IndexOutOfRange { index: a, len: n_items });
            }
            if b >= n_items {
                return Err(Error::IndexOutOfRange { index: b, len: n_items });
            }
            if label > 1 {
                return Err(Error::InvalidConfig(format!("pair label {} not in {{0,1}}", label)));
            }
            if a == b && label == 0 {
                return Err(Error::InvalidConfig(format!(
                    "pair ({0}, {0}) cannot be labeled different-identity",
                    a
                )));
            }
        }
        Ok(PairSet { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize, u8)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.pairs.iter().map(|&(_, _, l)| l).collect()
    }
}

/// Parameters of the generative model x = s·w_y + eps, eps ~ N(0, sigma^2 I).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub num_classes: u32,
    pub samples_per_class: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig("dim must be >= 2".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("need at least one class".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("need at least one sample per class".into()));
        }
        if !(self.scale_min > 0.0) {
            return Err(Error::InvalidConfig("scale_min must be positive".into()));
        }
        if self.scale_max < self.scale_min {
            return Err(Error::InvalidConfig("scale_max must be >= scale_min".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Output of the synthetic generator: data plus ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub set: EmbeddingSet,
    /// Per-sample true signal scale s_i.
    pub true_scales: Vec<f64>,
    /// Generator class directions, unit rows [C×d].
    pub centroids: Matrix,
}

pub fn normalize(set: &EmbeddingSet) -> Result<UnitEmbeddings> {
    let n = set.len();
    let d = set.dim();
    let mut unit = Matrix::zeros(n, d);
    let mut raw_norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = set.vectors.row(i);
        let len = norm(row);
        if len <= 1e-12 {
            return Err(Error::DegenerateInput(format!(
                "row {} has near-zero norm {}",
                i, len
            )));
        }
        for (dst, &v) in unit.row_mut(i).iter_mut().zip(row) {
            *dst = v / len;
        }
        raw_norms.push(len);
    }
    Ok(UnitEmbeddings {
        unit_vectors: unit,
        raw_norms,
        labels: set.labels.clone(),
        num_classes: set.num_classes,
    })
}

/// Centroid j = l2-normalized mean of unit embeddings labeled j.
pub fn init_centroids(unit: &UnitEmbeddings) -> Result<CentroidMatrix> {
    let c = unit.num_classes as usize;
    let d = unit.dim();
    let mut sums = Matrix::zeros(c, d);
    let mut counts = vec![0usize; c];
    for i in 0..unit.len() {
        let label = unit.labels[i] as usize;
        counts[label] += 1;
        for (dst, &v) in sums.row_mut(label).iter_mut().zip(unit.unit_vectors.row(i)) {
            *dst += v;
        }
    }
    for (j, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::DegenerateInput(format!("class {} has no samples", j)));
        }
        let len = norm(sums.row(j));
        if len <= 1e-12 {
            return Err(Error::DegenerateInput(format!(
                "class {} mean vector is (near) zero",
                j
            )));
        }
        for v in sums.row_mut(j) {
            *v /= len;
        }
    }
    CentroidMatrix::new(sums, false)
}

pub(crate) fn sample_unit_sphere(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let len = norm(&v);
        if len > 1e-6 {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}

/// Draw C generator directions uniformly on the unit sphere.
pub fn sample_centroids(dim: usize, num_classes: u32, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(num_classes as usize, dim);
    for j in 0..num_classes as usize {
        let w = sample_unit_sphere(&mut rng, dim);
        m.row_mut(j).copy_from_slice(&w);
    }
    m
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let centroids = sample_centroids(spec.dim, spec.num_classes, spec.seed);
    generate_synthetic_with(spec, &centroids)
}

/// Same generator but with externally supplied class directions, so multiple
/// splits (or views) can share them.
pub fn generate_synthetic_with(spec: &SyntheticSpec, centroids: &Matrix) -> Result<SyntheticData> {
    spec.validate()?;
    if centroids.rows() != spec.num_classes as usize || centroids.cols() != spec.dim {
        return Err(Error::dims(
            format!("{}x{}", spec.num_classes, spec.dim),
            format!("{}x{}", centroids.rows(), centroids.cols()),
            "generator centroids",
        ));
    }
    // Sample stream is separate from the centroid stream so supplying the same
    // centroids reproduces the same data.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x5f3_759df));
    let n = spec.num_classes as usize * spec.samples_per_class;
    let mut vectors = Matrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut true_scales = Vec::with_capacity(n);
    let mut i = 0;
    for class in 0..spec.num_classes {
        let w = centroids.row(class as usize).to_vec();
        for _ in 0..spec.samples_per_class {
            let s = spec.scale_min + rng.random::<f64>() * (spec.scale_max - spec.scale_min);
            let row = vectors.row_mut(i);
            for (k, dst) in row.iter_mut().enumerate() {
                let eps: f64 = StandardNormal.sample(&mut rng);
                *dst = s * w[k] + spec.noise_sigma * eps;
            }
            labels.push(class);
            true_scales.push(s);
            i += 1;
        }
    }
    Ok(SyntheticData {
        set: EmbeddingSet::new(vectors, labels, spec.num_classes)?,
        true_scales,
        centroids: centroids.clone(),
    })
}

/// Sample exactly `n_pos` same-class and `n_neg` different-class pairs.
pub fn make_pairs(labels: &[u32], n_pos: usize, n_neg: usize, seed: u64) -> Result<PairSet> {
    let num_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &label) in labels.iter().enumerate() {
        by_class[label as usize].push(i);
    }
    let multi: Vec<usize> = (0..num_classes).filter(|&c| by_class[c].len() >= 2).collect();
    let nonempty: Vec<usize> = (0..num_classes).filter(|&c| !by_class[c].is_empty()).collect();
    if n_pos > 0 && multi.is_empty() {
        return Err(Error::Infeasible(
            "positive pairs requested but no class has two samples".into(),
        ));
    }
    if n_neg > 0 && nonempty.len() < 2 {
        return Err(Error::Infeasible(
            "negative pairs requested but fewer than two classes present".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pos + n_neg);
    for _ in 0..n_pos {
        let class = multi[rng.random_range(0..multi.len())];
        let members = &by_class[class];
        let a = members[rng.random_range(0..members.len())];
        let b = loop {
            let cand = members[rng.random_range(0..members.len())];
            if cand != a {
                break cand;
            }
        };
        pairs.push((a, b, 1u8));
    }
    for _ in 0..n_neg {
        let ca = nonempty[rng.random_range(0..nonempty.len())];
        let cb = loop {
            let cand = nonempty[rng.random_range(0..nonempty.len())];
            if cand != ca {
                break cand;
            }
        };
        let a = by_class[ca][rng.random_range(0..by_class[ca].len())];
        let b = by_class[cb][rng.random_range(0..by_class[cb].len())];
        pairs.push((a, b, 0u8));
    }
    PairSet::new(pairs, labels.len())
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&(set.dim() as u32).to_le_bytes())?;
    w.write_all(&set.num_classes.to_le_bytes())?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    for i in 0..set.len() {
        w.write_all(&set.labels[i].to_le_bytes())?;
        for &v in set.vectors.row(i) {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::Format(format!(
            "bad magic bytes {:?} (expected \"EMB1\")",
            magic
        )));
    }
    let d = read_u32(&mut r, "embedding dimension")? as usize;
    let num_classes = read_u32(&mut r, "class count")?;
    let n = read_u64(&mut r, "record count")? as usize;
    if d < 2 || n == 0 {
        return Err(Error::Format(format!("degenerate header: d={}, n={}", d, n)));
    }
    let mut vectors = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut buf = vec![0u8; 4 * d];
    for i in 0..n {
        let label = read_u32(&mut r, "record label")?;
        if label >= num_classes {
            return Err(Error::Format(format!(
                "record {}: label {} >= class count {}",
                i, label, num_classes
            )));
        }
        read_exact(&mut r, &mut buf, "record components")?;
        for (k, dst) in vectors.row_mut(i).iter_mut().enumerate() {
            let v = f32::from_le_bytes(buf[4 * k..4 * k + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "record {}: non-finite component at position {}",
                    i, k
                )));
            }
            *dst = v as f64;
        }
        labels.push(label);
    }
    EmbeddingSet::new(vectors, labels, num_classes)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated file while reading {}", what)))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Pairs file: "index_a,index_b,label" lines, `#` starts a comment.
pub fn write_pairs(path: &Path, pairs: &PairSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &(a, b, label) in pairs.pairs() {
        writeln!(w, "{},{},{}", a, b, label)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path, n_items: usize) -> Result<PairSet> {
    let r = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "pairs line {}: expected 3 comma-separated fields",
                lineno + 1
            )));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| Error::Format(format!("pairs line {}: bad {}", lineno + 1, what)))
        };
        let a = parse(fields[0], "index_a")?;
        let b = parse(fields[1], "index_b")?;
        let label = parse(fields[2], "label")? as u8;
        pairs.push((a, b, label));
    }
    PairSet::new(pairs, n_items)
}
