//! Softmax, additive-angular-margin (fixed scale), and per-sample-scale
//! losses with analytic gradients w.r.t. embeddings, centroids, and scales.
//!
//! All three reduce into each other: per-sample scales all equal to s0 gives
//! the fixed-scale loss, and m = 0, s = 1 on unit inputs gives plain softmax.
//! Losses are means over the batch, so gradient magnitudes do not depend on
//! batch size. Logits go through log-sum-exp; naive exponentiation overflows
//! at scale 64.

use crate::embeddings::CentroidMatrix;
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

pub const DEFAULT_COSINE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleMode {
    Fixed(f64),
    PerSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Additive angle margin in radians, in [0, pi/2).
    pub margin: f64,
    pub scale_mode: ScaleMode,
    pub cosine_clamp: f64,
}

impl LossConfig {
    pub fn fixed(scale: f64, margin: f64) -> Result<Self> {
        let cfg = LossConfig {
            margin,
            scale_mode: ScaleMode::Fixed(scale),
            cosine_clamp: DEFAULT_COSINE_CLAMP,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn per_sample(margin: f64) -> Result<Self> {
        let cfg = LossConfig {
            margin,
            scale_mode: ScaleMode::PerSample,
            cosine_clamp: DEFAULT_COSINE_CLAMP,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::InvalidConfig(format!(
                "margin {} not in [0, pi/2)",
                self.margin
            )));
        }
        if let ScaleMode::Fixed(s) = self.scale_mode {
            if !(s > 0.0) {
                return Err(Error::InvalidConfig(format!("fixed scale {} must be > 0", s)));
            }
        }
        Ok(())
    }
}

/// Mean loss plus analytic gradients. `grad_scales` is present only for the
/// per-sample-scale loss.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    /// d(mean loss)/d(embedding entries), [n×d].
    pub grad_embeddings: Matrix,
    /// d(mean loss)/d(centroid entries), [C×d].
    pub grad_centroids: Matrix,
    /// d(mean loss)/d(s_i), per-sample mode only.
    pub grad_scales: Option<Vec<f64>>,
    /// Per-sample class probabilities, [n×C].
    pub probabilities: Matrix,
}

fn check_shapes(embeddings: &Matrix, centroids: &Matrix, labels: &[u32]) -> Result<()> {
    if embeddings.cols() != centroids.cols() {
        return Err(Error::dims(
            centroids.cols().to_string(),
            embeddings.cols().to_string(),
            "embedding dimension",
        ));
    }
    if labels.len() != embeddings.rows() {
        return Err(Error::dims(
            embeddings.rows().to_string(),
            labels.len().to_string(),
            "label count",
        ));
    }
    if embeddings.rows() == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    for &label in labels {
        if label as usize >= centroids.rows() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: centroids.rows() as u32,
            });
        }
    }
    Ok(())
}

fn check_unit_rows(m: &Matrix, what: &'static str) -> Result<()> {
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::DegenerateInput(format!(
                "{} row {} has norm {} (unit norm required)",
                what, i, n
            )));
        }
    }
    Ok(())
}

/// Plain softmax cross-entropy over inner-product logits, mean over the batch.
pub fn softmax_loss(
    raw_embeddings: &Matrix,
    centroids: &Matrix,
    labels: &[u32],
) -> Result<LossResult> {
    check_shapes(raw_embeddings, centroids, labels)?;
    let n = raw_embeddings.rows();
    let c = centroids.rows();
    let logits = raw_embeddings.mul_transpose(centroids);
    let mut probabilities = Matrix::zeros(n, c);
    let mut grad_embeddings = Matrix::zeros(n, raw_embeddings.cols());
    let mut grad_centroids = Matrix::zeros(c, centroids.cols());
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let y = labels[i] as usize;
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        loss += (sum_exp.ln() + max - row[y]) * inv_n;
        for j in 0..c {
            let p = (row[j] - max).exp() / sum_exp;
            probabilities[(i, j)] = p;
            let g = (p - if j == y { 1.0 } else { 0.0 }) * inv_n;
            for (dst, &w) in grad_embeddings.row_mut(i).iter_mut().zip(centroids.row(j)) {
                *dst += g * w;
            }
            for (dst, &e) in grad_centroids.row_mut(j).iter_mut().zip(raw_embeddings.row(i)) {
                *dst += g * e;
            }
        }
    }
    Ok(LossResult {
        loss,
        grad_embeddings,
        grad_centroids,
        grad_scales: None,
        probabilities,
    })
}

/// Fixed-scale angular-margin loss: true-class logit s·cos(theta_y + m),
/// others s·cos(theta_j). Requires unit-norm inputs.
pub fn arcface_loss(
    unit_embeddings: &Matrix,
    centroids: &CentroidMatrix,
    labels: &[u32],
    config: &LossConfig,
) -> Result<LossResult> {
    config.validate()?;
    let scale = match config.scale_mode {
        ScaleMode::Fixed(s) => s,
        ScaleMode::PerSample => {
            return Err(Error::InvalidConfig(
                "fixed scale mode required for this loss; use the per-sample loss instead".into(),
            ))
        }
    };
    check_unit_rows(unit_embeddings, "embedding")?;
    let scales = vec![scale; unit_embeddings.rows()];
    let mut result = angular_margin_loss_free(
        unit_embeddings,
        centroids.matrix(),
        labels,
        &scales,
        config.margin,
        config.cosine_clamp,
    )?;
    result.grad_scales = None;
    Ok(result)
}

/// Per-sample-scale angular-margin loss. Populates d(loss)/d(s_i), through
/// which a scale head trains by the chain rule.
pub fn scaleface_loss(
    unit_embeddings: &Matrix,
    centroids: &CentroidMatrix,
    labels: &[u32],
    scales: &[f64],
    margin: f64,
) -> Result<LossResult> {
    LossConfig::per_sample(margin)?;
    check_unit_rows(unit_embeddings, "embedding")?;
    for (i, &s) in scales.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "scale for sample {} is {} (must be > 0)",
                i, s
            )));
        }
    }
    angular_margin_loss_free(
        unit_embeddings,
        centroids.matrix(),
        labels,
        scales,
        margin,
        DEFAULT_COSINE_CLAMP,
    )
}

/// The shared computation, treating embedding and centroid entries as free
/// variables (no unit-norm validation); the finite-difference suite perturbs
/// entries directly through this entry point.
pub fn angular_margin_loss_free(
    embeddings: &Matrix,
    centroids: &Matrix,
    labels: &[u32],
    scales: &[f64],
    margin: f64,
    cosine_clamp: f64,
) -> Result<LossResult> {
    check_shapes(embeddings, centroids, labels)?;
    let n = embeddings.rows();
    if scales.len() != n {
        return Err(Error::dims(
            n.to_string(),
            scales.len().to_string(),
            "per-sample scales",
        ));
    }
    let c = centroids.rows();
    let (cos_m, sin_m) = (margin.cos(), margin.sin());
    let lo = -1.0 + cosine_clamp;
    let hi = 1.0 - cosine_clamp;

    let cosines = embeddings.mul_transpose(centroids);
    let mut probabilities = Matrix::zeros(n, c);
    let mut grad_embeddings = Matrix::zeros(n, embeddings.cols());
    let mut grad_centroids = Matrix::zeros(c, centroids.cols());
    let mut grad_scales = vec![0.0; n];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;

    let mut logits = vec![0.0; c];
    for i in 0..n {
        let y = labels[i] as usize;
        let s = scales[i];
        let cos_row = cosines.row(i);

        // clamped cosines; the clamp masks the gradient where it binds
        let cy = cos_row[y].clamp(lo, hi);
        let cy_clamped = cos_row[y] < lo || cos_row[y] > hi;
        let sin_y = (1.0 - cy * cy).sqrt();
        // cos(theta + m) = cos theta cos m - sin theta sin m, applied
        // unconditionally (the penalty stays monotone past theta + m = pi)
        let psi = cy * cos_m - sin_y * sin_m;
        let dpsi = cos_m + sin_m * cy / sin_y;

        for j in 0..c {
            logits[j] = if j == y {
                s * psi
            } else {
                s * cos_row[j].clamp(lo, hi)
            };
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        loss += (sum_exp.ln() + max - logits[y]) * inv_n;

        for j in 0..c {
            let p = (logits[j] - max).exp() / sum_exp;
            probabilities[(i, j)] = p;
            let g = (p - if j == y { 1.0 } else { 0.0 }) * inv_n;

            let (logit_per_scale, dlogit_dcos, clamped) = if j == y {
                (psi, s * dpsi, cy_clamped)
            } else {
                let cj = cos_row[j];
                (cj.clamp(lo, hi), s, cj < lo || cj > hi)
            };
            grad_scales[i] += g * logit_per_scale;
            if clamped {
                continue;
            }
            let gc = g * dlogit_dcos;
            for (dst, &w) in grad_embeddings.row_mut(i).iter_mut().zip(centroids.row(j)) {
                *dst += gc * w;
            }
            for (dst, &e) in grad_centroids.row_mut(j).iter_mut().zip(embeddings.row(i)) {
                *dst += gc * e;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss value"));
    }
    Ok(LossResult {
        loss,
        grad_embeddings,
        grad_centroids,
        grad_scales: Some(grad_scales),
        probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::CentroidMatrix;
    use crate::linalg::dot;

    fn unit2(x: f64, y: f64) -> Vec<f64> {
        let n = (x * x + y * y).sqrt();
        vec![x / n, y / n]
    }

    fn centroids_from(rows: &[Vec<f64>]) -> CentroidMatrix {
        CentroidMatrix::new(Matrix::from_rows(rows).unwrap(), true).unwrap()
    }

    #[test]
    fn softmax_uniform_logits_is_ln_c() {
        // orthogonal embedding: all three logits zero
        let e = Matrix::from_rows(&[vec![0.0, 0.0, 1.0]]).unwrap();
        let w = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![-1.0, 0.0, 0.0],
        ])
        .unwrap();
        let r = softmax_loss(&e, &w, &[0]).unwrap();
        assert!((r.loss - 3.0f64.ln()).abs() < 1e-12);
        for j in 0..3 {
            assert!((r.probabilities[(0, j)] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_saturated_true_logit() {
        let e = Matrix::from_rows(&[vec![50.0, 0.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let r = softmax_loss(&e, &w, &[0]).unwrap();
        assert!(r.loss < 1e-20);
    }

    #[test]
    fn softmax_matches_scalar_oracle() {
        // straight-line scalar recomputation on a random-ish 4x8 instance
        let mut e = Matrix::zeros(4, 8);
        let mut w = Matrix::zeros(3, 8);
        let mut x = 0.1f64;
        for v in e.data_mut().iter_mut().chain(w.data_mut()) {
            x = (x * 97.0 + 13.0).sin();
            *v = x;
        }
        let labels = [2u32, 0, 1, 1];
        let r = softmax_loss(&e, &w, &labels).unwrap();
        let mut expect = 0.0;
        for i in 0..4 {
            let logits: Vec<f64> = (0..3).map(|j| dot(e.row(i), w.row(j))).collect();
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            expect += -(logits[labels[i] as usize].exp() / denom).ln() / 4.0;
        }
        assert!((r.loss - expect).abs() < 1e-12);
    }

    #[test]
    fn arcface_all_orthogonal_is_ln_c() {
        let e = Matrix::from_rows(&[vec![0.0, 0.0, 0.0, 1.0]]).unwrap();
        let cents = centroids_from(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        // m = 0 so the true-class logit stays s*cos = 0
        let cfg = LossConfig::fixed(13.0, 0.0).unwrap();
        let r = arcface_loss(&e, &cents, &[0], &cfg).unwrap();
        assert!((r.loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn arcface_m0_s1_reduces_to_softmax() {
        let e = Matrix::from_rows(&[unit2(0.3, 0.9), unit2(-0.5, 0.2)]).unwrap();
        let cents = centroids_from(&[unit2(1.0, 0.1), unit2(-0.2, 1.0)]);
        let cfg = LossConfig::fixed(1.0, 0.0).unwrap();
        let a = arcface_loss(&e, &cents, &[0, 1], &cfg).unwrap();
        let s = softmax_loss(&e, cents.matrix(), &[0, 1]).unwrap();
        assert!((a.loss - s.loss).abs() < 1e-12);
        for (x, y) in a
            .grad_embeddings
            .data()
            .iter()
            .zip(s.grad_embeddings.data())
        {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn arcface_two_class_scalar_oracle() {
        // cos(theta_y) = 0.8, cos(theta_other) = 0.1, m = 0.5, s = 10
        let e = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let cents = centroids_from(&[vec![0.8, 0.6], vec![0.1, (1.0f64 - 0.01).sqrt()]]);
        let cfg = LossConfig::fixed(10.0, 0.5).unwrap();
        let r = arcface_loss(&e, &cents, &[0], &cfg).unwrap();
        let psi = 0.8 * 0.5f64.cos() - 0.6 * 0.5f64.sin();
        let expect = (1.0 + (10.0 * 0.1 - 10.0 * psi).exp()).ln();
        assert!((r.loss - expect).abs() < 1e-12);
        assert!((r.loss - 0.0427).abs() < 1e-3);
    }

    #[test]
    fn arcface_rejects_non_unit_embeddings() {
        let e = Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let cents = centroids_from(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let cfg = LossConfig::fixed(10.0, 0.2).unwrap();
        assert!(arcface_loss(&e, &cents, &[0], &cfg).is_err());
    }

    #[test]
    fn scaleface_constant_scales_reduce_to_fixed() {
        let e = Matrix::from_rows(&[unit2(0.3, 0.9), unit2(-0.5, 0.2), unit2(0.9, -0.1)]).unwrap();
        let cents = centroids_from(&[unit2(1.0, 0.1), unit2(-0.2, 1.0)]);
        let labels = [0u32, 1, 0];
        let s0 = 17.0;
        let sf = scaleface_loss(&e, &cents, &labels, &[s0; 3], 0.3).unwrap();
        let cfg = LossConfig::fixed(s0, 0.3).unwrap();
        let af = arcface_loss(&e, &cents, &labels, &cfg).unwrap();
        assert!((sf.loss - af.loss).abs() < 1e-12);
        for (x, y) in sf
            .grad_embeddings
            .data()
            .iter()
            .zip(af.grad_embeddings.data())
        {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in sf
            .grad_centroids
            .data()
            .iter()
            .zip(af.grad_centroids.data())
        {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scaleface_rejects_non_positive_scale() {
        let e = Matrix::from_rows(&[unit2(1.0, 0.0)]).unwrap();
        let cents = centroids_from(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(scaleface_loss(&e, &cents, &[0], &[0.0], 0.3).is_err());
        assert!(scaleface_loss(&e, &cents, &[0], &[-1.0], 0.3).is_err());
    }

    fn scale_grad_sign_case(correct: bool) -> f64 {
        // correct: margin-adjusted true cosine above the other cosine
        let (cy, cother) = if correct { (0.95, -0.5) } else { (-0.5, 0.9) };
        let e = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let cents = centroids_from(&[
            vec![cy, (1.0f64 - cy * cy).sqrt()],
            vec![cother, (1.0f64 - cother * cother).sqrt()],
        ]);
        let margin = 0.3;
        let s = 4.0;
        let r = scaleface_loss(&e, &cents, &[0], &[s], margin).unwrap();
        let analytic = r.grad_scales.as_ref().unwrap()[0];
        // finite-difference confirmation
        let h = 1e-5;
        let up = scaleface_loss(&e, &cents, &[0], &[s + h], margin).unwrap().loss;
        let dn = scaleface_loss(&e, &cents, &[0], &[s - h], margin).unwrap().loss;
        let fd = (up - dn) / (2.0 * h);
        assert!((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-3) < 1e-4);
        analytic
    }

    #[test]
    fn scaleface_scale_grad_negative_when_correct() {
        assert!(scale_grad_sign_case(true) < 0.0);
    }

    #[test]
    fn scaleface_scale_grad_positive_when_wrong() {
        assert!(scale_grad_sign_case(false) > 0.0);
    }

    #[test]
    fn scaleface_loss_decreasing_in_scale_when_correct() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let cents = centroids_from(&[vec![0.95, (1.0f64 - 0.95 * 0.95).sqrt()], vec![0.1, (1.0f64 - 0.01).sqrt()]]);
        let mut prev = f64::INFINITY;
        let mut s = 1.0;
        while s <= 64.0 {
            let r = scaleface_loss(&e, &cents, &[0], &[s], 0.3).unwrap();
            // strictly decreasing until the loss underflows into rounding
            // noise near f64 resolution
            assert!(
                r.loss < prev || r.loss < 1e-12,
                "loss not decreasing at s = {}",
                s
            );
            prev = r.loss;
            s += 3.0;
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_loss_nonnegative() {
        let e = Matrix::from_rows(&[unit2(0.3, 0.9), unit2(-0.5, 0.2)]).unwrap();
        let cents = centroids_from(&[unit2(1.0, 0.1), unit2(-0.2, 1.0), unit2(0.5, -0.5)]);
        let r = scaleface_loss(&e, &cents, &[0, 2], &[30.0, 2.0], 0.4).unwrap();
        assert!(r.loss >= 0.0);
        for i in 0..2 {
            let sum: f64 = (0..3).map(|j| r.probabilities[(i, j)]).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lse_survives_scale_64() {
        let e = Matrix::from_rows(&[unit2(0.9, 0.4)]).unwrap();
        let cents = centroids_from(&[unit2(0.9, 0.4), unit2(-0.9, 0.4)]);
        let r = scaleface_loss(&e, &cents, &[0], &[64.0], 0.5).unwrap();
        assert!(r.loss.is_finite());
    }
}
