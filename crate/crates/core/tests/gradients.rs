//! Central finite-difference validation of every analytic gradient: the
//! softmax and fixed-scale margin losses, the per-sample-scale loss
//! (including d(loss)/d(s_i)), and the full head-parameter chain through the
//! positivity activation. Over twenty seeded configurations, relative error
//! at most 1e-4 with step 1e-4.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scaleface::embeddings::sample_centroids;
use scaleface::gradnet::{finite_diff_check, net_backward, net_forward, DenseNet};
use scaleface::losses::{
    angular_margin_loss_free, softmax_loss, LossResult, DEFAULT_COSINE_CLAMP,
};
use scaleface::scale_head::ActivationFamily;
use scaleface::Matrix;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;

struct Fixture {
    embeddings: Matrix,
    centroids: Matrix,
    labels: Vec<u32>,
    scales: Vec<f64>,
}

fn fixture(seed: u64, n: usize, d: usize, c: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
    let embeddings = sample_centroids(d, n as u32, seed.wrapping_add(1));
    let centroids = sample_centroids(d, c as u32, seed.wrapping_add(2));
    let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..c as u32)).collect();
    let scales: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
    Fixture { embeddings, centroids, labels, scales }
}

fn margin_loss(fx: &Fixture, emb: &Matrix, cent: &Matrix, scales: &[f64], margin: f64) -> LossResult {
    angular_margin_loss_free(emb, cent, &fx.labels, scales, margin, DEFAULT_COSINE_CLAMP).unwrap()
}

/// Checks d(loss)/d(embeddings), d(loss)/d(centroids), and (when given)
/// d(loss)/d(scales) against central differences.
fn check_margin_loss_grads(fx: &Fixture, margin: f64, per_sample: bool, what: &str) {
    let scales = if per_sample {
        fx.scales.clone()
    } else {
        vec![fx.scales[0]; fx.embeddings.rows()]
    };
    let base = margin_loss(fx, &fx.embeddings, &fx.centroids, &scales, margin);

    let (rows, cols) = (fx.embeddings.rows(), fx.embeddings.cols());
    let emb_report = finite_diff_check(
        |p| {
            let m = Matrix::from_vec(rows, cols, p.to_vec())?;
            Ok(margin_loss(fx, &m, &fx.centroids, &scales, margin).loss)
        },
        base.grad_embeddings.data(),
        fx.embeddings.data(),
        TOL,
        STEP,
    )
    .unwrap();
    assert!(emb_report.pass, "{}: embeddings max rel err {}", what, emb_report.max_rel_error);

    let (crows, ccols) = (fx.centroids.rows(), fx.centroids.cols());
    let cent_report = finite_diff_check(
        |p| {
            let m = Matrix::from_vec(crows, ccols, p.to_vec())?;
            Ok(margin_loss(fx, &fx.embeddings, &m, &scales, margin).loss)
        },
        base.grad_centroids.data(),
        fx.centroids.data(),
        TOL,
        STEP,
    )
    .unwrap();
    assert!(cent_report.pass, "{}: centroids max rel err {}", what, cent_report.max_rel_error);

    if per_sample {
        let scale_report = finite_diff_check(
            |p| Ok(margin_loss(fx, &fx.embeddings, &fx.centroids, p, margin).loss),
            base.grad_scales.as_ref().unwrap(),
            &scales,
            TOL,
            STEP,
        )
        .unwrap();
        assert!(scale_report.pass, "{}: scales max rel err {}", what, scale_report.max_rel_error);
    }
}

#[test]
fn per_sample_loss_gradients_match_finite_differences() {
    // 8 configurations: embeddings, centroids, and per-sample scales each
    let cases = [
        (0u64, 4usize, 6usize, 3usize, 0.3),
        (1, 6, 8, 4, 0.5),
        (2, 3, 5, 2, 0.0),
        (3, 8, 12, 5, 0.2),
        (4, 5, 16, 6, 0.4),
        (5, 10, 10, 3, 0.1),
        (6, 2, 4, 2, 0.7),
        (7, 7, 24, 8, 0.35),
    ];
    for &(seed, n, d, c, margin) in &cases {
        let fx = fixture(seed, n, d, c);
        check_margin_loss_grads(&fx, margin, true, &format!("per-sample seed {}", seed));
    }
}

#[test]
fn fixed_scale_loss_gradients_match_finite_differences() {
    // 6 configurations with a shared fixed scale
    let cases = [
        (10u64, 4usize, 6usize, 3usize, 0.3),
        (11, 5, 8, 4, 0.5),
        (12, 3, 10, 2, 0.0),
        (13, 6, 5, 5, 0.25),
        (14, 8, 12, 4, 0.6),
        (15, 4, 20, 6, 0.15),
    ];
    for &(seed, n, d, c, margin) in &cases {
        let fx = fixture(seed, n, d, c);
        check_margin_loss_grads(&fx, margin, false, &format!("fixed seed {}", seed));
    }
}

#[test]
fn softmax_loss_gradients_match_finite_differences() {
    // 4 configurations over raw inner-product logits
    let cases = [
        (20u64, 4usize, 6usize, 3usize),
        (21, 6, 8, 4),
        (22, 3, 12, 2),
        (23, 8, 5, 5),
    ];
    for &(seed, n, d, c) in &cases {
        let fx = fixture(seed, n, d, c);
        let base = softmax_loss(&fx.embeddings, &fx.centroids, &fx.labels).unwrap();

        let (rows, cols) = (fx.embeddings.rows(), fx.embeddings.cols());
        let emb = finite_diff_check(
            |p| {
                let m = Matrix::from_vec(rows, cols, p.to_vec())?;
                Ok(softmax_loss(&m, &fx.centroids, &fx.labels)?.loss)
            },
            base.grad_embeddings.data(),
            fx.embeddings.data(),
            TOL,
            STEP,
        )
        .unwrap();
        assert!(emb.pass, "softmax seed {}: embeddings rel err {}", seed, emb.max_rel_error);

        let (crows, ccols) = (fx.centroids.rows(), fx.centroids.cols());
        let cent = finite_diff_check(
            |p| {
                let m = Matrix::from_vec(crows, ccols, p.to_vec())?;
                Ok(softmax_loss(&fx.embeddings, &m, &fx.labels)?.loss)
            },
            base.grad_centroids.data(),
            fx.centroids.data(),
            TOL,
            STEP,
        )
        .unwrap();
        assert!(cent.pass, "softmax seed {}: centroids rel err {}", seed, cent.max_rel_error);
    }
}

#[test]
fn head_parameter_gradients_match_finite_differences() {
    // 6 configurations through the full chain: net parameters -> scalar
    // pre-activation -> positivity activation -> per-sample loss
    let cases: [(u64, usize, Vec<usize>, ActivationFamily); 6] = [
        (30, 6, vec![8], ActivationFamily::Exp),
        (31, 8, vec![8, 8], ActivationFamily::SigmC(64.0)),
        (32, 10, vec![6], ActivationFamily::ShiftedSigm(32.0, 64.0)),
        (33, 5, vec![4, 4, 4], ActivationFamily::SigmC(32.0)),
        (34, 12, vec![10], ActivationFamily::ShiftedSigm(1.0, 10.0)),
        (37, 10, vec![8, 8], ActivationFamily::Exp),
    ];
    for (seed, d, hidden, act) in cases {
        let fx = fixture(seed, 6, d, 3);
        let net = DenseNet::mlp(d, &hidden, 1, seed).unwrap();
        let margin = 0.3;

        let loss_at = |params: &[f64]| -> scaleface::Result<f64> {
            let mut probe = net.clone();
            probe.set_params_flat(params)?;
            let (pre, _) = net_forward(&probe, &fx.embeddings)?;
            let scales: Vec<f64> = pre.data().iter().map(|&a| act.apply(a)).collect();
            Ok(margin_loss(&fx, &fx.embeddings, &fx.centroids, &scales, margin).loss)
        };

        let (pre, cache) = net_forward(&net, &fx.embeddings).unwrap();
        let scales: Vec<f64> = pre.data().iter().map(|&a| act.apply(a)).collect();
        let base = margin_loss(&fx, &fx.embeddings, &fx.centroids, &scales, margin);
        let grad_scales = base.grad_scales.as_ref().unwrap();
        let mut out_grad = Matrix::zeros(fx.embeddings.rows(), 1);
        for i in 0..fx.embeddings.rows() {
            out_grad[(i, 0)] = grad_scales[i] * act.derivative(pre[(i, 0)]);
        }
        let (param_grads, _) = net_backward(&net, &cache, &out_grad).unwrap();

        let report =
            finite_diff_check(loss_at, &param_grads.flat(), &net.params_flat(), TOL, STEP)
                .unwrap();
        assert!(
            report.pass,
            "head chain seed {} act {}: max rel err {}",
            seed, act, report.max_rel_error
        );
    }
}
