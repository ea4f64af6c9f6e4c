//! Acceptance gate: ten numbered criteria, each printing a single PASS/FAIL
//! line. Each criterion is self-contained and uses independent reference
//! computations (exhaustive scans, finite differences, Monte-Carlo) rather
//! than the code paths it validates.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use scaleface::embeddings::{
    generate_synthetic, normalize, read_embeddings, sample_centroids, write_embeddings,
    CentroidMatrix, EmbeddingSet, PairSet, SyntheticSpec,
};
use scaleface::evaluation::{reject_verification, tar_at_far};
use scaleface::experiments::{
    exp_crossview_retrieval, exp_heteroscedastic_verification, exp_mu_improvement,
};
use scaleface::gaussian::{analytic_error_prob, simulate_error_prob, GaussianModelSpec};
use scaleface::gradnet::{finite_diff_check, net_backward, net_forward, DenseNet};
use scaleface::losses::{
    angular_margin_loss_free, arcface_loss, scaleface_loss, softmax_loss, LossConfig,
    DEFAULT_COSINE_CLAMP,
};
use scaleface::scale_head::{
    read_head, train_head, write_head, ActivationFamily, ScaleHeadConfig, TrainConfig,
};
use scaleface::similarity::{cosine_pairs, modified_similarity};
use scaleface::Matrix;

fn report(criterion: u32, ok: bool, detail: &str) {
    println!("criterion {}: {} — {}", criterion, if ok { "PASS" } else { "FAIL" }, detail);
    assert!(ok, "criterion {} failed: {}", criterion, detail);
}

struct Fixture {
    embeddings: Matrix,
    centroids: Matrix,
    labels: Vec<u32>,
    scales: Vec<f64>,
}

fn fixture(seed: u64, n: usize, d: usize, c: usize) -> Fixture {
    let embeddings = sample_centroids(d, n as u32, seed.wrapping_add(1));
    let centroids = sample_centroids(d, c as u32, seed.wrapping_add(2));
    let labels: Vec<u32> = (0..n as u32).map(|i| (i.wrapping_mul(7).wrapping_add(seed as u32)) % c as u32).collect();
    let scales: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64) * 1.3 + seed as f64) % 9.0).collect();
    Fixture { embeddings, centroids, labels, scales }
}

#[test]
fn criterion_01_reduction_identities() {
    let start = Instant::now();
    let fx = fixture(1, 6, 8, 4);
    let cm = CentroidMatrix::new(fx.centroids.clone(), false).unwrap();

    // per-sample loss with constant scales equals the fixed-scale loss
    let margin = 0.4;
    let s = 7.5;
    let per_sample =
        scaleface_loss(&fx.embeddings, &cm, &fx.labels, &vec![s; 6], margin).unwrap();
    let fixed = arcface_loss(
        &fx.embeddings,
        &cm,
        &fx.labels,
        &LossConfig::fixed(s, margin).unwrap(),
    )
    .unwrap();
    let a = (per_sample.loss - fixed.loss).abs();

    // fixed-scale loss at margin 0, scale 1 equals softmax on unit inputs
    let arc = arcface_loss(&fx.embeddings, &cm, &fx.labels, &LossConfig::fixed(1.0, 0.0).unwrap())
        .unwrap();
    let soft = softmax_loss(&fx.embeddings, &cm.matrix().clone(), &fx.labels).unwrap();
    let b = (arc.loss - soft.loss).abs();

    // shifted similarity at mu = 0 and unit scales is the cosine, bitwise
    let set = EmbeddingSet::new(fx.embeddings.clone(), fx.labels.clone(), 4).unwrap();
    let unit = normalize(&set).unwrap();
    let pairs = PairSet::new(vec![(0, 1, 1), (2, 3, 0), (4, 5, 1), (0, 5, 0)], 6).unwrap();
    let cosine = cosine_pairs(&unit, &pairs).unwrap();
    let ones = vec![1.0; pairs.len()];
    let modified = modified_similarity(&unit, &pairs, &ones, &ones, 0.0).unwrap();
    let bitwise = cosine
        .scores
        .iter()
        .zip(&modified.scores)
        .all(|(x, y)| x.to_bits() == y.to_bits());

    let ok = a < 1e-12 && b < 1e-12 && bitwise && start.elapsed().as_secs_f64() < 1.0;
    report(
        1,
        ok,
        &format!(
            "constant-scale gap {:.1e}, margin-0 gap {:.1e}, mu=0 bitwise {}, {:.2}s",
            a,
            b,
            bitwise,
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_gradient_suite() {
    let start = Instant::now();
    const STEP: f64 = 1e-4;
    const TOL: f64 = 1e-4;
    let mut configs = 0usize;
    let mut max_rel: f64 = 0.0;

    // 18 configurations: six fixtures, each checking embedding, centroid,
    // and per-sample scale gradients of the margin loss
    for seed in 0..6u64 {
        let fx = fixture(seed, 5, 8, 3);
        let margin = 0.1 + 0.1 * seed as f64;
        let loss_of = |emb: &Matrix, cent: &Matrix, sc: &[f64]| {
            angular_margin_loss_free(emb, cent, &fx.labels, sc, margin, DEFAULT_COSINE_CLAMP)
                .unwrap()
        };
        let base = loss_of(&fx.embeddings, &fx.centroids, &fx.scales);

        let emb = finite_diff_check(
            |p| {
                let m = Matrix::from_vec(5, 8, p.to_vec())?;
                Ok(loss_of(&m, &fx.centroids, &fx.scales).loss)
            },
            base.grad_embeddings.data(),
            fx.embeddings.data(),
            TOL,
            STEP,
        )
        .unwrap();
        let cent = finite_diff_check(
            |p| {
                let m = Matrix::from_vec(3, 8, p.to_vec())?;
                Ok(loss_of(&fx.embeddings, &m, &fx.scales).loss)
            },
            base.grad_centroids.data(),
            fx.centroids.data(),
            TOL,
            STEP,
        )
        .unwrap();
        let sc = finite_diff_check(
            |p| Ok(loss_of(&fx.embeddings, &fx.centroids, p).loss),
            base.grad_scales.as_ref().unwrap(),
            &fx.scales,
            TOL,
            STEP,
        )
        .unwrap();
        for (tag, r) in [("emb", &emb), ("cent", &cent), ("sc", &sc)] {
            configs += 1;
            if r.max_rel_error > TOL {
                eprintln!("c2 debug: seed {} {} rel {:.3e}", seed, tag, r.max_rel_error);
            }
            max_rel = max_rel.max(r.max_rel_error);
        }
    }

    // 4 configurations: head parameters through each activation family
    let acts = [
        (40u64, ActivationFamily::Exp),
        (31, ActivationFamily::SigmC(64.0)),
        (32, ActivationFamily::ShiftedSigm(32.0, 64.0)),
        (33, ActivationFamily::SigmC(32.0)),
    ];
    for &(seed, ref act) in acts.iter() {
        let fx = fixture(seed, 6, 8, 3);
        let net = DenseNet::mlp(8, &[8, 8], 1, seed).unwrap();
        let margin = 0.3;
        let (pre, cache) = net_forward(&net, &fx.embeddings).unwrap();
        let scales: Vec<f64> = pre.data().iter().map(|&v| act.apply(v)).collect();
        let base = angular_margin_loss_free(
            &fx.embeddings,
            &fx.centroids,
            &fx.labels,
            &scales,
            margin,
            DEFAULT_COSINE_CLAMP,
        )
        .unwrap();
        let gs = base.grad_scales.as_ref().unwrap();
        let mut out_grad = Matrix::zeros(6, 1);
        for i in 0..6 {
            out_grad[(i, 0)] = gs[i] * act.derivative(pre[(i, 0)]);
        }
        let (param_grads, _) = net_backward(&net, &cache, &out_grad).unwrap();
        let r = finite_diff_check(
            |p| {
                let mut probe = net.clone();
                probe.set_params_flat(p)?;
                let (pre, _) = net_forward(&probe, &fx.embeddings)?;
                let sc: Vec<f64> = pre.data().iter().map(|&v| act.apply(v)).collect();
                Ok(angular_margin_loss_free(
                    &fx.embeddings,
                    &fx.centroids,
                    &fx.labels,
                    &sc,
                    margin,
                    DEFAULT_COSINE_CLAMP,
                )?
                .loss)
            },
            &param_grads.flat(),
            &net.params_flat(),
            TOL,
            STEP,
        )
        .unwrap();
        configs += 1;
        if r.max_rel_error > TOL {
            eprintln!("c2 debug: head seed {} act {} rel {:.3e}", seed, act, r.max_rel_error);
        }
        max_rel = max_rel.max(r.max_rel_error);
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok = configs >= 20 && max_rel <= TOL && elapsed < 30.0;
    report(
        2,
        ok,
        &format!("{} configurations, max rel error {:.2e}, {:.1}s", configs, max_rel, elapsed),
    );
}

#[test]
fn criterion_03_gaussian_oracle() {
    let start = Instant::now();
    let n = 1_000_000usize;
    let mut worst_z: f64 = 0.0;
    let mut monotone = true;
    for (ai, &a) in [0.3, 0.6, 0.9].iter().enumerate() {
        let mut prev = f64::INFINITY;
        for (si, &s) in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0].iter().enumerate() {
            let p = analytic_error_prob(s, 1.0, a).unwrap();
            monotone &= p < prev;
            prev = p;
            let spec = GaussianModelSpec::new(128, s, 1.0, a, 7).unwrap();
            let sim =
                simulate_error_prob(&spec, n, 1000 + (ai * 6 + si) as u64).unwrap();
            // standard error under the analytic null, floored by the
            // empirical one so zero-count cells are not over-trusted
            let se = (p * (1.0 - p) / n as f64).sqrt().max(sim.std_err);
            let z = if se > 0.0 { (sim.estimate - p).abs() / se } else { 0.0 };
            worst_z = worst_z.max(z);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst_z <= 3.0 && monotone && elapsed < 60.0;
    report(
        3,
        ok,
        &format!(
            "18 grid points, worst |z| {:.2}, strictly decreasing in scale {}, {:.1}s",
            worst_z, monotone, elapsed
        ),
    );
}

/// Independent brute-force reference: scan every observed score ascending,
/// skip thresholds strictly inside the negatives' range that are not
/// negatives themselves, return the first that fits the budget.
fn exhaustive_tar(scores: &[f64], labels: &[u8], far: f64) -> (f64, f64) {
    let negs: Vec<f64> =
        scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(&s, _)| s).collect();
    let pos: Vec<f64> =
        scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(&s, _)| s).collect();
    let min_neg = negs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_neg = negs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.push(f64::INFINITY);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &t in &candidates {
        if t > min_neg && t < max_neg && !negs.contains(&t) {
            continue;
        }
        if negs.iter().filter(|&&s| s >= t).count() as f64 / negs.len() as f64 <= far {
            let tar = pos.iter().filter(|&&s| s >= t).count() as f64 / pos.len() as f64;
            return (tar, t);
        }
    }
    unreachable!("infinite sentinel always fits");
}

#[test]
fn criterion_04_tar_far_exactness() {
    let start = Instant::now();
    // simple deterministic congruential stream, independent of the library RNG
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut mismatches = 0usize;
    for trial in 0..1000 {
        let n_pos = 1 + (next() % 50) as usize;
        let n_neg = 1 + (next() % 50) as usize;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n_pos {
            scores.push((next() % 21) as f64 / 10.0 - 1.0);
            labels.push(1u8);
        }
        for _ in 0..n_neg {
            scores.push((next() % 21) as f64 / 10.0 - 1.0);
            labels.push(0u8);
        }
        let far = [0.0, 0.001, 0.01, 0.05, 0.1, 0.3, 1.0][trial % 7];
        let (tar, tau) = tar_at_far(&scores, &labels, far).unwrap();
        let (otar, otau) = exhaustive_tar(&scores, &labels, far);
        if tar != otar || tau != otau {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = mismatches == 0 && elapsed < 10.0;
    report(4, ok, &format!("1000 instances, {} mismatches, {:.1}s", mismatches, elapsed));
}

#[test]
fn criterion_05_rejection_golden() {
    let scores = [0.9, 0.2, 0.8, 0.1];
    let labels = [1u8, 1, 0, 0];
    let uncertainties = [0.1, 0.9, 0.95, 0.2];
    let curve =
        reject_verification(&scores, &labels, &uncertainties, 0.5, &[0.0, 0.5]).unwrap();
    let ok = curve.tar_values == vec![0.5, 1.0]
        && curve.auc_raw == 0.375
        && curve.auc_normalized == 0.75;
    report(
        5,
        ok,
        &format!(
            "curve ({}, {}), raw AUC {}, normalized AUC {}",
            curve.tar_values[0], curve.tar_values[1], curve.auc_raw, curve.auc_normalized
        ),
    );
}

#[test]
fn criterion_06_heteroscedastic_experiment() {
    let start = Instant::now();
    let mut ok_seeds = 0;
    let mut per_seed_ok = true;
    for seed in 0..10u64 {
        let t0 = Instant::now();
        let r = exp_heteroscedastic_verification(seed).unwrap();
        let spearman = r.get("spearman").unwrap();
        let oracle = r.get("auc_oracle_far001").unwrap();
        let scale = r.get("auc_scale_far001").unwrap();
        let random = r.get("auc_random_far001").unwrap();
        if spearman >= 0.5 && oracle >= scale && scale - random >= 0.01 {
            ok_seeds += 1;
        }
        per_seed_ok &= t0.elapsed().as_secs_f64() < 120.0;
    }
    let ok = ok_seeds >= 8 && per_seed_ok;
    report(
        6,
        ok,
        &format!("{}/10 seeds satisfy ordering and correlation, {:.0}s total", ok_seeds, start.elapsed().as_secs_f64()),
    );
}

#[test]
fn criterion_07_mu_improvement() {
    let mut every_seed_within_bound = true;
    let mut above_bound = 0;
    for seed in 0..10u64 {
        let r = exp_mu_improvement(seed).unwrap();
        let diff = r.get("improvement").unwrap();
        every_seed_within_bound &= diff >= -0.005;
        if diff > -0.005 {
            above_bound += 1;
        }
    }
    let ok = every_seed_within_bound && above_bound >= 8;
    report(
        7,
        ok,
        &format!(
            "shifted similarity within 0.005 of cosine on all seeds {}, strictly above the bound on {}/10",
            every_seed_within_bound, above_bound
        ),
    );
}

#[test]
fn criterion_08_crossview_retrieval() {
    let mut every_seed_within_bound = true;
    let mut above_bound = 0;
    for seed in 0..10u64 {
        let r = exp_crossview_retrieval(seed).unwrap();
        let diff = r.get("improvement").unwrap();
        every_seed_within_bound &= diff >= -0.005;
        if diff > -0.005 {
            above_bound += 1;
        }
    }
    let ok = every_seed_within_bound && above_bound >= 8;
    report(
        8,
        ok,
        &format!(
            "dual-head similarity within 0.005 of cosine on all seeds {}, strictly above the bound on {}/10",
            every_seed_within_bound, above_bound
        ),
    );
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scaleface-cli"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().expect("spawn CLI");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every non-manifest file in the two directories must be byte-identical.
/// Manifests record the out-dir and so legitimately differ between runs.
fn assert_dirs_match(a: &Path, b: &Path) {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| !n.ends_with(".manifest"))
        .collect();
    names.sort();
    assert!(!names.is_empty(), "no outputs in {}", a.display());
    for name in names {
        let x = std::fs::read(a.join(&name)).unwrap();
        let y = std::fs::read(b.join(&name))
            .unwrap_or_else(|_| panic!("{} missing in rerun", name));
        assert_eq!(x, y, "{} differs between original run and manifest rerun", name);
    }
}

/// Runs a command into dir1, reruns it from dir1's manifest into dir2 with a
/// different --threads, and demands byte-identical outputs.
fn check_reproducible(base: &Path, command: &str, args: &[&str]) {
    let dir1 = base.join(format!("{}_run1", command));
    let dir2 = base.join(format!("{}_run2", command));
    let mut first = cli();
    first.arg(command).args(args).arg("--out-dir").arg(&dir1);
    run_ok(&mut first);
    let manifest = dir1.join(format!("{}.manifest", command));
    assert!(manifest.exists(), "missing manifest for {}", command);
    let mut second = cli();
    second
        .arg(command)
        .arg("--config")
        .arg(&manifest)
        .arg("--out-dir")
        .arg(&dir2)
        .arg("--threads")
        .arg("4");
    run_ok(&mut second);
    assert_dirs_match(&dir1, &dir2);
}

#[test]
fn criterion_09_determinism_and_io() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path();

    // shared small inputs
    let synth_dir = base.join("inputs");
    run_ok(cli().args([
        "synth", "--d", "8", "--classes", "3", "--per-class", "10", "--seed", "7",
    ])
    .arg("--out-dir")
    .arg(&synth_dir));
    let emb = synth_dir.join("synthetic.emb");
    let emb_s = emb.to_str().unwrap();

    let head_dir = base.join("head");
    run_ok(cli()
        .args(["train-head", "--embeddings", emb_s, "--epochs", "3", "--hidden-width", "16"])
        .arg("--out-dir")
        .arg(&head_dir));
    let head = head_dir.join("head.sfh");
    let head_s = head.to_str().unwrap();

    let scores = base.join("scores.csv");
    std::fs::write(
        &scores,
        "index_a,index_b,label,score\n0,1,1,0.9\n0,2,1,0.7\n1,2,0,0.3\n1,3,0,0.1\n",
    )
    .unwrap();
    let scores_s = scores.to_str().unwrap();
    let unc = base.join("unc.txt");
    std::fs::write(&unc, "0.1\n0.9\n0.95\n0.2\n").unwrap();
    let unc_s = unc.to_str().unwrap();

    // every command: run, rerun from manifest with different --threads
    check_reproducible(base, "synth", &["--d", "8", "--classes", "3", "--per-class", "10", "--seed", "7"]);
    check_reproducible(base, "train-head", &["--embeddings", emb_s, "--epochs", "3", "--hidden-width", "16"]);
    check_reproducible(base, "predict-scale", &["--embeddings", emb_s, "--head", head_s]);
    check_reproducible(base, "calibrate-mu", &["--scores", scores_s]);
    check_reproducible(base, "verify", &["--scores", scores_s, "--far", "0.25"]);
    check_reproducible(base, "reject-curve", &["--scores", scores_s, "--uncertainties", unc_s, "--far", "0.5"]);
    check_reproducible(base, "simulate-gaussian", &["--samples", "20000"]);
    check_reproducible(base, "gradcheck", &[]);
    check_reproducible(base, "experiments", &["--scenario", "mu-improvement", "--seed", "3"]);

    // embedding and head checkpoints round-trip bit-exactly
    let set = read_embeddings(&emb).unwrap();
    let emb2 = base.join("rt.emb");
    write_embeddings(&emb2, &set).unwrap();
    assert_eq!(std::fs::read(&emb).unwrap(), std::fs::read(&emb2).unwrap());
    let loaded = read_head(&head).unwrap();
    let head2 = base.join("rt.sfh");
    write_head(&head2, &loaded).unwrap();
    assert_eq!(std::fs::read(&head).unwrap(), std::fs::read(&head2).unwrap());

    report(9, true, "9 commands bit-identical from manifests across --threads; files round-trip");
}

#[test]
fn criterion_10_design_grid_smoke_test() {
    let start = Instant::now();
    let spec = SyntheticSpec {
        dim: 32,
        num_classes: 10,
        samples_per_class: 200,
        scale_min: 1.0,
        scale_max: 10.0,
        noise_sigma: 1.0,
        seed: 0,
    };
    let unit = normalize(&generate_synthetic(&spec).unwrap().set).unwrap();
    let activations = [
        ActivationFamily::Exp,
        ActivationFamily::SigmC(32.0),
        ActivationFamily::SigmC(64.0),
        ActivationFamily::ShiftedSigm(32.0, 64.0),
        ActivationFamily::ReluC(1.0),
        ActivationFamily::ReluC(8.0),
    ];
    let mut failures = Vec::new();
    for depth in 1..=4usize {
        for act in activations {
            let config =
                ScaleHeadConfig { hidden_layers: depth, hidden_width: 128, activation: act };
            let tc = TrainConfig { seed: 0, ..Default::default() };
            match train_head(&unit, config, 0.5, &tc) {
                Ok(r) => {
                    let first = r.epoch_losses[0];
                    let last = *r.epoch_losses.last().unwrap();
                    if !(last < first) {
                        failures.push(format!("depth {} {}: {} -> {}", depth, act, first, last));
                    }
                }
                Err(e) => failures.push(format!("depth {} {}: {}", depth, act, e)),
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = failures.is_empty() && elapsed < 900.0;
    report(
        10,
        ok,
        &format!("24 configurations trained, loss decreased in all, {:.0}s (failures: {:?})", elapsed, failures),
    );
}
