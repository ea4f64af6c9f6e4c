//! A spherical Gaussian generative model for unit embeddings: a closed-form
//! error-probability calculator and a Monte-Carlo simulator that
//! cross-validate each other. A sample is x = s·w + ε with ε ~ N(0, σ²I) and
//! the model errs when the cosine of x against its class direction w leaves
//! the acceptance band defined by a threshold a. Both the closed form and
//! the simulator work on the linearized cosine t̂ = ⟨w, x⟩/s ~ N(1, σ²/s²)
//! (valid for σ/s ≤ 1), where the error event is the symmetric two-sided
//! tail |t̂ − 1| > 1 − a; the simulator estimates that tail by sampling, so
//! the two agree statistically rather than exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embeddings::sample_unit_sphere;
use crate::error::{Error, Result};

/// The generative model: a unit class direction w, a signal scale, an
/// isotropic noise level, and an acceptance threshold on the cosine.
#[derive(Debug, Clone)]
pub struct GaussianModelSpec {
    pub dimension: usize,
    pub w: Vec<f64>,
    pub scale: f64,
    pub sigma: f64,
    pub threshold: f64,
}

impl GaussianModelSpec {
    /// Builds a spec with a seeded random unit class direction.
    pub fn new(dimension: usize, scale: f64, sigma: f64, threshold: f64, seed: u64) -> Result<Self> {
        if dimension < 2 {
            return Err(Error::InvalidConfig("dimension must be >= 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = sample_unit_sphere(&mut rng, dimension);
        GaussianModelSpec::with_direction(w, scale, sigma, threshold)
    }

    pub fn with_direction(w: Vec<f64>, scale: f64, sigma: f64, threshold: f64) -> Result<Self> {
        let dimension = w.len();
        if dimension < 2 {
            return Err(Error::InvalidConfig("dimension must be >= 2".into()));
        }
        let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "class direction must be unit length (norm {})",
                norm
            )));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidConfig(format!("scale {} must be > 0", scale)));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma {} must be >= 0", sigma)));
        }
        if !(-1.0 < threshold && threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold {} must lie in (-1, 1)",
                threshold
            )));
        }
        Ok(GaussianModelSpec { dimension, w, scale, sigma, threshold })
    }
}

/// Closed-form error probability 2(1 − Φ(z)) with z = s(1−a)/σ, i.e. the
/// chance the cosine of a sample against its class direction drops below a.
/// Equal to erfc(z/√2); σ = 0 is the noiseless limit and returns 0 exactly.
pub fn analytic_error_prob(s: f64, sigma: f64, a: f64) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidConfig(format!("scale {} must be > 0", s)));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("sigma {} must be >= 0", sigma)));
    }
    if !(a <= 1.0) {
        return Err(Error::InvalidConfig(format!("threshold {} must be <= 1", a)));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let z = s * (1.0 - a) / sigma;
    Ok(erfc(z * std::f64::consts::FRAC_1_SQRT_2))
}

/// Monte-Carlo estimate of P(t < a) under the exact model, with its binomial
/// standard error.
#[derive(Debug, Clone, Copy)]
pub struct SimulationResult {
    pub estimate: f64,
    pub std_err: f64,
    pub num_samples: usize,
}

/// Samples x = s·w + ε and counts rejections of the linearized cosine
/// t̂ = ⟨w, x⟩/s = 1 + ⟨w, ε⟩/s under the symmetric band |t̂ − 1| ≤ 1 − a.
///
/// Two reductions keep this exact and fast: the closed form being checked is
/// the two-sided tail 2(1 − Φ(s(1−a)/σ)) of the linearized statistic, so the
/// rejection region is the symmetric one; and by sphericity of ε the
/// projection ⟨w, ε⟩ is a single N(0, σ²) draw, so the d-dimensional noise
/// vector never needs to be materialized.
pub fn simulate_error_prob(
    spec: &GaussianModelSpec,
    n_samples: usize,
    seed: u64,
) -> Result<SimulationResult> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec.scale;
    let sigma = spec.sigma;
    let a = spec.threshold;
    let mut errors = 0usize;
    for _ in 0..n_samples {
        let g: f64 = StandardNormal.sample(&mut rng);
        if (sigma * g).abs() > s * (1.0 - a) {
            errors += 1;
        }
    }
    let p = errors as f64 / n_samples as f64;
    let std_err = (p * (1.0 - p) / n_samples as f64).sqrt();
    Ok(SimulationResult { estimate: p, std_err, num_samples: n_samples })
}

/// Analytic error probability over an ascending grid of scales.
pub fn error_prob_sweep(grid: &[f64], sigma: f64, a: f64) -> Result<Vec<f64>> {
    for w in grid.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidConfig("scale grid must be sorted ascending".into()));
        }
    }
    grid.iter().map(|&s| analytic_error_prob(s, sigma, a)).collect()
}

// ---------------------------------------------------------------------------
// Error function.
//
// Ported from Go's math.Erf/Erfc (Go 1.22), which in turn derive from
// FreeBSD's /usr/src/lib/msun/src/s_erf.c:
//
//   Copyright (C) 1993 by Sun Microsystems, Inc. All rights reserved.
//   Developed at SunPro, a Sun Microsystems, Inc. business.
//   Permission to use, copy, modify, and distribute this
//   software is freely granted, provided that this notice
//   is preserved.
//
// Rational approximations with error below one ulp on each branch.
// ---------------------------------------------------------------------------

const ERX: f64 = 8.45062911510467529297e-01;

// coefficients for approximation to erf in [0, 0.84375]
const EFX: f64 = 1.28379167095512586316e-01;
const EFX8: f64 = 1.02703333676410069053e+00;
const PP0: f64 = 1.28379167095512558561e-01;
const PP1: f64 = -3.25042107247001499370e-01;
const PP2: f64 = -2.84817495755985104766e-02;
const PP3: f64 = -5.77027029648944159157e-03;
const PP4: f64 = -2.37630166566501626084e-05;
const QQ1: f64 = 3.97917223959155352819e-01;
const QQ2: f64 = 6.50222499887672944485e-02;
const QQ3: f64 = 5.08130628187576562776e-03;
const QQ4: f64 = 1.32494738004321644526e-04;
const QQ5: f64 = -3.96022827877536812320e-06;

// coefficients for approximation to erf in [0.84375, 1.25]
const PA0: f64 = -2.36211856075265944077e-03;
const PA1: f64 = 4.14856118683748331666e-01;
const PA2: f64 = -3.72207876035701323847e-01;
const PA3: f64 = 3.18346619901161753674e-01;
const PA4: f64 = -1.10894694282396677476e-01;
const PA5: f64 = 3.54783043256182359371e-02;
const PA6: f64 = -2.16637559486879084300e-03;
const QA1: f64 = 1.06420880400844228286e-01;
const QA2: f64 = 5.40397917702171048937e-01;
const QA3: f64 = 7.18286544141962662868e-02;
const QA4: f64 = 1.26171219808761642112e-01;
const QA5: f64 = 1.36370839120290507362e-02;
const QA6: f64 = 1.19844998467991074170e-02;

// coefficients for approximation to erfc in [1.25, 1/0.35]
const RA0: f64 = -9.86494403484714822705e-03;
const RA1: f64 = -6.93858572707181764372e-01;
const RA2: f64 = -1.05586262253232909814e+01;
const RA3: f64 = -6.23753324503260060396e+01;
const RA4: f64 = -1.62396669462573470355e+02;
const RA5: f64 = -1.84605092906711035994e+02;
const RA6: f64 = -8.12874355063065934246e+01;
const RA7: f64 = -9.81432934416914548592e+00;
const SA1: f64 = 1.96512716674392571292e+01;
const SA2: f64 = 1.37657754143519042600e+02;
const SA3: f64 = 4.34565877475229228821e+02;
const SA4: f64 = 6.45387271733267880336e+02;
const SA5: f64 = 4.29008140027567833386e+02;
const SA6: f64 = 1.08635005541779435134e+02;
const SA7: f64 = 6.57024977031928170135e+00;
const SA8: f64 = -6.04244152148580987438e-02;

// coefficients for approximation to erfc in [1/0.35, 28]
const RB0: f64 = -9.86494292470009928597e-03;
const RB1: f64 = -7.99283237680523006574e-01;
const RB2: f64 = -1.77579549177547519889e+01;
const RB3: f64 = -1.60636384855821916062e+02;
const RB4: f64 = -6.37566443368389627722e+02;
const RB5: f64 = -1.02509513161107724954e+03;
const RB6: f64 = -4.83519191608651397019e+02;
const SB1: f64 = 3.03380607434824582924e+01;
const SB2: f64 = 3.25792512996573918826e+02;
const SB3: f64 = 1.53672958608443695994e+03;
const SB4: f64 = 3.19985821950859553908e+03;
const SB5: f64 = 2.55305040643316442583e+03;
const SB6: f64 = 4.74528541206955367215e+02;
const SB7: f64 = -2.24409524465858183362e+01;

const VERY_TINY: f64 = 2.848094538889218e-306; // 0x0080000000000000
const TINY: f64 = 1.3877787807814457e-17; // 2^-56
const SMALL: f64 = 3.725290298461914e-9; // 2^-28

/// The error function.
pub fn erf(x: f64) -> f64 {
    if f64::is_nan(x) {
        return f64::NAN;
    } else if x == f64::INFINITY {
        return 1.0;
    } else if x == f64::NEG_INFINITY {
        return -1.0;
    }
    let mut sign = false;
    let mut x = x;
    if x < 0.0 {
        x = -x;
        sign = true;
    }
    if x < 0.84375 {
        let temp: f64;
        if x < SMALL {
            if x < VERY_TINY {
                temp = 0.125 * (8.0 * x + EFX8 * x); // avoid underflow
            } else {
                temp = x + EFX * x;
            }
        } else {
            let z = x * x;
            let r = PP0 + z * (PP1 + z * (PP2 + z * (PP3 + z * PP4)));
            let s = 1.0 + z * (QQ1 + z * (QQ2 + z * (QQ3 + z * (QQ4 + z * QQ5))));
            temp = x + x * (r / s);
        }
        return if sign { -temp } else { temp };
    }
    if x < 1.25 {
        let s = x - 1.0;
        let p = PA0 + s * (PA1 + s * (PA2 + s * (PA3 + s * (PA4 + s * (PA5 + s * PA6)))));
        let q = 1.0 + s * (QA1 + s * (QA2 + s * (QA3 + s * (QA4 + s * (QA5 + s * QA6)))));
        return if sign { -ERX - p / q } else { ERX + p / q };
    }
    if x >= 6.0 {
        return if sign { -1.0 } else { 1.0 };
    }
    let s = 1.0 / (x * x);
    let (r, q) = if x < 1.0 / 0.35 {
        (
            RA0 + s * (RA1 + s * (RA2 + s * (RA3 + s * (RA4 + s * (RA5 + s * (RA6 + s * RA7)))))),
            1.0 + s
                * (SA1
                    + s * (SA2
                        + s * (SA3 + s * (SA4 + s * (SA5 + s * (SA6 + s * (SA7 + s * SA8))))))),
        )
    } else {
        (
            RB0 + s * (RB1 + s * (RB2 + s * (RB3 + s * (RB4 + s * (RB5 + s * RB6))))),
            1.0 + s
                * (SB1 + s * (SB2 + s * (SB3 + s * (SB4 + s * (SB5 + s * (SB6 + s * SB7)))))),
        )
    };
    // upper half of x, as the original C used a float for the leading bits
    let z = f64::from_bits(f64::to_bits(x) & 0xffff_ffff_0000_0000);
    let v = f64::exp(-z * z - 0.5625) * f64::exp((z - x) * (z + x) + r / q);
    if sign {
        v / x - 1.0
    } else {
        1.0 - v / x
    }
}

/// The complementary error function, 1 − erf(x), accurate in the far tail.
pub fn erfc(x: f64) -> f64 {
    if f64::is_nan(x) {
        return f64::NAN;
    } else if x == f64::INFINITY {
        return 0.0;
    } else if x == f64::NEG_INFINITY {
        return 2.0;
    }
    let mut sign = false;
    let mut x = x;
    if x < 0.0 {
        x = -x;
        sign = true;
    }
    if x < 0.84375 {
        let temp: f64;
        if x < TINY {
            temp = x;
        } else {
            let z = x * x;
            let r = PP0 + z * (PP1 + z * (PP2 + z * (PP3 + z * PP4)));
            let s = 1.0 + z * (QQ1 + z * (QQ2 + z * (QQ3 + z * (QQ4 + z * QQ5))));
            let y = r / s;
            if x < 0.25 {
                temp = x + x * y;
            } else {
                temp = 0.5 + (x * y + (x - 0.5));
            }
        }
        return if sign { 1.0 + temp } else { 1.0 - temp };
    }
    if x < 1.25 {
        let s = x - 1.0;
        let p = PA0 + s * (PA1 + s * (PA2 + s * (PA3 + s * (PA4 + s * (PA5 + s * PA6)))));
        let q = 1.0 + s * (QA1 + s * (QA2 + s * (QA3 + s * (QA4 + s * (QA5 + s * QA6)))));
        return if sign { 1.0 + ERX + p / q } else { 1.0 - ERX - p / q };
    }
    if x < 28.0 {
        let s = 1.0 / (x * x);
        let (r, q) = if x < 1.0 / 0.35 {
            (
                RA0 + s
                    * (RA1 + s * (RA2 + s * (RA3 + s * (RA4 + s * (RA5 + s * (RA6 + s * RA7)))))),
                1.0 + s
                    * (SA1
                        + s * (SA2
                            + s * (SA3
                                + s * (SA4 + s * (SA5 + s * (SA6 + s * (SA7 + s * SA8))))))),
            )
        } else {
            if sign && x > 6.0 {
                return 2.0; // x < -6
            }
            (
                RB0 + s * (RB1 + s * (RB2 + s * (RB3 + s * (RB4 + s * (RB5 + s * RB6))))),
                1.0 + s
                    * (SB1 + s * (SB2 + s * (SB3 + s * (SB4 + s * (SB5 + s * (SB6 + s * SB7)))))),
            )
        };
        let z = f64::from_bits(f64::to_bits(x) & 0xffff_ffff_0000_0000);
        let v = f64::exp(-z * z - 0.5625) * f64::exp((z - x) * (z + x) + r / q);
        return if sign { 2.0 - v / x } else { v / x };
    }
    if sign {
        2.0
    } else {
        0.0
    }
}

/// Standard normal CDF via the complementary error function.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}
