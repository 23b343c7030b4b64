//! Sampling primitives.
//!
//! Gamma variates are produced on the log scale so that Dirichlet draws with very
//! small concentrations (well below one) neither underflow nor lose mass.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Probabilities below this are floored in sampled transition rows.
pub const PROB_FLOOR: f64 = 1e-12;

/// Log of a Gamma(shape, 1) variate.
///
/// Shapes below one use `G(a) = G(a + 1) * U^(1/a)`.
pub fn log_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0, "gamma shape must be positive, got {shape}");
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("valid shape").sample(rng);
        let u: f64 = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / shape
    }
}

/// Gamma variate with the given shape and rate.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    log_gamma_variate(rng, shape).exp() / rate
}

/// Log of a Beta(a, b) variate.
pub fn log_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let la = log_gamma_variate(rng, a);
    let lb = log_gamma_variate(rng, b);
    la - log_add_exp(la, lb)
}

pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let la = log_gamma_variate(rng, a);
    let lb = log_gamma_variate(rng, b);
    1.0 / (1.0 + (lb - la).exp())
}

#[inline]
pub fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Writes a Dirichlet(`alpha`) draw into `out`, floored at [`PROB_FLOOR`].
pub fn dirichlet_into<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64], out: &mut [f64]) {
    debug_assert_eq!(alpha.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = log_gamma_variate(rng, a);
        max = max.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    let mut floored = false;
    for o in out.iter_mut() {
        *o /= total;
        if *o < PROB_FLOOR {
            *o = PROB_FLOOR;
            floored = true;
        }
    }
    if floored {
        let t: f64 = out.iter().sum();
        out.iter_mut().for_each(|o| *o /= t);
    }
}

pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; alpha.len()];
    dirichlet_into(rng, alpha, &mut out);
    out
}

/// Index drawn with probability proportional to `exp(log_weights)`.
pub fn categorical_log<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|&l| (l - max).exp()).collect();
    categorical(rng, &weights)
}

/// Index drawn with probability proportional to `weights`.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding can leave u marginally above the last weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Normalized probabilities from log weights by max subtraction.
pub fn normalize_log(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|&l| (l - max).exp()).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|x| x / t).collect()
}
