//! Closed-form asymptotics of the spiked model `Y = X + G`, where `G` has iid
//! entries of variance `1/n` and `X` has fixed rank.
//!
//! A population singular value `t` is detectable only when `t > gamma^{1/4}`;
//! the corresponding observed singular value then separates from the noise
//! bulk, whose edge sits at `1 + sqrt(gamma)`.
//!
//! The theory assumes strictly distinct population singular values. Exactly
//! tied observed values are treated here as distinct components; the limits
//! are not guaranteed to describe that case.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, DenoiseError, Result};

/// Aspect ratio `gamma = p / n` of the observed matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AspectRatio(f64);

impl AspectRatio {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(invalid(format!("aspect ratio must be positive and finite, got {gamma}")));
        }
        Ok(Self(gamma))
    }

    /// `p / n` for a `p x n` matrix.
    pub fn from_dims(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("empty matrix shape {rows}x{cols}")));
        }
        Self::new(rows as f64 / cols as f64)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Bulk edge `1 + sqrt(gamma)`.
    #[inline]
    pub fn bulk_edge(self) -> f64 {
        1.0 + self.0.sqrt()
    }

    /// Detection threshold `gamma^{1/4}` on the population singular value.
    #[inline]
    pub fn population_threshold(self) -> f64 {
        self.0.sqrt().sqrt()
    }
}

/// Limiting cosines between empirical and population singular vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cosines {
    pub c: f64,
    pub c_tilde: f64,
    pub s: f64,
    pub s_tilde: f64,
}

/// Population quantities recovered from the observed spectrum, one entry per
/// detected component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeParams {
    pub rank: usize,
    pub lambda: Vec<f64>,
    pub t: Vec<f64>,
    pub c: Vec<f64>,
    pub c_tilde: Vec<f64>,
    pub s: Vec<f64>,
    pub s_tilde: Vec<f64>,
    pub gamma: AspectRatio,
}

impl SpikeParams {
    pub fn empty(gamma: AspectRatio) -> Self {
        Self {
            rank: 0,
            lambda: Vec::new(),
            t: Vec::new(),
            c: Vec::new(),
            c_tilde: Vec::new(),
            s: Vec::new(),
            s_tilde: Vec::new(),
            gamma,
        }
    }

    /// Builds the parameters from population singular values directly,
    /// predicting the observed values with [`forward_singular_value`].
    pub fn from_population(t: &[f64], gamma: AspectRatio) -> Result<Self> {
        let mut out = Self::empty(gamma);
        for (k, &tk) in t.iter().enumerate() {
            if tk <= gamma.population_threshold() {
                return Err(DenoiseError::BelowDetectionThreshold {
                    index: k,
                    value: tk,
                    threshold: gamma.population_threshold(),
                });
            }
            out.push(forward_singular_value(tk, gamma)?, tk, cosines(tk, gamma)?);
        }
        Ok(out)
    }

    fn push(&mut self, lambda: f64, t: f64, cos: Cosines) {
        self.rank += 1;
        self.lambda.push(lambda);
        self.t.push(t);
        self.c.push(cos.c);
        self.c_tilde.push(cos.c_tilde);
        self.s.push(cos.s);
        self.s_tilde.push(cos.s_tilde);
    }

    /// Keeps only the first `rank` components.
    pub fn truncated(&self, rank: usize) -> Self {
        let r = rank.min(self.rank);
        Self {
            rank: r,
            lambda: self.lambda[..r].to_vec(),
            t: self.t[..r].to_vec(),
            c: self.c[..r].to_vec(),
            c_tilde: self.c_tilde[..r].to_vec(),
            s: self.s[..r].to_vec(),
            s_tilde: self.s_tilde[..r].to_vec(),
            gamma: self.gamma,
        }
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {x}")))
    }
}

/// Limit of the observed singular value for a population singular value `t`.
pub fn forward_singular_value(t: f64, gamma: AspectRatio) -> Result<f64> {
    check_positive("t", t)?;
    let g = gamma.value();
    let t2 = t * t;
    if t2 * t2 > g {
        Ok(((t2 + 1.0) * (1.0 + g / t2)).sqrt())
    } else {
        Ok(gamma.bulk_edge())
    }
}

/// Inverse of [`forward_singular_value`] above the bulk edge.
pub fn invert_singular_value(lambda: f64, gamma: AspectRatio) -> Result<f64> {
    check_positive("lambda", lambda)?;
    let edge = gamma.bulk_edge();
    if lambda <= edge {
        return Err(DenoiseError::BelowDetectionThreshold {
            index: 0,
            value: lambda,
            threshold: edge,
        });
    }
    let g = gamma.value();
    let x = lambda * lambda - 1.0 - g;
    // x^2 - 4g = (lambda^2 - (1 - sqrt g)^2)(lambda^2 - (1 + sqrt g)^2), which
    // avoids cancellation just above the edge.
    let sg = g.sqrt();
    let l2 = lambda * lambda;
    let disc = (l2 - (1.0 - sg) * (1.0 - sg)) * (lambda - edge) * (lambda + edge);
    Ok(((x + disc.max(0.0).sqrt()) / 2.0).sqrt())
}

/// Limiting left/right cosines for population singular value `t`.
pub fn cosines(t: f64, gamma: AspectRatio) -> Result<Cosines> {
    check_positive("t", t)?;
    let g = gamma.value();
    let t2 = t * t;
    let t4 = t2 * t2;
    if t4 <= g {
        return Ok(Cosines {
            c: 0.0,
            c_tilde: 0.0,
            s: 1.0,
            s_tilde: 1.0,
        });
    }
    let num = (t4 - g) / t4;
    let c2 = (num / (1.0 + g / t2)).clamp(0.0, 1.0);
    let ct2 = (num / (1.0 + 1.0 / t2)).clamp(0.0, 1.0);
    Ok(Cosines {
        c: c2.sqrt(),
        c_tilde: ct2.sqrt(),
        s: (1.0 - c2).sqrt(),
        s_tilde: (1.0 - ct2).sqrt(),
    })
}

fn check_descending(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("singular values must be finite"));
    }
    if let Some(i) = values.windows(2).position(|w| w[0] < w[1]) {
        return Err(invalid(format!(
            "singular values must be sorted descending (index {} < index {})",
            i,
            i + 1
        )));
    }
    Ok(())
}

/// Number of singular values strictly above `1 + sqrt(gamma) + margin`.
pub fn naive_rank(singular_values: &[f64], gamma: AspectRatio, margin: f64) -> Result<usize> {
    check_descending(singular_values)?;
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(invalid(format!("margin must be nonnegative, got {margin}")));
    }
    let threshold = gamma.bulk_edge() + margin;
    Ok(singular_values.iter().take_while(|&&l| l > threshold).count())
}

/// Recovers `t`, `c`, `c_tilde` for the leading components of the observed
/// spectrum. Without an explicit `rank`, the naive rank (margin 0) is used.
pub fn estimate_spike_params(
    singular_values: &[f64],
    gamma: AspectRatio,
    rank: Option<usize>,
) -> Result<SpikeParams> {
    check_descending(singular_values)?;
    let rank = match rank {
        Some(r) if r > singular_values.len() => {
            return Err(invalid(format!(
                "requested rank {r} exceeds the {} available singular values",
                singular_values.len()
            )))
        }
        Some(r) => r,
        None => naive_rank(singular_values, gamma, 0.0)?,
    };
    let edge = gamma.bulk_edge();
    let mut out = SpikeParams::empty(gamma);
    for (k, &lambda) in singular_values[..rank].iter().enumerate() {
        if lambda <= edge {
            return Err(DenoiseError::BelowDetectionThreshold {
                index: k,
                value: lambda,
                threshold: edge,
            });
        }
        let t = invert_singular_value(lambda, gamma)?;
        out.push(lambda, t, cosines(t, gamma)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(x: f64) -> AspectRatio {
        AspectRatio::new(x).unwrap()
    }

    #[test]
    fn forward_examples() {
        assert!((forward_singular_value(2.0, g(1.0)).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(forward_singular_value(0.5, g(1.0)).unwrap(), 2.0);
        for gamma in [0.1, 0.5, 1.0, 2.0, 4.0] {
            let th = g(gamma).population_threshold();
            let at = forward_singular_value(th, g(gamma)).unwrap();
            assert!((at - (1.0 + gamma.sqrt())).abs() < 1e-12);
            let above = forward_singular_value(th * (1.0 + 1e-9), g(gamma)).unwrap();
            assert!((above - at).abs() < 1e-6);
        }
        assert!(forward_singular_value(-1.0, g(1.0)).is_err());
        assert!(forward_singular_value(0.0, g(1.0)).is_err());
        assert!(AspectRatio::new(0.0).is_err());
        assert!(AspectRatio::new(f64::INFINITY).is_err());
    }

    #[test]
    fn invert_examples() {
        assert!((invert_singular_value(2.5, g(1.0)).unwrap() - 2.0).abs() < 1e-14);
        match invert_singular_value(2.0, g(1.0)) {
            Err(DenoiseError::BelowDetectionThreshold { .. }) => {}
            other => panic!("expected threshold error, got {other:?}"),
        }
    }

    #[test]
    fn cosine_examples() {
        let c = cosines(2.0, g(1.0)).unwrap();
        assert!((c.c * c.c - 0.75).abs() < 1e-15);
        assert!((c.c_tilde * c.c_tilde - 0.75).abs() < 1e-15);
        let below = cosines(0.9, g(1.0)).unwrap();
        assert_eq!((below.c, below.c_tilde), (0.0, 0.0));
        let big = cosines(1e6, g(1.0)).unwrap();
        assert!(1.0 - big.c < 1e-11 && big.s < 1e-5);
    }

    #[test]
    fn naive_rank_examples() {
        let lam = [2.5, 2.1, 1.9];
        assert_eq!(naive_rank(&lam, g(1.0), 0.0).unwrap(), 2);
        assert_eq!(naive_rank(&lam, g(1.0), 0.2).unwrap(), 1);
        assert_eq!(naive_rank(&[1.9, 1.5], g(1.0), 0.0).unwrap(), 0);
        assert_eq!(naive_rank(&[2.0, 1.5], g(1.0), 0.0).unwrap(), 0);
        assert!(naive_rank(&[1.0, 2.0], g(1.0), 0.0).is_err());
        assert!(naive_rank(&lam, g(1.0), -0.1).is_err());
    }

    #[test]
    fn estimate_examples() {
        let sp = estimate_spike_params(&[2.5], g(1.0), Some(1)).unwrap();
        assert!((sp.t[0] - 2.0).abs() < 1e-14);
        assert!((sp.c[0].powi(2) - 0.75).abs() < 1e-14);
        match estimate_spike_params(&[2.0], g(1.0), Some(1)) {
            Err(DenoiseError::BelowDetectionThreshold { index: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match estimate_spike_params(&[3.0, 1.9], g(1.0), Some(2)) {
            Err(DenoiseError::BelowDetectionThreshold { index: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let auto = estimate_spike_params(&[2.5, 1.5], g(1.0), None).unwrap();
        assert_eq!(auto.rank, 1);
    }

    #[test]
    fn ties_are_distinct_components() {
        let sp = estimate_spike_params(&[3.0, 3.0], g(0.5), None).unwrap();
        assert_eq!(sp.rank, 2);
        assert_eq!(sp.t[0], sp.t[1]);
    }

    #[test]
    fn roundtrip_grid() {
        for gamma in [0.1, 0.5, 1.0, 2.0, 4.0] {
            let gm = g(gamma);
            let lo = (gm.population_threshold() * 1.001).ln();
            let hi = 100f64.ln();
            for i in 0..=400 {
                let t = (lo + (hi - lo) * i as f64 / 400.0).exp();
                let lam = forward_singular_value(t, gm).unwrap();
                let back = invert_singular_value(lam, gm).unwrap();
                assert!((back - t).abs() <= 1e-10 * t, "gamma={gamma} t={t} back={back}");
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_above_threshold(gamma in 0.05f64..5.0, a in 1.001f64..50.0, step in 1e-3f64..5.0) {
            let gm = g(gamma);
            let t0 = gm.population_threshold() * a;
            let t1 = t0 + step;
            prop_assert!(forward_singular_value(t1, gm).unwrap() > forward_singular_value(t0, gm).unwrap());
            let (c0, c1) = (cosines(t0, gm).unwrap(), cosines(t1, gm).unwrap());
            prop_assert!(c1.c > c0.c);
            prop_assert!(c1.c_tilde > c0.c_tilde);
        }

        #[test]
        fn cosines_normalized(gamma in 0.05f64..5.0, t in 0.01f64..1e3) {
            let c = cosines(t, g(gamma)).unwrap();
            prop_assert!((c.c * c.c + c.s * c.s - 1.0).abs() <= 1e-14);
            prop_assert!((c.c_tilde * c.c_tilde + c.s_tilde * c.s_tilde - 1.0).abs() <= 1e-14);
            for x in [c.c, c.c_tilde, c.s, c.s_tilde] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}
