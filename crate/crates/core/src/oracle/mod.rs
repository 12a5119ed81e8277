//! Achievable-rate evaluation and the perfect-CSI solvers that produce
//! training labels and reference curves.

mod baseline;
mod bcd;
mod exhaustive;

pub use baseline::random_baseline;
pub use bcd::{bcd_optimize, BcdOutput, BcdSettings};
pub use exhaustive::{exhaustive_oracle, exhaustive_search_size, w_codebook_candidates, GRID_LIMIT};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::ris::{wrap_phase, Side, StarRisConfig};

/// Relative slack allowed on `||w||^2 <= P_t`.
pub const POWER_TOL: f64 = 1e-9;

/// How the two users' rates combine into the shared optimization objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    SumRate,
    MinRate,
}

impl Objective {
    pub fn combine(self, rate_r: f64, rate_t: f64) -> f64 {
        match self {
            Objective::SumRate => rate_r + rate_t,
            Objective::MinRate => rate_r.min(rate_t),
        }
    }
}

/// `G_side^H Phi_side H`, an `N_l x M` matrix.
pub fn effective_channel(ch: &ChannelRealization, ris: &StarRisConfig, side: Side) -> DMatrix<Complex64> {
    let g = match side {
        Side::Reflection => &ch.g_r,
        Side::Transmission => &ch.g_t,
    };
    let phi = ris.coefficients(side);
    let mut scaled = ch.h.clone();
    for (n, mut row) in scaled.row_iter_mut().enumerate() {
        row *= phi[n];
    }
    g.ad_mul(&scaled)
}

/// `log2(1 + ||H_eff w||^2 / sigma2)` bits/s/Hz for a single stream.
pub fn rate(
    ch: &ChannelRealization,
    ris: &StarRisConfig,
    w: &DVector<Complex64>,
    side: Side,
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("noise power must be positive, got {sigma2}")));
    }
    if w.len() != ch.bs_antennas() {
        return Err(Error::Dimension(format!(
            "precoder has {} entries, BS has {} antennas",
            w.len(),
            ch.bs_antennas()
        )));
    }
    let gain = (effective_channel(ch, ris, side) * w).norm_squared();
    Ok(rate_from_gain(gain, sigma2))
}

#[inline]
pub(crate) fn rate_from_gain(gain: f64, sigma2: f64) -> f64 {
    (gain / sigma2).ln_1p() / std::f64::consts::LN_2
}

/// Precoder, surface configuration and the rates they achieve.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingSolution {
    pub w: DVector<Complex64>,
    pub ris: StarRisConfig,
    pub rate_r: f64,
    pub rate_t: f64,
    pub objective: f64,
}

impl PrecodingSolution {
    /// Evaluates both users' rates for `(w, ris)` on a channel.
    pub fn evaluate(
        ch: &ChannelRealization,
        ris: StarRisConfig,
        w: DVector<Complex64>,
        sigma2: f64,
        objective: Objective,
    ) -> Result<Self> {
        let rate_r = rate(ch, &ris, &w, Side::Reflection, sigma2)?;
        let rate_t = rate(ch, &ris, &w, Side::Transmission, sigma2)?;
        Ok(Self { w, ris, rate_r, rate_t, objective: objective.combine(rate_r, rate_t) })
    }

    pub fn sum_rate(&self) -> f64 {
        self.rate_r + self.rate_t
    }

    /// Power and surface constraints.
    pub fn check_feasible(&self, transmit_power: f64) -> Result<()> {
        let p = self.w.norm_squared();
        if p > transmit_power * (1.0 + POWER_TOL) {
            return Err(Error::Constraint {
                index: 0,
                message: format!("precoder power {p} exceeds budget {transmit_power}"),
            });
        }
        self.ris.validate()
    }

    /// Rate-preserving canonical form used for regression labels: `w` is rotated so
    /// its largest-magnitude entry is real and non-negative, and each side's phases
    /// are rotated so element 0 has phase 0. Each of the three rotations multiplies
    /// an effective channel product by a unit-modulus scalar, which no rate sees.
    pub fn canonicalized(&self) -> Self {
        let mut out = self.clone();
        out.w = canonical_precoder(&self.w);
        if !self.ris.is_empty() {
            let (r0, t0) = (self.ris.theta_r[0], self.ris.theta_t[0]);
            out.ris.theta_r = self.ris.theta_r.iter().map(|t| wrap_phase(t - r0)).collect();
            out.ris.theta_t = self.ris.theta_t.iter().map(|t| wrap_phase(t - t0)).collect();
        }
        out
    }
}

/// Rotates `w` so its largest-magnitude entry (first on ties) is real non-negative.
pub fn canonical_precoder(w: &DVector<Complex64>) -> DVector<Complex64> {
    let mut best = 0;
    for (i, z) in w.iter().enumerate() {
        if z.norm() > w[best].norm() {
            best = i;
        }
    }
    if w.is_empty() || w[best].norm() == 0.0 {
        return w.clone();
    }
    let rot = Complex64::from_polar(1.0, -w[best].arg());
    let mut out = w * rot;
    out[best] = Complex64::new(out[best].norm(), 0.0);
    out
}

/// Dominant eigenvector of a Hermitian matrix (unit norm).
pub(crate) fn dominant_eigenvector(a: &DMatrix<Complex64>) -> DVector<Complex64> {
    let n = a.nrows();
    if n == 1 {
        return DVector::from_element(1, Complex64::new(1.0, 0.0));
    }
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let mut best = 0;
    for i in 1..n {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let v = eig.eigenvectors.column(best).into_owned();
    let norm = v.norm();
    if norm > 0.0 && norm.is_finite() {
        v / Complex64::from(norm)
    } else {
        let mut e = DVector::zeros(n);
        e[0] = Complex64::new(1.0, 0.0);
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_channel;
    use crate::config::{ChannelParams, ConfigFile};
    use std::f64::consts::PI;

    #[test]
    fn scaled_identity_phi() {
        let cfg = ConfigFile::default().system().unwrap();
        let ch = draw_channel(&cfg, &ChannelParams::default(), 2).unwrap();
        let (a, th) = (0.6, 0.9);
        let ris = StarRisConfig::uniform(16, th, 0.0, a).unwrap();
        let heff = effective_channel(&ch, &ris, Side::Reflection);
        let direct = ch.g_r.adjoint() * &ch.h * Complex64::from_polar(a, th);
        assert!((&heff - &direct).norm() < 1e-12 * direct.norm());
    }

    #[test]
    fn scalar_effective_channel() {
        let h = DMatrix::from_row_slice(1, 2, &[Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.1)]);
        let g = Complex64::new(0.3, -0.7);
        let ch = ChannelRealization::from_matrices(
            h.clone(),
            DMatrix::from_element(1, 1, g),
            DMatrix::from_element(1, 1, g),
        )
        .unwrap();
        let ris = StarRisConfig::from_alpha_r(&[1.2], &[0.0], &[0.8]).unwrap();
        let heff = effective_channel(&ch, &ris, Side::Reflection);
        let expected = &h * (g.conj() * Complex64::from_polar(0.8, 1.2));
        assert!((&heff - &expected).norm() < 1e-15);
    }

    #[test]
    fn zero_h_gives_zero() {
        let cfg = ConfigFile::default().system().unwrap();
        let ch = ChannelRealization::zeros(&cfg);
        let ris = StarRisConfig::uniform(16, 0.0, 0.0, 0.5).unwrap();
        assert_eq!(effective_channel(&ch, &ris, Side::Transmission).norm(), 0.0);
    }

    fn scalar_channel(gain: f64) -> ChannelRealization {
        ChannelRealization::from_matrices(
            DMatrix::from_element(1, 1, Complex64::new(gain.sqrt(), 0.0)),
            DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
            DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
        )
        .unwrap()
    }

    #[test]
    fn rate_examples() {
        // alpha = 1 via raw fields: |H_eff w|^2 / sigma2 = gain
        let mut ris = StarRisConfig::uniform(1, 0.0, 0.0, 0.5).unwrap();
        ris.alpha_r = vec![1.0];
        let w = DVector::from_element(1, Complex64::new(1.0, 0.0));
        let r = |g: f64| rate(&scalar_channel(g), &ris, &w, Side::Reflection, 1.0).unwrap();
        assert_eq!(r(0.0), 0.0);
        assert!((r(1.0) - 1.0).abs() < 1e-15);
        assert!((r(3.0) - 2.0).abs() < 1e-15);
        assert!(matches!(rate(&scalar_channel(1.0), &ris, &w, Side::Reflection, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rate_ignores_global_phase() {
        let cfg = ConfigFile::default().system().unwrap();
        let ch = draw_channel(&cfg, &ChannelParams::default(), 4).unwrap();
        let ris = StarRisConfig::uniform(16, 0.4, 2.0, 0.7).unwrap();
        let w = DVector::from_fn(8, |i, _| Complex64::new(i as f64, 1.0 - i as f64) * 0.1);
        for side in Side::BOTH {
            let a = rate(&ch, &ris, &w, side, cfg.noise_power).unwrap();
            let b = rate(&ch, &ris, &(&w * Complex64::from_polar(1.0, 2.3)), side, cfg.noise_power).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_scaling_consistency() {
        // doubling sigma2 together with |H_eff w|^2 keeps the SNR and the rate
        let cfg = ConfigFile::default().system().unwrap();
        let ch = draw_channel(&cfg, &ChannelParams::default(), 6).unwrap();
        let ris = StarRisConfig::uniform(16, 1.0, 2.0, 0.6).unwrap();
        let w = DVector::from_element(8, Complex64::new(0.3, 0.1));
        let mut ch2 = ch.clone();
        ch2.h *= Complex64::from(2f64.sqrt());
        let a = rate(&ch, &ris, &w, Side::Reflection, cfg.noise_power).unwrap();
        let b = rate(&ch2, &ris, &w, Side::Reflection, 2.0 * cfg.noise_power).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn canonical_forms_preserve_rates() {
        let cfg = ConfigFile::default().system().unwrap();
        let ch = draw_channel(&cfg, &ChannelParams::default(), 9).unwrap();
        let thetas: Vec<f64> = (0..16).map(|n| (n as f64 * 1.3) % (2.0 * PI)).collect();
        let ris = StarRisConfig::from_alpha_r(&thetas, &thetas.iter().map(|t| t * 0.5).collect::<Vec<_>>(), &[0.6; 16])
            .unwrap();
        let w = DVector::from_fn(8, |i, _| Complex64::new((i as f64).sin(), (i as f64).cos()));
        let sol = PrecodingSolution::evaluate(&ch, ris, w, cfg.noise_power, Objective::SumRate).unwrap();
        let can = sol.canonicalized();
        let again =
            PrecodingSolution::evaluate(&ch, can.ris.clone(), can.w.clone(), cfg.noise_power, Objective::SumRate)
                .unwrap();
        assert!((again.rate_r - sol.rate_r).abs() < 1e-9);
        assert!((again.rate_t - sol.rate_t).abs() < 1e-9);
        assert_eq!(can.ris.theta_r[0], 0.0);
        let big = can.w.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(can.w.iter().any(|z| z.im == 0.0 && z.re == big));
        assert_eq!(can.canonicalized(), can);
    }
}
