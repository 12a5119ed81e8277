//! STAR-RIS element configuration under energy splitting, plus the DFT phase
//! codebook and amplitude grid used for pilot sounding.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Tolerance on `alpha_r^2 + alpha_t^2 = 1`.
pub const COUPLING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// User `r`, served by reflection.
    Reflection,
    /// User `t`, served by transmission.
    Transmission,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Reflection, Side::Transmission];

    pub fn label(self) -> &'static str {
        match self {
            Side::Reflection => "r",
            Side::Transmission => "t",
        }
    }
}

/// Maps any finite angle onto `[0, 2 pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2 pi for tiny negative inputs
    if w >= TWO_PI {
        0.0
    } else {
        w
    }
}

/// Per-element phases and amplitudes for both sides of the surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarRisConfig {
    pub theta_r: Vec<f64>,
    pub theta_t: Vec<f64>,
    pub alpha_r: Vec<f64>,
    pub alpha_t: Vec<f64>,
}

impl StarRisConfig {
    /// Builds a config from phases and reflection amplitudes, deriving `alpha_t = sqrt(1 - alpha_r^2)`.
    /// Phases are wrapped onto `[0, 2 pi)`.
    pub fn from_alpha_r(theta_r: &[f64], theta_t: &[f64], alpha_r: &[f64]) -> Result<Self> {
        let n = theta_r.len();
        if theta_t.len() != n || alpha_r.len() != n {
            return Err(Error::Dimension(format!(
                "theta_r has {n} entries, theta_t {}, alpha_r {}",
                theta_t.len(),
                alpha_r.len()
            )));
        }
        let cfg = Self {
            theta_r: theta_r.iter().copied().map(wrap_phase).collect(),
            theta_t: theta_t.iter().copied().map(wrap_phase).collect(),
            alpha_r: alpha_r.to_vec(),
            alpha_t: alpha_r.iter().map(|a| (1.0 - a * a).max(0.0).sqrt()).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same phase and amplitude level on every element.
    pub fn uniform(n: usize, theta_r: f64, theta_t: f64, alpha_r: f64) -> Result<Self> {
        Self::from_alpha_r(&vec![theta_r; n], &vec![theta_t; n], &vec![alpha_r; n])
    }

    pub fn len(&self) -> usize {
        self.theta_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_r.is_empty()
    }

    pub fn theta(&self, side: Side) -> &[f64] {
        match side {
            Side::Reflection => &self.theta_r,
            Side::Transmission => &self.theta_t,
        }
    }

    pub fn alpha(&self, side: Side) -> &[f64] {
        match side {
            Side::Reflection => &self.alpha_r,
            Side::Transmission => &self.alpha_t,
        }
    }

    fn check_lengths(&self) -> Result<()> {
        let n = self.theta_r.len();
        if self.theta_t.len() != n || self.alpha_r.len() != n || self.alpha_t.len() != n {
            return Err(Error::Dimension("STAR-RIS config vectors differ in length".into()));
        }
        Ok(())
    }

    fn check_side(&self, side: Side) -> Result<()> {
        for (n, (&a, &t)) in self.alpha(side).iter().zip(self.theta(side)).enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Constraint {
                    index: n,
                    message: format!("alpha_{} = {a} outside (0, 1]", side.label()),
                });
            }
            if !(t.is_finite() && (0.0..TWO_PI).contains(&t)) {
                return Err(Error::Constraint {
                    index: n,
                    message: format!("theta_{} = {t} outside [0, 2pi)", side.label()),
                });
            }
        }
        Ok(())
    }

    fn check_coupling(&self) -> Result<()> {
        for (n, (a, b)) in self.alpha_r.iter().zip(&self.alpha_t).enumerate() {
            let s = a * a + b * b;
            if !((s - 1.0).abs() <= COUPLING_TOL) {
                return Err(Error::Constraint {
                    index: n,
                    message: format!("alpha_r^2 + alpha_t^2 = {s}, expected 1"),
                });
            }
        }
        Ok(())
    }

    /// Checks every invariant on both sides.
    pub fn validate(&self) -> Result<()> {
        self.check_lengths()?;
        self.check_coupling()?;
        self.check_side(Side::Reflection)?;
        self.check_side(Side::Transmission)
    }

    /// Diagonal of `Phi_side`, unchecked.
    pub fn coefficients(&self, side: Side) -> Vec<Complex64> {
        self.alpha(side).iter().zip(self.theta(side)).map(|(&a, &t)| Complex64::from_polar(a, t)).collect()
    }

    /// `diag(alpha_n e^{j theta_n})` for one side. Fails on the first element that
    /// breaks the energy-splitting coupling or that side's amplitude/phase range.
    pub fn phi_matrix(&self, side: Side) -> Result<DMatrix<Complex64>> {
        self.check_lengths()?;
        self.check_coupling()?;
        self.check_side(side)?;
        Ok(DMatrix::from_diagonal(&DVector::from_vec(self.coefficients(side))))
    }

    /// Recovers `(alpha, theta)` for both sides from the two diagonals.
    pub fn from_diagonals(phi_r: &[Complex64], phi_t: &[Complex64]) -> Result<Self> {
        if phi_r.len() != phi_t.len() {
            return Err(Error::Dimension("diagonals differ in length".into()));
        }
        let cfg = Self {
            theta_r: phi_r.iter().map(|z| wrap_phase(z.arg())).collect(),
            theta_t: phi_t.iter().map(|z| wrap_phase(z.arg())).collect(),
            alpha_r: phi_r.iter().map(|z| z.norm()).collect(),
            alpha_t: phi_t.iter().map(|z| z.norm()).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// DFT phase codebook for an `N_h x N_v` surface.
///
/// Codeword `j = n_v * N_h + n_h` has entry `v * N_h + h` equal to
/// `exp(-j 2 pi (h n_h / N_h + v n_v / N_v))`, the same element ordering as
/// the RIS steering vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCodebook {
    pub n_h: usize,
    pub n_v: usize,
    pub codewords: Vec<DVector<Complex64>>,
}

impl PhaseCodebook {
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    /// `(n_h, n_v)` of a flat codeword index.
    pub fn grid_index(&self, j: usize) -> (usize, usize) {
        (j % self.n_h, j / self.n_h)
    }

    pub fn flat_index(&self, n_h: usize, n_v: usize) -> usize {
        n_v * self.n_h + n_h
    }

    /// Element phases of codeword `j`, wrapped onto `[0, 2 pi)`.
    pub fn phases(&self, j: usize) -> Vec<f64> {
        self.codewords[j].iter().map(|z| wrap_phase(z.arg())).collect()
    }

    /// One row per codeword: `flat_index,n_h,n_v,phases` with phases `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("flat_index,n_h,n_v,phases\n");
        for j in 0..self.len() {
            let (h, v) = self.grid_index(j);
            let phases: Vec<String> = self.phases(j).iter().map(|p| format!("{p:.17e}")).collect();
            let _ = writeln!(out, "{j},{h},{v},{}", phases.join(";"));
        }
        out
    }
}

fn dft_vector(n: usize, theta: f64) -> Vec<Complex64> {
    (0..n).map(|k| Complex64::from_polar(1.0, -theta * k as f64)).collect()
}

pub fn dft_codebook(n_h: usize, n_v: usize) -> PhaseCodebook {
    let mut codewords = Vec::with_capacity(n_h * n_v);
    for nv in 0..n_v {
        for nh in 0..n_h {
            let horiz = dft_vector(n_h, TWO_PI * nh as f64 / n_h as f64);
            let vert = dft_vector(n_v, TWO_PI * nv as f64 / n_v as f64);
            codewords.push(DVector::from_fn(n_h * n_v, |idx, _| vert[idx / n_h] * horiz[idx % n_h]));
        }
    }
    PhaseCodebook { n_h, n_v, codewords }
}

/// Preset reflection amplitude levels, uniform in `alpha_r^2` and excluding 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeGrid {
    pub alpha_r: Vec<f64>,
    pub alpha_t: Vec<f64>,
}

impl AmplitudeGrid {
    pub fn len(&self) -> usize {
        self.alpha_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_r.is_empty()
    }

    /// Index of the level whose `alpha_r^2` is closest to one half (lowest index on ties).
    pub fn middle_level(&self) -> usize {
        let mut best = 0;
        for (k, a) in self.alpha_r.iter().enumerate() {
            if (a * a - 0.5).abs() < (self.alpha_r[best].powi(2) - 0.5).abs() - 1e-15 {
                best = k;
            }
        }
        best
    }
}

/// `alpha_r^2 = k / (K_amp + 1)` for `k = 1..=K_amp`.
pub fn amplitude_grid(k_amp: usize) -> AmplitudeGrid {
    let alpha_r: Vec<f64> = (1..=k_amp).map(|k| (k as f64 / (k_amp + 1) as f64).sqrt()).collect();
    let alpha_t = alpha_r.iter().map(|a| (1.0 - a * a).sqrt()).collect();
    AmplitudeGrid { alpha_r, alpha_t }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_phi() {
        let mut cfg = StarRisConfig::uniform(4, 0.0, 0.0, 0.6).unwrap();
        cfg.alpha_r = vec![1.0; 4];
        cfg.alpha_t = vec![0.0; 4];
        let phi = cfg.phi_matrix(Side::Reflection).unwrap();
        assert_eq!(phi, DMatrix::identity(4, 4));
        match cfg.phi_matrix(Side::Transmission) {
            Err(Error::Constraint { index, .. }) => assert_eq!(index, 0),
            other => panic!("expected constraint error, got {other:?}"),
        }
    }

    #[test]
    fn three_four_five_coupling() {
        let cfg = StarRisConfig::from_alpha_r(&[PI / 2.0], &[0.0], &[0.6]).unwrap();
        assert!((cfg.alpha_t[0] - 0.8).abs() < 1e-15);
        let phi = cfg.phi_matrix(Side::Reflection).unwrap();
        assert!((phi[(0, 0)] - Complex64::new(0.0, 0.6)).norm() < 1e-15);
    }

    #[test]
    fn constraint_error_names_element() {
        let mut cfg = StarRisConfig::uniform(5, 0.1, 0.2, 0.5).unwrap();
        cfg.alpha_t[3] = 0.1;
        match cfg.phi_matrix(Side::Reflection) {
            Err(Error::Constraint { index, .. }) => assert_eq!(index, 3),
            other => panic!("expected constraint error, got {other:?}"),
        }
        let mut cfg = StarRisConfig::uniform(5, 0.1, 0.2, 0.5).unwrap();
        cfg.theta_t[2] = TWO_PI;
        assert!(matches!(cfg.phi_matrix(Side::Transmission), Err(Error::Constraint { index: 2, .. })));
    }

    #[test]
    fn codebook_examples() {
        let c = dft_codebook(1, 1);
        assert_eq!(c.len(), 1);
        assert_eq!(c.codewords[0].as_slice(), &[Complex64::new(1.0, 0.0)]);

        let c = dft_codebook(2, 1);
        assert_eq!(c.len(), 2);
        assert!((c.codewords[0][1] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((c.codewords[1][1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);

        let c = dft_codebook(2, 2);
        assert_eq!(c.len(), 4);
        for i in 0..4 {
            for k in 0..4 {
                let g = c.codewords[i].dotc(&c.codewords[k]);
                let expected = if i == k { 4.0 } else { 0.0 };
                assert!((g - Complex64::new(expected, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn codebook_zero_is_all_ones_and_unit_modulus() {
        let c = dft_codebook(4, 3);
        assert_eq!(c.len(), 12);
        assert!(c.codewords[0].iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        for w in &c.codewords {
            assert!(w.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
        assert_eq!(c.grid_index(c.flat_index(3, 2)), (3, 2));
    }

    #[test]
    fn codebook_matches_steering_ordering() {
        // codeword (n_h, n_v) is the conjugate steering vector at matching spatial frequencies
        let c = dft_codebook(4, 2);
        let j = c.flat_index(1, 1);
        let steer = crate::channel::upa_steering(4, 2, (-0.5f64).asin(), 0.0);
        // varphi = 0 gives vertical frequency 0, so compare against codeword (n_h, 0)
        let j0 = c.flat_index(1, 0);
        for (a, b) in c.codewords[j0].iter().zip(steer.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_ne!(j, j0);
    }

    #[test]
    fn csv_export_has_one_row_per_codeword() {
        let csv = dft_codebook(2, 2).to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(2).unwrap().starts_with("1,1,0,"));
    }

    #[test]
    fn amplitude_grid_examples() {
        let g = amplitude_grid(1);
        assert!((g.alpha_r[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((g.alpha_t[0] - 0.5f64.sqrt()).abs() < 1e-15);

        let g = amplitude_grid(3);
        let sq: Vec<f64> = g.alpha_r.iter().map(|a| a * a).collect();
        for (s, e) in sq.iter().zip([0.25, 0.5, 0.75]) {
            assert!((s - e).abs() < 1e-15);
        }
        assert_eq!(g.middle_level(), 1);
        assert_eq!(amplitude_grid(8).middle_level(), 3);

        let g = amplitude_grid(8);
        for (a, b) in g.alpha_r.iter().zip(&g.alpha_t) {
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
            assert!(*a > 0.0 && *a < 1.0 && *b > 0.0 && *b < 1.0);
        }
        assert!(g.alpha_r.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn phi_round_trip(
            thetas in prop::collection::vec((0.0..TWO_PI, 0.0..TWO_PI, 0.01f64..0.99), 1..20)
        ) {
            let tr: Vec<f64> = thetas.iter().map(|t| t.0).collect();
            let tt: Vec<f64> = thetas.iter().map(|t| t.1).collect();
            let ar: Vec<f64> = thetas.iter().map(|t| t.2).collect();
            let cfg = StarRisConfig::from_alpha_r(&tr, &tt, &ar).unwrap();
            let pr = cfg.phi_matrix(Side::Reflection).unwrap();
            let pt = cfg.phi_matrix(Side::Transmission).unwrap();
            for n in 0..cfg.len() {
                let s = pr[(n, n)].norm_sqr() + pt[(n, n)].norm_sqr();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            let back = StarRisConfig::from_diagonals(
                pr.diagonal().as_slice(), pt.diagonal().as_slice()).unwrap();
            for n in 0..cfg.len() {
                prop_assert!((back.alpha_r[n] - cfg.alpha_r[n]).abs() < 1e-12);
                let d = wrap_phase(back.theta_r[n] - cfg.theta_r[n]);
                prop_assert!(d.min(TWO_PI - d) < 1e-12);
                let d = wrap_phase(back.theta_t[n] - cfg.theta_t[n]);
                prop_assert!(d.min(TWO_PI - d) < 1e-12);
            }
        }
    }
}
