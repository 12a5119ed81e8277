//! Rician mmWave channel realizations for the BS -> STAR-RIS -> user links.
//!
//! All arrays use half-wavelength spacing. The RIS is an `N_h x N_v` UPA whose
//! flat element index is `v * N_h + h`. BS and user arrays are ULAs driven by
//! the cosine of their angle, so angles drawn uniformly on `[0, pi]` cover the
//! whole `[-1, 1]` spatial-frequency range.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{ChannelParams, SystemConfig};
use crate::error::{Error, Result};

/// `[exp(j pi psi k)]` for `k = 0..n_elems`.
pub fn steering_ula(n_elems: usize, psi: f64) -> DVector<Complex64> {
    DVector::from_fn(n_elems, |k, _| Complex64::from_polar(1.0, PI * psi * k as f64))
}

/// UPA steering vector `a_Nv(sin varphi) (x) a_Nh(cos varphi sin phi)`.
pub fn steering_ris(cfg: &SystemConfig, phi: f64, varphi: f64) -> DVector<Complex64> {
    upa_steering(cfg.ris_horizontal, cfg.ris_vertical, phi, varphi)
}

pub(crate) fn upa_steering(n_h: usize, n_v: usize, phi: f64, varphi: f64) -> DVector<Complex64> {
    let vert = steering_ula(n_v, varphi.sin());
    let horiz = steering_ula(n_h, varphi.cos() * phi.sin());
    DVector::from_fn(n_h * n_v, |idx, _| vert[idx / n_h] * horiz[idx % n_h])
}

/// `L (d / d0)^-zeta`.
pub fn path_loss(params: &ChannelParams, d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("path loss needs a positive distance, got {d}")));
    }
    Ok(params.pathloss_ref * (d / params.ref_distance).powf(-params.pathloss_exponent))
}

/// Angles of one propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathAngles {
    /// Elevation angle at the RIS.
    pub ris_phi: f64,
    /// Azimuth angle at the RIS.
    pub ris_varphi: f64,
    /// AOD at the BS or AOA at the user, depending on the link.
    pub endpoint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkAngles {
    pub los: PathAngles,
    pub nlos: Vec<PathAngles>,
    /// Complex NLOS gains, `CN(0, 1/L)` for this link's path count `L`.
    pub gains: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSet {
    pub bs_ris: LinkAngles,
    pub ris_r: LinkAngles,
    pub ris_t: LinkAngles,
}

/// One draw of `(H, G_r, G_t)`.
///
/// `h` is `N x M`. `g_r` / `g_t` are `N x N_l`, so the downlink RIS -> user
/// matrix is `g.adjoint()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: DMatrix<Complex64>,
    pub g_r: DMatrix<Complex64>,
    pub g_t: DMatrix<Complex64>,
    pub beta_q: f64,
    pub beta_r: f64,
    pub beta_t: f64,
    pub angles: Option<AngleSet>,
}

impl ChannelRealization {
    /// Builds a realization from explicit matrices (no angle record, unit path gains).
    pub fn from_matrices(h: DMatrix<Complex64>, g_r: DMatrix<Complex64>, g_t: DMatrix<Complex64>) -> Result<Self> {
        let n = h.nrows();
        if g_r.nrows() != n || g_t.nrows() != n {
            return Err(Error::Dimension(format!(
                "H has {n} RIS rows but G_r has {} and G_t has {}",
                g_r.nrows(),
                g_t.nrows()
            )));
        }
        Ok(Self { h, g_r, g_t, beta_q: 1.0, beta_r: 1.0, beta_t: 1.0, angles: None })
    }

    pub fn zeros(cfg: &SystemConfig) -> Self {
        let n = cfg.ris_elements();
        Self {
            h: DMatrix::zeros(n, cfg.bs_antennas),
            g_r: DMatrix::zeros(n, cfg.user_r_antennas),
            g_t: DMatrix::zeros(n, cfg.user_t_antennas),
            beta_q: 0.0,
            beta_r: 0.0,
            beta_t: 0.0,
            angles: None,
        }
    }

    pub fn bs_antennas(&self) -> usize {
        self.h.ncols()
    }

    pub fn ris_elements(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_finite(&self) -> bool {
        [&self.h, &self.g_r, &self.g_t].iter().all(|m| m.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

/// `CN(0, variance)` with independent `N(0, variance / 2)` real and imaginary parts.
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

fn draw_angles<R: Rng + ?Sized>(rng: &mut R) -> PathAngles {
    PathAngles {
        ris_phi: rng.random::<f64>() * PI,
        ris_varphi: rng.random::<f64>() * PI,
        endpoint: rng.random::<f64>() * PI,
    }
}

fn draw_link<R: Rng + ?Sized>(rng: &mut R, paths: usize) -> LinkAngles {
    let los = draw_angles(rng);
    let mut nlos = Vec::with_capacity(paths);
    let mut gains = Vec::with_capacity(paths);
    for _ in 0..paths {
        nlos.push(draw_angles(rng));
        gains.push(complex_gaussian(rng, 1.0 / paths as f64));
    }
    LinkAngles { los, nlos, gains }
}

/// Rician combination `sqrt(beta) (sqrt(K/(K+1)) LOS + sqrt(1/(K+1)) NLOS)` where every
/// component is the outer product of a RIS-side column and an endpoint-side row.
///
/// `ris_conj` selects which side carries the conjugate: the BS link is
/// `conj(a_RIS) a_M^T`, the user links are stored as `G = (a_Nl^* a_RIS^T)^H = conj(a_RIS) a_Nl^T`.
fn link_matrix(
    link: &LinkAngles,
    n_h: usize,
    n_v: usize,
    endpoint_elems: usize,
    rician_k: f64,
    beta: f64,
) -> DMatrix<Complex64> {
    let los_w = (rician_k / (rician_k + 1.0)).sqrt();
    let nlos_w = (1.0 / (rician_k + 1.0)).sqrt();
    let outer = |p: &PathAngles| {
        let ris = upa_steering(n_h, n_v, p.ris_phi, p.ris_varphi).map(|z| z.conj());
        let end = steering_ula(endpoint_elems, p.endpoint.cos());
        &ris * end.transpose()
    };
    let mut m = outer(&link.los) * Complex64::from(los_w);
    for (p, z) in link.nlos.iter().zip(&link.gains) {
        m += outer(p) * (*z * nlos_w);
    }
    m * Complex64::from(beta.sqrt())
}

/// Draws one channel realization. Every random quantity comes from a ChaCha8
/// stream seeded with `seed`, in a fixed order (BS link, then user r, then user t),
/// so equal seeds give bit-identical matrices and geometry changes alter only the gains.
pub fn draw_channel(cfg: &SystemConfig, params: &ChannelParams, seed: u64) -> Result<ChannelRealization> {
    cfg.validate()?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bs_ris = draw_link(&mut rng, params.paths_bs_ris);
    let ris_r = draw_link(&mut rng, params.paths_ris_r);
    let ris_t = draw_link(&mut rng, params.paths_ris_t);

    let beta_q = path_loss(params, cfg.bs_ris_distance())?;
    let beta_r = path_loss(params, cfg.ris_user_r_distance())?;
    let beta_t = path_loss(params, cfg.ris_user_t_distance())?;
    let (n_h, n_v) = (cfg.ris_horizontal, cfg.ris_vertical);
    let k = params.rician_k;

    let h = link_matrix(&bs_ris, n_h, n_v, cfg.bs_antennas, k, beta_q);
    let g_r = link_matrix(&ris_r, n_h, n_v, cfg.user_r_antennas, k, beta_r);
    let g_t = link_matrix(&ris_t, n_h, n_v, cfg.user_t_antennas, k, beta_t);

    Ok(ChannelRealization { h, g_r, g_t, beta_q, beta_r, beta_t, angles: Some(AngleSet { bs_ris, ris_r, ris_t }) })
}

/// Noiseless LOS matrix of the BS -> RIS link for the recorded angles, without path loss.
pub fn bs_ris_los(cfg: &SystemConfig, angles: &AngleSet) -> DMatrix<Complex64> {
    let los_only = LinkAngles { los: angles.bs_ris.los, nlos: vec![], gains: vec![] };
    link_matrix(&los_only, cfg.ris_horizontal, cfg.ris_vertical, cfg.bs_antennas, 1e300, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;

    fn sys() -> SystemConfig {
        ConfigFile::default().system().unwrap()
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn ula_examples() {
        let a = steering_ula(1, 0.7);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0], Complex64::new(1.0, 0.0));

        let a = steering_ula(2, 1.0);
        assert!(close(a[1], Complex64::new(-1.0, 0.0), 1e-15));

        let a = steering_ula(4, 0.5);
        for (k, z) in a.iter().enumerate() {
            let expected = Complex64::from_polar(1.0, k as f64 * PI / 2.0);
            assert!(close(*z, expected, 1e-15));
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ris_steering_examples() {
        let mut cfg = sys();
        cfg.ris_horizontal = 1;
        cfg.ris_vertical = 1;
        assert_eq!(steering_ris(&cfg, 1.1, 0.3).as_slice(), &[Complex64::new(1.0, 0.0)]);

        let cfg = sys();
        let a = steering_ris(&cfg, 0.0, 0.0);
        assert_eq!(a.len(), 16);
        assert!(a.iter().all(|z| close(*z, Complex64::new(1.0, 0.0), 1e-15)));

        let mut cfg = sys();
        cfg.ris_horizontal = 2;
        cfg.ris_vertical = 2;
        let a = steering_ris(&cfg, PI / 2.0, 0.0);
        let expected = [1.0, -1.0, 1.0, -1.0];
        for (z, e) in a.iter().zip(expected) {
            assert!(close(*z, Complex64::new(e, 0.0), 1e-12));
        }
    }

    #[test]
    fn ris_steering_index_identity() {
        let cfg = sys();
        let (phi, varphi) = (0.77, 2.1);
        let a = steering_ris(&cfg, phi, varphi);
        for v in 0..cfg.ris_vertical {
            for h in 0..cfg.ris_horizontal {
                let phase = PI * (v as f64 * varphi.sin() + h as f64 * varphi.cos() * phi.sin());
                assert!(close(a[v * cfg.ris_horizontal + h], Complex64::from_polar(1.0, phase), 1e-12));
            }
        }
    }

    #[test]
    fn path_loss_examples() {
        let p = ChannelParams::default();
        assert!((path_loss(&p, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((path_loss(&p, 20.0).unwrap() - 2.5e-4).abs() < 1e-15);
        let flat = ChannelParams { pathloss_exponent: 0.0, ..p.clone() };
        assert_eq!(path_loss(&flat, 37.0).unwrap(), 0.1);
        assert!(matches!(path_loss(&p, 0.0), Err(Error::Domain(_))));
        assert!(matches!(path_loss(&p, -3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn draw_is_deterministic_and_shaped() {
        let cfg = sys();
        let p = ChannelParams::default();
        let a = draw_channel(&cfg, &p, 42).unwrap();
        let b = draw_channel(&cfg, &p, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.h.shape(), (16, 8));
        assert_eq!(a.g_r.shape(), (16, 1));
        assert!(a.is_finite());
        let c = draw_channel(&cfg, &p, 43).unwrap();
        assert_ne!(a.h, c.h);
    }

    #[test]
    fn huge_rician_factor_gives_los() {
        let cfg = sys();
        let p = ChannelParams { rician_k: 1e12, ..ChannelParams::default() };
        let ch = draw_channel(&cfg, &p, 5).unwrap();
        let los = bs_ris_los(&cfg, ch.angles.as_ref().unwrap());
        let scaled = &ch.h / Complex64::from(ch.beta_q.sqrt());
        let rel = (&scaled - &los).norm() / los.norm();
        assert!(rel < 1e-5, "relative error {rel}");
    }

    #[test]
    fn zero_rician_factor_is_pure_nlos() {
        let cfg = sys();
        let p = ChannelParams { rician_k: 0.0, ..ChannelParams::default() };
        let ch = draw_channel(&cfg, &p, 5).unwrap();
        let angles = ch.angles.clone().unwrap();
        // rebuild the NLOS sum alone and compare
        let nlos = link_matrix(
            &LinkAngles { los: PathAngles { ris_phi: 0.0, ris_varphi: 0.0, endpoint: 0.0 }, ..angles.bs_ris.clone() },
            4,
            4,
            8,
            0.0,
            ch.beta_q,
        );
        assert!((&ch.h - &nlos).norm() < 1e-15 * nlos.norm().max(1.0));
    }

    #[test]
    fn los_matrix_is_rank_one() {
        let cfg = sys();
        let ch = draw_channel(&cfg, &ChannelParams::default(), 11).unwrap();
        let los = bs_ris_los(&cfg, ch.angles.as_ref().unwrap());
        let sv = los.singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(s[1] < 1e-9 * s[0]);
        // LOS has Frobenius norm^2 exactly N*M
        assert!((los.norm_squared() - 128.0).abs() < 1e-9);
    }

    #[test]
    fn geometry_only_changes_gains() {
        let cfg = sys();
        let p = ChannelParams::default();
        let a = draw_channel(&cfg, &p, 3).unwrap();
        let moved = cfg.with_user_r_distance(40.0).unwrap();
        let b = draw_channel(&moved, &p, 3).unwrap();
        assert_eq!(a.h, b.h);
        assert_eq!(a.g_t, b.g_t);
        let ratio = (b.beta_r / a.beta_r).sqrt();
        assert!((&a.g_r * Complex64::from(ratio) - &b.g_r).norm() < 1e-15);
    }
}
