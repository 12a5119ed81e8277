//! Uplink pilot sounding: orthogonal pilots, the pilot/codeword/amplitude sweep
//! and the resulting `M x N_p x N x K_amp` received tensor.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{complex_gaussian, ChannelRealization};
use crate::config::SystemConfig;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::ris::{AmplitudeGrid, PhaseCodebook, StarRisConfig};

/// Pilot matrix `P` of shape `(N_r + N_t) x N_p`; rows `0..N_r` belong to user `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotPlan {
    pub p: DMatrix<Complex64>,
    pub n_r: usize,
    pub n_t: usize,
    /// Energy each user radiates per pilot symbol.
    pub pilot_power: f64,
}

impl PilotPlan {
    pub fn n_pilots(&self) -> usize {
        self.p.ncols()
    }

    /// Wraps an arbitrary pilot matrix (rows must be `n_r + n_t`).
    pub fn from_matrix(p: DMatrix<Complex64>, n_r: usize, n_t: usize) -> Result<Self> {
        if p.nrows() != n_r + n_t {
            return Err(Error::Dimension(format!(
                "pilot matrix has {} rows, users have {} antennas",
                p.nrows(),
                n_r + n_t
            )));
        }
        let pilot_power =
            (0..p.ncols()).map(|i| (0..n_r).map(|a| p[(a, i)].norm_sqr()).sum::<f64>()).fold(0.0, f64::max);
        Ok(Self { p, n_r, n_t, pilot_power })
    }

    /// Pilot vector `p_i` split into the user-r and user-t parts.
    pub fn split(&self, i: usize) -> (DVector<Complex64>, DVector<Complex64>) {
        let col = self.p.column(i);
        (col.rows(0, self.n_r).into_owned(), col.rows(self.n_r, self.n_t).into_owned())
    }
}

/// Unitary `N_p`-point DFT with each user's rows rescaled so the user radiates
/// `pilot_power` per symbol. Rows stay mutually orthogonal; `P P^H = c I` when `N_r = N_t`.
pub fn make_pilots(cfg: &SystemConfig) -> PilotPlan {
    let (n_r, n_t) = (cfg.user_r_antennas, cfg.user_t_antennas);
    let n_p = n_r + n_t;
    let p = DMatrix::from_fn(n_p, n_p, |a, b| {
        let users = if a < n_r { n_r } else { n_t };
        let scale = (cfg.pilot_power * n_p as f64 / users as f64).sqrt() / (n_p as f64).sqrt();
        Complex64::from_polar(scale, -2.0 * PI * (a * b) as f64 / n_p as f64)
    });
    PilotPlan { p, n_r, n_t, pilot_power: cfg.pilot_power }
}

/// One sweep step: pilot `i`, codeword `j`, amplitude level `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SweepStep {
    pub pilot: usize,
    pub codeword: usize,
    pub level: usize,
}

/// Ordered sweep: pilot outermost, then codeword, then amplitude level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoundingSchedule {
    pub n_pilots: usize,
    pub n_codewords: usize,
    pub n_levels: usize,
    pub steps: Vec<SweepStep>,
}

impl SoundingSchedule {
    pub fn canonical(n_pilots: usize, n_codewords: usize, n_levels: usize) -> Self {
        let mut steps = Vec::with_capacity(n_pilots * n_codewords * n_levels);
        for pilot in 0..n_pilots {
            for codeword in 0..n_codewords {
                for level in 0..n_levels {
                    steps.push(SweepStep { pilot, codeword, level });
                }
            }
        }
        Self { n_pilots, n_codewords, n_levels, steps }
    }

    /// Position of a step in the canonical order; also its noise stream id.
    pub fn canonical_index(&self, s: SweepStep) -> usize {
        (s.pilot * self.n_codewords + s.codeword) * self.n_levels + s.level
    }
}

/// Received pilot tensor, shape `(M, N_p, N, K_amp)`, stored in C order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedPilotTensor {
    pub shape: [usize; 4],
    pub data: Vec<Complex64>,
    pub noise_seed: u64,
}

impl ReceivedPilotTensor {
    pub fn zeros(shape: [usize; 4], noise_seed: u64) -> Self {
        Self { shape, data: vec![Complex64::new(0.0, 0.0); shape.iter().product()], noise_seed }
    }

    #[inline]
    pub fn index(&self, a: usize, i: usize, j: usize, k: usize) -> usize {
        let [_, n_p, n, k_amp] = self.shape;
        ((a * n_p + i) * n + j) * k_amp + k
    }

    pub fn get(&self, a: usize, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[self.index(a, i, j, k)]
    }

    pub fn set_fiber(&mut self, i: usize, j: usize, k: usize, y: &DVector<Complex64>) {
        for (a, v) in y.iter().enumerate() {
            let idx = self.index(a, i, j, k);
            self.data[idx] = *v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Real view of shape `(2M, N_p, N, K_amp)`: real parts in channels `0..M`,
    /// imaginary parts in `M..2M`.
    pub fn real_view(&self) -> Vec<f64> {
        let m = self.shape[0];
        let block = self.data.len() / m.max(1);
        let mut out = vec![0.0; 2 * self.data.len()];
        for (idx, z) in self.data.iter().enumerate() {
            let a = idx / block;
            let rest = idx % block;
            out[a * block + rest] = z.re;
            out[(a + m) * block + rest] = z.im;
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|z| z * factor).collect(), noise_seed: self.noise_seed }
    }

    pub fn to_container(&self, config_hash: &str) -> Container {
        let mut c = Container::new("pilot-tensor");
        c.set("config_hash", config_hash);
        c.set("noise_seed", self.noise_seed);
        c.push_c128("R", &self.shape, self.data.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("pilot-tensor")?;
        let (shape, data) = c.c128s("R")?;
        let shape: [usize; 4] = shape.try_into().map_err(|_| Error::format("pilot tensor must have four axes"))?;
        Ok(Self { shape, data: data.to_vec(), noise_seed: c.get_parsed("noise_seed")? })
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        self.to_container(config_hash).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

fn noise_rng(noise_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    rng.set_stream(stream);
    rng
}

fn snapshot(
    ch: &ChannelRealization,
    ris: &StarRisConfig,
    p_r: &DVector<Complex64>,
    p_t: &DVector<Complex64>,
    noise_power: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<Complex64>> {
    let n = ch.ris_elements();
    if ris.len() != n {
        return Err(Error::Dimension(format!("RIS config has {} elements, channel {n}", ris.len())));
    }
    if p_r.len() != ch.g_r.ncols() || p_t.len() != ch.g_t.ncols() {
        return Err(Error::Dimension(format!(
            "pilot parts have lengths {}/{}, users have {}/{} antennas",
            p_r.len(),
            p_t.len(),
            ch.g_r.ncols(),
            ch.g_t.ncols()
        )));
    }
    let u_r = &ch.g_r * p_r;
    let u_t = &ch.g_t * p_t;
    let phi_r = ris.coefficients(crate::ris::Side::Reflection);
    let phi_t = ris.coefficients(crate::ris::Side::Transmission);
    let at_ris = DVector::from_fn(n, |e, _| phi_r[e] * u_r[e] + phi_t[e] * u_t[e]);
    let mut y = ch.h.ad_mul(&at_ris);
    if noise_power > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(rng, noise_power);
        }
    }
    Ok(y)
}

/// `y = H^H Phi_r G_r p_r + H^H Phi_t G_t p_t + v` with `v ~ CN(0, noise_power I_M)`.
///
/// `pilot` is the stacked `[p_r; p_t]` vector. The noise comes from stream 0 of a
/// ChaCha8 generator seeded with `noise_seed`.
pub fn uplink_snapshot(
    ch: &ChannelRealization,
    ris: &StarRisConfig,
    pilot: &DVector<Complex64>,
    noise_power: f64,
    noise_seed: u64,
) -> Result<DVector<Complex64>> {
    let n_r = ch.g_r.ncols();
    if pilot.len() != n_r + ch.g_t.ncols() {
        return Err(Error::Dimension(format!("pilot has length {}, expected {}", pilot.len(), n_r + ch.g_t.ncols())));
    }
    let p_r = pilot.rows(0, n_r).into_owned();
    let p_t = pilot.rows(n_r, ch.g_t.ncols()).into_owned();
    snapshot(ch, ris, &p_r, &p_t, noise_power, &mut noise_rng(noise_seed, 0))
}

/// RIS setting used at a sweep step: codeword phases on both sides, one amplitude level on every element.
pub fn sweep_config(codebook: &PhaseCodebook, grid: &AmplitudeGrid, j: usize, k: usize) -> StarRisConfig {
    let phases = codebook.phases(j);
    let n = phases.len();
    StarRisConfig {
        theta_r: phases.clone(),
        theta_t: phases,
        alpha_r: vec![grid.alpha_r[k]; n],
        alpha_t: vec![grid.alpha_t[k]; n],
    }
}

/// Snapshots for the steps of `schedule`, in schedule order. Noise for each step
/// is drawn from the stream numbered by the step's canonical index, so the
/// result does not depend on the order the steps are listed or evaluated in.
pub fn sound_steps(
    ch: &ChannelRealization,
    plan: &PilotPlan,
    codebook: &PhaseCodebook,
    grid: &AmplitudeGrid,
    schedule: &SoundingSchedule,
    noise_power: f64,
    noise_seed: u64,
) -> Result<Vec<DVector<Complex64>>> {
    if codebook.is_empty() || codebook.codewords[0].len() != ch.ris_elements() {
        return Err(Error::Dimension("codebook does not match the RIS size".into()));
    }
    let parts: Vec<_> = (0..plan.n_pilots()).map(|i| plan.split(i)).collect();
    let configs: Vec<Vec<StarRisConfig>> =
        (0..codebook.len()).map(|j| (0..grid.len()).map(|k| sweep_config(codebook, grid, j, k)).collect()).collect();
    schedule
        .steps
        .par_iter()
        .map(|&s| {
            let (p_r, p_t) = &parts[s.pilot];
            let mut rng = noise_rng(noise_seed, schedule.canonical_index(s) as u64);
            snapshot(ch, &configs[s.codeword][s.level], p_r, p_t, noise_power, &mut rng)
        })
        .collect()
}

/// Places snapshots listed in `schedule` order into a tensor.
pub fn assemble(
    m: usize,
    schedule: &SoundingSchedule,
    snapshots: &[DVector<Complex64>],
    noise_seed: u64,
) -> ReceivedPilotTensor {
    let mut t = ReceivedPilotTensor::zeros([m, schedule.n_pilots, schedule.n_codewords, schedule.n_levels], noise_seed);
    for (s, y) in schedule.steps.iter().zip(snapshots) {
        t.set_fiber(s.pilot, s.codeword, s.level, y);
    }
    t
}

/// Runs the full canonical sweep and returns the received tensor.
pub fn sound(
    ch: &ChannelRealization,
    plan: &PilotPlan,
    codebook: &PhaseCodebook,
    grid: &AmplitudeGrid,
    noise_power: f64,
    noise_seed: u64,
) -> Result<ReceivedPilotTensor> {
    let schedule = SoundingSchedule::canonical(plan.n_pilots(), codebook.len(), grid.len());
    let snaps = sound_steps(ch, plan, codebook, grid, &schedule, noise_power, noise_seed)?;
    Ok(assemble(ch.bs_antennas(), &schedule, &snaps, noise_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_channel;
    use crate::config::{ChannelParams, ConfigFile};
    use crate::ris::{amplitude_grid, dft_codebook};

    fn setup(m: usize, n_users: usize) -> SystemConfig {
        let mut cfg = ConfigFile::default().system().unwrap();
        cfg.bs_antennas = m;
        cfg.user_r_antennas = n_users;
        cfg.user_t_antennas = n_users;
        cfg
    }

    fn row_gram(p: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        p * p.adjoint()
    }

    #[test]
    fn two_user_pilots() {
        let plan = make_pilots(&setup(8, 1));
        assert_eq!(plan.p.shape(), (2, 2));
        // rows proportional to [1, 1] and [1, -1]
        let p = &plan.p;
        assert!((p[(0, 0)] - p[(0, 1)]).norm() < 1e-12);
        assert!((p[(1, 0)] + p[(1, 1)]).norm() < 1e-12);
        let g = row_gram(p);
        assert!((g[(0, 1)]).norm() < 1e-12);
        assert!((g[(0, 0)] - g[(1, 1)]).norm() < 1e-12 && g[(0, 0)].re > 0.0);
    }

    #[test]
    fn eight_pilot_gram_is_diagonal() {
        let plan = make_pilots(&setup(8, 4));
        assert_eq!(plan.p.shape(), (8, 8));
        let g = row_gram(&plan.p);
        for a in 0..8 {
            for b in 0..8 {
                if a != b {
                    assert!(g[(a, b)].norm() < 1e-12);
                }
            }
        }
        // each user radiates pilot_power per symbol
        for i in 0..8 {
            let e: f64 = (0..4).map(|a| plan.p[(a, i)].norm_sqr()).sum();
            assert!((e - plan.pilot_power).abs() < 1e-12);
        }
    }

    #[test]
    fn unequal_users_keep_orthogonal_rows() {
        let mut cfg = setup(4, 1);
        cfg.user_t_antennas = 3;
        let g = row_gram(&make_pilots(&cfg).p);
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    assert!(g[(a, b)].norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_pilot_without_noise_is_zero() {
        let cfg = setup(8, 1);
        let ch = draw_channel(&cfg, &ChannelParams::default(), 1).unwrap();
        let ris = StarRisConfig::uniform(16, 0.3, 1.0, 0.7).unwrap();
        let y = uplink_snapshot(&ch, &ris, &DVector::zeros(2), 0.0, 9).unwrap();
        assert!(y.iter().all(|z| z.norm() == 0.0));
        assert!(matches!(uplink_snapshot(&ch, &ris, &DVector::zeros(3), 0.0, 9), Err(Error::Dimension(_))));
    }

    #[test]
    fn scalar_snapshot_by_hand() {
        let h = Complex64::new(0.3, -1.2);
        let g = Complex64::new(-0.7, 0.4);
        let ch = ChannelRealization::from_matrices(
            DMatrix::from_element(1, 1, h),
            DMatrix::from_element(1, 1, g),
            DMatrix::from_element(1, 1, Complex64::new(2.0, 1.0)),
        )
        .unwrap();
        let (alpha, theta) = (0.6, 1.1);
        let ris = StarRisConfig::from_alpha_r(&[theta], &[0.4], &[alpha]).unwrap();
        let pilot = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let y = uplink_snapshot(&ch, &ris, &pilot, 0.0, 0).unwrap();
        let expected = h.conj() * Complex64::from_polar(alpha, theta) * g;
        assert!((y[0] - expected).norm() < 1e-15);
    }

    #[test]
    fn transmit_term_is_linear_in_alpha_t() {
        let cfg = setup(4, 1);
        let ch = draw_channel(&cfg, &ChannelParams::default(), 2).unwrap();
        let pilot = DVector::from_vec(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
        let grid = amplitude_grid(8);
        let a_t = grid.alpha_t[7];
        let mut ris = StarRisConfig::uniform(16, 0.2, 0.9, grid.alpha_r[7]).unwrap();
        let y1 = uplink_snapshot(&ch, &ris, &pilot, 0.0, 0).unwrap();
        ris.alpha_t = vec![a_t / 2.0; 16];
        let y2 = uplink_snapshot(&ch, &ris, &pilot, 0.0, 0).unwrap();
        assert!((&y1 - &y2 * Complex64::from(2.0)).norm() < 1e-12 * y1.norm());
    }

    #[test]
    fn tensor_shape_and_determinism() {
        let cfg = setup(8, 1);
        let ch = draw_channel(&cfg, &ChannelParams::default(), 3).unwrap();
        let plan = make_pilots(&cfg);
        let cb = dft_codebook(4, 4);
        let grid = amplitude_grid(4);
        let t = sound(&ch, &plan, &cb, &grid, 0.0, 1).unwrap();
        assert_eq!(t.shape, [8, 2, 16, 4]);
        let again = sound(&ch, &plan, &cb, &grid, 0.0, 1).unwrap();
        assert_eq!(t.data, again.data);
        // noiseless tensor ignores the noise seed
        let other = sound(&ch, &plan, &cb, &grid, 0.0, 99).unwrap();
        assert_eq!(t.data, other.data);
        // each entry equals the standalone snapshot
        let ris = sweep_config(&cb, &grid, 5, 2);
        let y = uplink_snapshot(&ch, &ris, &plan.p.column(1).into_owned(), 0.0, 0).unwrap();
        for a in 0..8 {
            assert_eq!(t.get(a, 1, 5, 2), y[a]);
        }
    }

    #[test]
    fn pure_noise_variance() {
        let cfg = setup(8, 1);
        let ch = ChannelRealization::zeros(&cfg);
        let plan = make_pilots(&cfg);
        let sigma2 = 2.5e-3;
        let t = sound(&ch, &plan, &dft_codebook(4, 4), &amplitude_grid(4), sigma2, 17).unwrap();
        let var = t.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / t.data.len() as f64;
        assert!((var / sigma2 - 1.0).abs() < 0.1, "variance ratio {}", var / sigma2);
        let again = sound(&ch, &plan, &dft_codebook(4, 4), &amplitude_grid(4), sigma2, 17).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn doubling_pilots_doubles_noiseless_tensor() {
        let cfg = setup(4, 1);
        let ch = draw_channel(&cfg, &ChannelParams::default(), 4).unwrap();
        let plan = make_pilots(&cfg);
        let doubled = PilotPlan::from_matrix(&plan.p * Complex64::from(2.0), 1, 1).unwrap();
        let cb = dft_codebook(4, 4);
        let grid = amplitude_grid(3);
        let a = sound(&ch, &plan, &cb, &grid, 0.0, 0).unwrap();
        let b = sound(&ch, &doubled, &cb, &grid, 0.0, 0).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x * 2.0 - y).norm() <= 1e-12 * y.norm().max(1e-300));
        }
    }

    #[test]
    fn permuted_schedule_reassembles_to_canonical() {
        let cfg = setup(4, 1);
        let ch = draw_channel(&cfg, &ChannelParams::default(), 6).unwrap();
        let plan = make_pilots(&cfg);
        let cb = dft_codebook(4, 4);
        let grid = amplitude_grid(2);
        let canonical = sound(&ch, &plan, &cb, &grid, 1e-9, 5).unwrap();
        let mut schedule = SoundingSchedule::canonical(2, 16, 2);
        schedule.steps.reverse();
        schedule.steps.swap(3, 40);
        let snaps = sound_steps(&ch, &plan, &cb, &grid, &schedule, 1e-9, 5).unwrap();
        let rebuilt = assemble(4, &schedule, &snaps, 5);
        assert_eq!(rebuilt, canonical);
    }

    #[test]
    fn schedule_is_lexicographic() {
        let s = SoundingSchedule::canonical(2, 3, 2);
        assert_eq!(s.steps.len(), 12);
        assert_eq!(s.steps[0], SweepStep { pilot: 0, codeword: 0, level: 0 });
        assert_eq!(s.steps[1], SweepStep { pilot: 0, codeword: 0, level: 1 });
        assert_eq!(s.steps[2], SweepStep { pilot: 0, codeword: 1, level: 0 });
        assert_eq!(s.steps[6], SweepStep { pilot: 1, codeword: 0, level: 0 });
        for (idx, step) in s.steps.iter().enumerate() {
            assert_eq!(s.canonical_index(*step), idx);
        }
    }

    #[test]
    fn real_view_stacks_parts() {
        let mut t = ReceivedPilotTensor::zeros([2, 1, 2, 1], 0);
        t.data = vec![
            Complex64::new(1.0, 5.0),
            Complex64::new(2.0, 6.0),
            Complex64::new(3.0, 7.0),
            Complex64::new(4.0, 8.0),
        ];
        assert_eq!(t.real_view(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn tensor_container_round_trip() {
        let cfg = setup(2, 1);
        let ch = draw_channel(&cfg, &ChannelParams::default(), 8).unwrap();
        let t = sound(&ch, &make_pilots(&cfg), &dft_codebook(4, 4), &amplitude_grid(2), 1e-10, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        t.save(&path, "abc").unwrap();
        let back = ReceivedPilotTensor::load(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(Container::read(&path).unwrap().get("config_hash").unwrap(), "abc");
    }
}
