use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Objective, PrecodingSolution};
use crate::channel::{complex_gaussian, ChannelRealization};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::ris::{AmplitudeGrid, PhaseCodebook, StarRisConfig};

/// Random selection: a uniformly drawn codeword (shared by both sides), a
/// uniformly drawn amplitude level and an isotropic precoder at full power.
pub fn random_baseline(
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    codebook: &PhaseCodebook,
    grid: &AmplitudeGrid,
    objective: Objective,
    seed: u64,
) -> Result<PrecodingSolution> {
    if codebook.is_empty() || grid.is_empty() {
        return Err(Error::Domain("codebook and amplitude grid must be non-empty".into()));
    }
    let n = ch.ris_elements();
    if codebook.codewords[0].len() != n {
        return Err(Error::Dimension(format!(
            "codebook has length {}, surface has {n} elements",
            codebook.codewords[0].len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = rng.random_range(0..codebook.len());
    let k = rng.random_range(0..grid.len());
    let mut w: DVector<Complex64> = DVector::from_fn(ch.bs_antennas(), |_, _| complex_gaussian(&mut rng, 1.0));
    let norm = w.norm();
    if norm > 0.0 {
        w *= Complex64::from(cfg.transmit_power.sqrt() / norm);
    } else {
        w[0] = Complex64::from(cfg.transmit_power.sqrt());
    }
    let phases = codebook.phases(j);
    let ris = StarRisConfig {
        theta_r: phases.clone(),
        theta_t: phases,
        alpha_r: vec![grid.alpha_r[k]; n],
        alpha_t: vec![grid.alpha_t[k]; n],
    };
    PrecodingSolution::evaluate(ch, ris, w, cfg.noise_power, objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_channel;
    use crate::config::{ChannelParams, ConfigFile};
    use crate::ris::{amplitude_grid, dft_codebook};

    #[test]
    fn deterministic_feasible_and_nonnegative() {
        let cfg = ConfigFile::default().system().unwrap();
        let cb = dft_codebook(cfg.ris_horizontal, cfg.ris_vertical);
        let grid = amplitude_grid(4);
        let ch = draw_channel(&cfg, &ChannelParams::default(), 5).unwrap();
        let a = random_baseline(&ch, &cfg, &cb, &grid, Objective::SumRate, 11).unwrap();
        let b = random_baseline(&ch, &cfg, &cb, &grid, Objective::SumRate, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.rate_r >= 0.0 && a.rate_t >= 0.0);
        assert!((a.w.norm_squared() - cfg.transmit_power).abs() < 1e-9 * cfg.transmit_power);
        a.check_feasible(cfg.transmit_power).unwrap();
    }
}
