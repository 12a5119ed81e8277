//! Brute-force maximizer over a finite (precoder, amplitude, phase) grid, for
//! checking the coordinate-ascent solver on small instances.
//!
//! For a fixed precoder and amplitude vector the reflection rate depends only on
//! the reflection phases and the transmission rate only on the transmission
//! phases, so both supported objectives are maximized by searching each side's
//! phases on their own. That makes the search exact while visiting
//! `|W| * amp^N * phase^N` candidates per side instead of `phase^(2N)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::{dominant_eigenvector, rate_from_gain, Objective, PrecodingSolution};
use crate::channel::ChannelRealization;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::ris::{amplitude_grid, StarRisConfig, TWO_PI};

/// Largest search the oracle agrees to run.
pub const GRID_LIMIT: u128 = 10_000_000;

/// Candidate count `|W| * amp_grid^N * phase_grid^N`, saturating.
pub fn exhaustive_search_size(n_w: usize, n_elements: usize, phase_grid: usize, amp_grid: usize) -> u128 {
    let pow = |base: usize| -> u128 {
        let mut acc: u128 = 1;
        for _ in 0..n_elements {
            acc = acc.saturating_mul(base as u128);
        }
        acc
    };
    (n_w as u128).saturating_mul(pow(amp_grid)).saturating_mul(pow(phase_grid))
}

/// Unit-norm precoder candidates: `w_codebook` oversampled DFT beams plus the
/// dominant right singular vector of `H`. A single-antenna BS has one candidate.
pub fn w_codebook_candidates(ch: &ChannelRealization, w_codebook: usize) -> Vec<DVector<Complex64>> {
    let m = ch.bs_antennas();
    if m == 1 {
        return vec![DVector::from_element(1, Complex64::new(1.0, 0.0))];
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut out: Vec<DVector<Complex64>> = (0..w_codebook)
        .map(|k| DVector::from_fn(m, |i, _| Complex64::from_polar(scale, -TWO_PI * (i * k) as f64 / w_codebook as f64)))
        .collect();
    out.push(dominant_eigenvector(&ch.h.ad_mul(&ch.h)));
    out
}

/// Best phase index vector for one side, its gain, given per-element
/// contributions already scaled by the amplitudes.
fn best_side(contrib: &[DVector<Complex64>], phases: &[Complex64]) -> (f64, Vec<usize>) {
    let n = contrib.len();
    let dim = contrib.first().map_or(0, |c| c.len());
    let count = phases.len().pow(n as u32);
    let mut idx = vec![0usize; n];
    let mut best = (f64::NEG_INFINITY, vec![0usize; n]);
    let mut acc = DVector::<Complex64>::zeros(dim);
    for _ in 0..count {
        acc.fill(Complex64::new(0.0, 0.0));
        for (e, c) in contrib.iter().enumerate() {
            acc.axpy(phases[idx[e]], c, Complex64::new(1.0, 0.0));
        }
        let g = acc.norm_squared();
        if g > best.0 {
            best = (g, idx.clone());
        }
        // odometer with element 0 fastest
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < phases.len() {
                break;
            }
            *slot = 0;
        }
    }
    best
}

/// Exact maximizer of `objective` over the finite grid.
pub fn exhaustive_oracle(
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    objective: Objective,
    phase_grid: usize,
    amp_grid: usize,
    w_codebook: usize,
) -> Result<PrecodingSolution> {
    if phase_grid == 0 || amp_grid == 0 {
        return Err(Error::Domain("grids must be non-empty".into()));
    }
    let n = ch.ris_elements();
    let candidates = w_codebook_candidates(ch, w_codebook);
    let size = exhaustive_search_size(candidates.len(), n, phase_grid, amp_grid);
    if size > GRID_LIMIT {
        return Err(Error::GridTooLarge { size, limit: GRID_LIMIT });
    }
    let grid = amplitude_grid(amp_grid);
    let phases: Vec<Complex64> =
        (0..phase_grid).map(|p| Complex64::from_polar(1.0, TWO_PI * p as f64 / phase_grid as f64)).collect();
    let sqrt_p = Complex64::from(cfg.transmit_power.sqrt());
    let sigma2 = cfg.noise_power;
    let n_amp_combos = amp_grid.pow(n as u32);

    // work item = (precoder, amplitude combination); lowest flat index wins ties
    let best = (0..candidates.len() * n_amp_combos)
        .into_par_iter()
        .map(|item| {
            let (wi, mut code) = (item / n_amp_combos, item % n_amp_combos);
            let levels: Vec<usize> = (0..n)
                .map(|_| {
                    let k = code % amp_grid;
                    code /= amp_grid;
                    k
                })
                .collect();
            let s = &ch.h * (&candidates[wi] * sqrt_p);
            let side = |g: &DMatrix<Complex64>, amps: &[f64]| {
                let contrib: Vec<DVector<Complex64>> =
                    (0..n).map(|e| g.row(e).adjoint() * (s[e] * amps[levels[e]])).collect();
                best_side(&contrib, &phases)
            };
            let (gr, pr) = side(&ch.g_r, &grid.alpha_r);
            let (gt, pt) = side(&ch.g_t, &grid.alpha_t);
            let value = objective.combine(rate_from_gain(gr, sigma2), rate_from_gain(gt, sigma2));
            (value, item, wi, levels, pr, pt)
        })
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
        .expect("search space is never empty");

    let (_, _, wi, levels, pr, pt) = best;
    let step = TWO_PI / phase_grid as f64;
    let ris = StarRisConfig {
        theta_r: pr.iter().map(|&p| step * p as f64).collect(),
        theta_t: pt.iter().map(|&p| step * p as f64).collect(),
        alpha_r: levels.iter().map(|&k| grid.alpha_r[k]).collect(),
        alpha_t: levels.iter().map(|&k| grid.alpha_t[k]).collect(),
    };
    PrecodingSolution::evaluate(ch, ris, &candidates[wi] * sqrt_p, sigma2, objective)
}
