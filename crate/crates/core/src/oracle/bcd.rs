//! Block coordinate ascent over the precoder and the per-element surface blocks.
//!
//! Each outer iteration runs a precoder step (projected gradient ascent on the
//! power ball with backtracking, started from the better of the current
//! precoder and the dominant eigenvector of `sum_l H_eff,l^H H_eff,l`) and then
//! sweeps the surface elements, grid-searching phase on each side and the
//! amplitude split per element. A sub-step is only kept if it does not lower
//! the objective, so the recorded trace is non-decreasing.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{dominant_eigenvector, effective_channel, rate_from_gain, Objective, PrecodingSolution};
use crate::channel::ChannelRealization;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::ris::{amplitude_grid, dft_codebook, AmplitudeGrid, Side, StarRisConfig, TWO_PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcdSettings {
    pub objective: Objective,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Phases per side tried for each element.
    pub phase_grid: usize,
    /// Amplitude levels tried for each element.
    pub amp_grid: usize,
    /// Initial precoder step, as a fraction of `sqrt(P_t)`.
    pub step_init: f64,
    pub step_shrink: f64,
    pub max_backtracks: usize,
    /// Gradient steps per precoder block update.
    pub w_inner_iters: usize,
}

impl Default for BcdSettings {
    fn default() -> Self {
        Self {
            objective: Objective::SumRate,
            max_iters: 50,
            rel_tol: 1e-6,
            phase_grid: 16,
            amp_grid: 8,
            step_init: 1.0,
            step_shrink: 0.5,
            max_backtracks: 30,
            w_inner_iters: 20,
        }
    }
}

impl BcdSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("bcd.max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("bcd.rel_tol must be > 0".into()));
        }
        if self.phase_grid == 0 || self.amp_grid == 0 {
            return Err(Error::Config("bcd grids must be non-empty".into()));
        }
        if !(self.step_init > 0.0) || !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::Config("bcd step_init must be > 0 and step_shrink in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOutput {
    pub solution: PrecodingSolution,
    /// Objective after initialization and after every precoder / surface sub-step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

/// Fixed problem data shared by the sub-steps.
struct Problem<'a> {
    ch: &'a ChannelRealization,
    sigma2: f64,
    power: f64,
    objective: Objective,
}

impl Problem<'_> {
    fn value(&self, ris: &StarRisConfig, w: &DVector<Complex64>) -> f64 {
        let (ar, at) =
            (effective_channel(self.ch, ris, Side::Reflection), effective_channel(self.ch, ris, Side::Transmission));
        self.value_eff(&ar, &at, w)
    }

    fn value_eff(&self, ar: &DMatrix<Complex64>, at: &DMatrix<Complex64>, w: &DVector<Complex64>) -> f64 {
        let rr = rate_from_gain((ar * w).norm_squared(), self.sigma2);
        let rt = rate_from_gain((at * w).norm_squared(), self.sigma2);
        self.objective.combine(rr, rt)
    }

    fn eigen_precoder(&self, ar: &DMatrix<Complex64>, at: &DMatrix<Complex64>) -> DVector<Complex64> {
        let gram = ar.ad_mul(ar) + at.ad_mul(at);
        dominant_eigenvector(&gram) * Complex64::from(self.power.sqrt())
    }

    /// Projection onto the power ball followed by scaling up to its boundary.
    /// Both rates grow with `||w||`, so this never loses objective.
    fn project(&self, w: DVector<Complex64>) -> DVector<Complex64> {
        let n2 = w.norm_squared();
        if n2 > 0.0 {
            w * Complex64::from((self.power / n2).sqrt())
        } else {
            w
        }
    }

    /// Ascent direction of the objective with respect to `conj(w)`, up to a positive factor.
    fn gradient(&self, ar: &DMatrix<Complex64>, at: &DMatrix<Complex64>, w: &DVector<Complex64>) -> DVector<Complex64> {
        let (yr, yt) = (ar * w, at * w);
        let (gr, gt) = (yr.norm_squared(), yt.norm_squared());
        let part = |a: &DMatrix<Complex64>, y: &DVector<Complex64>, g: f64| {
            a.ad_mul(y) * Complex64::from(1.0 / (self.sigma2 + g))
        };
        match self.objective {
            Objective::SumRate => part(ar, &yr, gr) + part(at, &yt, gt),
            Objective::MinRate => {
                if gr <= gt {
                    part(ar, &yr, gr)
                } else {
                    part(at, &yt, gt)
                }
            }
        }
    }

    fn w_step(
        &self,
        ris: &StarRisConfig,
        w: &DVector<Complex64>,
        current: f64,
        settings: &BcdSettings,
    ) -> (DVector<Complex64>, f64) {
        let ar = effective_channel(self.ch, ris, Side::Reflection);
        let at = effective_channel(self.ch, ris, Side::Transmission);
        let mut best_w = w.clone();
        let mut best = current;
        let eig = self.eigen_precoder(&ar, &at);
        let eig_val = self.value_eff(&ar, &at, &eig);
        if eig_val > best {
            best = eig_val;
            best_w = eig;
        }
        let radius = self.power.sqrt();
        for _ in 0..settings.w_inner_iters {
            let g = self.gradient(&ar, &at, &best_w);
            let gnorm = g.norm();
            if !(gnorm > 0.0) || !gnorm.is_finite() {
                break;
            }
            let dir = g * Complex64::from(radius / gnorm);
            let mut step = settings.step_init;
            let mut accepted = None;
            for _ in 0..=settings.max_backtracks {
                let cand = self.project(&best_w + &dir * Complex64::from(step));
                let v = self.value_eff(&ar, &at, &cand);
                if v > best {
                    accepted = Some((cand, v));
                    break;
                }
                step *= settings.step_shrink;
            }
            match accepted {
                Some((cand, v)) => {
                    let gain = v - best;
                    best_w = cand;
                    best = v;
                    if gain <= settings.rel_tol * best.abs() {
                        break;
                    }
                }
                None => break,
            }
        }
        (best_w, best)
    }

    /// One sweep over the surface elements.
    fn ris_step(
        &self,
        ris: &mut StarRisConfig,
        w: &DVector<Complex64>,
        mut current: f64,
        phases: &[Complex64],
        grid: &AmplitudeGrid,
    ) -> f64 {
        let s = &self.ch.h * w;
        let n = s.len();
        // per-element contribution vectors b_{l,n} = conj(G_l[n, :]) s[n]
        let contrib =
            |g: &DMatrix<Complex64>| -> Vec<DVector<Complex64>> { (0..n).map(|e| g.row(e).adjoint() * s[e]).collect() };
        let b = [contrib(&self.ch.g_r), contrib(&self.ch.g_t)];
        let totals = |ris: &StarRisConfig| -> [DVector<Complex64>; 2] {
            let mut out = [DVector::zeros(b[0][0].len()), DVector::zeros(b[1][0].len())];
            for (l, side) in Side::BOTH.into_iter().enumerate() {
                let phi = ris.coefficients(side);
                for e in 0..n {
                    out[l] += &b[l][e] * phi[e];
                }
            }
            out
        };
        let mut total = totals(ris);
        #[allow(clippy::needless_range_loop)] // `e` indexes the surface and both contribution tables
        for e in 0..n {
            let old_phi = [
                Complex64::from_polar(ris.alpha_r[e], ris.theta_r[e]),
                Complex64::from_polar(ris.alpha_t[e], ris.theta_t[e]),
            ];
            let rest: [DVector<Complex64>; 2] = [&total[0] - &b[0][e] * old_phi[0], &total[1] - &b[1][e] * old_phi[1]];
            let rest_norm = [rest[0].norm_squared(), rest[1].norm_squared()];
            let b_norm = [b[0][e].norm_squared(), b[1][e].norm_squared()];
            // r^H b for each side: ||rest + z b||^2 = |rest|^2 + |z|^2 |b|^2 + 2 Re(z rho)
            let rho = [rest[0].dotc(&b[0][e]), rest[1].dotc(&b[1][e])];

            let mut best: Option<(f64, usize, [usize; 2])> = None;
            for k in 0..grid.len() {
                let amps = [grid.alpha_r[k], grid.alpha_t[k]];
                let mut choice = [0usize; 2];
                let mut rates = [0.0; 2];
                for l in 0..2 {
                    let mut best_gain = f64::NEG_INFINITY;
                    for (p, ph) in phases.iter().enumerate() {
                        let z = ph * amps[l];
                        let gain = rest_norm[l] + amps[l] * amps[l] * b_norm[l] + 2.0 * (z * rho[l]).re;
                        if gain > best_gain {
                            best_gain = gain;
                            choice[l] = p;
                        }
                    }
                    rates[l] = rate_from_gain(best_gain.max(0.0), self.sigma2);
                }
                let v = self.objective.combine(rates[0], rates[1]);
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, k, choice));
                }
            }
            let Some((cand_val, k, choice)) = best else { continue };
            if cand_val <= current {
                continue;
            }
            let saved = (ris.theta_r[e], ris.theta_t[e], ris.alpha_r[e], ris.alpha_t[e]);
            let step = TWO_PI / phases.len() as f64;
            ris.theta_r[e] = step * choice[0] as f64;
            ris.theta_t[e] = step * choice[1] as f64;
            ris.alpha_r[e] = grid.alpha_r[k];
            ris.alpha_t[e] = grid.alpha_t[k];
            let new_total = totals(ris);
            let fresh = self.objective.combine(
                rate_from_gain(new_total[0].norm_squared(), self.sigma2),
                rate_from_gain(new_total[1].norm_squared(), self.sigma2),
            );
            if fresh >= current {
                current = fresh;
                total = new_total;
            } else {
                // rounding made the candidate look better than it is
                (ris.theta_r[e], ris.theta_t[e], ris.alpha_r[e], ris.alpha_t[e]) = saved;
            }
        }
        current
    }
}

/// Runs block coordinate ascent under perfect CSI. `seed` is recorded with the
/// output; the iteration itself is deterministic.
pub fn bcd_optimize(
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    settings: &BcdSettings,
    seed: u64,
) -> Result<BcdOutput> {
    settings.validate()?;
    let n = ch.ris_elements();
    if n != cfg.ris_elements() || ch.bs_antennas() != cfg.bs_antennas {
        return Err(Error::Dimension("channel does not match the system config".into()));
    }
    let problem = Problem { ch, sigma2: cfg.noise_power, power: cfg.transmit_power, objective: settings.objective };
    let grid = amplitude_grid(settings.amp_grid);
    let mid = grid.middle_level();
    let phases: Vec<Complex64> = (0..settings.phase_grid)
        .map(|p| Complex64::from_polar(1.0, TWO_PI * p as f64 / settings.phase_grid as f64))
        .collect();

    // initialization: best shared DFT codeword at the middle amplitude level
    let codebook = dft_codebook(cfg.ris_horizontal, cfg.ris_vertical);
    let mut init: Option<(f64, StarRisConfig, DVector<Complex64>)> = None;
    for j in 0..codebook.len() {
        let ph = codebook.phases(j);
        let ris = StarRisConfig {
            theta_r: ph.clone(),
            theta_t: ph,
            alpha_r: vec![grid.alpha_r[mid]; n],
            alpha_t: vec![grid.alpha_t[mid]; n],
        };
        let ar = effective_channel(ch, &ris, Side::Reflection);
        let at = effective_channel(ch, &ris, Side::Transmission);
        let w = problem.eigen_precoder(&ar, &at);
        let v = problem.value_eff(&ar, &at, &w);
        if init.as_ref().is_none_or(|(bv, _, _)| v > *bv) {
            init = Some((v, ris, w));
        }
    }
    let (mut obj, mut ris, mut w) = init.expect("codebook is never empty");
    let mut trace = vec![obj];
    let numerical = |trace: &[f64], what: &str| Error::Numerical {
        message: format!("non-finite objective after {what}"),
        trace: trace.to_vec(),
    };
    if !obj.is_finite() {
        return Err(numerical(&trace, "initialization"));
    }

    let mut iterations = 0;
    for _ in 0..settings.max_iters {
        iterations += 1;
        let prev = obj;
        let (new_w, v) = problem.w_step(&ris, &w, obj, settings);
        w = new_w;
        obj = v;
        trace.push(obj);
        if !obj.is_finite() {
            return Err(numerical(&trace, "precoder step"));
        }
        obj = problem.ris_step(&mut ris, &w, obj, &phases, &grid);
        trace.push(obj);
        if !obj.is_finite() {
            return Err(numerical(&trace, "surface step"));
        }
        if obj - prev <= settings.rel_tol * prev.abs() {
            break;
        }
    }

    let solution = PrecodingSolution::evaluate(ch, ris, w, cfg.noise_power, settings.objective)?;
    debug_assert!((solution.objective - problem.value(&solution.ris, &solution.w)).abs() < 1e-9);
    Ok(BcdOutput { solution, trace, iterations, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_channel;
    use crate::config::{ChannelParams, ConfigFile};

    fn small_cfg(m: usize, n_h: usize, n_v: usize) -> SystemConfig {
        let mut cfg = ConfigFile::default().system().unwrap();
        cfg.bs_antennas = m;
        cfg.ris_horizontal = n_h;
        cfg.ris_vertical = n_v;
        cfg
    }

    #[test]
    fn trace_is_monotone_and_solution_feasible() {
        let cfg = small_cfg(4, 4, 2);
        let settings = BcdSettings::default();
        for seed in 0..10 {
            let ch = draw_channel(&cfg, &ChannelParams::default(), seed).unwrap();
            let out = bcd_optimize(&ch, &cfg, &settings, seed).unwrap();
            for pair in out.trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9, "trace decreased: {:?}", pair);
            }
            out.solution.check_feasible(cfg.transmit_power).unwrap();
            assert!((out.solution.objective - out.trace.last().unwrap()).abs() < 1e-9);
            assert!(out.iterations >= 1 && out.iterations <= settings.max_iters);
        }
    }

    #[test]
    fn min_rate_objective_runs() {
        let cfg = small_cfg(4, 2, 2);
        let settings = BcdSettings { objective: Objective::MinRate, ..Default::default() };
        let ch = draw_channel(&cfg, &ChannelParams::default(), 3).unwrap();
        let out = bcd_optimize(&ch, &cfg, &settings, 3).unwrap();
        assert!(out.trace.windows(2).all(|p| p[1] >= p[0] - 1e-9));
        let s = &out.solution;
        assert!((s.objective - s.rate_r.min(s.rate_t)).abs() < 1e-12);
    }

    #[test]
    fn beats_its_initialization() {
        let cfg = small_cfg(8, 4, 4);
        let ch = draw_channel(&cfg, &ChannelParams::default(), 1).unwrap();
        let out = bcd_optimize(&ch, &cfg, &BcdSettings::default(), 1).unwrap();
        assert!(out.solution.objective > out.trace[0]);
    }

    #[test]
    fn non_finite_channel_is_reported() {
        let cfg = small_cfg(2, 1, 2);
        let mut ch = draw_channel(&cfg, &ChannelParams::default(), 1).unwrap();
        ch.h[(0, 0)] = Complex64::new(f64::NAN, 0.0);
        match bcd_optimize(&ch, &cfg, &BcdSettings::default(), 1) {
            Err(Error::Numerical { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_mismatched_channel() {
        let cfg = small_cfg(4, 2, 2);
        let ch = draw_channel(&small_cfg(2, 2, 2), &ChannelParams::default(), 1).unwrap();
        assert!(matches!(bcd_optimize(&ch, &cfg, &BcdSettings::default(), 0), Err(Error::Dimension(_))));
    }
}
