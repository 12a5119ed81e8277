//! Regression target layout and the decoder back to a feasible decision.
//!
//! Layout of a target vector of length `D = 5N + 2M`:
//! `[cos theta_r (N), sin theta_r (N), cos theta_t (N), sin theta_t (N), alpha_r (N), Re w (M), Im w (M)]`.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::oracle::{Objective, PrecodingSolution};
use crate::ris::{wrap_phase, StarRisConfig};

/// Smallest amplitude the decoder emits on either side.
pub const ALPHA_EPS: f64 = 1e-3;
/// `(cos, sin)` pairs with a smaller norm carry no phase information.
pub const PHASE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetCodec {
    pub n: usize,
    pub m: usize,
}

/// A precoder and surface configuration produced without channel knowledge.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub w: DVector<Complex64>,
    pub ris: StarRisConfig,
    /// Elements whose predicted `(cos, sin)` pair was too small; their phase is 0.
    pub degenerate_phases: usize,
    /// The predicted precoder was zero and a unit basis vector was used instead.
    pub zero_precoder: bool,
}

impl Decision {
    pub fn evaluate(&self, ch: &ChannelRealization, sigma2: f64, objective: Objective) -> Result<PrecodingSolution> {
        PrecodingSolution::evaluate(ch, self.ris.clone(), self.w.clone(), sigma2, objective)
    }
}

impl TargetCodec {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m }
    }

    pub fn for_system(cfg: &SystemConfig) -> Self {
        Self::new(cfg.ris_elements(), cfg.bs_antennas)
    }

    pub fn dim(&self) -> usize {
        5 * self.n + 2 * self.m
    }

    /// Human-readable name of target dimension `d`.
    pub fn label(&self, d: usize) -> String {
        let n = self.n;
        let names = ["cos_theta_r", "sin_theta_r", "cos_theta_t", "sin_theta_t", "alpha_r"];
        if d < 5 * n {
            format!("{}[{}]", names[d / n], d % n)
        } else if d < 5 * n + self.m {
            format!("re_w[{}]", d - 5 * n)
        } else {
            format!("im_w[{}]", d - 5 * n - self.m)
        }
    }

    pub fn encode(&self, sol: &PrecodingSolution) -> Result<Vec<f64>> {
        let (n, m) = (self.n, self.m);
        if sol.ris.len() != n || sol.w.len() != m {
            return Err(Error::Dimension(format!(
                "codec expects N={n}, M={m}; solution has N={}, M={}",
                sol.ris.len(),
                sol.w.len()
            )));
        }
        let mut u = Vec::with_capacity(self.dim());
        u.extend(sol.ris.theta_r.iter().map(|t| t.cos()));
        u.extend(sol.ris.theta_r.iter().map(|t| t.sin()));
        u.extend(sol.ris.theta_t.iter().map(|t| t.cos()));
        u.extend(sol.ris.theta_t.iter().map(|t| t.sin()));
        u.extend(sol.ris.alpha_r.iter().copied());
        u.extend(sol.w.iter().map(|z| z.re));
        u.extend(sol.w.iter().map(|z| z.im));
        Ok(u)
    }

    pub fn decode(&self, u: &[f64], transmit_power: f64) -> Result<Decision> {
        let (n, m) = (self.n, self.m);
        if u.len() != self.dim() {
            return Err(Error::Dimension(format!("target has length {}, expected {}", u.len(), self.dim())));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in predicted target".into()));
        }
        let mut degenerate = 0;
        let mut phases = |cos: &[f64], sin: &[f64]| -> Vec<f64> {
            cos.iter()
                .zip(sin)
                .map(|(&c, &s)| {
                    if c.hypot(s) < PHASE_EPS {
                        degenerate += 1;
                        0.0
                    } else {
                        wrap_phase(s.atan2(c))
                    }
                })
                .collect()
        };
        let theta_r = phases(&u[..n], &u[n..2 * n]);
        let theta_t = phases(&u[2 * n..3 * n], &u[3 * n..4 * n]);
        let hi = (1.0 - ALPHA_EPS * ALPHA_EPS).sqrt();
        let alpha_r: Vec<f64> = u[4 * n..5 * n].iter().map(|a| a.clamp(ALPHA_EPS, hi)).collect();
        let alpha_t: Vec<f64> = alpha_r.iter().map(|a| (1.0 - a * a).sqrt()).collect();
        let ris = StarRisConfig { theta_r, theta_t, alpha_r, alpha_t };

        let mut w = DVector::from_fn(m, |i, _| Complex64::new(u[5 * n + i], u[5 * n + m + i]));
        let norm = w.norm();
        let zero_precoder = !(norm > 0.0);
        if zero_precoder {
            w = DVector::zeros(m);
            w[0] = Complex64::new(transmit_power.sqrt(), 0.0);
        } else {
            w *= Complex64::from(transmit_power.sqrt() / norm);
        }
        Ok(Decision { w, ris, degenerate_phases: degenerate, zero_precoder })
    }

    /// FLOPs of one decode: an `atan2` (10 FLOPs) per element and side, amplitude
    /// clipping and completion (5 per element), precoder norm (4 per antenna plus
    /// 2) and rescaling (2 per antenna).
    pub fn decode_flops(&self) -> u64 {
        (2 * self.n * 10 + 5 * self.n + 6 * self.m + 2) as u64
    }
}

pub fn encode_targets(sol: &PrecodingSolution, codec: &TargetCodec) -> Result<Vec<f64>> {
    codec.encode(sol)
}

pub fn decode_targets(u: &[f64], codec: &TargetCodec, cfg: &SystemConfig) -> Result<Decision> {
    codec.decode(u, cfg.transmit_power)
}
