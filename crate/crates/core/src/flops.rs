//! Per-inference floating-point operation counts.
//!
//! Counting convention: a real add, multiply, compare or divide is 1 FLOP; a
//! complex multiply is 6, a complex multiply-add 8, `|z|^2` 3, an atan2 10,
//! a log2 or sqrt 10. Counts are pure functions of model and problem shape.

use serde::Serialize;

use crate::codec::TargetCodec;
use crate::config::ConfigFile;
use crate::dataset::Scenario;
use crate::error::Result;
use crate::gbdt::{flops_for, gbdt_flops};
use crate::oracle::BcdSettings;
use crate::pipeline::GlModel;

pub const CONVENTION: &str = "real add/mul/compare/div = 1; complex mul = 6; complex mul-add = 8; |z|^2 = 3; \
atan2 = 10; log2 = 10; sqrt = 10; Saab projections on the real view count 2 per multiply-add; \
feature gathers count 0; tree = 1 per level + 2 per leaf update, +1 for the base; \
BCD = one iteration times the iteration cap, initialization excluded";

/// Published per-inference counts for M=8, N_r=N_t=1, shown for orientation.
pub const REFERENCE_GL: f64 = 0.1181e6;
pub const REFERENCE_BCD: f64 = 7.16e6;

const C_MUL: u64 = 6;
const C_MAC: u64 = 8;
const ABS2: u64 = 3;
const LOG2: u64 = 10;
const SQRT: u64 = 10;
/// log2(1 + g / sigma^2): divide, add, log.
const RATE: u64 = 2 + LOG2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsRow {
    pub scheme: String,
    pub flops: u64,
    pub breakdown: Vec<(String, u64)>,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsReport {
    pub rows: Vec<FlopsRow>,
    /// True when the GL row comes from a fitted model rather than the nominal worst case.
    pub from_model: bool,
    pub convention: String,
}

impl FlopsReport {
    pub fn gl(&self) -> u64 {
        self.rows[0].flops
    }

    pub fn bcd(&self) -> u64 {
        self.rows[1].flops
    }

    pub fn ratio(&self) -> f64 {
        self.gl() as f64 / self.bcd() as f64
    }

    /// Fixed-width text table, breakdown lines indented under each scheme.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8} {:>14} {:>12} {:>16}\n", "scheme", "flops", "mflops", "reference_mflops");
        for row in &self.rows {
            let reference = row.reference.map_or("-".to_string(), |r| format!("{:.4}", r / 1e6));
            out += &format!("{:<8} {:>14} {:>12.4} {:>16}\n", row.scheme, row.flops, row.flops as f64 / 1e6, reference);
            for (part, count) in &row.breakdown {
                out += &format!("  {part:<30} {count:>12}\n");
            }
        }
        out += &format!("ratio gl/bcd {:.5} (reference {:.5})\n", self.ratio(), REFERENCE_GL / REFERENCE_BCD);
        out += &format!(
            "gl source: {}\n",
            if self.from_model { "fitted model" } else { "nominal worst case, all Saab components kept" }
        );
        out += &format!("convention: {}\n", self.convention);
        out += "reference values are published per-inference counts for M=8, N_r=N_t=1\n";
        out
    }
}

/// Multiply-adds of a Saab cascade on a real input of `shape` that keeps every component.
pub fn saab_full_macs(shape: [usize; 4]) -> u64 {
    let volume: usize = shape.iter().product();
    shape.iter().map(|&d| (volume * d) as u64).sum()
}

/// One BCD iteration: precoder block then the element sweep.
pub fn bcd_iteration_flops(m: usize, n: usize, n_r: usize, n_t: usize, s: &BcdSettings) -> Vec<(String, u64)> {
    let (m, n, n_r, n_t) = (m as u64, n as u64, n_r as u64, n_t as u64);
    let users = n_r + n_t;
    let (phases, amps, inner) = (s.phase_grid as u64, s.amp_grid as u64, s.w_inner_iters as u64);

    // G^H diag(phi) H for both sides
    let effective = 2 * n * m * C_MUL + users * n * m * C_MAC;
    // A^H A per side, then a Hermitian eigendecomposition at the textbook 9 M^3
    let eigen = users * m * m * C_MAC + 9 * m * m * m * C_MAC;
    let value = users * m * C_MAC + users * ABS2 + 2 * RATE + 1;
    let gradient = 2 * users * m * C_MAC + 4 * m + m * ABS2 + SQRT;
    let candidate = 2 * m + 2 * m + m * ABS2 + SQRT + 2 * m;
    let w_step = effective + eigen + value + inner * (gradient + candidate + value);

    // s = H w, b_{l,n}, running totals
    let setup = n * m * C_MAC + users * n * C_MUL + users * n * C_MAC;
    let element_prep = users * C_MAC + 2 * users * ABS2 + users * C_MAC;
    let grid = amps * (2 * phases * 10 + 2 * RATE + 1);
    let accept = users * n * C_MAC + users * ABS2 + 2 * RATE;
    let ris_step = setup + n * (element_prep + grid + accept);

    vec![("precoder block".into(), w_step), ("element sweep".into(), ris_step)]
}

/// GL and BCD per-inference counts. Without a model, the GL row assumes every
/// Saab component is kept and every target dimension has a full ensemble.
pub fn flops_report(model: Option<&GlModel>, file: &ConfigFile, bcd: &BcdSettings) -> Result<FlopsReport> {
    let scn = Scenario::new(file)?;
    let system = &scn.system;
    let codec = TargetCodec::for_system(system);

    let (saab_macs, trees, decode) = match model {
        Some(m) => {
            m.check()?;
            (m.saab.macs(), m.ensembles.iter().map(gbdt_flops).sum::<u64>(), m.codec.decode_flops())
        }
        None => {
            let [a, p, e, k] = scn.tensor_shape();
            let trees = codec.dim() as u64 * flops_for(file.gbdt.rounds, file.gbdt.max_depth);
            (saab_full_macs([2 * a, p, e, k]), trees, codec.decode_flops())
        }
    };
    let gl = FlopsRow {
        scheme: "gl".into(),
        flops: 2 * saab_macs + trees + decode,
        breakdown: vec![
            ("saab projections".into(), 2 * saab_macs),
            ("feature selection".into(), 0),
            ("boosted trees".into(), trees),
            ("decode".into(), decode),
        ],
        reference: Some(REFERENCE_GL),
    };

    let per_iter = bcd_iteration_flops(
        system.bs_antennas,
        system.ris_elements(),
        system.user_r_antennas,
        system.user_t_antennas,
        bcd,
    );
    let iters = bcd.max_iters as u64;
    let breakdown: Vec<(String, u64)> =
        per_iter.iter().map(|(k, v)| (format!("{k} x {iters} iterations"), v * iters)).collect();
    let total = breakdown.iter().map(|(_, v)| v).sum();
    let bcd_row = FlopsRow { scheme: "bcd".into(), flops: total, breakdown, reference: Some(REFERENCE_BCD) };

    Ok(FlopsReport { rows: vec![gl, bcd_row], from_model: model.is_some(), convention: CONVENTION.into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_file() -> ConfigFile {
        let mut f = ConfigFile::default();
        f.system.bs_antennas = 8;
        f.system.ris_horizontal = 4;
        f.system.ris_vertical = 4;
        f
    }

    #[test]
    fn nominal_ratio_is_small() {
        let f = reference_file();
        let r = flops_report(None, &f, &f.bcd).unwrap();
        assert!(r.ratio() < 0.1, "{}", r.to_table());
        assert_eq!(r.gl(), r.rows[0].breakdown.iter().map(|(_, v)| v).sum::<u64>());
        assert!(r.to_table().contains("convention"));
    }

    #[test]
    fn full_macs_arithmetic() {
        assert_eq!(saab_full_macs([2, 3, 1, 1]), 6 * 2 + 6 * 3 + 6 + 6);
    }

    #[test]
    fn bcd_scales_with_iteration_cap() {
        let f = reference_file();
        let a = flops_report(None, &f, &f.bcd).unwrap();
        let mut s = f.bcd.clone();
        s.max_iters *= 2;
        let b = flops_report(None, &f, &s).unwrap();
        assert_eq!(b.bcd(), 2 * a.bcd());
        assert_eq!(a.gl(), b.gl());
    }
}
