//! Quick worked-example checks across every module, for a fresh checkout.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::channel::{bs_ris_los, draw_channel, path_loss, steering_ula, upa_steering};
use crate::codec::TargetCodec;
use crate::config::{ChannelParams, ConfigFile, SystemConfig};
use crate::container::Container;
use crate::dataset::{generate_dataset, Dataset, Scenario, Split};
use crate::flops::flops_report;
use crate::gbdt::{flops_for, gbdt_fit, GbdtParams, TreeNode};
use crate::oracle::{bcd_optimize, exhaustive_oracle, random_baseline, rate_from_gain, BcdSettings, Objective};
use crate::pipeline::train;
use crate::rft::rft_score;
use crate::ris::{amplitude_grid, dft_codebook, Side, StarRisConfig};
use crate::saab::{saab_fit_real, SaabSettings};
use crate::sounding::{make_pilots, sound};
use crate::sweep::{run_sweep, Axis, Scheme, SweepPlan};

type Check = std::result::Result<(), String>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
    (a - b).norm() <= tol
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn small_system(m: usize, n_h: usize, n_v: usize) -> SystemConfig {
    let mut c = ConfigFile::default().system().expect("default config is valid");
    c.bs_antennas = m;
    c.ris_horizontal = n_h;
    c.ris_vertical = n_v;
    c
}

fn tiny_file() -> ConfigFile {
    let mut f = ConfigFile::default();
    f.system.bs_antennas = 2;
    f.system.ris_horizontal = 2;
    f.system.ris_vertical = 1;
    f.sounding.amp_levels = 2;
    f.gbdt.rounds = 5;
    f.rft.select = 8;
    f
}

fn ula_examples() -> Check {
    ensure!(steering_ula(1, 0.7)[0] == Complex64::new(1.0, 0.0), "single element is not [1]");
    let a = steering_ula(2, 1.0);
    ensure!(close(a[1], Complex64::new(-1.0, 0.0), 1e-12), "(2, 1.0) second entry {}", a[1]);
    let a = steering_ula(4, 0.5);
    for (k, z) in a.iter().enumerate() {
        ensure!(close(*z, Complex64::from_polar(1.0, PI / 2.0 * k as f64), 1e-12), "entry {k} is {z}");
    }
    Ok(())
}

fn upa_examples() -> Check {
    ensure!(upa_steering(1, 1, 0.3, 1.1).as_slice() == [Complex64::new(1.0, 0.0)], "1x1 is not [1]");
    ensure!(upa_steering(3, 2, 0.0, 0.0).iter().all(|z| *z == Complex64::new(1.0, 0.0)), "broadside is not all ones");
    let a = upa_steering(2, 2, PI / 2.0, 0.0);
    let want = [1.0, -1.0, 1.0, -1.0];
    for (z, w) in a.iter().zip(want) {
        ensure!(close(*z, Complex64::new(w, 0.0), 1e-12), "got {a:?}");
    }
    Ok(())
}

fn path_loss_examples() -> Check {
    let p = ChannelParams::default();
    let v = path_loss(&p, 20.0).map_err(err)?;
    ensure!((v - 2.5e-4).abs() < 1e-15, "20 m gives {v}");
    let flat = ChannelParams { pathloss_exponent: 0.0, ..p };
    ensure!(path_loss(&flat, 37.0).map_err(err)? == flat.pathloss_ref, "zero exponent is not L");
    Ok(())
}

fn rician_limits() -> Check {
    let cfg = small_system(4, 2, 2);
    let p = ChannelParams { rician_k: 1e12, ..ChannelParams::default() };
    let ch = draw_channel(&cfg, &p, 5).map_err(err)?;
    let los = bs_ris_los(&cfg, ch.angles.as_ref().ok_or("no angle record")?);
    let rel = (&ch.h / Complex64::from(ch.beta_q.sqrt()) - &los).norm() / los.norm();
    ensure!(rel < 1e-5, "K=1e12 relative error {rel}");
    let p0 = ChannelParams { rician_k: 0.0, ..ChannelParams::default() };
    let ch0 = draw_channel(&cfg, &p0, 5).map_err(err)?;
    ensure!(ch0.is_finite() && ch0.h.norm() > 0.0, "K=0 channel is degenerate");
    Ok(())
}

fn ris_examples() -> Check {
    let mut c = StarRisConfig::uniform(3, 0.0, 0.0, 0.6).map_err(err)?;
    c.theta_r[1] = PI / 2.0;
    let phi = c.phi_matrix(Side::Reflection).map_err(err)?;
    ensure!(close(phi[(1, 1)], Complex64::new(0.0, 0.6), 1e-12), "diagonal entry {}", phi[(1, 1)]);
    ensure!((c.alpha_t[1] - 0.8).abs() < 1e-12, "paired amplitude {}", c.alpha_t[1]);
    c.alpha_r = vec![1.0; 3];
    c.alpha_t = vec![0.0; 3];
    c.theta_r = vec![0.0; 3];
    ensure!(c.phi_matrix(Side::Reflection).map_err(err)? == DMatrix::identity(3, 3), "unit reflection is not I");
    ensure!(c.phi_matrix(Side::Transmission).is_err(), "zero transmission amplitude accepted");
    Ok(())
}

fn codebook_examples() -> Check {
    ensure!(dft_codebook(1, 1).codewords == vec![DVector::from_element(1, Complex64::new(1.0, 0.0))], "(1,1)");
    let cb = dft_codebook(2, 1);
    ensure!(close(cb.codewords[1][1], Complex64::new(-1.0, 0.0), 1e-12), "(2,1) second codeword");
    let cb = dft_codebook(2, 2);
    let w = DMatrix::from_columns(&cb.codewords);
    let gram = w.adjoint() * &w;
    ensure!((gram - DMatrix::<Complex64>::identity(4, 4) * Complex64::from(4.0)).norm() < 1e-9, "(2,2) Gram is not 4I");
    Ok(())
}

fn amplitude_examples() -> Check {
    let g = amplitude_grid(1);
    ensure!((g.alpha_r[0] - 0.5f64.sqrt()).abs() < 1e-15 && (g.alpha_t[0] - 0.5f64.sqrt()).abs() < 1e-15, "K=1 split");
    let g = amplitude_grid(3);
    for (a, want) in g.alpha_r.iter().zip([0.25, 0.5, 0.75]) {
        ensure!((a * a - want).abs() < 1e-12, "K=3 level {a}");
    }
    for (r, t) in g.alpha_r.iter().zip(&g.alpha_t) {
        ensure!((r * r + t * t - 1.0).abs() < 1e-12, "coupling broken");
    }
    Ok(())
}

fn pilot_examples() -> Check {
    for users in [1, 4] {
        let mut cfg = small_system(2, 2, 1);
        cfg.user_r_antennas = users;
        cfg.user_t_antennas = users;
        let plan = make_pilots(&cfg);
        let gram = &plan.p * plan.p.adjoint();
        let c = gram[(0, 0)].re;
        ensure!(c > 0.0, "zero pilot energy");
        let off = (gram - DMatrix::<Complex64>::identity(2 * users, 2 * users) * Complex64::from(c)).norm();
        ensure!(off < 1e-12, "pilot rows not orthogonal for {users} antennas: {off}");
    }
    Ok(())
}

fn tensor_examples() -> Check {
    let mut f = ConfigFile::default();
    f.system.bs_antennas = 8;
    f.system.ris_horizontal = 4;
    f.system.ris_vertical = 4;
    f.sounding.amp_levels = 4;
    let scn = Scenario::new(&f).map_err(err)?;
    ensure!(scn.tensor_shape() == [8, 2, 16, 4], "shape {:?}", scn.tensor_shape());
    let ch = scn.draw(1).map_err(err)?;
    let a = sound(&ch, &scn.plan, &scn.codebook, &scn.grid, 0.0, 3).map_err(err)?;
    let b = sound(&ch, &scn.plan, &scn.codebook, &scn.grid, 0.0, 4).map_err(err)?;
    ensure!(a.real_view() == b.real_view(), "noiseless soundings differ");
    Ok(())
}

fn rate_examples() -> Check {
    ensure!(rate_from_gain(0.0, 2.0) == 0.0, "zero gain");
    ensure!((rate_from_gain(2.0, 2.0) - 1.0).abs() < 1e-15, "SNR 1");
    ensure!((rate_from_gain(6.0, 2.0) - 2.0).abs() < 1e-15, "SNR 3");
    Ok(())
}

fn bcd_examples() -> Check {
    let cfg = small_system(2, 2, 1);
    let settings = BcdSettings::default();
    for seed in 0..3 {
        let ch = draw_channel(&cfg, &ChannelParams::default(), seed).map_err(err)?;
        let out = bcd_optimize(&ch, &cfg, &settings, seed).map_err(err)?;
        ensure!(out.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9), "trace decreased for seed {seed}");
        let oracle = exhaustive_oracle(&ch, &cfg, Objective::SumRate, 16, 8, 16).map_err(err)?;
        ensure!(
            out.solution.objective >= oracle.objective - 0.05,
            "seed {seed}: bcd {} vs grid optimum {}",
            out.solution.objective,
            oracle.objective
        );
    }
    Ok(())
}

fn baseline_examples() -> Check {
    let cfg = small_system(4, 2, 2);
    let (cb, grid) = (dft_codebook(2, 2), amplitude_grid(4));
    let ch = draw_channel(&cfg, &ChannelParams::default(), 2).map_err(err)?;
    let a = random_baseline(&ch, &cfg, &cb, &grid, Objective::SumRate, 9).map_err(err)?;
    let b = random_baseline(&ch, &cfg, &cb, &grid, Objective::SumRate, 9).map_err(err)?;
    ensure!(a == b, "not deterministic");
    ensure!(a.rate_r >= 0.0 && a.rate_t >= 0.0, "negative rate");
    Ok(())
}

fn saab_examples() -> Check {
    let shape = [4, 2, 3, 2];
    let m = saab_fit_real(&[vec![1.5; 48], vec![1.5; 48]], shape, &SaabSettings::default()).map_err(err)?;
    ensure!(m.feature_len() == 1, "constant data kept {} features", m.feature_len());
    let samples: Vec<Vec<f64>> =
        (0..12).map(|s| (0..48).map(|i| ((s * 48 + i) as f64 * 0.37).sin()).collect()).collect();
    let full = SaabSettings { energy_threshold: 1.0, ..SaabSettings::default() };
    let m = saab_fit_real(&samples, shape, &full).map_err(err)?;
    let back = m.reconstruct(&m.apply_real(&samples[3]).map_err(err)?).map_err(err)?;
    let e = back.iter().zip(&samples[3]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(e < 1e-8, "reconstruction error {e}");
    Ok(())
}

fn rft_examples() -> Check {
    let s = rft_score(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], 3).map_err(err)?;
    ensure!(s.loss == 0.25, "hand example gives {}", s.loss);
    let s = rft_score(&[0.0, 0.0, 1.0, 1.0], &[0.0, 0.0, 1.0, 1.0], 1).map_err(err)?;
    ensure!(s.loss == 0.0, "perfect split gives {}", s.loss);
    let s = rft_score(&[3.0, 1.0, 2.0], &[5.0; 3], 4).map_err(err)?;
    ensure!(s.loss == 0.0, "constant target gives {}", s.loss);
    Ok(())
}

fn gbdt_examples() -> Check {
    let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
    let m = gbdt_fit(&x, &[2.5; 10], &GbdtParams { rounds: 5, ..GbdtParams::default() }, 0).map_err(err)?;
    ensure!(m.trees.iter().all(|t| t.nodes == vec![TreeNode::Leaf { weight: 0.0 }]), "constant target grew splits");
    ensure!(m.predict(&[7.0, 1.0]).map_err(err)? == 2.5, "constant prediction");
    let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
    let p = GbdtParams {
        rounds: 1,
        max_depth: 0,
        learning_rate: 1.0,
        lambda: 0.0,
        row_subsample: 1.0,
        col_subsample: 1.0,
        ..GbdtParams::default()
    };
    let m = gbdt_fit(&x, &[1.0, 2.0, 4.0, 9.0], &p, 0).map_err(err)?;
    ensure!(m.predict(&[0.0]).map_err(err)? == 4.0, "depth 0 is not the mean");
    ensure!(flops_for(1, 1) == 4 && flops_for(200, 4) == 1201 && flops_for(0, 3) == 1, "flops convention");
    Ok(())
}

fn codec_examples() -> Check {
    let codec = TargetCodec::new(1, 1);
    let ris = StarRisConfig::uniform(1, 0.0, PI / 2.0, 0.6).map_err(err)?;
    let cfg = small_system(1, 1, 1);
    let ch = draw_channel(&cfg, &ChannelParams::default(), 0).map_err(err)?;
    let sol = crate::oracle::PrecodingSolution::evaluate(
        &ch,
        ris,
        DVector::from_element(1, Complex64::new(1.0, 0.0)),
        1.0,
        Objective::SumRate,
    )
    .map_err(err)?;
    let u = codec.encode(&sol).map_err(err)?;
    ensure!((u[0] - 1.0).abs() < 1e-15 && u[1].abs() < 1e-15, "theta_r = 0 encodes as {:?}", &u[..2]);
    ensure!(u[2].abs() < 1e-15 && (u[3] - 1.0).abs() < 1e-15, "theta_t = pi/2 encodes as {:?}", &u[2..4]);
    let d = codec.decode(&[0.0, 1.0, 2.0, 0.0, 0.6, 3.0, 4.0], 4.0).map_err(err)?;
    ensure!((d.ris.theta_r[0] - PI / 2.0).abs() < 1e-15, "(0, 1) decodes to {}", d.ris.theta_r[0]);
    ensure!(d.ris.theta_t[0] == 0.0, "(2, 0) decodes to {}", d.ris.theta_t[0]);
    ensure!((d.w.norm_squared() - 4.0).abs() < 1e-12, "precoder not rescaled");
    Ok(())
}

fn dataset_examples() -> Check {
    let scn = Scenario::new(&tiny_file()).map_err(err)?;
    let a = generate_dataset(&scn, 2, 7, Split::Train).map_err(err)?;
    let b = generate_dataset(&scn, 2, 7, Split::Train).map_err(err)?;
    ensure!(a == b, "regeneration differs");
    let bytes = a.to_container().map_err(err)?.to_bytes();
    let back = Dataset::from_container(&Container::from_bytes(&bytes).map_err(err)?).map_err(err)?;
    ensure!(back.to_container().map_err(err)?.to_bytes() == bytes, "serialization is not bit-exact");
    Ok(())
}

fn training_examples() -> Check {
    let file = tiny_file();
    let scn = Scenario::new(&file).map_err(err)?;
    let ds = generate_dataset(&scn, 20, 1, Split::Train).map_err(err)?;
    let a = train(&ds, &file).map_err(err)?;
    let b = train(&ds, &file).map_err(err)?;
    ensure!(a.hash() == b.hash(), "training is not deterministic");
    let d = crate::pipeline::infer(&a, &ds.samples[0].tensor, &scn.system).map_err(err)?;
    d.ris.validate().map_err(err)?;
    let p = d.w.norm_squared();
    ensure!((p - scn.system.transmit_power).abs() <= 1e-9 * scn.system.transmit_power, "power {p}");
    Ok(())
}

fn degenerate_flops() -> Check {
    let mut file = tiny_file();
    file.gbdt.rounds = 0;
    file.saab.energy_threshold = 0.0;
    let scn = Scenario::new(&file).map_err(err)?;
    let ds = generate_dataset(&scn, 6, 1, Split::Train).map_err(err)?;
    let model = train(&ds, &file).map_err(err)?;
    ensure!(model.saab.feature_len() == 1, "kept {} features", model.saab.feature_len());
    let r = flops_report(Some(&model), &file, &file.bcd).map_err(err)?;
    // one DC projection per fiber per stage, one base add per target dimension
    let [a, p, e, k] = scn.tensor_shape();
    let dc = dc_macs([2 * a, p, e, k]);
    let want = 2 * dc + scn.codec.dim() as u64 + scn.codec.decode_flops();
    ensure!(r.gl() == want, "gl {} vs {want}", r.gl());
    let again = flops_report(Some(&model), &file, &file.bcd).map_err(err)?;
    ensure!(again == r, "counts are not a pure function of the model");
    Ok(())
}

/// Multiply-adds of a DC-only cascade: each stage collapses one axis to length 1.
fn dc_macs(shape: [usize; 4]) -> u64 {
    let mut s = shape;
    let mut total = 0;
    for ax in [0usize, 3, 2, 1] {
        let d = s[ax];
        s[ax] = 1;
        total += (s.iter().product::<usize>() * d) as u64;
    }
    total
}

fn sweep_examples() -> Check {
    let f = tiny_file();
    let plan = SweepPlan { axis: Axis::Power, values: vec![30.0], schemes: vec![Scheme::Random], n_eval: 1, seed: 3 };
    let r = run_sweep(&f, &plan, None).map_err(err)?;
    ensure!(r.rows.len() == 1 && r.rows[0].estimate.mean.is_finite(), "single point gave {:?}", r.rows);
    ensure!(run_sweep(&f, &plan, None).map_err(err)?.to_csv("m") == r.to_csv("m"), "rerun differs");
    Ok(())
}

fn config_examples() -> Check {
    ensure!(ConfigFile::from_toml_str("[system]\nbs_antenas = 4\n").is_err(), "typo accepted");
    ensure!(ConfigFile::from_toml_with_overrides("", &["gbdt.round=3".into()]).is_err(), "typo override accepted");
    let f = ConfigFile::from_toml_with_overrides("", &["gbdt.rounds=3".into()]).map_err(err)?;
    ensure!(f.gbdt.rounds == 3, "override ignored");
    Ok(())
}

pub type CheckFn = fn() -> Check;

pub const CHECKS: &[(&str, CheckFn)] = &[
    ("ula steering examples", ula_examples),
    ("upa steering examples", upa_examples),
    ("path loss examples", path_loss_examples),
    ("rician factor limits", rician_limits),
    ("surface coefficient examples", ris_examples),
    ("dft codebook examples", codebook_examples),
    ("amplitude grid examples", amplitude_examples),
    ("pilot orthogonality", pilot_examples),
    ("pilot tensor shape and determinism", tensor_examples),
    ("rate examples", rate_examples),
    ("bcd monotone and near grid optimum", bcd_examples),
    ("random baseline determinism", baseline_examples),
    ("saab dc-only and invertibility", saab_examples),
    ("rft hand examples", rft_examples),
    ("gbdt examples", gbdt_examples),
    ("target codec examples", codec_examples),
    ("dataset determinism and round trip", dataset_examples),
    ("training determinism and decoder contract", training_examples),
    ("degenerate model flops", degenerate_flops),
    ("single-point sweep", sweep_examples),
    ("config strictness", config_examples),
];

/// Runs every check; a panic inside a check counts as a failure.
pub fn run_selftest() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(name, check)| {
            let start = Instant::now();
            let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
                Err(p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()))
            });
            let (passed, detail) = match outcome {
                Ok(()) => (true, String::new()),
                Err(d) => (false, d),
            };
            CheckResult { name, passed, detail, millis: start.elapsed().as_millis() }
        })
        .collect()
}
