//! Rate-versus-parameter sweeps over fresh channels.
//!
//! Every point evaluates the same channel, noise and baseline seeds (common
//! random numbers), so differences between points come from the swept
//! parameter and not from resampling.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ConfigFile;
use crate::dataset::{generate_dataset, sample_seeds, Scenario, Split};
use crate::error::{Error, Result};
use crate::flops::{flops_report, FlopsReport};
use crate::oracle::{bcd_optimize, random_baseline};
use crate::pipeline::{infer, train, GlModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Transmit power in dBm.
    Power,
    /// Total RIS element count; factored into the squarest `N_v x N_h` grid.
    Elements,
    /// RIS to user `r` distance in meters.
    Distance,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Power => "power",
            Axis::Elements => "elements",
            Axis::Distance => "distance",
        }
    }

    /// Whether points on this axis retrain the model, per the experiment section.
    pub fn retrains(self, file: &ConfigFile) -> bool {
        match self {
            Axis::Power => file.experiment.retrain_power,
            Axis::Elements => file.experiment.retrain_elements,
            Axis::Distance => file.experiment.retrain_distance,
        }
    }

    /// The config for one sweep point.
    pub fn apply(self, file: &ConfigFile, value: f64) -> Result<ConfigFile> {
        let mut out = file.clone();
        match self {
            Axis::Power => {
                if !value.is_finite() {
                    return Err(Error::Domain(format!("transmit power {value} dBm is not finite")));
                }
                out.system.transmit_power_dbm = value;
            }
            Axis::Elements => {
                if !(value >= 1.0) || value.fract() != 0.0 {
                    return Err(Error::Domain(format!("element count {value} is not a positive integer")));
                }
                let (v, h) = factor_grid(value as usize);
                out.system.ris_vertical = v;
                out.system.ris_horizontal = h;
            }
            Axis::Distance => out = file.with_user_r_distance(value)?,
        }
        out.validate()?;
        Ok(out)
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(Axis::Power),
            "elements" => Ok(Axis::Elements),
            "distance" => Ok(Axis::Distance),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}` (power, elements, distance)"))),
        }
    }
}

/// `(n_v, n_h)` with `n_v` the largest divisor of `n` not above `sqrt(n)`.
pub fn factor_grid(n: usize) -> (usize, usize) {
    let mut v = 1;
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            v = d;
        }
        d += 1;
    }
    (v, n / v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Bcd,
    Gl,
    Random,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Bcd, Scheme::Gl, Scheme::Random];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Bcd => "bcd",
            Scheme::Gl => "gl",
            Scheme::Random => "random",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bcd" => Ok(Scheme::Bcd),
            "gl" => Ok(Scheme::Gl),
            "random" => Ok(Scheme::Random),
            _ => Err(Error::Config(format!("unknown scheme `{s}` (bcd, gl, random)"))),
        }
    }
}

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Data("no values to summarize".into()));
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        let half = 1.96 * sd / (n as f64).sqrt();
        Ok(Self { mean, ci_low: mean - half, ci_high: mean + half, n })
    }

    /// `self` is above `other` unless the intervals overlap.
    pub fn not_below(&self, other: &Estimate) -> bool {
        self.mean >= other.mean || self.ci_high >= other.ci_low
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResult {
    pub axis_value: f64,
    pub scheme: Scheme,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPlan {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub n_eval: usize,
    pub seed: u64,
}

impl SweepPlan {
    /// All schemes, `n_eval` and seed from the experiment section.
    pub fn new(axis: Axis, values: Vec<f64>, file: &ConfigFile) -> Self {
        Self { axis, values, schemes: Scheme::ALL.to_vec(), n_eval: file.experiment.n_eval, seed: file.experiment.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub rows: Vec<PointResult>,
    pub seed: u64,
    pub config_hash: String,
    /// One entry per point: mean GL rate over mean BCD rate, when both were run.
    pub gl_bcd_ratio: Vec<Option<f64>>,
    pub flops: Option<FlopsReport>,
    pub retrained: bool,
    pub runtime_secs: f64,
}

impl ExperimentReport {
    pub fn get(&self, axis_value: f64, scheme: Scheme) -> Option<&Estimate> {
        self.rows.iter().find(|r| r.axis_value == axis_value && r.scheme == scheme).map(|r| &r.estimate)
    }

    /// Estimates of one scheme in axis order.
    pub fn curve(&self, scheme: Scheme) -> Vec<Estimate> {
        self.values.iter().filter_map(|&v| self.get(v, scheme).copied()).collect()
    }

    /// CSV with `#` comment lines naming the manifest and config hash, then
    /// `axis_value,scheme,mean,ci_low,ci_high,n`. Runtime is left out so that
    /// reruns are byte-identical.
    pub fn to_csv(&self, manifest: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# manifest={manifest}");
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        let _ = writeln!(out, "# axis={} seed={}", self.axis.label(), self.seed);
        out += "axis_value,scheme,mean,ci_low,ci_high,n\n";
        for r in &self.rows {
            let e = &r.estimate;
            let _ =
                writeln!(out, "{},{},{},{},{},{}", r.axis_value, r.scheme.label(), e.mean, e.ci_low, e.ci_high, e.n);
        }
        out
    }
}

/// Trains a model on `n` fresh training samples drawn under `file`.
pub fn train_fresh(file: &ConfigFile, n: usize) -> Result<GlModel> {
    let scn = Scenario::new(file)?;
    let ds = generate_dataset(&scn, n, file.experiment.seed, Split::Train)?;
    train(&ds, file)
}

/// Objective values of each scheme on `n_eval` shared channels at one point.
pub fn evaluate_point(
    file: &ConfigFile,
    schemes: &[Scheme],
    model: Option<&GlModel>,
    n_eval: usize,
    seed: u64,
) -> Result<Vec<(Scheme, Estimate)>> {
    if n_eval == 0 {
        return Err(Error::Domain("n_eval must be >= 1".into()));
    }
    let scn = Scenario::new(file)?;
    let objective = file.bcd.objective;
    let sigma2 = scn.system.noise_power;
    let per_sample: Vec<Vec<f64>> = (0..n_eval as u64)
        .into_par_iter()
        .map(|i| {
            let seeds = sample_seeds(seed, Split::Eval(0), i);
            let ch = scn.draw(seeds.channel)?;
            schemes
                .iter()
                .map(|s| match s {
                    Scheme::Bcd => Ok(bcd_optimize(&ch, &scn.system, &file.bcd, seeds.bcd)?.solution.objective),
                    Scheme::Random => {
                        Ok(random_baseline(&ch, &scn.system, &scn.codebook, &scn.grid, objective, seeds.bcd)?.objective)
                    }
                    Scheme::Gl => {
                        let model = model
                            .ok_or_else(|| Error::Pipeline { stage: "sweep", message: "gl needs a model".into() })?;
                        let tensor = scn.sound(&ch, seeds.noise)?;
                        Ok(infer(model, &tensor, &scn.system)?.evaluate(&ch, sigma2, objective)?.objective)
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    schemes
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let v: Vec<f64> = per_sample.iter().map(|row| row[k]).collect();
            Ok((s, Estimate::from_values(&v)?))
        })
        .collect()
}

/// Runs every point of `plan`. GL uses `model` unless the axis retrains, in
/// which case each point trains on `experiment.sweep_train` fresh samples;
/// without a model and without retraining, one model is trained on `base`.
pub fn run_sweep(base: &ConfigFile, plan: &SweepPlan, model: Option<&GlModel>) -> Result<ExperimentReport> {
    base.validate()?;
    if plan.values.is_empty() {
        return Err(Error::Domain("sweep needs at least one axis value".into()));
    }
    if plan.schemes.is_empty() {
        return Err(Error::Domain("sweep needs at least one scheme".into()));
    }
    let start = Instant::now();
    let wants_gl = plan.schemes.contains(&Scheme::Gl);
    let retrain = wants_gl && plan.axis.retrains(base);
    let shared: Option<GlModel> = match (wants_gl, retrain, model) {
        (true, false, None) => {
            log::info!("training one model on {} samples", base.experiment.sweep_train);
            Some(train_fresh(base, base.experiment.sweep_train)?)
        }
        _ => None,
    };
    let fixed = shared.as_ref().or(model);

    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &value in &plan.values {
        let point = plan.axis.apply(base, value)?;
        let local = if retrain {
            log::info!("{}={value}: training on {} samples", plan.axis.label(), base.experiment.sweep_train);
            Some(train_fresh(&point, base.experiment.sweep_train)?)
        } else {
            None
        };
        let m = local.as_ref().or(fixed);
        let results = evaluate_point(&point, &plan.schemes, m, plan.n_eval, plan.seed)?;
        let mean_of = |s: Scheme| results.iter().find(|(k, _)| *k == s).map(|(_, e)| e.mean);
        ratios.push(match (mean_of(Scheme::Gl), mean_of(Scheme::Bcd)) {
            (Some(g), Some(b)) if b != 0.0 => Some(g / b),
            _ => None,
        });
        log::info!(
            "{}={value}: {}",
            plan.axis.label(),
            results.iter().map(|(s, e)| format!("{}={:.4}", s.label(), e.mean)).collect::<Vec<_>>().join(" ")
        );
        rows.extend(results.into_iter().map(|(scheme, estimate)| PointResult { axis_value: value, scheme, estimate }));
    }
    let flops = flops_report(fixed, base, &base.bcd).ok();
    Ok(ExperimentReport {
        axis: plan.axis,
        values: plan.values.clone(),
        rows,
        seed: plan.seed,
        config_hash: base.hash(),
        gl_bcd_ratio: ratios,
        flops,
        retrained: retrain,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ConfigFile {
        let mut f = ConfigFile::default();
        f.system.bs_antennas = 2;
        f.system.ris_horizontal = 2;
        f.system.ris_vertical = 1;
        f.sounding.amp_levels = 2;
        f
    }

    #[test]
    fn grid_factoring() {
        assert_eq!(factor_grid(16), (4, 4));
        assert_eq!(factor_grid(12), (3, 4));
        assert_eq!(factor_grid(7), (1, 7));
        assert_eq!(factor_grid(1), (1, 1));
    }

    #[test]
    fn estimate_interval() {
        let e = Estimate::from_values(&[1.0, 3.0]).unwrap();
        assert_eq!(e.mean, 2.0);
        let half = 1.96 * 2f64.sqrt() / 2f64.sqrt();
        assert!((e.ci_high - 2.0 - half).abs() < 1e-12);
        let one = Estimate::from_values(&[5.0]).unwrap();
        assert_eq!((one.ci_low, one.ci_high), (5.0, 5.0));
        assert!(Estimate::from_values(&[]).is_err());
    }

    #[test]
    fn single_random_point() {
        let f = tiny();
        let plan =
            SweepPlan { axis: Axis::Power, values: vec![30.0], schemes: vec![Scheme::Random], n_eval: 1, seed: 3 };
        let r = run_sweep(&f, &plan, None).unwrap();
        assert_eq!(r.rows.len(), 1);
        let e = r.rows[0].estimate;
        assert!(e.mean.is_finite() && e.ci_low == e.mean && e.n == 1);
        let csv = r.to_csv("m");
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 2);
        assert_eq!(run_sweep(&f, &plan, None).unwrap().to_csv("m"), csv);
    }

    #[test]
    fn axis_application() {
        let f = tiny();
        assert_eq!(Axis::Power.apply(&f, 12.0).unwrap().system.transmit_power_dbm, 12.0);
        let e = Axis::Elements.apply(&f, 6.0).unwrap();
        assert_eq!((e.system.ris_vertical, e.system.ris_horizontal), (2, 3));
        assert!(Axis::Elements.apply(&f, 2.5).is_err());
        let d = Axis::Distance.apply(&f, 17.0).unwrap();
        assert!((d.system().unwrap().ris_user_r_distance() - 17.0).abs() < 1e-9);
        assert_eq!(d.system.user_t_position, f.system.user_t_position);
        assert!("heat".parse::<Axis>().is_err());
    }
}
