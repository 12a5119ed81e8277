//! `starris-gl`: dataset generation, training, evaluation, sweeps, FLOPs
//! tables and the worked-example self test.

mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use starris_gl::config::ConfigFile;
use starris_gl::container::{write_atomic, Container};
use starris_gl::dataset::{generate_dataset_resumable, Dataset, Scenario, Split};
use starris_gl::flops::flops_report;
use starris_gl::pipeline::{train, GlModel};
use starris_gl::selftest::run_selftest;
use starris_gl::sweep::{evaluate_point, run_sweep, Axis, ExperimentReport, PointResult, Scheme, SweepPlan};
use starris_gl::{Error, Result};

use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "starris-gl", version, about = "STAR-RIS broadcast simulator and CSI-free green-learning precoder")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, replacing `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true, env = "STARRIS_GL_OUT", default_value = "out")]
    out_dir: PathBuf,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled dataset (resumes a partial file).
    GenData {
        /// train, test or evalN.
        #[arg(long, default_value = "train")]
        split: String,
        /// Sample count; defaults to experiment.n_train or n_test.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the Saab, RFT and boosted-tree stages on a dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean rates of every scheme at the configured operating point.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        n_eval: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "bcd,gl,random")]
        schemes: Vec<String>,
    },
    /// Rate versus power, element count or distance.
    Sweep {
        /// power, elements or distance.
        axis: String,
        /// `a,b,c`, `lo..hi` (step 10) or `lo..hi:step`.
        values: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        n_eval: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "bcd,gl,random")]
        schemes: Vec<String>,
    },
    /// Per-inference FLOPs of GL and BCD.
    Flops {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the worked-example checks.
    Selftest,
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse axis values `{s}`"));
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step.trim().parse::<f64>().map_err(|_| bad())?),
            None => (rest, 10.0),
        };
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        if step.is_nan() || step <= 0.0 || hi < lo {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count).map(|i| lo + step * i as f64).collect());
    }
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect()
}

fn parse_schemes(v: &[String]) -> Result<Vec<Scheme>> {
    v.iter().map(|s| s.parse()).collect()
}

fn load_config(g: &Global) -> Result<ConfigFile> {
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("experiment.seed={seed}"));
    }
    match &g.config {
        Some(path) => ConfigFile::load(path, &overrides),
        None => ConfigFile::from_toml_with_overrides("", &overrides),
    }
}

/// Loads a model and refuses one fitted under a different dataset shape.
fn load_model(path: &Path, file: &ConfigFile) -> Result<GlModel> {
    let model = GlModel::load(path)?;
    if model.shape_hash != file.shape_hash() {
        return Err(Error::HashMismatch { expected: file.shape_hash(), found: model.shape_hash });
    }
    Ok(model)
}

fn params(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn write_stamped(c: &mut Container, m: &RunManifest, path: &Path) -> Result<()> {
    c.set("manifest", &m.id);
    c.write(path)
}

fn cmd_gen_data(g: &Global, file: &ConfigFile, split: &str, n: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let split = Split::parse(split)?;
    let n = n.unwrap_or(match split {
        Split::Train => file.experiment.n_train,
        Split::Test => file.experiment.n_test,
        Split::Eval(_) => file.experiment.n_eval,
    });
    let out = out.unwrap_or_else(|| g.out_dir.join(format!("dataset-{}.bin", split.label())));
    let m = RunManifest::new(
        "gen-data",
        params(&[("split", split.label()), ("n", n.to_string())]),
        file,
        vec![out.clone()],
    );
    m.write(&g.out_dir)?;
    let scn = Scenario::new(file)?;
    let ds = generate_dataset_resumable(&scn, n, file.experiment.seed, split, &out, file.experiment.checkpoint_every)?;
    write_stamped(&mut ds.to_container()?, &m, &out)?;
    println!("wrote {} samples to {} (mean label sum rate {:.4})", ds.len(), out.display(), ds.mean_label_sum_rate());
    m.finish(&g.out_dir)?;
    Ok(())
}

fn cmd_train(g: &Global, file: &ConfigFile, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let data = data.unwrap_or_else(|| g.out_dir.join("dataset-train.bin"));
    let out = out.unwrap_or_else(|| g.out_dir.join("model.bin"));
    let ds = Dataset::load(&data)?;
    if ds.shape_hash != file.shape_hash() {
        return Err(Error::HashMismatch { expected: file.shape_hash(), found: ds.shape_hash });
    }
    let m = RunManifest::new(
        "train",
        params(&[("data", path_str(&data)), ("dataset_hash", ds.config_hash.clone())]),
        file,
        vec![out.clone()],
    );
    m.write(&g.out_dir)?;
    let model = train(&ds, file)?;
    write_stamped(&mut model.to_container(), &m, &out)?;
    let mt = &model.metrics;
    let ratio: f64 = mt
        .validation_mse
        .iter()
        .zip(&mt.validation_mean_mse)
        .filter(|(_, b)| **b > 0.0)
        .map(|(a, b)| a / b)
        .sum::<f64>()
        / mt.validation_mse.len().max(1) as f64;
    println!(
        "trained on {} samples: {} Saab features, {} selected{}, mean validation mse ratio {:.4}",
        mt.n_train,
        mt.feature_len,
        mt.selection_size,
        if mt.selection_shrunk { " (selection shrunk to the feature count)" } else { "" },
        ratio
    );
    println!("model {} hash {}", out.display(), model.hash());
    m.finish(&g.out_dir)?;
    Ok(())
}

fn write_report(m: &RunManifest, report: &ExperimentReport, csv: &Path) -> Result<()> {
    write_atomic(csv, report.to_csv(&m.id).as_bytes())?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_atomic(&csv.with_extension("json"), json.as_bytes())?;
    for r in &report.rows {
        let e = &r.estimate;
        println!(
            "{:>10} {:<7} {:.4} [{:.4}, {:.4}] n={}",
            r.axis_value,
            r.scheme.label(),
            e.mean,
            e.ci_low,
            e.ci_high,
            e.n
        );
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn cmd_eval(
    g: &Global,
    file: &ConfigFile,
    model: Option<PathBuf>,
    n_eval: Option<usize>,
    schemes: &[String],
) -> Result<()> {
    let schemes = parse_schemes(schemes)?;
    let n_eval = n_eval.unwrap_or(file.experiment.n_eval);
    let model_path = model.unwrap_or_else(|| g.out_dir.join("model.bin"));
    let gl = if schemes.contains(&Scheme::Gl) { Some(load_model(&model_path, file)?) } else { None };
    let csv = g.out_dir.join("eval.csv");
    let mut p = vec![
        ("n_eval", n_eval.to_string()),
        ("schemes", schemes.iter().map(|s| s.label()).collect::<Vec<_>>().join(",")),
    ];
    if let Some(model) = &gl {
        p.push(("model_hash", model.hash()));
    }
    let m = RunManifest::new("eval", params(&p), file, vec![csv.clone(), csv.with_extension("json")]);
    m.write(&g.out_dir)?;
    let start = std::time::Instant::now();
    let power = file.system.transmit_power_dbm;
    let results = evaluate_point(file, &schemes, gl.as_ref(), n_eval, file.experiment.seed)?;
    let mean_of = |s: Scheme| results.iter().find(|(k, _)| *k == s).map(|(_, e)| e.mean);
    let ratio = match (mean_of(Scheme::Gl), mean_of(Scheme::Bcd)) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    };
    let report = ExperimentReport {
        axis: Axis::Power,
        values: vec![power],
        rows: results
            .into_iter()
            .map(|(scheme, estimate)| PointResult { axis_value: power, scheme, estimate })
            .collect(),
        seed: file.experiment.seed,
        config_hash: file.hash(),
        gl_bcd_ratio: vec![ratio],
        flops: flops_report(gl.as_ref(), file, &file.bcd).ok(),
        retrained: false,
        runtime_secs: start.elapsed().as_secs_f64(),
    };
    write_report(&m, &report, &csv)?;
    if let Some(r) = ratio {
        println!("gl/bcd {r:.4}");
    }
    m.finish(&g.out_dir)?;
    Ok(())
}

fn cmd_sweep(
    g: &Global,
    file: &ConfigFile,
    axis: &str,
    values: &str,
    model: Option<PathBuf>,
    n_eval: Option<usize>,
    schemes: &[String],
) -> Result<()> {
    let axis: Axis = axis.parse()?;
    let mut plan = SweepPlan::new(axis, parse_values(values)?, file);
    plan.schemes = parse_schemes(schemes)?;
    if let Some(n) = n_eval {
        plan.n_eval = n;
    }
    let retrains = axis.retrains(file);
    let gl = match (&model, plan.schemes.contains(&Scheme::Gl) && !retrains) {
        (Some(path), true) => Some(load_model(path, file)?),
        (Some(_), false) => {
            log::warn!("--model is ignored: this sweep retrains per point or does not run gl");
            None
        }
        (None, _) => None,
    };
    let csv = g.out_dir.join(format!("sweep-{}.csv", axis.label()));
    let mut p = vec![
        ("axis", axis.label().to_string()),
        ("values", plan.values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
        ("n_eval", plan.n_eval.to_string()),
        ("schemes", plan.schemes.iter().map(|s| s.label()).collect::<Vec<_>>().join(",")),
    ];
    if let Some(model) = &gl {
        p.push(("model_hash", model.hash()));
    }
    let m = RunManifest::new("sweep", params(&p), file, vec![csv.clone(), csv.with_extension("json")]);
    m.write(&g.out_dir)?;
    let report = run_sweep(file, &plan, gl.as_ref())?;
    write_report(&m, &report, &csv)?;
    m.finish(&g.out_dir)?;
    Ok(())
}

fn cmd_flops(g: &Global, file: &ConfigFile, model: Option<PathBuf>) -> Result<()> {
    let gl = model.as_deref().map(|p| load_model(p, file)).transpose()?;
    let out = g.out_dir.join("flops.txt");
    let mut p = vec![];
    if let Some(model) = &gl {
        p.push(("model_hash", model.hash()));
    }
    let m = RunManifest::new("flops", params(&p), file, vec![out.clone()]);
    m.write(&g.out_dir)?;
    let report = flops_report(gl.as_ref(), file, &file.bcd)?;
    let table = format!("# manifest={}\n{}", m.id, report.to_table());
    write_atomic(&out, table.as_bytes())?;
    print!("{}", report.to_table());
    m.finish(&g.out_dir)?;
    Ok(())
}

fn cmd_selftest() -> Result<bool> {
    let results = run_selftest();
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        if r.detail.is_empty() {
            println!("{status} {} ({} ms)", r.name, r.millis);
        } else {
            println!("{status} {} ({} ms): {}", r.name, r.millis, r.detail);
        }
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    Ok(failed == 0)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 10,
        Error::HashMismatch { .. } => 11,
        Error::Io(_) => 12,
        Error::Format { .. } => 13,
        Error::Data(_) => 14,
        Error::Pipeline { .. } => 15,
        Error::Domain(_) => 16,
        Error::Dimension(_) => 17,
        Error::Constraint { .. } => 18,
        Error::Numerical { .. } => 19,
        Error::GridTooLarge { .. } => 20,
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let g = &cli.global;
    if let Command::Selftest = cli.command {
        return cmd_selftest();
    }
    let file = load_config(g)?;
    match cli.command {
        Command::GenData { split, n, out } => cmd_gen_data(g, &file, &split, n, out)?,
        Command::Train { data, out } => cmd_train(g, &file, data, out)?,
        Command::Eval { model, n_eval, schemes } => cmd_eval(g, &file, model, n_eval, &schemes)?,
        Command::Sweep { axis, values, model, n_eval, schemes } => {
            cmd_sweep(g, &file, &axis, &values, model, n_eval, &schemes)?
        }
        Command::Flops { model } => cmd_flops(g, &file, model)?,
        Command::Selftest => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(30),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            eprintln!("{}", serde_json::json!({ "error": e.category(), "message": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}
