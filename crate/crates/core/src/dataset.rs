//! Labelled pilot-tensor datasets: channel draw, coordinate-ascent label,
//! encoded regression target and the sounded tensor for every sample.

use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::channel::{draw_channel, ChannelRealization};
use crate::codec::TargetCodec;
use crate::config::{ChannelParams, ConfigFile, SystemConfig};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::oracle::{bcd_optimize, PrecodingSolution};
use crate::ris::{amplitude_grid, dft_codebook, AmplitudeGrid, PhaseCodebook, StarRisConfig};
use crate::seeds::{derive_seed, tag};
use crate::sounding::{make_pilots, sound, PilotPlan, ReceivedPilotTensor};

/// Everything derived from a config that sampling, training and inference share.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ConfigFile,
    pub system: SystemConfig,
    pub plan: PilotPlan,
    pub codebook: PhaseCodebook,
    pub grid: AmplitudeGrid,
    pub codec: TargetCodec,
}

impl Scenario {
    pub fn new(file: &ConfigFile) -> Result<Self> {
        file.validate()?;
        let system = file.system()?;
        Ok(Self {
            plan: make_pilots(&system),
            codebook: dft_codebook(system.ris_horizontal, system.ris_vertical),
            grid: amplitude_grid(file.sounding.amp_levels),
            codec: TargetCodec::for_system(&system),
            file: file.clone(),
            system,
        })
    }

    pub fn channel_params(&self) -> &ChannelParams {
        &self.file.channel
    }

    pub fn draw(&self, seed: u64) -> Result<ChannelRealization> {
        draw_channel(&self.system, &self.file.channel, seed)
    }

    pub fn sound(&self, ch: &ChannelRealization, noise_seed: u64) -> Result<ReceivedPilotTensor> {
        sound(ch, &self.plan, &self.codebook, &self.grid, self.system.uplink_noise_power, noise_seed)
    }

    /// `(M, N_p, N, K_amp)`.
    pub fn tensor_shape(&self) -> [usize; 4] {
        [self.system.bs_antennas, self.plan.n_pilots(), self.codebook.len(), self.grid.len()]
    }
}

/// Which family of seeds a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    /// Fresh channels for sweep point `i`.
    Eval(u64),
}

impl Split {
    fn tags(self) -> [u64; 2] {
        match self {
            Split::Train => [tag::TRAIN, 0],
            Split::Test => [tag::TEST, 0],
            Split::Eval(i) => [tag::EVAL, i],
        }
    }

    pub fn label(self) -> String {
        match self {
            Split::Train => "train".into(),
            Split::Test => "test".into(),
            Split::Eval(i) => format!("eval{i}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => s
                .strip_prefix("eval")
                .and_then(|i| i.parse().ok())
                .map(Split::Eval)
                .ok_or_else(|| Error::format(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSeeds {
    pub channel: u64,
    pub noise: u64,
    pub bcd: u64,
}

pub fn sample_seeds(master: u64, split: Split, index: u64) -> SampleSeeds {
    let [a, b] = split.tags();
    SampleSeeds {
        channel: derive_seed(master, &[a, b, tag::CHANNEL, index]),
        noise: derive_seed(master, &[a, b, tag::NOISE, index]),
        bcd: derive_seed(master, &[a, b, tag::BCD, index]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: u64,
    pub seeds: SampleSeeds,
    pub tensor: ReceivedPilotTensor,
    /// Canonicalized coordinate-ascent solution under perfect CSI.
    pub label: PrecodingSolution,
    pub iterations: usize,
    pub targets: Vec<f64>,
}

pub fn make_sample(scn: &Scenario, master: u64, split: Split, index: u64) -> Result<Sample> {
    let seeds = sample_seeds(master, split, index);
    let ch = scn.draw(seeds.channel)?;
    let out = bcd_optimize(&ch, &scn.system, &scn.file.bcd, seeds.bcd)?;
    let label = out.solution.canonicalized();
    let targets = scn.codec.encode(&label)?;
    let tensor = scn.sound(&ch, seeds.noise)?;
    Ok(Sample { index, seeds, tensor, label, iterations: out.iterations, targets })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config_hash: String,
    pub shape_hash: String,
    pub master_seed: u64,
    pub split: Split,
    pub samples: Vec<Sample>,
}

/// Generates samples `0..n` in parallel; the result does not depend on thread count.
pub fn generate_dataset(scn: &Scenario, n: usize, master: u64, split: Split) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Data(format!("a dataset needs at least 2 samples, got {n}")));
    }
    let samples = generate_range(scn, 0..n as u64, master, split)?;
    Ok(Dataset { config_hash: scn.file.hash(), shape_hash: scn.file.shape_hash(), master_seed: master, split, samples })
}

fn generate_range(scn: &Scenario, range: std::ops::Range<u64>, master: u64, split: Split) -> Result<Vec<Sample>> {
    range.into_par_iter().map(|i| make_sample(scn, master, split, i)).collect()
}

/// Like [`generate_dataset`] but checkpoints to `path` every `every` samples and
/// resumes from an existing partial file written with the same config and seed.
pub fn generate_dataset_resumable(
    scn: &Scenario,
    n: usize,
    master: u64,
    split: Split,
    path: &Path,
    every: usize,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Data(format!("a dataset needs at least 2 samples, got {n}")));
    }
    let mut ds = if path.exists() {
        let ds = Dataset::load(path)?;
        if ds.config_hash != scn.file.hash() {
            return Err(Error::HashMismatch { expected: scn.file.hash(), found: ds.config_hash });
        }
        if ds.master_seed != master || ds.split != split {
            return Err(Error::Config(format!("{} was generated with a different seed or split", path.display())));
        }
        ds
    } else {
        Dataset {
            config_hash: scn.file.hash(),
            shape_hash: scn.file.shape_hash(),
            master_seed: master,
            split,
            samples: Vec::new(),
        }
    };
    ds.samples.truncate(n);
    let every = every.max(1);
    while ds.samples.len() < n {
        let start = ds.samples.len() as u64;
        let end = (start + every as u64).min(n as u64);
        ds.samples.extend(generate_range(scn, start..end, master, split)?);
        ds.save(path)?;
    }
    if !path.exists() {
        ds.save(path)?;
    }
    Ok(ds)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_container(&self) -> Result<Container> {
        let first = self.samples.first().ok_or_else(|| Error::Data("cannot serialize an empty dataset".into()))?;
        let shape = first.tensor.shape;
        let (m, n_el, d) = (first.label.w.len(), first.label.ris.len(), first.targets.len());
        let k = self.samples.len();
        let mut c = Container::new("dataset");
        c.set("config_hash", &self.config_hash);
        c.set("shape_hash", &self.shape_hash);
        c.set("master_seed", self.master_seed);
        c.set("split", self.split.label());
        c.set("samples", k);
        let mut seeds = Vec::with_capacity(4 * k);
        let mut tensors = Vec::with_capacity(k * first.tensor.data.len());
        let (mut w, mut tr, mut tt, mut ar, mut at) = (vec![], vec![], vec![], vec![], vec![]);
        let (mut rates, mut iters, mut targets) = (vec![], vec![], vec![]);
        for s in &self.samples {
            if s.tensor.shape != shape || s.label.w.len() != m || s.label.ris.len() != n_el || s.targets.len() != d {
                return Err(Error::Dimension(format!("sample {} does not match the dataset shape", s.index)));
            }
            seeds.extend([s.index, s.seeds.channel, s.seeds.noise, s.seeds.bcd]);
            tensors.extend_from_slice(&s.tensor.data);
            w.extend(s.label.w.iter().copied());
            tr.extend_from_slice(&s.label.ris.theta_r);
            tt.extend_from_slice(&s.label.ris.theta_t);
            ar.extend_from_slice(&s.label.ris.alpha_r);
            at.extend_from_slice(&s.label.ris.alpha_t);
            rates.extend([s.label.rate_r, s.label.rate_t, s.label.objective]);
            iters.push(s.iterations as u64);
            targets.extend_from_slice(&s.targets);
        }
        c.push_u64("seeds", &[k, 4], seeds);
        c.push_c128("tensors", &[k, shape[0], shape[1], shape[2], shape[3]], tensors);
        c.push_c128("w", &[k, m], w);
        c.push_f64("theta_r", &[k, n_el], tr);
        c.push_f64("theta_t", &[k, n_el], tt);
        c.push_f64("alpha_r", &[k, n_el], ar);
        c.push_f64("alpha_t", &[k, n_el], at);
        c.push_f64("rates", &[k, 3], rates);
        c.push_u64("iterations", &[k], iters);
        c.push_f64("targets", &[k, d], targets);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("dataset")?;
        let k: usize = c.get_parsed("samples")?;
        let (tshape, tensors) = c.c128s("tensors")?;
        if tshape.len() != 5 || tshape[0] != k {
            return Err(Error::format("dataset tensors must have shape (samples, M, N_p, N, K)"));
        }
        let shape = [tshape[1], tshape[2], tshape[3], tshape[4]];
        let per: usize = shape.iter().product();
        let matrix = |name: &str| -> Result<(usize, &[f64])> {
            let (s, v) = c.f64s(name)?;
            if s.len() != 2 || s[0] != k {
                return Err(Error::format(format!("dataset array `{name}` has the wrong shape")));
            }
            Ok((s[1], v))
        };
        let (_, seeds) = c.u64s("seeds")?;
        let (ws, w) = c.c128s("w")?;
        let m = ws.get(1).copied().ok_or_else(|| Error::format("bad precoder array"))?;
        let (n_el, tr) = matrix("theta_r")?;
        let (_, tt) = matrix("theta_t")?;
        let (_, ar) = matrix("alpha_r")?;
        let (_, at) = matrix("alpha_t")?;
        let (_, rates) = matrix("rates")?;
        let (d, targets) = matrix("targets")?;
        let (_, iters) = c.u64s("iterations")?;
        if seeds.len() != 4 * k || w.len() != m * k || iters.len() != k || tt.len() != n_el * k {
            return Err(Error::format("dataset arrays disagree on the sample count"));
        }
        let noise_seed = |i: usize| seeds[4 * i + 2];
        let samples = (0..k)
            .map(|i| {
                let row = |v: &[f64], len: usize| v[i * len..(i + 1) * len].to_vec();
                Sample {
                    index: seeds[4 * i],
                    seeds: SampleSeeds { channel: seeds[4 * i + 1], noise: noise_seed(i), bcd: seeds[4 * i + 3] },
                    tensor: ReceivedPilotTensor {
                        shape,
                        data: tensors[i * per..(i + 1) * per].to_vec(),
                        noise_seed: noise_seed(i),
                    },
                    label: PrecodingSolution {
                        w: DVector::from_iterator(m, w[i * m..(i + 1) * m].iter().copied()),
                        ris: StarRisConfig {
                            theta_r: row(tr, n_el),
                            theta_t: row(tt, n_el),
                            alpha_r: row(ar, n_el),
                            alpha_t: row(at, n_el),
                        },
                        rate_r: rates[3 * i],
                        rate_t: rates[3 * i + 1],
                        objective: rates[3 * i + 2],
                    },
                    iterations: iters[i] as usize,
                    targets: row(targets, d),
                }
            })
            .collect();
        Ok(Self {
            config_hash: c.get("config_hash")?.to_string(),
            shape_hash: c.get("shape_hash")?.to_string(),
            master_seed: c.get_parsed("master_seed")?,
            split: Split::parse(c.get("split")?)?,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?).map_err(|e| match e {
            Error::Format { path: None, message } => Error::Format { path: Some(path.to_path_buf()), message },
            other => other,
        })
    }

    /// Sum-rate mean of the stored labels.
    pub fn mean_label_sum_rate(&self) -> f64 {
        self.samples.iter().map(|s| s.label.sum_rate()).sum::<f64>() / self.samples.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ConfigFile {
        let mut f = ConfigFile::default();
        f.system.bs_antennas = 4;
        f.system.ris_horizontal = 2;
        f.system.ris_vertical = 2;
        f.sounding.amp_levels = 2;
        f
    }

    #[test]
    fn deterministic_and_round_trips() {
        let scn = Scenario::new(&small()).unwrap();
        let a = generate_dataset(&scn, 3, 5, Split::Train).unwrap();
        let b = generate_dataset(&scn, 3, 5, Split::Train).unwrap();
        assert_eq!(a, b);
        let bytes = a.to_container().unwrap().to_bytes();
        let back = Dataset::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_container().unwrap().to_bytes(), bytes);
        for s in &a.samples {
            s.label.check_feasible(scn.system.transmit_power).unwrap();
            assert_eq!(s.targets.len(), scn.codec.dim());
            assert_eq!(s.tensor.shape, [4, 2, 4, 2]);
        }
    }

    #[test]
    fn splits_use_distinct_seeds() {
        let t = sample_seeds(1, Split::Train, 0);
        let e = sample_seeds(1, Split::Test, 0);
        assert_ne!(t.channel, e.channel);
        assert_eq!(Split::parse(&Split::Eval(3).label()).unwrap(), Split::Eval(3));
    }

    #[test]
    fn resume_matches_one_shot() {
        let scn = Scenario::new(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        // a partial run, then a resumed run to completion
        generate_dataset_resumable(&scn, 2, 9, Split::Train, &path, 1).unwrap();
        let resumed = generate_dataset_resumable(&scn, 5, 9, Split::Train, &path, 2).unwrap();
        let direct = generate_dataset(&scn, 5, 9, Split::Train).unwrap();
        assert_eq!(resumed, direct);
        assert_eq!(std::fs::read(&path).unwrap(), direct.to_container().unwrap().to_bytes());
        let mut other = small();
        other.system.transmit_power_dbm = 20.0;
        let scn2 = Scenario::new(&other).unwrap();
        assert!(matches!(
            generate_dataset_resumable(&scn2, 5, 9, Split::Train, &path, 2),
            Err(Error::HashMismatch { .. })
        ));
    }
}
