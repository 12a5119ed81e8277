//! Training and CSI-free inference for the Saab -> RFT -> boosted-tree model.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Decision, TargetCodec};
use crate::config::{hex_digest, ConfigFile, SystemConfig};
use crate::container::Container;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gbdt::{gbdt_fit, GbdtEnsemble};
use crate::rft::{rft_select, RftSelection};
use crate::saab::{saab_apply, saab_fit, SaabModel};
use crate::seeds::{derive_seed, tag};
use crate::sounding::ReceivedPilotTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub n_train: usize,
    pub n_validation: usize,
    pub feature_len: usize,
    pub selection_size: usize,
    /// The Saab stage produced fewer features than requested for selection.
    pub selection_shrunk: bool,
    /// Per target dimension.
    pub validation_mse: Vec<f64>,
    /// Per target dimension, predicting the training mean.
    pub validation_mean_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlModel {
    pub saab: SaabModel,
    pub selection: RftSelection,
    /// One ensemble per target dimension, fed the selected features in selection order.
    pub ensembles: Vec<GbdtEnsemble>,
    pub codec: TargetCodec,
    pub shape_hash: String,
    pub dataset_hash: String,
    pub metrics: TrainMetrics,
}

fn stage_err(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Pipeline { .. } => e,
        other => Error::Pipeline { stage, message: other.to_string() },
    }
}

fn gather(features: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| features[i]).collect()
}

/// Fits every stage on the training part of `ds`; the last
/// `validation_fraction` of a seeded permutation is held out for metrics.
pub fn train(ds: &Dataset, file: &ConfigFile) -> Result<GlModel> {
    file.validate()?;
    if ds.shape_hash != file.shape_hash() {
        return Err(Error::HashMismatch { expected: file.shape_hash(), found: ds.shape_hash.clone() });
    }
    let system = file.system()?;
    let codec = TargetCodec::for_system(&system);
    let n = ds.len();
    if n < 2 {
        return Err(Error::Data(format!("training needs at least 2 samples, got {n}")));
    }
    let seed = file.experiment.seed;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::SPLIT])));
    let n_val = ((file.experiment.validation_fraction * n as f64).round() as usize).min(n - 2);
    let (train_idx, val_idx) = order.split_at(n - n_val);

    for &i in train_idx.iter().chain(val_idx) {
        if ds.samples[i].targets.len() != codec.dim() {
            return Err(Error::Pipeline {
                stage: "targets",
                message: format!("sample {i} has the wrong target length"),
            });
        }
    }

    let tensors: Vec<ReceivedPilotTensor> = train_idx.iter().map(|&i| ds.samples[i].tensor.clone()).collect();
    let saab = saab_fit(&tensors, &file.saab).map_err(stage_err("saab"))?;
    drop(tensors);
    let feature_len = saab.feature_len();
    let feats: Vec<Vec<f64>> = train_idx
        .par_iter()
        .map(|&i| saab_apply(&saab, &ds.samples[i].tensor))
        .collect::<Result<_>>()
        .map_err(stage_err("saab"))?;
    if feats.iter().any(|f| f.len() != feature_len) {
        return Err(Error::Pipeline { stage: "saab", message: "feature length drift".into() });
    }
    let n_tr = train_idx.len();
    let x = DMatrix::from_fn(n_tr, feature_len, |r, c| feats[r][c]);
    drop(feats);
    let y = DMatrix::from_fn(n_tr, codec.dim(), |r, c| ds.samples[train_idx[r]].targets[c]);

    let selection =
        rft_select(&x, &y, file.rft.bins, file.rft.select, file.rft.shared_selection).map_err(stage_err("rft"))?;
    let selection_shrunk = selection.size < file.rft.select;

    let ensembles: Vec<GbdtEnsemble> = (0..codec.dim())
        .into_par_iter()
        .map(|d| {
            let cols = &selection.per_target[d];
            let xd = DMatrix::from_fn(n_tr, cols.len(), |r, c| x[(r, cols[c])]);
            let yd: Vec<f64> = y.column(d).iter().copied().collect();
            gbdt_fit(&xd, &yd, &file.gbdt, derive_seed(seed, &[tag::GBDT, d as u64]))
        })
        .collect::<Result<_>>()
        .map_err(stage_err("gbdt"))?;

    let mut model = GlModel {
        saab,
        selection,
        ensembles,
        codec,
        shape_hash: file.shape_hash(),
        dataset_hash: ds.config_hash.clone(),
        metrics: TrainMetrics {
            n_train: n_tr,
            n_validation: n_val,
            feature_len,
            selection_size: 0,
            selection_shrunk,
            validation_mse: vec![],
            validation_mean_mse: vec![],
        },
    };
    model.metrics.selection_size = model.selection.size;

    if n_val > 0 {
        let means: Vec<f64> = model.ensembles.iter().map(|e| e.base).collect();
        let preds: Vec<Vec<f64>> =
            val_idx.par_iter().map(|&i| model.predict_targets(&ds.samples[i].tensor)).collect::<Result<_>>()?;
        let mut mse = vec![0.0; codec.dim()];
        let mut mean_mse = vec![0.0; codec.dim()];
        for (p, &i) in preds.iter().zip(val_idx) {
            let t = &ds.samples[i].targets;
            for d in 0..codec.dim() {
                mse[d] += (p[d] - t[d]).powi(2) / n_val as f64;
                mean_mse[d] += (means[d] - t[d]).powi(2) / n_val as f64;
            }
        }
        model.metrics.validation_mse = mse;
        model.metrics.validation_mean_mse = mean_mse;
    }
    Ok(model)
}

impl GlModel {
    /// Raw regression outputs for one tensor.
    pub fn predict_targets(&self, tensor: &ReceivedPilotTensor) -> Result<Vec<f64>> {
        let f = saab_apply(&self.saab, tensor)?;
        self.ensembles.iter().zip(&self.selection.per_target).map(|(e, idx)| e.predict(&gather(&f, idx))).collect()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("gl-model");
        c.set("shape_hash", &self.shape_hash);
        c.set("dataset_hash", &self.dataset_hash);
        c.set("codec.n", self.codec.n);
        c.set("codec.m", self.codec.m);
        c.set("metrics", serde_json::to_string(&self.metrics).expect("metrics serialize"));
        c.set("ensembles", self.ensembles.len());
        self.saab.write_into(&mut c, "saab");
        self.selection.write_into(&mut c, "rft");
        for (d, e) in self.ensembles.iter().enumerate() {
            e.write_into(&mut c, &format!("gbdt{d}"));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("gl-model")?;
        let codec = TargetCodec::new(c.get_parsed("codec.n")?, c.get_parsed("codec.m")?);
        let count: usize = c.get_parsed("ensembles")?;
        let ensembles =
            (0..count).map(|d| GbdtEnsemble::read_from(c, &format!("gbdt{d}"))).collect::<Result<Vec<_>>>()?;
        let model = Self {
            saab: SaabModel::read_from(c, "saab")?,
            selection: RftSelection::read_from(c, "rft")?,
            ensembles,
            codec,
            shape_hash: c.get("shape_hash")?.to_string(),
            dataset_hash: c.get("dataset_hash")?.to_string(),
            metrics: serde_json::from_str(c.get("metrics")?)
                .map_err(|e| Error::format(format!("bad training metrics: {e}")))?,
        };
        model.check()?;
        Ok(model)
    }

    /// Cross-stage dimension consistency.
    pub fn check(&self) -> Result<()> {
        let d = self.codec.dim();
        if self.ensembles.len() != d || self.selection.per_target.len() != d {
            return Err(Error::Pipeline { stage: "gbdt", message: format!("expected {d} target dimensions") });
        }
        let f = self.saab.feature_len();
        for (e, idx) in self.ensembles.iter().zip(&self.selection.per_target) {
            if idx.iter().any(|&i| i >= f) {
                return Err(Error::Pipeline { stage: "rft", message: "selected feature out of range".into() });
            }
            if e.n_features != idx.len() {
                return Err(Error::Pipeline { stage: "gbdt", message: "ensemble width differs from selection".into() });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&crate::container::Container::read(path)?)
    }

    /// Hex SHA-256 of the serialized model.
    pub fn hash(&self) -> String {
        hex_digest(&self.to_container().to_bytes())
    }
}

/// Predicts a precoder and surface configuration from a received pilot tensor.
/// Takes no channel argument: nothing but the tensor and the system config is
/// visible here.
pub fn infer(model: &GlModel, tensor: &ReceivedPilotTensor, cfg: &SystemConfig) -> Result<Decision> {
    if model.codec != TargetCodec::for_system(cfg) {
        return Err(Error::Pipeline {
            stage: "codec",
            message: format!("model was trained for N={}, M={}", model.codec.n, model.codec.m),
        });
    }
    let u = model.predict_targets(tensor)?;
    model.codec.decode(&u, cfg.transmit_power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, Scenario, Split};

    fn small() -> ConfigFile {
        let mut f = ConfigFile::default();
        f.system.bs_antennas = 4;
        f.system.ris_horizontal = 2;
        f.system.ris_vertical = 2;
        f.sounding.amp_levels = 2;
        f.gbdt.rounds = 20;
        f.rft.select = 16;
        f
    }

    #[test]
    fn train_infer_round_trip() {
        let file = small();
        let scn = Scenario::new(&file).unwrap();
        let ds = generate_dataset(&scn, 30, 1, Split::Train).unwrap();
        let model = train(&ds, &file).unwrap();
        assert_eq!(model.metrics.n_validation, 3);
        assert_eq!(model.ensembles.len(), scn.codec.dim());
        let again = train(&ds, &file).unwrap();
        assert_eq!(model.hash(), again.hash());

        let bytes = model.to_container().to_bytes();
        let back = GlModel::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, model);

        let d = infer(&model, &ds.samples[0].tensor, &scn.system).unwrap();
        assert_eq!(d, infer(&back, &ds.samples[0].tensor, &scn.system).unwrap());
        d.ris.validate().unwrap();
        assert!((d.w.norm_squared() - scn.system.transmit_power).abs() < 1e-9 * scn.system.transmit_power);
    }

    #[test]
    fn refuses_mismatched_config() {
        let file = small();
        let scn = Scenario::new(&file).unwrap();
        let ds = generate_dataset(&scn, 4, 1, Split::Train).unwrap();
        let mut other = file.clone();
        other.system.bs_antennas = 2;
        assert!(matches!(train(&ds, &other), Err(Error::HashMismatch { .. })));
        let model = train(&ds, &file).unwrap();
        assert!(matches!(infer(&model, &ds.samples[0].tensor, &other.system().unwrap()), Err(Error::Pipeline { .. })));
    }
}
