//! Four-stage Saab transform over the real view of the pilot tensor.
//!
//! The working array always has four axes in the order
//! `(antenna, pilot, phase, amplitude)`. Stage `s` replaces one axis by its
//! Saab coefficients: antenna first, then amplitude, phase and pilot. Anchors
//! are shared by every patch of a stage. Row 0 of a stage's basis is the DC
//! anchor `1/sqrt(d)`; the remaining rows are AC anchors from a PCA of the
//! mean-removed patches restricted to the DC complement.
//!
//! Features are flattened so that the antenna-stage component varies fastest:
//! `f = ((c4 * m3 + c3) * m2 + c2) * m1 + c1`, where `c1..c4` index the
//! antenna, amplitude, phase and pilot stage components and `m1..m4` count
//! them (DC included).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::sounding::ReceivedPilotTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// Bias recorded but not applied; the transform is linear.
    #[default]
    Off,
    /// Bias added to every AC coefficient.
    Nonneg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaabSettings {
    /// Cumulative AC energy ratio to keep per stage, in `[0, 1]`; 0 keeps only the DC anchor.
    pub energy_threshold: f64,
    pub bias_mode: BiasMode,
}

impl Default for SaabSettings {
    fn default() -> Self {
        Self { energy_threshold: 0.995, bias_mode: BiasMode::Off }
    }
}

impl SaabSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.energy_threshold) {
            return Err(Error::Config(format!(
                "saab.energy_threshold must be in [0, 1], got {}",
                self.energy_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaabAxis {
    Antenna,
    Amplitude,
    Phase,
    Pilot,
}

impl SaabAxis {
    pub const ORDER: [SaabAxis; 4] = [SaabAxis::Antenna, SaabAxis::Amplitude, SaabAxis::Phase, SaabAxis::Pilot];

    /// Position of this axis in the `(antenna, pilot, phase, amplitude)` array.
    pub fn array_axis(self) -> usize {
        match self {
            SaabAxis::Antenna => 0,
            SaabAxis::Pilot => 1,
            SaabAxis::Phase => 2,
            SaabAxis::Amplitude => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SaabAxis::Antenna => "antenna",
            SaabAxis::Amplitude => "amplitude",
            SaabAxis::Phase => "phase",
            SaabAxis::Pilot => "pilot",
        }
    }

    fn from_label(s: &str) -> Result<Self> {
        Self::ORDER
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| Error::format(format!("unknown saab axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaabStage {
    pub axis: SaabAxis,
    pub patch_len: usize,
    /// `d x m` orthonormal AC anchors, orthogonal to the DC anchor.
    pub ac: DMatrix<f64>,
    /// Variance captured by each kept AC anchor, non-increasing.
    pub energies: Vec<f64>,
    /// Variance of all AC directions at fit time.
    pub total_energy: f64,
    /// Largest training patch norm.
    pub bias: f64,
    pub threshold: f64,
    /// Set when every training patch had zero AC energy.
    pub degenerate: bool,
}

impl SaabStage {
    /// Number of output components, DC included.
    pub fn outputs(&self) -> usize {
        self.ac.ncols() + 1
    }

    /// Stacked basis: DC anchor in row 0, AC anchors in the following rows.
    pub fn basis(&self) -> DMatrix<f64> {
        let d = self.patch_len;
        let dc = 1.0 / (d as f64).sqrt();
        DMatrix::from_fn(self.outputs(), d, |k, i| if k == 0 { dc } else { self.ac[(i, k - 1)] })
    }

    pub fn dc_anchor(&self) -> DVector<f64> {
        DVector::from_element(self.patch_len, 1.0 / (self.patch_len as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaabModel {
    /// Stages in application order: antenna, amplitude, phase, pilot.
    pub stages: Vec<SaabStage>,
    /// `(2M, N_p, N, K_amp)`.
    pub input_shape: [usize; 4],
    pub bias_mode: BiasMode,
}

/// Dense 4-axis array in C order.
#[derive(Debug, Clone, PartialEq)]
struct Array4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Array4 {
    /// `(outer, d, inner)` for fibers along `axis`.
    fn split(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        (outer, self.shape[axis], inner)
    }

    fn fibers(&self, axis: usize) -> impl Iterator<Item = DVector<f64>> + '_ {
        let (outer, d, inner) = self.split(axis);
        (0..outer)
            .flat_map(move |o| (0..inner).map(move |i| DVector::from_fn(d, |k, _| self.data[(o * d + k) * inner + i])))
    }

    /// Applies `basis` (k x d) along `axis`, then adds `shift` to every output
    /// component except component 0.
    fn transform(&self, axis: usize, basis: &DMatrix<f64>, shift: f64) -> Array4 {
        let (outer, d, inner) = self.split(axis);
        let k_out = basis.nrows();
        let mut shape = self.shape;
        shape[axis] = k_out;
        let mut data = vec![0.0; outer * k_out * inner];
        for o in 0..outer {
            for k in 0..k_out {
                let dst = &mut data[(o * k_out + k) * inner..(o * k_out + k + 1) * inner];
                for j in 0..d {
                    let a = basis[(k, j)];
                    let src = &self.data[(o * d + j) * inner..(o * d + j + 1) * inner];
                    for (y, x) in dst.iter_mut().zip(src) {
                        *y += a * x;
                    }
                }
                if k > 0 && shift != 0.0 {
                    dst.iter_mut().for_each(|y| *y += shift);
                }
            }
        }
        Array4 { shape, data }
    }
}

/// Orthonormal basis of the complement of the all-ones direction (Helmert
/// contrasts), as the columns of a `d x (d-1)` matrix.
fn dc_complement(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d.saturating_sub(1), |i, k| {
        let k1 = (k + 1) as f64;
        let scale = 1.0 / (k1 * (k1 + 1.0)).sqrt();
        if i <= k {
            scale
        } else if i == k + 1 {
            -k1 * scale
        } else {
            0.0
        }
    })
}

/// Flips each column so that its largest-magnitude entry (first on ties) is positive.
fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

fn fit_stage(inputs: &[Array4], axis: SaabAxis, threshold: f64) -> SaabStage {
    let ax = axis.array_axis();
    let d = inputs[0].shape[ax];
    let q = dc_complement(d);

    // deterministic reductions: per-sample partials in parallel, summed in sample order
    let partial_sums: Vec<(DVector<f64>, usize, f64)> = inputs
        .par_iter()
        .map(|a| {
            let mut s = DVector::zeros(d);
            let mut n = 0usize;
            let mut max_norm: f64 = 0.0;
            for f in a.fibers(ax) {
                max_norm = max_norm.max(f.norm());
                s += f;
                n += 1;
            }
            (s, n, max_norm)
        })
        .collect();
    let mut sum = DVector::zeros(d);
    let mut count = 0usize;
    let mut bias: f64 = 0.0;
    for (s, n, b) in partial_sums {
        sum += s;
        count += n;
        bias = bias.max(b);
    }
    let mean = sum / count as f64;
    let mean_ac = q.tr_mul(&mean);

    let partial_cov: Vec<DMatrix<f64>> = inputs
        .par_iter()
        .map(|a| {
            let mut c = DMatrix::zeros(d - 1, d - 1);
            for f in a.fibers(ax) {
                let y = q.tr_mul(&f) - &mean_ac;
                c.ger(1.0, &y, &y, 1.0);
            }
            c
        })
        .collect();
    let mut cov = DMatrix::zeros(d - 1, d - 1);
    for c in partial_cov {
        cov += c;
    }
    cov /= count as f64;

    let total_energy = cov.trace().max(0.0);
    let (mut kept_vecs, mut energies) = (DMatrix::zeros(d, 0), Vec::new());
    let degenerate = !(total_energy > 0.0);
    if d > 1 && !degenerate {
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d - 1).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let lambda_sum: f64 = lambdas.iter().sum();
        let keep = if threshold >= 1.0 {
            d - 1
        } else if threshold <= 0.0 {
            0
        } else {
            let mut acc = 0.0;
            let mut m = 0;
            while m < lambdas.len() {
                acc += lambdas[m];
                m += 1;
                if acc >= threshold * lambda_sum {
                    break;
                }
            }
            m
        };
        let vecs = DMatrix::from_fn(d - 1, keep, |i, k| eig.eigenvectors[(i, order[k])]);
        kept_vecs = &q * vecs;
        fix_signs(&mut kept_vecs);
        energies = lambdas[..keep].to_vec();
    }
    SaabStage { axis, patch_len: d, ac: kept_vecs, energies, total_energy, bias, threshold, degenerate }
}

impl SaabModel {
    /// Output feature count `F`.
    pub fn feature_len(&self) -> usize {
        self.stages.iter().map(SaabStage::outputs).product()
    }

    /// Component counts `(m1, m2, m3, m4)` per stage, DC included.
    pub fn components(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for (o, s) in out.iter_mut().zip(&self.stages) {
            *o = s.outputs();
        }
        out
    }

    /// Multiply-adds needed to transform one tensor.
    pub fn macs(&self) -> u64 {
        let mut shape = self.input_shape;
        let mut total = 0u64;
        for s in &self.stages {
            let ax = s.axis.array_axis();
            shape[ax] = s.outputs();
            total += shape.iter().product::<usize>() as u64 * s.patch_len as u64;
        }
        total
    }

    fn shift(&self, stage: &SaabStage) -> f64 {
        match self.bias_mode {
            BiasMode::Off => 0.0,
            BiasMode::Nonneg => stage.bias,
        }
    }

    fn run(&self, x: Array4) -> Array4 {
        self.stages.iter().fold(x, |a, s| a.transform(s.axis.array_axis(), &s.basis(), self.shift(s)))
    }

    /// Features of one real-view array with shape `input_shape`.
    pub fn apply_real(&self, real: &[f64]) -> Result<Vec<f64>> {
        if real.len() != self.input_shape.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "saab input has {} values, model expects shape {:?}",
                real.len(),
                self.input_shape
            )));
        }
        let out = self.run(Array4 { shape: self.input_shape, data: real.to_vec() });
        Ok(flatten_features(&out))
    }

    /// Inverse transform back to the real view. Exact when every stage kept
    /// all of its components; otherwise the projection onto the kept subspace.
    pub fn reconstruct(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_len() {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.feature_len(), features.len())));
        }
        let [m1, m2, m3, m4] = self.components();
        // back to (antenna, pilot, phase, amplitude) = (m1, m4, m3, m2)
        let shape = [m1, m4, m3, m2];
        let mut data = vec![0.0; features.len()];
        for (f, v) in features.iter().enumerate() {
            let c1 = f % m1;
            let c2 = (f / m1) % m2;
            let c3 = (f / (m1 * m2)) % m3;
            let c4 = f / (m1 * m2 * m3);
            data[((c1 * m4 + c4) * m3 + c3) * m2 + c2] = *v;
        }
        let mut a = Array4 { shape, data };
        for s in self.stages.iter().rev() {
            let ax = s.axis.array_axis();
            let shift = self.shift(s);
            if shift != 0.0 {
                let (outer, k, inner) = a.split(ax);
                for o in 0..outer {
                    for c in 1..k {
                        for i in 0..inner {
                            a.data[(o * k + c) * inner + i] -= shift;
                        }
                    }
                }
            }
            a = a.transform(ax, &s.basis().transpose(), 0.0);
        }
        Ok(a.data)
    }

    pub fn write_into(&self, c: &mut Container, prefix: &str) {
        c.set(&format!("{prefix}.bias_mode"), if self.bias_mode == BiasMode::Off { "off" } else { "nonneg" });
        c.set(
            &format!("{prefix}.input_shape"),
            self.input_shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x"),
        );
        c.set(&format!("{prefix}.stages"), self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            let p = format!("{prefix}.stage{i}");
            c.set(&format!("{p}.axis"), s.axis.label());
            c.set(&format!("{p}.degenerate"), s.degenerate);
            // column-major anchors, d x m
            c.push_f64(format!("{p}.ac"), &[s.patch_len, s.ac.ncols()], s.ac.as_slice().to_vec());
            c.push_f64(format!("{p}.energies"), &[s.energies.len()], s.energies.clone());
            c.push_f64(format!("{p}.scalars"), &[3], vec![s.total_energy, s.bias, s.threshold]);
        }
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        let bias_mode = match c.get(&format!("{prefix}.bias_mode"))? {
            "off" => BiasMode::Off,
            "nonneg" => BiasMode::Nonneg,
            other => return Err(Error::format(format!("unknown bias mode `{other}`"))),
        };
        let dims: Vec<usize> = c
            .get(&format!("{prefix}.input_shape"))?
            .split('x')
            .map(|t| t.parse().map_err(|_| Error::format("bad saab input shape")))
            .collect::<Result<_>>()?;
        let input_shape: [usize; 4] = dims.try_into().map_err(|_| Error::format("saab input shape needs four axes"))?;
        let n: usize = c.get_parsed(&format!("{prefix}.stages"))?;
        let mut stages = Vec::with_capacity(n);
        for i in 0..n {
            let p = format!("{prefix}.stage{i}");
            let (shape, ac) = c.f64s(&format!("{p}.ac"))?;
            if shape.len() != 2 {
                return Err(Error::format("saab anchors must be a matrix"));
            }
            let (_, energies) = c.f64s(&format!("{p}.energies"))?;
            let (_, sc) = c.f64s(&format!("{p}.scalars"))?;
            if sc.len() != 3 {
                return Err(Error::format("saab stage scalars must have three entries"));
            }
            stages.push(SaabStage {
                axis: SaabAxis::from_label(c.get(&format!("{p}.axis"))?)?,
                patch_len: shape[0],
                ac: DMatrix::from_column_slice(shape[0], shape[1], ac),
                energies: energies.to_vec(),
                total_energy: sc[0],
                bias: sc[1],
                threshold: sc[2],
                degenerate: c.get_parsed(&format!("{p}.degenerate"))?,
            });
        }
        let model = Self { stages, input_shape, bias_mode };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        if self.stages.len() != 4 {
            return Err(Error::format("saab model needs four stages"));
        }
        let mut shape = self.input_shape;
        for (s, axis) in self.stages.iter().zip(SaabAxis::ORDER) {
            let ax = axis.array_axis();
            if s.axis != axis || s.patch_len != shape[ax] || s.ac.nrows() != s.patch_len {
                return Err(Error::format(format!("saab stage `{}` is out of order or mismatched", axis.label())));
            }
            shape[ax] = s.outputs();
        }
        Ok(())
    }
}

fn flatten_features(a: &Array4) -> Vec<f64> {
    // a has axes (c1, c4, c3, c2)
    let [m1, m4, m3, m2] = a.shape;
    let mut out = vec![0.0; a.data.len()];
    for c1 in 0..m1 {
        for c4 in 0..m4 {
            for c3 in 0..m3 {
                for c2 in 0..m2 {
                    let f = ((c4 * m3 + c3) * m2 + c2) * m1 + c1;
                    out[f] = a.data[((c1 * m4 + c4) * m3 + c3) * m2 + c2];
                }
            }
        }
    }
    out
}

/// Fits the transform on real-view arrays of shape `(2M, N_p, N, K_amp)`.
pub fn saab_fit_real(samples: &[Vec<f64>], shape: [usize; 4], settings: &SaabSettings) -> Result<SaabModel> {
    settings.validate()?;
    if samples.len() < 2 {
        return Err(Error::Data(format!("saab needs at least 2 training tensors, got {}", samples.len())));
    }
    let len: usize = shape.iter().product();
    if len == 0 {
        return Err(Error::Dimension(format!("empty saab input shape {shape:?}")));
    }
    if let Some(bad) = samples.iter().position(|s| s.len() != len) {
        return Err(Error::Dimension(format!("training tensor {bad} does not have shape {shape:?}")));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in saab training data".into()));
    }
    let mut current: Vec<Array4> = samples.iter().map(|s| Array4 { shape, data: s.clone() }).collect();
    let mut stages = Vec::with_capacity(4);
    for axis in SaabAxis::ORDER {
        let stage = fit_stage(&current, axis, settings.energy_threshold);
        let basis = stage.basis();
        let shift = if settings.bias_mode == BiasMode::Nonneg { stage.bias } else { 0.0 };
        current = current.par_iter().map(|a| a.transform(axis.array_axis(), &basis, shift)).collect();
        stages.push(stage);
    }
    Ok(SaabModel { stages, input_shape: shape, bias_mode: settings.bias_mode })
}

fn tensor_shape(t: &ReceivedPilotTensor) -> [usize; 4] {
    let [m, n_p, n, k] = t.shape;
    [2 * m, n_p, n, k]
}

pub fn saab_fit(tensors: &[ReceivedPilotTensor], settings: &SaabSettings) -> Result<SaabModel> {
    let Some(first) = tensors.first() else {
        return Err(Error::Data("saab needs at least 2 training tensors, got 0".into()));
    };
    let shape = tensor_shape(first);
    if let Some(bad) = tensors.iter().position(|t| t.shape != first.shape) {
        return Err(Error::Dimension(format!(
            "tensor {bad} has shape {:?}, expected {:?}",
            tensors[bad].shape, first.shape
        )));
    }
    let real: Vec<Vec<f64>> = tensors.par_iter().map(ReceivedPilotTensor::real_view).collect();
    saab_fit_real(&real, shape, settings)
}

pub fn saab_apply(model: &SaabModel, tensor: &ReceivedPilotTensor) -> Result<Vec<f64>> {
    if tensor_shape(tensor) != model.input_shape {
        return Err(Error::Dimension(format!(
            "tensor shape {:?} does not match the saab model input {:?}",
            tensor.shape, model.input_shape
        )));
    }
    model.apply_real(&tensor.real_view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_samples(n: usize, shape: [usize; 4], seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len: usize = shape.iter().product();
        (0..n).map(|_| (0..len).map(|_| rng.random::<f64>() - 0.3).collect()).collect()
    }

    #[test]
    fn helmert_basis_is_orthonormal_complement() {
        for d in 1..7 {
            let q = dc_complement(d);
            let gram = q.tr_mul(&q);
            assert!((gram - DMatrix::identity(d - 1, d - 1)).norm() < 1e-12);
            let ones = DVector::from_element(d, 1.0);
            assert!(q.tr_mul(&ones).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_data_keeps_only_dc() {
        let shape = [4, 2, 3, 2];
        let samples = vec![vec![1.5; 48], vec![1.5; 48], vec![1.5; 48]];
        let m = saab_fit_real(&samples, shape, &SaabSettings::default()).unwrap();
        for s in &m.stages {
            assert_eq!(s.ac.ncols(), 0);
            assert!(s.degenerate);
        }
        assert_eq!(m.feature_len(), 1);
    }

    #[test]
    fn mirrored_patches_give_one_component() {
        // two samples with fibers p and -p; p has zero sum so DC is zero
        let shape = [3, 1, 1, 1];
        let p = vec![1.0, -2.0, 1.0];
        let samples = vec![p.clone(), p.iter().map(|v| -v).collect()];
        let m = saab_fit_real(&samples, shape, &SaabSettings::default()).unwrap();
        assert_eq!(m.stages[0].ac.ncols(), 1);
        let f = m.apply_real(&p).unwrap();
        assert!(f[0].abs() < 1e-12);
        assert!((m.stages[0].energies[0] - m.stages[0].total_energy).abs() < 1e-12);
    }

    #[test]
    fn full_threshold_is_invertible() {
        let shape = [4, 2, 3, 3];
        let samples = random_samples(40, shape, 1);
        let settings = SaabSettings { energy_threshold: 1.0, ..Default::default() };
        let m = saab_fit_real(&samples, shape, &settings).unwrap();
        assert_eq!(m.feature_len(), 72);
        for s in &samples[..5] {
            let back = m.reconstruct(&m.apply_real(s).unwrap()).unwrap();
            let err: f64 = back.iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-8, "reconstruction error {err}");
        }
    }

    #[test]
    fn nonneg_mode_round_trips_too() {
        let shape = [4, 2, 2, 3];
        let samples = random_samples(30, shape, 2);
        let settings = SaabSettings { energy_threshold: 1.0, bias_mode: BiasMode::Nonneg };
        let m = saab_fit_real(&samples, shape, &settings).unwrap();
        let back = m.reconstruct(&m.apply_real(&samples[0]).unwrap()).unwrap();
        let err: f64 = back.iter().zip(&samples[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8);
    }

    #[test]
    fn anchors_orthonormal_and_energy_sorted() {
        let shape = [6, 2, 4, 3];
        let samples = random_samples(50, shape, 3);
        let m = saab_fit_real(&samples, shape, &SaabSettings::default()).unwrap();
        for s in &m.stages {
            let b = s.basis();
            let gram = &b * b.transpose();
            assert!((gram - DMatrix::identity(s.outputs(), s.outputs())).norm() < 1e-10);
            assert!(s.energies.windows(2).all(|w| w[0] >= w[1]));
            let kept: f64 = s.energies.iter().sum();
            assert!(kept >= s.threshold * s.total_energy * (1.0 - 1e-12));
        }
    }

    #[test]
    fn threshold_is_monotone_in_kept_count() {
        let shape = [6, 2, 4, 3];
        let samples = random_samples(30, shape, 4);
        let mut prev = [0usize; 4];
        for tau in [0.5, 0.8, 0.9, 0.99, 1.0] {
            let m =
                saab_fit_real(&samples, shape, &SaabSettings { energy_threshold: tau, ..Default::default() }).unwrap();
            // first stage sees identical input at every tau
            assert!(m.stages[0].outputs() >= prev[0]);
            prev = m.components();
        }
    }

    #[test]
    fn linear_without_bias() {
        let shape = [4, 2, 3, 2];
        let samples = random_samples(20, shape, 5);
        let m = saab_fit_real(&samples, shape, &SaabSettings::default()).unwrap();
        let x = &samples[3];
        let a = m.apply_real(x).unwrap();
        let b = m.apply_real(&x.iter().map(|v| v * -2.5).collect::<Vec<_>>()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((v + 2.5 * u).abs() < 1e-12 * (1.0 + u.abs()));
        }
        assert!(m.apply_real(&vec![0.0; 48]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn container_round_trip_is_exact() {
        let shape = [4, 2, 3, 2];
        let samples = random_samples(20, shape, 6);
        let m = saab_fit_real(&samples, shape, &SaabSettings::default()).unwrap();
        let mut c = Container::new("test");
        m.write_into(&mut c, "saab");
        let back = SaabModel::read_from(&Container::from_bytes(&c.to_bytes()).unwrap(), "saab").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_inputs() {
        let shape = [2, 1, 1, 1];
        assert!(matches!(saab_fit_real(&[vec![1.0, 2.0]], shape, &SaabSettings::default()), Err(Error::Data(_))));
        assert!(matches!(
            saab_fit_real(&[vec![1.0, 2.0], vec![1.0]], shape, &SaabSettings::default()),
            Err(Error::Dimension(_))
        ));
        let m = saab_fit_real(&[vec![1.0, 2.0], vec![0.0, 1.0]], shape, &SaabSettings::default()).unwrap();
        assert!(matches!(m.apply_real(&[1.0]), Err(Error::Dimension(_))));
        assert!(SaabSettings { energy_threshold: -0.1, ..Default::default() }.validate().is_err());
    }
}
