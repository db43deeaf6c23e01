//! Adam training of either architecture, cross-validation splits and the
//! per-step log.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::data::{image_patches, ImageLoader, Label, Manifest, Patch};
use crate::error::{Error, Result};
use crate::network::{forward, save_checkpoint, Architecture, Mode, NetworkParams, DEFAULT_PATCH};
use crate::objective::{objective_gradients, LossBreakdown, NetworkGrads, ObjectiveWeights};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    /// Weight decay inside the reconstruction cost.
    pub lambda: f64,
    /// Sparsity weight.
    pub lambda_s: f64,
    /// Weight of the reconstruction cost.
    pub w_rec: f64,
    pub mode: Mode,
    pub seed: u64,
    pub patch: usize,
    pub pool_stride: usize,
    /// Add one randomly rotated copy of every training image.
    pub augment: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 50,
            steps_per_epoch: 100,
            batch: 16,
            lambda: 1e-4,
            lambda_s: 0.1,
            w_rec: 1.0,
            mode: Mode::Enhanced,
            seed: 0,
            patch: DEFAULT_PATCH,
            pool_stride: 2,
            augment: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("lambda", self.lambda),
            ("lambda_s", self.lambda_s),
            ("w_rec", self.w_rec),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("beta1 and beta2 must be < 1".into()));
        }
        if self.batch == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("batch, epochs and steps_per_epoch must be positive".into()));
        }
        self.architecture().validate()?;
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            pool_stride: self.pool_stride,
            ..Architecture::new(self.patch, self.mode)
        }
    }

    /// Objective weights actually applied: all zero in baseline mode.
    pub fn objective_weights(&self) -> ObjectiveWeights {
        match self.mode {
            Mode::Baseline => ObjectiveWeights::BASELINE,
            Mode::Enhanced => ObjectiveWeights {
                lambda: self.lambda,
                lambda_s: self.lambda_s,
                w_rec: self.w_rec,
            },
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam update of a flat parameter block at step `t ≥ 1`.
pub fn adam_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, h: &AdamHyper) -> Result<()> {
    if theta.len() != grad.len() || m.len() != grad.len() || v.len() != grad.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} parameters, {} gradients, moments {}/{}",
            theta.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(Error::InvalidArgument("adam step index starts at 1".into()));
    }
    let c1 = 1.0 - h.beta1.powi(t as i32);
    let c2 = 1.0 - h.beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}

/// Advances the network's own Adam state by one step.
pub fn adam_step(params: &mut NetworkParams, grads: &NetworkGrads, h: &AdamHyper) -> Result<()> {
    let g: Vec<f64> = grads.slices().concat();
    let t = params.adam.t + 1;
    let mut theta = params.flat();
    let mut m = std::mem::take(&mut params.adam.m);
    let mut v = std::mem::take(&mut params.adam.v);
    let res = adam_update(&mut theta, &g, &mut m, &mut v, t, h);
    params.adam.m = m;
    params.adam.v = v;
    res?;
    params.adam.t = t;
    params.set_flat(&theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitScheme {
    Lopo,
    Kfold10,
    Holdout33,
}

impl SplitScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitScheme::Lopo => "lopo",
            SplitScheme::Kfold10 => "kfold10",
            SplitScheme::Holdout33 => "holdout33",
        }
    }
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lopo" => Ok(SplitScheme::Lopo),
            "kfold10" => Ok(SplitScheme::Kfold10),
            "holdout33" => Ok(SplitScheme::Holdout33),
            _ => Err(Error::InvalidArgument(format!(
                "unknown split '{s}' (expected lopo, kfold10 or holdout33)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Short directory-safe name, e.g. `holdout33` or `lopo_P01`.
    pub name: String,
    pub scheme: SplitScheme,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Image ids of each label, in manifest order.
fn ids_by_label(m: &Manifest) -> [Vec<String>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for r in &m.rows {
        out[r.label.index()].push(r.id().to_string());
    }
    out
}

fn complement(m: &Manifest, test: &[String]) -> Vec<String> {
    let set: std::collections::HashSet<&str> = test.iter().map(String::as_str).collect();
    m.rows
        .iter()
        .map(|r| r.id())
        .filter(|id| !set.contains(id))
        .map(str::to_string)
        .collect()
}

/// Keeps `ids` in manifest order.
fn in_manifest_order(m: &Manifest, ids: Vec<String>) -> Vec<String> {
    let set: std::collections::HashSet<String> = ids.into_iter().collect();
    m.rows
        .iter()
        .filter(|r| set.contains(r.id()))
        .map(|r| r.id().to_string())
        .collect()
}

pub fn make_splits(m: &Manifest, scheme: SplitScheme, seed: u64) -> Result<Vec<Split>> {
    if m.rows.is_empty() {
        return Err(Error::Empty("make_splits"));
    }
    let mut rng = Rng::new(seed);
    match scheme {
        SplitScheme::Lopo => {
            let patients = m.patients();
            if patients.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "leave-one-patient-out needs at least 2 patients, manifest has {}",
                    patients.len()
                )));
            }
            Ok(patients
                .iter()
                .map(|p| {
                    let test: Vec<String> = m
                        .rows
                        .iter()
                        .filter(|r| &r.patient_id == p)
                        .map(|r| r.id().to_string())
                        .collect();
                    Split {
                        name: format!("lopo_{p}"),
                        scheme,
                        train: complement(m, &test),
                        test,
                    }
                })
                .collect())
        }
        SplitScheme::Kfold10 => {
            if m.rows.len() < 10 {
                return Err(Error::InvalidArgument(format!(
                    "10-fold cross-validation needs at least 10 images, manifest has {}",
                    m.rows.len()
                )));
            }
            let mut folds: Vec<Vec<String>> = vec![Vec::new(); 10];
            let mut next = 0;
            for mut ids in ids_by_label(m) {
                rng.shuffle(&mut ids);
                for id in ids {
                    folds[next % 10].push(id);
                    next += 1;
                }
            }
            Ok(folds
                .into_iter()
                .enumerate()
                .map(|(k, fold)| {
                    let test = in_manifest_order(m, fold);
                    Split {
                        name: format!("kfold10_{k}"),
                        scheme,
                        train: complement(m, &test),
                        test,
                    }
                })
                .collect())
        }
        SplitScheme::Holdout33 => {
            let mut test = Vec::new();
            for mut ids in ids_by_label(m) {
                rng.shuffle(&mut ids);
                let k = (0.33 * ids.len() as f64).round() as usize;
                test.extend(ids.into_iter().take(k));
            }
            let test = in_manifest_order(m, test);
            Ok(vec![Split {
                name: "holdout33".into(),
                scheme,
                train: complement(m, &test),
                test,
            }])
        }
    }
}

/// Normalized patches with class labels, ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patch: usize,
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
}

impl PatchSet {
    pub fn new(patch: usize) -> Self {
        PatchSet {
            patch,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, p: &Patch, label: Label) -> Result<()> {
        if p.pixels.width != self.patch || p.pixels.height != self.patch {
            return Err(Error::InvalidArgument(format!(
                "{}x{} patch in a set of {}",
                p.pixels.width, p.pixels.height, self.patch
            )));
        }
        self.data.extend(p.normalized());
        self.labels.push(label.index());
        Ok(())
    }

    pub fn from_tensor(x: &Tensor, labels: Vec<usize>) -> Result<Self> {
        let s = x.shape();
        if s.c != 1 || s.h != s.w || s.n != labels.len() {
            return Err(Error::InvalidArgument(format!("patch tensor {s} with {} labels", labels.len())));
        }
        Ok(PatchSet {
            patch: s.h,
            data: x.data().to_vec(),
            labels,
        })
    }

    /// Batch tensor and labels for the given patch indices.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let len = self.patch * self.patch;
        let mut data = Vec::with_capacity(idx.len() * len);
        for &i in idx {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        let x = Tensor::from_vec((idx.len(), 1, self.patch, self.patch), data)?;
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// `per_class` patches of each class, each the first tile of a freshly
/// rendered synthetic image. Labels alternate normal, carcinoma.
pub fn synthetic_patch_set(seed: u64, per_class: usize, patch: usize) -> Result<PatchSet> {
    let mut rng = Rng::new(seed);
    let mut set = PatchSet::new(patch);
    // smallest square raster whose inscribed square holds one tile
    let size = ((patch as f64 * std::f64::consts::SQRT_2).ceil() as usize + 4).max(16);
    for k in 0..2 * per_class {
        let label = Label::from_index(k % 2)?;
        let offset = rng.uniform(4000.0, 20000.0);
        let gain = rng.uniform(15000.0, 25000.0);
        let raw = crate::data::synth::render(&mut rng, size, label, offset, gain);
        let tiles = image_patches(&raw, patch, &format!("synthetic_{k}"), None)?;
        set.push(&tiles[0], label)?;
    }
    Ok(set)
}

/// Loads the training side of a split into patches; with `augment`, one
/// extra copy of each image is rotated by a seeded uniform angle.
pub fn training_patches(
    m: &Manifest,
    ids: &[String],
    cfg: &TrainingConfig,
    loader: &ImageLoader,
) -> Result<PatchSet> {
    let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    let mut aug_rng = Rng::new(cfg.seed ^ 0x5eed_a076);
    let mut set = PatchSet::new(cfg.patch);
    for row in m.rows.iter().filter(|r| wanted.contains(r.id())) {
        let raw = loader.load(m, row)?;
        for p in image_patches(&raw, cfg.patch, row.id(), None)? {
            set.push(&p, row.label)?;
        }
        if cfg.augment {
            let angle = aug_rng.uniform(0.0, 360.0);
            for p in image_patches(&raw, cfg.patch, row.id(), Some(angle))? {
                set.push(&p, row.label)?;
            }
        }
    }
    if set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    Ok(set)
}

/// Logged objective of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

pub const LOG_HEADER: &str = "step,epoch,ce,mr,s,total";

impl StepLog {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!("{},{},{},{},{},{}", self.step, self.epoch, l.ce, l.mr, l.s, l.total)
    }
}

/// Epoch-wise shuffled batches drawn without replacement.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Sampler { order, pos: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        b
    }
}

/// Where training writes its artifacts.
#[derive(Debug, Clone, Copy)]
pub struct Outputs<'a> {
    pub dir: &'a Path,
    /// Overwrite `checkpoint_latest.bin` after every epoch.
    pub epoch_checkpoints: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<StepLog>,
}

/// Runs `epochs × steps_per_epoch` Adam steps on a patch set.
pub fn train_patches(set: &PatchSet, cfg: &TrainingConfig, out: Option<Outputs<'_>>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.patch != cfg.patch {
        return Err(Error::Config(format!("patch set has side {}, config {}", set.patch, cfg.patch)));
    }
    if set.is_empty() {
        return Err(Error::Empty("train_patches"));
    }
    let mut params = NetworkParams::new(cfg.architecture(), cfg.seed)?;
    let weights = cfg.objective_weights();
    let hyper = cfg.adam();
    let mut sampler = Sampler::new(set.len(), cfg.seed.wrapping_add(1));
    let mut writer = match out {
        Some(o) => {
            std::fs::create_dir_all(o.dir).map_err(|e| Error::io(o.dir, e))?;
            let path = o.dir.join("train_log.csv");
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let mut log = Vec::with_capacity(cfg.total_steps());
    for epoch in 0..cfg.epochs {
        for k in 0..cfg.steps_per_epoch {
            let step = epoch * cfg.steps_per_epoch + k + 1;
            let (x, labels) = set.batch(&sampler.next_batch(cfg.batch))?;
            let trace = forward(&params, &x)?;
            let res = objective_gradients(&params, &trace, &labels, &weights)?;
            if !res.loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            adam_step(&mut params, &res.grads, &hyper)?;
            let entry = StepLog {
                step,
                epoch: epoch + 1,
                loss: res.loss,
            };
            if let Some((w, path)) = writer.as_mut() {
                writeln!(w, "{}", entry.csv_row())
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(path.as_path(), e))?;
            }
            log.push(entry);
        }
        if let Some(o) = out.filter(|o| o.epoch_checkpoints) {
            save_checkpoint(&params, o.dir.join("checkpoint_latest.bin"))?;
        }
    }
    if let Some(o) = out {
        save_checkpoint(&params, o.dir.join("model.bin"))?;
    }
    Ok(TrainOutcome { params, log })
}

/// Loads the training side of `split` and trains on it. Only training
/// images are ever read.
pub fn train(
    m: &Manifest,
    split: &Split,
    cfg: &TrainingConfig,
    loader: &ImageLoader,
    out: Option<Outputs<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let set = training_patches(m, &split.train, cfg, loader)?;
    train_patches(&set, cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ManifestRow, Site};

    fn hyper() -> AdamHyper {
        TrainingConfig::default().adam()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut theta = vec![0.3, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut theta, &[0.0, 0.0], &mut m, &mut v, 1, &hyper()).unwrap();
        assert_eq!(theta, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_of_unit_gradient() {
        let mut theta = vec![0.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_update(&mut theta, &[1.0], &mut m, &mut v, 1, &hyper()).unwrap();
        // m_hat = 1, v_hat = 1
        assert!((theta[0] - (-0.01 / (1.0 + 1e-8))).abs() < 1e-18);
        assert!((theta[0] + 0.0099999999).abs() < 1e-16);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let h = hyper();
        let mut theta = vec![0.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        let mut last = 0.0;
        for t in 1..=100 {
            let before = theta[0];
            adam_update(&mut theta, &[0.5], &mut m, &mut v, t, &h).unwrap();
            last = before - theta[0];
            // with g constant, m_hat = g and v_hat = g^2 exactly (up to rounding)
            assert!((last - h.lr * 0.5 / (0.5 + h.eps)).abs() < 1e-12);
        }
        assert!((last - h.lr).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_misaligned_and_step_zero() {
        let mut theta = vec![0.0; 2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        assert!(adam_update(&mut theta, &[1.0], &mut m, &mut v, 1, &hyper()).is_err());
        assert!(adam_update(&mut theta, &[1.0, 1.0], &mut m, &mut v, 0, &hyper()).is_err());
    }

    fn manifest(patients: usize, per: usize) -> Manifest {
        let mut rows = Vec::new();
        for p in 0..patients {
            for k in 0..per {
                rows.push(ManifestRow {
                    path: format!("p{p}_{k}.pgm"),
                    patient_id: format!("P{p}"),
                    site: Site::Both,
                    label: if k % 2 == 0 { Label::Normal } else { Label::Carcinoma },
                    mask: None,
                });
            }
        }
        Manifest::new(".", rows).unwrap()
    }

    #[test]
    fn lopo_partitions_by_patient() {
        let m = manifest(3, 4);
        let splits = make_splits(&m, SplitScheme::Lopo, 1).unwrap();
        assert_eq!(splits.len(), 3);
        let mut all: Vec<String> = splits.iter().flat_map(|s| s.test.clone()).collect();
        all.sort();
        let mut want: Vec<String> = m.rows.iter().map(|r| r.path.clone()).collect();
        want.sort();
        assert_eq!(all, want);
        for s in &splits {
            let pid = |id: &String| m.rows.iter().find(|r| &r.path == id).unwrap().patient_id.clone();
            let test_p: std::collections::HashSet<_> = s.test.iter().map(pid).collect();
            assert_eq!(test_p.len(), 1);
            assert!(s.train.iter().all(|id| !test_p.contains(&pid(id))));
        }
        assert!(make_splits(&manifest(1, 4), SplitScheme::Lopo, 1).is_err());
    }

    #[test]
    fn kfold_sizes_and_balance() {
        let m = manifest(3, 40);
        let splits = make_splits(&m, SplitScheme::Kfold10, 3).unwrap();
        assert_eq!(splits.len(), 10);
        let mut seen = std::collections::HashSet::new();
        for s in &splits {
            assert_eq!(s.test.len(), 12);
            assert_eq!(s.train.len(), 108);
            let pos = s.test.iter().filter(|id| m.rows.iter().find(|r| &r.path == *id).unwrap().label == Label::Carcinoma).count();
            assert!((pos as i64 - 6).abs() <= 1);
            for id in &s.test {
                assert!(seen.insert(id.clone()));
            }
        }
        assert_eq!(seen.len(), 120);
        assert_eq!(splits, make_splits(&m, SplitScheme::Kfold10, 3).unwrap());
        assert_ne!(splits, make_splits(&m, SplitScheme::Kfold10, 4).unwrap());
    }

    #[test]
    fn holdout_fraction() {
        for (p, per) in [(3, 40), (3, 12), (2, 7)] {
            let m = manifest(p, per);
            let s = &make_splits(&m, SplitScheme::Holdout33, 9).unwrap()[0];
            let n = m.rows.len() as f64;
            assert!((s.test.len() as f64 - 0.33 * n).abs() <= 1.0);
            assert_eq!(s.test.len() + s.train.len(), m.rows.len());
            assert!(s.test.iter().all(|id| !s.train.contains(id)));
        }
    }

    #[test]
    fn sampler_covers_every_index_per_pass() {
        let mut s = Sampler::new(10, 3);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_batch(2)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(Sampler::new(4, 1).next_batch(16).len(), 4);
    }
}
