//! Two-phase training loop: head-only warm-up with the lower layer groups
//! frozen, then full fine-tuning, each under the cyclical schedule.

pub mod checkpoint;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    epoch_batches, load_batch, steps_per_epoch, AugmentSpec, AugmentationPolicy, ImageSource,
    Manifest,
};
use crate::error::{Error, Result};
use crate::model::{hex, BackboneSpec, HeadSpec, ModelAssembly, N_GROUPS};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::rng::{stream_rng, Stream};
use crate::schedule::{PhaseSpec, SchedulePlan, Shape};

pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

/// One phase of the training program; the base rate comes from [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub n_cycles: usize,
    pub first_cycle_epochs: usize,
    pub cycle_mult: usize,
    pub group_divisors: [f64; N_GROUPS],
    #[serde(default)]
    pub frozen_groups: Vec<usize>,
}

impl PhaseConfig {
    pub fn with_base(&self, base_lr: f64) -> PhaseSpec {
        PhaseSpec {
            n_cycles: self.n_cycles,
            first_cycle_epochs: self.first_cycle_epochs,
            cycle_mult: self.cycle_mult,
            base_lr,
            group_divisors: self.group_divisors,
            frozen_groups: self.frozen_groups.clone(),
        }
    }
}

impl From<PhaseSpec> for PhaseConfig {
    fn from(p: PhaseSpec) -> Self {
        Self {
            n_cycles: p.n_cycles,
            first_cycle_epochs: p.first_cycle_epochs,
            cycle_mult: p.cycle_mult,
            group_divisors: p.group_divisors,
            frozen_groups: p.frozen_groups,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub optimizer: OptimizerSpec,
    pub shape: Shape,
    pub phases: Vec<PhaseConfig>,
    pub augmentation: AugmentationPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            base_lr: 1e-2,
            optimizer: OptimizerSpec::default(),
            shape: Shape::Cosine,
            phases: vec![
                PhaseSpec::head_only(1e-2).into(),
                PhaseSpec::fine_tune(1e-2).into(),
            ],
            augmentation: AugmentationPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.phases.is_empty() {
            return Err(Error::Config("at least one training phase is required".into()));
        }
        self.optimizer.validate()?;
        self.augmentation.validate()
    }

    pub fn plan(&self, n_train: usize) -> Result<SchedulePlan> {
        self.validate()?;
        let phases = self.phases.iter().map(|p| p.with_base(self.base_lr)).collect();
        SchedulePlan::new(phases, steps_per_epoch(n_train, self.batch_size), self.shape)
    }
}

/// Stable fingerprint of everything that shapes a training trajectory.
/// The weights path is left out so runs can move between machines; the
/// weights hash, when configured, is kept.
pub fn config_hash(cfg: &TrainConfig, backbone: &BackboneSpec, head: &HeadSpec, seed: u64) -> String {
    let backbone = BackboneSpec {
        pretrained_weights: None,
        ..backbone.clone()
    };
    let text = serde_json::to_string(&(cfg, &backbone, head, seed)).expect("config serializes");
    hex(&Sha256::digest(text.as_bytes()))
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if n != labels.len() {
        return Err(Error::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel(bad));
    }
    let mut total = 0.0;
    let mut grad = Array2::zeros((n, k));
    for (i, row) in logits.rows().into_iter().enumerate() {
        let (imax, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (j, v)| if v > b.1 { (j, v) } else { b });
        // log-sum-exp with the max term pulled out: lse = max + ln(1 + rest)
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != imax)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let lse = max + rest.ln_1p();
        total += lse - row[labels[i]];
        for (j, &v) in row.iter().enumerate() {
            grad[[i, j]] = (v - lse).exp() / n as f64;
        }
        grad[[i, labels[i]]] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}

pub fn loss(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    cross_entropy(logits, labels).map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub phase: usize,
    pub loss: f64,
}

/// Progress counters and the recorded loss trajectory. Random state is not
/// stored: every stream is keyed by the seed and these counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub seed: u64,
    pub global_step: usize,
    pub epoch: usize,
    pub phase: usize,
    pub loss_history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            global_step: 0,
            epoch: 0,
            phase: 0,
            loss_history: Vec::new(),
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().map(|r| r.loss)
    }

    /// Mean loss over the last recorded epoch.
    pub fn final_epoch_mean_loss(&self) -> Option<f64> {
        let last = self.loss_history.last()?.epoch;
        let tail: Vec<f64> = self
            .loss_history
            .iter()
            .rev()
            .take_while(|r| r.epoch == last)
            .map(|r| r.loss)
            .collect();
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

pub fn write_loss_csv<W: Write>(history: &[LossRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_loss_file(history: &[LossRecord], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_loss_csv(history, std::io::BufWriter::new(f))
}

pub fn read_loss_csv(text: &str) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["step", "epoch", "phase", "loss"] {
        return Err(Error::Format(format!(
            "loss CSV header must be step,epoch,phase,loss; found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<LossRecord>, _>>()
        .map_err(|e| Error::Format(e.to_string()))?;
    if rows.is_empty() {
        return Err(Error::Empty("loss CSV has no rows".into()));
    }
    Ok(rows)
}

pub struct Trainer {
    model: ModelAssembly,
    optimizer: Optimizer,
    plan: SchedulePlan,
    cfg: TrainConfig,
    manifest: Manifest,
    source: Arc<dyn ImageSource>,
    state: TrainState,
    config_hash: String,
    checkpoint_dir: Option<PathBuf>,
    checkpoints: Vec<PathBuf>,
    applied_phase: Option<usize>,
    epoch_cache: Option<(usize, Vec<Vec<usize>>)>,
    phase_seconds: Vec<f64>,
}

impl Trainer {
    pub fn new(
        model: ModelAssembly,
        cfg: TrainConfig,
        seed: u64,
        manifest: Manifest,
        source: Arc<dyn ImageSource>,
    ) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Empty("training manifest has no records".into()));
        }
        let plan = cfg.plan(manifest.len())?;
        let optimizer = Optimizer::new(cfg.optimizer)?;
        let config_hash = config_hash(&cfg, model.backbone_spec(), model.head_spec(), seed);
        let n_phases = plan.phases().len();
        Ok(Self {
            model,
            optimizer,
            plan,
            cfg,
            manifest,
            source,
            state: TrainState::new(seed),
            config_hash,
            checkpoint_dir: None,
            checkpoints: Vec::new(),
            applied_phase: None,
            epoch_cache: None,
            phase_seconds: vec![0.0; n_phases],
        })
    }

    /// Continues from a saved checkpoint. The trainer must be configured
    /// exactly as the run that wrote it.
    pub fn resume(mut self, ckpt: Checkpoint) -> Result<Self> {
        if ckpt.header.config_hash != self.config_hash {
            return Err(Error::Checkpoint {
                version: ckpt.header.version,
                reason: "checkpoint was written under a different configuration".into(),
            });
        }
        if ckpt.header.state.global_step > self.plan.total_steps() {
            return Err(Error::Checkpoint {
                version: ckpt.header.version,
                reason: "checkpoint step lies beyond the schedule".into(),
            });
        }
        self.model.load_state(&ckpt.model_state, |_| true)?;
        self.optimizer.restore(ckpt.optimizer_slots);
        self.state = ckpt.header.state;
        self.applied_phase = None;
        self.epoch_cache = None;
        Ok(self)
    }

    /// Writes a checkpoint at every cycle boundary into `dir`.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn model(&self) -> &ModelAssembly {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ModelAssembly {
        &mut self.model
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn plan(&self) -> &SchedulePlan {
        &self.plan
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Checkpoints written at cycle boundaries so far.
    pub fn checkpoints(&self) -> &[PathBuf] {
        &self.checkpoints
    }

    pub fn phase_seconds(&self) -> &[f64] {
        &self.phase_seconds
    }

    pub fn is_finished(&self) -> bool {
        self.state.global_step >= self.plan.total_steps()
    }

    pub fn into_parts(self) -> (ModelAssembly, TrainState) {
        (self.model, self.state)
    }

    fn apply_phase(&mut self, phase: usize) -> Result<()> {
        if self.applied_phase == Some(phase) {
            return Ok(());
        }
        let all: Vec<usize> = (0..N_GROUPS).collect();
        self.model.set_frozen(&all, false)?;
        self.model
            .set_frozen(&self.plan.phases()[phase].frozen_groups, true)?;
        self.applied_phase = Some(phase);
        Ok(())
    }

    fn batch_indices(&mut self, epoch: usize, within: usize) -> Result<Vec<usize>> {
        if self.epoch_cache.as_ref().map(|c| c.0) != Some(epoch) {
            let batches =
                epoch_batches(self.manifest.len(), self.cfg.batch_size, self.state.seed, epoch)?;
            self.epoch_cache = Some((epoch, batches));
        }
        let (_, batches) = self.epoch_cache.as_ref().expect("filled above");
        Ok(batches[within].clone())
    }

    /// Runs one optimizer step and records its loss.
    pub fn step(&mut self) -> Result<LossRecord> {
        let step = self.state.global_step;
        let pos = self.plan.locate(step)?;
        self.apply_phase(pos.phase)?;
        let started = Instant::now();

        let within = step % self.plan.steps_per_epoch();
        let indices = self.batch_indices(pos.epoch, within)?;
        let aug = AugmentSpec {
            policy: &self.cfg.augmentation,
            seed: self.state.seed,
            epoch: pos.epoch,
        };
        let batch = load_batch(&self.manifest, &indices, self.source.as_ref(), Some(aug))?;
        let lrs = self.plan.lrs_at(step)?;

        let mut rng = stream_rng(self.state.seed, Stream::Dropout, &[step as u64]);
        let logits = self
            .model
            .forward_train(&batch.images, batch.normalized, &mut rng)?;
        let (loss, dlogits) = cross_entropy(&logits, &batch.labels)?;
        if !loss.is_finite() {
            self.model.clear_cache();
            return Err(Error::NonFiniteLoss {
                step,
                loss,
                lr: lrs[N_GROUPS - 1],
                batch_ids: batch.ids,
            });
        }
        if self.model.has_trainable() {
            self.model.zero_grad();
            self.model.backward(&dlogits);
            self.optimizer.step(&mut self.model, lrs);
        } else {
            self.model.clear_cache();
        }

        let record = LossRecord {
            step,
            epoch: pos.epoch,
            phase: pos.phase,
            loss,
        };
        self.state.loss_history.push(record);
        self.state.global_step = step + 1;
        self.state.epoch = (step + 1) / self.plan.steps_per_epoch();
        self.state.phase = pos.phase;
        self.phase_seconds[pos.phase] += started.elapsed().as_secs_f64();
        log::debug!("step {step} epoch {} phase {} loss {loss:.6}", pos.epoch, pos.phase);

        if pos.t + 1 == pos.len {
            log::info!(
                "cycle {} finished at step {} (loss {loss:.4})",
                pos.cycle,
                step + 1
            );
            if let Some(dir) = &self.checkpoint_dir {
                let path = dir.join(format!("cycle-{:02}.ckpt", pos.cycle));
                self.save(&path)?;
                self.checkpoints.push(path);
            }
        }
        Ok(record)
    }

    /// Steps until `stop_step` (exclusive) or the end of the schedule.
    pub fn run_until(&mut self, stop_step: usize) -> Result<()> {
        let stop = stop_step.min(self.plan.total_steps());
        while self.state.global_step < stop {
            self.step()?;
        }
        Ok(())
    }

    /// Runs the remaining steps of phase `phase`.
    pub fn train_phase(&mut self, phase: usize) -> Result<()> {
        let end = self
            .plan
            .cycles()
            .iter()
            .filter(|c| c.phase == phase)
            .map(|c| c.start_step + c.len_steps)
            .max()
            .ok_or_else(|| Error::Config(format!("schedule has no phase {phase}")))?;
        self.run_until(end)
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.plan.total_steps())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &self.model,
            &self.optimizer,
            &self.state,
            &self.config_hash,
        )
    }
}

/// Files written by [`run_recipe`].
#[derive(Debug, Clone)]
pub struct RecipeOutputs {
    pub loss_csv: PathBuf,
    pub schedule_csv: PathBuf,
    pub boundary_checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub phase_seconds: Vec<f64>,
}

/// Runs every phase of the program, checkpointing at each cycle boundary,
/// and writes the loss and schedule tables into `out_dir`.
pub fn run_recipe(trainer: &mut Trainer, out_dir: &Path) -> Result<RecipeOutputs> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if trainer.checkpoint_dir.is_none() {
        trainer.checkpoint_dir = Some(out_dir.to_path_buf());
    }
    let n_phases = trainer.plan.phases().len();
    for phase in 0..n_phases {
        trainer.train_phase(phase)?;
        log::info!(
            "phase {phase} done in {:.1}s",
            trainer.phase_seconds[phase]
        );
    }
    let loss_csv = out_dir.join("loss.csv");
    write_loss_file(&trainer.state.loss_history, &loss_csv)?;
    let schedule_csv = out_dir.join("schedule.csv");
    crate::schedule::write_schedule_file(&trainer.plan, &schedule_csv)?;
    let final_checkpoint = out_dir.join("final.ckpt");
    trainer.save(&final_checkpoint)?;
    Ok(RecipeOutputs {
        loss_csv,
        schedule_csv,
        boundary_checkpoints: trainer.checkpoints.clone(),
        final_checkpoint,
        phase_seconds: trainer.phase_seconds.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ImageTensor, ManifestRecord, MemorySource, Split};
    use crate::model::build_model;
    use ndarray::{arr2, Array3};

    #[test]
    fn loss_examples() {
        let uniform = Array2::from_elem((3, 7), 0.4);
        let l = loss(&uniform, &[0, 3, 6]).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-15);
        assert!((l - 1.9459).abs() < 1e-4);

        let two = arr2(&[[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
        let e2 = 2f64.exp();
        let expected = -(e2 / (e2 + 6.0)).ln();
        let got = loss(&two, &[0]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.5944).abs() < 1e-4);

        let mut sat = Array2::zeros((1, 7));
        sat[[0, 4]] = 50.0;
        let l = loss(&sat, &[4]).unwrap();
        assert!((0.0..1e-20).contains(&l));

        assert!(matches!(loss(&sat, &[7]), Err(Error::InvalidLabel(7))));
        assert!(loss(&sat, &[0, 1]).is_err());
    }

    #[test]
    fn loss_gradient_rows_sum_to_zero() {
        let logits = arr2(&[[1.0, -2.0, 0.5, 0.0, 3.0, 0.1, -1.0], [0.0; 7]]);
        let (_, g) = cross_entropy(&logits, &[4, 2]).unwrap();
        for row in g.rows() {
            assert!(row.sum().abs() < 1e-15);
        }
        assert!(g[[1, 2]] < 0.0);
    }

    fn toy_setup(n: usize) -> (ModelAssembly, Manifest, Arc<dyn ImageSource>) {
        let mut src = MemorySource::default();
        let records = (0..n)
            .map(|i| {
                let id = format!("t{i}");
                let img = Array3::from_shape_fn((3, 224, 224), |(c, y, x)| {
                    ((i * 13 + c * 5 + y / 8 + x / 16) % 11) as f64 / 10.0
                });
                src.insert(id.clone(), ImageTensor::new(img));
                ManifestRecord {
                    image_id: id,
                    image_path: PathBuf::new(),
                    label: i % 7,
                    split: Split::Train,
                }
            })
            .collect();
        let head = HeadSpec {
            hidden_widths: vec![16, 16],
            ..HeadSpec::default()
        };
        let model = build_model(&BackboneSpec::toy(), &head, 5).unwrap();
        (model, Manifest::new(Split::Train, records).unwrap(), Arc::new(src))
    }

    fn short_cfg(epochs: usize, batch: usize) -> TrainConfig {
        TrainConfig {
            batch_size: batch,
            phases: vec![PhaseConfig {
                n_cycles: 1,
                first_cycle_epochs: epochs,
                cycle_mult: 1,
                group_divisors: [9.0, 3.0, 1.0],
                frozen_groups: vec![],
            }],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn two_epochs_of_ten_records_take_six_steps() {
        let (model, manifest, src) = toy_setup(10);
        let mut t = Trainer::new(model, short_cfg(2, 4), 1, manifest, src).unwrap();
        t.run().unwrap();
        let h = &t.state().loss_history;
        assert_eq!(h.len(), 6);
        assert_eq!(h.iter().filter(|r| r.epoch == 0).count(), 3);
        assert!(h.windows(2).all(|w| w[0].step < w[1].step));
        assert!(h.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let (model, manifest, src) = toy_setup(10);
        let mut straight = Trainer::new(model, short_cfg(2, 4), 9, manifest.clone(), src.clone()).unwrap();
        straight.run_until(6).unwrap();

        let (model, _, _) = toy_setup(10);
        let mut first = Trainer::new(model, short_cfg(2, 4), 9, manifest.clone(), src.clone()).unwrap();
        first.run_until(3).unwrap();
        let path = dir.path().join("mid.ckpt");
        first.save(&path).unwrap();
        drop(first);

        let (fresh, _, _) = toy_setup(10);
        let mut resumed = Trainer::new(fresh, short_cfg(2, 4), 9, manifest, src)
            .unwrap()
            .resume(load_checkpoint(&path).unwrap())
            .unwrap();
        resumed.run_until(6).unwrap();
        assert_eq!(resumed.state().loss_history, straight.state().loss_history);
        assert_eq!(
            resumed.model().group_checksums(),
            straight.model().group_checksums()
        );
    }

    #[test]
    fn resume_rejects_foreign_configuration() {
        let dir = tempfile::tempdir().unwrap();
        let (model, manifest, src) = toy_setup(6);
        let mut t = Trainer::new(model, short_cfg(1, 4), 1, manifest.clone(), src.clone()).unwrap();
        t.run_until(1).unwrap();
        let path = dir.path().join("a.ckpt");
        t.save(&path).unwrap();
        let (model, _, _) = toy_setup(6);
        let other = Trainer::new(model, short_cfg(1, 4), 2, manifest, src).unwrap();
        assert!(matches!(
            other.resume(load_checkpoint(&path).unwrap()),
            Err(Error::Checkpoint { .. })
        ));
    }

    #[test]
    fn all_frozen_records_loss_without_updating() {
        let (model, manifest, src) = toy_setup(6);
        let before = model.group_checksums();
        let mut cfg = short_cfg(1, 3);
        cfg.phases[0].frozen_groups = vec![0, 1, 2];
        let mut t = Trainer::new(model, cfg, 1, manifest, src).unwrap();
        t.run().unwrap();
        assert_eq!(t.state().loss_history.len(), 2);
        assert_eq!(t.model().group_checksums(), before);
    }

    #[test]
    fn recipe_writes_boundary_checkpoints_and_tables() {
        let dir = tempfile::tempdir().unwrap();
        let (model, manifest, src) = toy_setup(7);
        let one = |frozen: Vec<usize>| PhaseConfig {
            n_cycles: 1,
            first_cycle_epochs: 1,
            cycle_mult: 1,
            group_divisors: [9.0, 3.0, 1.0],
            frozen_groups: frozen,
        };
        let cfg = TrainConfig {
            batch_size: 4,
            phases: vec![one(vec![0, 1]), one(vec![])],
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(model, cfg, 3, manifest, src).unwrap();
        let out = run_recipe(&mut t, dir.path()).unwrap();
        assert_eq!(out.boundary_checkpoints.len(), 2);
        assert!(out.final_checkpoint.exists());
        let text = std::fs::read_to_string(&out.loss_csv).unwrap();
        assert!(text.starts_with("step,epoch,phase,loss\n"));
        let rows = read_loss_csv(&text).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows, t.state().loss_history);
        assert_eq!(rows[2].phase, 1);
    }

    #[test]
    fn empty_loss_csv_is_an_error() {
        assert!(read_loss_csv("step,epoch,phase,loss\n").is_err());
        assert!(read_loss_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn default_program_is_nineteen_epochs() {
        let cfg = TrainConfig::default();
        let plan = cfg.plan(10015).unwrap();
        assert_eq!(plan.steps_per_epoch(), 313);
        assert_eq!(plan.total_epochs(), 19);
        assert_eq!(plan.cycles().len(), 8);
    }
}
