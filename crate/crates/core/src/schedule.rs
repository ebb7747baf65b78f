//! Per-step, per-group learning rates for a multi-phase cyclical program.
//!
//! Each phase is a run of cycles whose lengths grow geometrically; within a
//! cycle the rate anneals from the group maximum toward zero and restarts at
//! the next boundary. The rate is evaluated at the start of each optimizer
//! step, and frozen groups report zero.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::N_GROUPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Half-cosine from the group maximum down to zero, restarting each cycle.
    #[default]
    Cosine,
    /// Linear ramp from zero up to the maximum at mid-cycle and back down.
    Triangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub n_cycles: usize,
    pub first_cycle_epochs: usize,
    pub cycle_mult: usize,
    pub base_lr: f64,
    /// Learning-rate divisor per layer group, bottom to top.
    pub group_divisors: [f64; N_GROUPS],
    #[serde(default)]
    pub frozen_groups: Vec<usize>,
}

impl PhaseSpec {
    /// Head-only warm-up: four one-epoch cycles with the backbone frozen.
    pub fn head_only(base_lr: f64) -> Self {
        Self {
            n_cycles: 4,
            first_cycle_epochs: 1,
            cycle_mult: 1,
            base_lr,
            group_divisors: [9.0, 3.0, 1.0],
            frozen_groups: vec![0, 1],
        }
    }

    /// Full fine-tuning: four cycles of 1, 2, 4 and 8 epochs.
    pub fn fine_tune(base_lr: f64) -> Self {
        Self {
            n_cycles: 4,
            first_cycle_epochs: 1,
            cycle_mult: 2,
            base_lr,
            group_divisors: [9.0, 3.0, 1.0],
            frozen_groups: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cycles == 0 || self.first_cycle_epochs == 0 || self.cycle_mult == 0 {
            return Err(Error::Config(
                "n_cycles, first_cycle_epochs and cycle_mult must all be at least 1".into(),
            ));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if let Some(d) = self.group_divisors.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::Config(format!("group divisor {d} must be positive")));
        }
        if let Some(g) = self.frozen_groups.iter().find(|&&g| g >= N_GROUPS) {
            return Err(Error::Config(format!("frozen group {g} out of range")));
        }
        Ok(())
    }

    pub fn is_frozen(&self, group: usize) -> bool {
        self.frozen_groups.contains(&group)
    }

    pub fn epochs(&self) -> usize {
        cycle_boundaries(self).iter().sum()
    }
}

/// Cycle lengths in epochs: `first * mult^k` for each cycle `k`.
pub fn cycle_boundaries(phase: &PhaseSpec) -> Vec<usize> {
    let mut len = phase.first_cycle_epochs;
    (0..phase.n_cycles)
        .map(|_| {
            let l = len;
            len *= phase.cycle_mult;
            l
        })
        .collect()
}

/// One cycle laid out on the global step axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cycle {
    pub phase: usize,
    /// Index over all cycles of the plan.
    pub index: usize,
    pub start_step: usize,
    pub len_steps: usize,
    pub start_epoch: usize,
}

/// Where a global step falls within the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPosition {
    pub step: usize,
    pub epoch: usize,
    pub phase: usize,
    pub cycle: usize,
    /// Steps elapsed in the cycle.
    pub t: usize,
    /// Steps in the cycle.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePlan {
    phases: Vec<PhaseSpec>,
    steps_per_epoch: usize,
    shape: Shape,
    cycles: Vec<Cycle>,
    total_steps: usize,
}

impl SchedulePlan {
    pub fn new(phases: Vec<PhaseSpec>, steps_per_epoch: usize, shape: Shape) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Config("schedule needs at least one phase".into()));
        }
        if steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be at least 1".into()));
        }
        let mut cycles = Vec::new();
        let mut step = 0;
        let mut epoch = 0;
        for (p, phase) in phases.iter().enumerate() {
            phase.validate()?;
            for len in cycle_boundaries(phase) {
                cycles.push(Cycle {
                    phase: p,
                    index: cycles.len(),
                    start_step: step,
                    len_steps: len * steps_per_epoch,
                    start_epoch: epoch,
                });
                step += len * steps_per_epoch;
                epoch += len;
            }
        }
        Ok(Self {
            phases,
            steps_per_epoch,
            shape,
            cycles,
            total_steps: step,
        })
    }

    /// Two phases: head-only warm-up, then full fine-tuning.
    pub fn two_phase(base_lr: f64, steps_per_epoch: usize) -> Result<Self> {
        Self::new(
            vec![PhaseSpec::head_only(base_lr), PhaseSpec::fine_tune(base_lr)],
            steps_per_epoch,
            Shape::Cosine,
        )
    }

    pub fn phases(&self) -> &[PhaseSpec] {
        &self.phases
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn cycles(&self) -> &[Cycle] {
        &self.cycles
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn total_epochs(&self) -> usize {
        self.total_steps / self.steps_per_epoch
    }

    pub fn locate(&self, step: usize) -> Result<StepPosition> {
        if step >= self.total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        let i = self.cycles.partition_point(|c| c.start_step <= step) - 1;
        let c = &self.cycles[i];
        Ok(StepPosition {
            step,
            epoch: step / self.steps_per_epoch,
            phase: c.phase,
            cycle: c.index,
            t: step - c.start_step,
            len: c.len_steps,
        })
    }

    /// Learning rate of `group` at the start of optimizer step `step`.
    pub fn lr_at(&self, step: usize, group: usize) -> Result<f64> {
        if group >= N_GROUPS {
            return Err(Error::Config(format!("layer group {group} out of range")));
        }
        let pos = self.locate(step)?;
        let phase = &self.phases[pos.phase];
        if phase.is_frozen(group) {
            return Ok(0.0);
        }
        let max = phase.base_lr / phase.group_divisors[group];
        Ok(max * self.shape_factor(pos.t, pos.len))
    }

    pub fn lrs_at(&self, step: usize) -> Result<[f64; N_GROUPS]> {
        Ok([self.lr_at(step, 0)?, self.lr_at(step, 1)?, self.lr_at(step, 2)?])
    }

    fn shape_factor(&self, t: usize, len: usize) -> f64 {
        let x = t as f64 / len as f64;
        match self.shape {
            Shape::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * x).cos()),
            Shape::Triangular => 1.0 - (2.0 * x - 1.0).abs(),
        }
    }
}

/// Global steps at which each cycle begins.
pub fn restart_steps(plan: &SchedulePlan) -> Vec<usize> {
    plan.cycles.iter().map(|c| c.start_step).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub step: usize,
    pub epoch: usize,
    pub phase: usize,
    pub cycle: usize,
    pub lr_g0: f64,
    pub lr_g1: f64,
    pub lr_g2: f64,
}

pub fn emit_schedule_table(plan: &SchedulePlan) -> Vec<ScheduleRow> {
    (0..plan.total_steps)
        .map(|step| {
            let pos = plan.locate(step).expect("step in range");
            let lr = plan.lrs_at(step).expect("step in range");
            ScheduleRow {
                step,
                epoch: pos.epoch,
                phase: pos.phase,
                cycle: pos.cycle,
                lr_g0: lr[0],
                lr_g1: lr[1],
                lr_g2: lr[2],
            }
        })
        .collect()
}

pub fn write_schedule_csv<W: Write>(plan: &SchedulePlan, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in emit_schedule_table(plan) {
        w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_schedule_file(plan: &SchedulePlan, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_schedule_csv(plan, std::io::BufWriter::new(f))
}
