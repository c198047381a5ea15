//! Learning-rate schedules.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear per-step warmup from 0 to the base rate over `warmup_epochs`,
    /// then the base rate scaled by `decay` once per passed milestone epoch.
    WarmupStep {
        warmup_epochs: usize,
        milestones: Vec<usize>,
        decay: f64,
    },
    /// start * (1 + cos(pi * t / T)) / 2 + end over global steps t of T.
    Cosine { start: f64, end: f64 },
}

impl Schedule {
    /// Learning rate at a given epoch and step. `steps_per_epoch` and
    /// `total_epochs` fix the step grid the schedule is laid out on.
    pub fn lr_at(
        &self,
        base_lr: f64,
        epoch: usize,
        step_in_epoch: usize,
        steps_per_epoch: usize,
        total_epochs: usize,
    ) -> f64 {
        match self {
            Schedule::WarmupStep {
                warmup_epochs,
                milestones,
                decay,
            } => {
                let warmup_steps = warmup_epochs * steps_per_epoch;
                let global = epoch * steps_per_epoch + step_in_epoch;
                if global < warmup_steps {
                    return base_lr * (global + 1) as f64 / warmup_steps as f64;
                }
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                base_lr * decay.powi(passed as i32)
            }
            Schedule::Cosine { start, end } => {
                let total = (total_epochs * steps_per_epoch) as f64;
                let t = (epoch * steps_per_epoch + step_in_epoch) as f64;
                start * (1.0 + (std::f64::consts::PI * t / total).cos()) / 2.0 + end
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn warmup() -> Schedule {
        Schedule::WarmupStep {
            warmup_epochs: 5,
            milestones: vec![160, 180],
            decay: 0.1,
        }
    }

    #[test]
    fn first_ramp_step_is_base_over_warmup_steps() {
        let lr = warmup().lr_at(0.1, 0, 0, 10, 200);
        assert!((lr - 0.1 / 50.0).abs() < 1e-15);
    }

    #[test]
    fn ramp_reaches_base_lr_at_final_warmup_step() {
        let lr = warmup().lr_at(0.1, 4, 9, 10, 200);
        assert!((lr - 0.1).abs() < 1e-15);
        // First plateau step continues at exactly the base rate.
        let next = warmup().lr_at(0.1, 5, 0, 10, 200);
        assert!((next - 0.1).abs() < 1e-15);
    }

    #[test]
    fn one_milestone_passed_decays_once() {
        let lr = warmup().lr_at(0.1, 170, 3, 10, 200);
        assert!((lr - 0.01).abs() < 1e-12);
    }

    #[test]
    fn both_milestones_passed_decay_twice() {
        let lr = warmup().lr_at(0.1, 185, 0, 10, 200);
        assert!((lr - 0.001).abs() < 1e-12);
    }

    #[test]
    fn cosine_midpoint_is_half_start() {
        let schedule = Schedule::Cosine { start: 0.1, end: 0.0 };
        let lr = schedule.lr_at(0.1, 50, 0, 10, 100);
        assert!((lr - 0.05).abs() < 1e-12);
    }
}
