use std::fs;
use std::path::PathBuf;

use crate::metrics::EvalReport;
use crate::net::{save_checkpoint, Checkpoint, CheckpointModel};

use super::plan::write_outputs;
use super::{ablate_no_pretrain, prepare, run_progressive, PipelineError, StagePlan, TrainLog};

/// Result every arm reports back in the same shape.
#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub arm: String,
    pub checkpoints: Vec<PathBuf>,
    pub report: EvalReport,
    pub log: TrainLog,
}

/// A way of producing a classifier from a plan. Arms share the plan's
/// vocabulary, split, initial weights and training seeds.
pub trait TrainingArm: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn run(&self, plan: &StagePlan) -> Result<ArmOutcome, PipelineError>;
}

pub struct ProgressiveArm;

impl TrainingArm for ProgressiveArm {
    fn name(&self) -> &'static str {
        "progressive"
    }

    fn description(&self) -> &'static str {
        "pretrain the LM on each corpus in order, then fine-tune with the LM softmax frozen"
    }

    fn run(&self, plan: &StagePlan) -> Result<ArmOutcome, PipelineError> {
        let out = run_progressive(plan)?;
        Ok(ArmOutcome { arm: self.name().into(), checkpoints: out.checkpoints(), report: out.report, log: out.log })
    }
}

pub struct NoPretrainArm;

impl TrainingArm for NoPretrainArm {
    fn name(&self) -> &'static str {
        "no-pretrain"
    }

    fn description(&self) -> &'static str {
        "train the classifier from random weights on the labeled data only"
    }

    fn run(&self, plan: &StagePlan) -> Result<ArmOutcome, PipelineError> {
        plan.validate()?;
        let out = &plan.output_dir;
        fs::create_dir_all(out)?;
        let prep = prepare(plan)?;
        prep.vocab.save(out.join("vocab.txt"))?;
        let res = ablate_no_pretrain(plan.model.config(prep.vocab.len()), &prep.split, &plan.finetune, plan.seed)?;
        let mut log = TrainLog::new();
        log.extend(res.records)?;
        let path = out.join("classifier.ckpt");
        save_checkpoint(&Checkpoint::new(CheckpointModel::Classifier(res.network), prep.vocab.digest()), &path)?;
        write_outputs(out, self.name(), &res.report, &log)?;
        Ok(ArmOutcome { arm: self.name().into(), checkpoints: vec![path], report: res.report, log })
    }
}

/// Arms by name, in registration order.
pub struct ArmRegistry {
    arms: Vec<Box<dyn TrainingArm>>,
}

impl ArmRegistry {
    pub fn empty() -> Self {
        Self { arms: Vec::new() }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ProgressiveArm));
        r.register(Box::new(NoPretrainArm));
        r
    }

    /// Replaces any arm already registered under the same name.
    pub fn register(&mut self, arm: Box<dyn TrainingArm>) {
        match self.arms.iter_mut().find(|a| a.name() == arm.name()) {
            Some(slot) => *slot = arm,
            None => self.arms.push(arm),
        }
    }

    pub fn get(&self, name: &str) -> Result<&dyn TrainingArm, PipelineError> {
        self.arms.iter().find(|a| a.name() == name).map(|a| a.as_ref()).ok_or_else(|| PipelineError::UnknownArm(name.into()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.arms.iter().map(|a| a.name()).collect()
    }
}

impl Default for ArmRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{full_report, EvalReport};

    struct Fixed;

    impl TrainingArm for Fixed {
        fn name(&self) -> &'static str {
            "fixed"
        }
        fn description(&self) -> &'static str {
            "test double"
        }
        fn run(&self, _plan: &StagePlan) -> Result<ArmOutcome, PipelineError> {
            let report: EvalReport = full_report(&[0, 1], &[0, 1], &[[0.9, 0.1], [0.2, 0.8]], &["a".into(), "b".into()])?;
            Ok(ArmOutcome { arm: "fixed".into(), checkpoints: vec![], report, log: TrainLog::new() })
        }
    }

    #[test]
    fn defaults_and_lookup() {
        let r = ArmRegistry::with_defaults();
        assert_eq!(r.names(), ["progressive", "no-pretrain"]);
        assert_eq!(r.get("no-pretrain").unwrap().name(), "no-pretrain");
        assert!(matches!(r.get("bert"), Err(PipelineError::UnknownArm(_))));
    }

    #[test]
    fn registration_replaces_by_name() {
        let mut r = ArmRegistry::empty();
        r.register(Box::new(Fixed));
        r.register(Box::new(Fixed));
        assert_eq!(r.names(), ["fixed"]);
        let plan = StagePlan::from_toml("seed = 1\nlabeled = \"x\"\noutput_dir = \"y\"\n", std::path::Path::new(".")).unwrap();
        assert_eq!(r.get("fixed").unwrap().run(&plan).unwrap().report.accuracy, 1.0);
    }
}
