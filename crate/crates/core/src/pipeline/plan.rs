use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    encode_dataset, make_splits, read_jsonl, read_lines, tokenize, DatasetSplit, EncodedSentence, SplitRatios,
    Vocabulary,
};
use crate::metrics::{render_per_class, render_table, EvalReport};
use crate::net::{load_lm, save_checkpoint, Checkpoint, CheckpointModel, LmNetwork, ModelConfig};

use super::{
    derive_seed, finetune_classifier, holdout, init_seed, run_pretrain_stage, FinetuneSettings, LmStageSettings,
    PipelineError, TrainLog, TAG_HOLDOUT, TAG_SPLIT, TAG_STAGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    General,
    Domain,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::General => "general",
            Role::Domain => "domain",
        }
    }
}

fn default_valid_fraction() -> f64 {
    0.1
}

/// One unlabeled pretraining corpus, one sentence per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub corpus: PathBuf,
    pub role: Role,
    #[serde(flatten)]
    pub settings: LmStageSettings,
    /// Held-out corpus; when absent a fraction of `corpus` is held out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_corpus: Option<PathBuf>,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabSettings {
    pub min_freq: usize,
    pub max_size: usize,
}

impl Default for VocabSettings {
    fn default() -> Self {
        Self { min_freq: 1, max_size: 30_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout_keep: f64,
    pub bptt_window: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let c = ModelConfig::new(4);
        Self { embed_dim: c.embed_dim, hidden_dim: c.hidden_dim, dropout_keep: c.dropout_keep, bptt_window: c.bptt_window }
    }
}

impl ModelSettings {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            dropout_keep: self.dropout_keep,
            bptt_window: self.bptt_window,
            ..ModelConfig::new(vocab_size)
        }
    }
}

/// A full run: ordered pretraining corpora, the labeled set and settings.
/// Relative paths resolve against the plan file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub seed: u64,
    pub labeled: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub vocab: VocabSettings,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub finetune: FinetuneSettings,
}

impl StagePlan {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut plan: StagePlan = toml::from_str(text).map_err(|e| PipelineError::Plan(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut plan.labeled);
        resolve(&mut plan.output_dir);
        for s in &mut plan.stages {
            resolve(&mut s.corpus);
            if let Some(v) = &mut s.valid_corpus {
                resolve(v);
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&fs::read_to_string(path)?, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    /// Every general stage must precede every domain stage.
    pub fn validate(&self) -> Result<(), PipelineError> {
        for pair in self.stages.windows(2) {
            if pair[0].role > pair[1].role {
                return Err(PipelineError::Ordering(format!(
                    "{} stage {} precedes {} stage {}",
                    pair[0].role.as_str(),
                    pair[0].corpus.display(),
                    pair[1].role.as_str(),
                    pair[1].corpus.display()
                )));
            }
        }
        for s in &self.stages {
            if s.settings.batch_size == 0 || !(s.settings.learning_rate > 0.0) {
                return Err(PipelineError::Plan(format!("stage {}: batch_size and learning_rate must be positive", s.corpus.display())));
            }
        }
        let f = &self.finetune;
        if f.batch_size == 0 || !(f.learning_rate > 0.0) {
            return Err(PipelineError::Plan("finetune batch_size and learning_rate must be positive".into()));
        }
        self.model.config(4).validate()?;
        Ok(())
    }

    pub fn stage_id(&self, i: usize) -> String {
        format!("stage{}-{}", i + 1, self.stages[i].role.as_str())
    }
}

/// Inputs shared by every arm of one plan.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Built over every stage corpus and the labeled texts.
    pub vocab: Vocabulary,
    /// (train, valid) sentences per stage.
    pub stage_corpora: Vec<(Vec<String>, Vec<String>)>,
    pub split: DatasetSplit<EncodedSentence>,
}

pub fn prepare(plan: &StagePlan) -> Result<Prepared, PipelineError> {
    let labeled = read_jsonl(&plan.labeled)?;
    let mut stage_corpora = Vec::with_capacity(plan.stages.len());
    for (i, s) in plan.stages.iter().enumerate() {
        let sentences = read_lines(&s.corpus)?;
        let pair = match &s.valid_corpus {
            Some(v) => (sentences, read_lines(v)?),
            None => holdout(&sentences, s.valid_fraction, derive_seed(plan.seed, TAG_HOLDOUT | i as u64))?,
        };
        if pair.0.is_empty() || pair.1.is_empty() {
            return Err(PipelineError::Input(format!("stage corpus {} is empty", s.corpus.display())));
        }
        stage_corpora.push(pair);
    }
    let streams = stage_corpora
        .iter()
        .flat_map(|(t, v)| t.iter().chain(v))
        .chain(labeled.iter().map(|s| &s.text))
        .map(|s| tokenize(s));
    let vocab = Vocabulary::build(streams, plan.vocab.min_freq, plan.vocab.max_size)?;
    let raw = make_splits(&labeled, plan.split, derive_seed(plan.seed, TAG_SPLIT))?;
    let split = raw.map(|part| encode_dataset(part, &vocab));
    Ok(Prepared { vocab, stage_corpora, split })
}

/// Link in the checkpoint chain; `input` is the id of the checkpoint the
/// stage started from (`None` for random initial weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub stage: String,
    pub input: Option<String>,
    pub output: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ProgressiveOutcome {
    pub chain: Vec<ChainLink>,
    pub report: EvalReport,
    pub log: TrainLog,
    pub vocab_digest: String,
}

impl ProgressiveOutcome {
    pub fn checkpoints(&self) -> Vec<PathBuf> {
        self.chain.iter().map(|l| l.path.clone()).collect()
    }
}

/// Runs every pretraining stage in order, each consuming the checkpoint file
/// the previous one wrote, then fine-tunes the classifier. Writes
/// `vocab.txt`, one checkpoint per stage plus `classifier.ckpt`,
/// `chain.json`, `train_log.jsonl`, `report.json` and `report.txt` into the
/// plan's output directory.
pub fn run_progressive(plan: &StagePlan) -> Result<ProgressiveOutcome, PipelineError> {
    plan.validate()?;
    if plan.stages.is_empty() {
        return Err(PipelineError::Plan("progressive run needs at least one pretraining stage".into()));
    }
    let out = &plan.output_dir;
    fs::create_dir_all(out)?;
    let prep = prepare(plan)?;
    let digest = prep.vocab.digest().to_string();
    prep.vocab.save(out.join("vocab.txt"))?;

    let mut net = LmNetwork::new(plan.model.config(prep.vocab.len()), init_seed(plan.seed))?;
    let mut chain: Vec<ChainLink> = Vec::new();
    let mut log = TrainLog::new();
    for (i, spec) in plan.stages.iter().enumerate() {
        let id = plan.stage_id(i);
        let last_good = chain.last().map(|l| l.path.clone());
        let wrap = |e: PipelineError| PipelineError::Stage { stage: id.clone(), last_good: last_good.clone(), source: Box::new(e) };
        let (train, valid) = &prep.stage_corpora[i];
        let seed = derive_seed(plan.seed, TAG_STAGE | i as u64);
        let res = run_pretrain_stage(&id, net, train, valid, &prep.vocab, &spec.settings, seed).map_err(wrap)?;
        log.extend(res.records)?;
        let path = out.join(format!("{id}.ckpt"));
        let ckpt = Checkpoint::new(CheckpointModel::Lm(res.network), digest.clone());
        let output = save_checkpoint(&ckpt, &path).map_err(|e| wrap(e.into()))?;
        chain.push(ChainLink { stage: id.clone(), input: chain.last().map(|l| l.output.clone()), output, path: path.clone() });
        net = load_lm(&path, &digest).map_err(|e| wrap(e.into()))?;
    }

    let last_good = chain.last().map(|l| l.path.clone());
    let res = finetune_classifier(net, &prep.split, &plan.finetune, plan.seed).map_err(|e| PipelineError::Stage {
        stage: "finetune".into(),
        last_good,
        source: Box::new(e),
    })?;
    log.extend(res.records)?;
    let path = out.join("classifier.ckpt");
    let output = save_checkpoint(&Checkpoint::new(CheckpointModel::Classifier(res.network), digest.clone()), &path)?;
    chain.push(ChainLink { stage: "finetune".into(), input: chain.last().map(|l| l.output.clone()), output, path });

    fs::write(out.join("chain.json"), serde_json::to_string_pretty(&chain).expect("chain serializes"))?;
    write_outputs(out, "progressive", &res.report, &log)?;
    Ok(ProgressiveOutcome { chain, report: res.report, log, vocab_digest: digest })
}

/// `train_log.jsonl`, `report.json` and `report.txt`.
pub(crate) fn write_outputs(dir: &Path, arm: &str, report: &EvalReport, log: &TrainLog) -> Result<(), PipelineError> {
    fs::write(dir.join("train_log.jsonl"), log.to_jsonl())?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report).expect("report serializes") + "\n")?;
    let text = format!("{}\n{}", render_table(&[(arm, report)]), render_per_class(report));
    fs::write(dir.join("report.txt"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAN: &str = r#"
seed = 7
labeled = "data/labeled.jsonl"
output_dir = "out"

[model]
hidden_dim = 16

[[stages]]
corpus = "data/general.txt"
role = "general"
epochs = 3

[[stages]]
corpus = "/abs/domain.txt"
role = "domain"
learning_rate = 0.001

[finetune]
patience = 2
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let plan = StagePlan::from_toml(PLAN, Path::new("/plans")).unwrap();
        assert_eq!(plan.labeled, PathBuf::from("/plans/data/labeled.jsonl"));
        assert_eq!(plan.stages[1].corpus, PathBuf::from("/abs/domain.txt"));
        assert_eq!(plan.stages[0].settings.epochs, 3);
        assert_eq!(plan.stages[1].settings.epochs, 20);
        assert_eq!(plan.stages[1].settings.learning_rate, 0.001);
        assert_eq!(plan.model.hidden_dim, 16);
        assert_eq!(plan.model.embed_dim, 64);
        assert_eq!(plan.finetune.patience, 2);
        assert_eq!(plan.stage_id(1), "stage2-domain");
        let again = StagePlan::from_toml(&plan.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, plan);
    }

    #[test]
    fn domain_before_general_is_rejected() {
        let swapped = PLAN.replacen("role = \"general\"", "role = \"tmp\"", 1).replacen("role = \"domain\"", "role = \"general\"", 1).replacen("role = \"tmp\"", "role = \"domain\"", 1);
        assert!(matches!(StagePlan::from_toml(&swapped, Path::new(".")), Err(PipelineError::Ordering(_))));
    }

    #[test]
    fn unknown_role_is_a_plan_error() {
        let bad = PLAN.replacen("role = \"general\"", "role = \"wiki\"", 1);
        assert!(matches!(StagePlan::from_toml(&bad, Path::new(".")), Err(PipelineError::Plan(_))));
    }
}
