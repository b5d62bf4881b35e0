use std::fs;
use std::path::Path;

use biasscreen_core::corpus::{gen_synthetic, oracle_label, Label, SyntheticCorpus, SyntheticSpec, Vocabulary};
use biasscreen_core::metrics::{confusion, prf, Averaging};
use biasscreen_core::net::{
    load_checkpoint, load_classifier, load_lm, save_checkpoint, Checkpoint, CheckpointModel, LmNetwork, ModelConfig, NetError,
};
use biasscreen_core::pipeline::*;

fn tiny_config(vocab: usize) -> ModelConfig {
    ModelConfig { embed_dim: 8, hidden_dim: 12, bptt_window: 12, ..ModelConfig::new(vocab) }
}

fn corpus(size: usize) -> SyntheticCorpus {
    gen_synthetic(&SyntheticSpec { seed: 5, size, general_sentences: 300, domain_sentences: 120, ..SyntheticSpec::default() })
        .unwrap()
}

fn plan_in(dir: &Path, roles: &[&str], epochs: usize) -> StagePlan {
    corpus(200).write_to(dir.join("data")).unwrap();
    let mut text = String::from(
        "seed = 3\nlabeled = \"data/labeled.jsonl\"\noutput_dir = \"out\"\n\
         [model]\nembed_dim = 8\nhidden_dim = 12\nbptt_window = 12\n\
         [finetune]\nmax_epochs = 3\npatience = 2\n",
    );
    for role in roles {
        let file = if *role == "general" { "general.txt" } else { "domain.txt" };
        text += &format!("[[stages]]\ncorpus = \"data/{file}\"\nrole = \"{role}\"\nepochs = {epochs}\nbatch_size = 8\n");
    }
    StagePlan::from_toml(&text, dir).unwrap()
}

fn sentences(c: &SyntheticCorpus) -> Vec<String> {
    c.general.clone()
}

#[test]
fn zero_epoch_stage_returns_its_input() {
    let c = corpus(50);
    let text = sentences(&c);
    let vocab = Vocabulary::build_from_sentences(&text, 1, 10_000).unwrap();
    let init = LmNetwork::<f32>::new(tiny_config(vocab.len()), 1).unwrap();
    let settings = LmStageSettings { epochs: 0, ..LmStageSettings::default() };
    let res = run_pretrain_stage("s", init.clone(), &text[..250], &text[250..], &vocab, &settings, 9).unwrap();
    assert_eq!(res.records.len(), 1);
    assert_eq!(res.best_epoch, 0);
    let a = Checkpoint::new(CheckpointModel::Lm(init), vocab.digest()).to_bytes();
    let b = Checkpoint::new(CheckpointModel::Lm(res.network), vocab.digest()).to_bytes();
    assert_eq!(a, b);
}

#[test]
fn training_lowers_validation_perplexity() {
    let c = corpus(50);
    let text = sentences(&c);
    let vocab = Vocabulary::build_from_sentences(&text, 1, 10_000).unwrap();
    let init = LmNetwork::<f32>::new(tiny_config(vocab.len()), 1).unwrap();
    let settings = LmStageSettings { epochs: 3, learning_rate: 5e-3, batch_size: 8 };
    let res = run_pretrain_stage("s", init, &text[..270], &text[270..], &vocab, &settings, 9).unwrap();
    let ppl: Vec<f64> = res.records.iter().map(|r| r.valid_perplexity.unwrap()).collect();
    assert_eq!(ppl.len(), 4);
    assert!(ppl[3] < ppl[0], "{ppl:?}");
    assert!(res.records[0].train_loss.is_none() && res.records[1].train_loss.is_some());
    for r in &res.records {
        assert!((r.valid_perplexity.unwrap() - r.valid_loss.exp()).abs() < 1e-9 * r.valid_perplexity.unwrap());
    }
}

#[test]
fn stage_rejects_a_network_over_another_vocabulary() {
    let c = corpus(50);
    let text = sentences(&c);
    let vocab = Vocabulary::build_from_sentences(&text, 1, 10_000).unwrap();
    let init = LmNetwork::<f32>::new(tiny_config(vocab.len() + 1), 1).unwrap();
    let err = run_pretrain_stage("s", init, &text[..10], &text[10..20], &vocab, &LmStageSettings::default(), 0);
    assert!(matches!(err, Err(PipelineError::Input(_))));
}

#[test]
fn progressive_run_chains_checkpoints_and_keeps_lm_head() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan_in(dir.path(), &["general", "domain"], 1);
    let out = run_progressive(&plan).unwrap();
    let names: Vec<&str> = out.chain.iter().map(|l| l.stage.as_str()).collect();
    assert_eq!(names, ["stage1-general", "stage2-domain", "finetune"]);
    assert_eq!(out.chain[0].input, None);
    for pair in out.chain.windows(2) {
        assert_eq!(pair[1].input.as_deref(), Some(pair[0].output.as_str()));
    }
    for f in ["vocab.txt", "chain.json", "train_log.jsonl", "report.json", "report.txt", "classifier.ckpt"] {
        assert!(plan.output_dir.join(f).is_file(), "{f}");
    }
    let logged = TrainLog::read(plan.output_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(logged.stage("stage1-general").len(), 2);
    assert_eq!(logged.stage("stage2-domain").len(), 2);

    let lm = load_lm(&out.chain[1].path, &out.vocab_digest).unwrap();
    let cls = match load_checkpoint(&out.chain[2].path, &out.vocab_digest).unwrap().model {
        CheckpointModel::Classifier(c) => c,
        CheckpointModel::Lm(_) => panic!("expected a classifier"),
    };
    assert!(cls.lm_head_frozen);
    assert_eq!(cls.backbone.lm_head.value, lm.lm_head.value);
    assert_eq!(cls.backbone.lm_bias.value, lm.lm_bias.value);

    let wrong = "0".repeat(64);
    assert!(matches!(load_lm(&out.chain[1].path, &wrong), Err(NetError::Compatibility { .. })));
}

#[test]
fn single_stage_chain_and_reordered_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan_in(dir.path(), &["domain"], 1);
    assert_eq!(run_progressive(&plan).unwrap().chain.len(), 2);

    let mut swapped = plan_in(dir.path(), &["general", "domain"], 1);
    swapped.stages.reverse();
    assert!(matches!(swapped.validate(), Err(PipelineError::Ordering(_))));
    assert!(matches!(run_progressive(&swapped), Err(PipelineError::Ordering(_))));
}

#[test]
fn runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_progressive(&plan_in(a.path(), &["general"], 1)).unwrap();
    let rb = run_progressive(&plan_in(b.path(), &["general"], 1)).unwrap();
    let ids = |r: &ProgressiveOutcome| r.chain.iter().map(|l| l.output.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&ra), ids(&rb));
    assert_eq!(ra.report, rb.report);
}

#[test]
fn arm_registry_runs_both_arms_from_one_plan() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = plan_in(dir.path(), &["general"], 1);
    let reg = ArmRegistry::with_defaults();
    assert_eq!(reg.names(), ["progressive", "no-pretrain"]);
    assert!(matches!(reg.get("bogus"), Err(PipelineError::UnknownArm(_))));
    for name in reg.names() {
        plan.output_dir = dir.path().join(name);
        let out = reg.get(name).unwrap().run(&plan).unwrap();
        assert_eq!(out.arm, name);
        assert!(out.checkpoints.last().unwrap().ends_with("classifier.ckpt"));
        assert!(plan.output_dir.join("report.txt").is_file());
    }
    assert_eq!(
        fs::read(dir.path().join("progressive/vocab.txt")).unwrap(),
        fs::read(dir.path().join("no-pretrain/vocab.txt")).unwrap()
    );
}

fn small_split() -> (Prepared, StagePlan, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan_in(dir.path(), &["general"], 1);
    (prepare(&plan).unwrap(), plan, dir)
}

#[test]
fn validation_labels_do_not_touch_training_losses() {
    let (prep, plan, _dir) = small_split();
    let settings = FinetuneSettings { max_epochs: 3, patience: 10, ..FinetuneSettings::default() };
    let config = plan.model.config(prep.vocab.len());
    let a = ablate_no_pretrain(config, &prep.split, &settings, 4).unwrap();
    let mut shuffled = prep.split.clone();
    let n = shuffled.valid.len();
    let labels: Vec<Label> = shuffled.valid.iter().map(|s| s.label).collect();
    for (i, s) in shuffled.valid.iter_mut().enumerate() {
        s.label = labels[(i + 1) % n];
    }
    let b = ablate_no_pretrain(config, &shuffled, &settings, 4).unwrap();
    let train = |r: &FinetuneResult| r.records.iter().map(|e| e.train_loss).collect::<Vec<_>>();
    assert_eq!(train(&a), train(&b));
}

#[test]
fn ablation_equals_finetuning_from_the_shared_init() {
    let (prep, plan, _dir) = small_split();
    let settings = FinetuneSettings { max_epochs: 2, ..FinetuneSettings::default() };
    let config = plan.model.config(prep.vocab.len());
    let ablated = ablate_no_pretrain(config, &prep.split, &settings, 8).unwrap();
    let lm = LmNetwork::new(config, init_seed(8)).unwrap();
    let tuned = finetune_classifier(lm, &prep.split, &settings, 8).unwrap();
    // The LM softmax never receives a classification gradient, so freezing it changes nothing.
    assert_eq!(ablated.report, tuned.report);
    assert_eq!(ablated.network.class_linear.value, tuned.network.class_linear.value);
    assert!(!ablated.network.lm_head_frozen && tuned.network.lm_head_frozen);
}

#[test]
fn classifier_fits_a_separable_set_after_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { seed: 5, size: 200, general_sentences: 5000, domain_sentences: 200, ..SyntheticSpec::default() };
    let c = gen_synthetic(&spec).unwrap();
    for s in &c.labeled {
        assert_eq!(oracle_label(&spec.lexicon, &s.text), s.label, "{}", s.text);
    }
    c.write_to(dir.path()).unwrap();
    let text = "seed = 3\nlabeled = \"labeled.jsonl\"\noutput_dir = \"out\"\n\
        [finetune]\nmax_epochs = 100\npatience = 100\n\
        [[stages]]\ncorpus = \"general.txt\"\nrole = \"general\"\nepochs = 20\nlearning_rate = 0.003\n";
    let plan = StagePlan::from_toml(text, dir.path()).unwrap();
    let out = run_progressive(&plan).unwrap();
    let prep = prepare(&plan).unwrap();
    let net = load_classifier(&out.chain[1].path, &out.vocab_digest).unwrap();
    let probs = predict(&net, &prep.split.train).unwrap();
    let golds: Vec<usize> = prep.split.train.iter().map(|s| s.label.index()).collect();
    let preds: Vec<usize> = probs
        .iter()
        .map(|p| (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b }))
        .collect();
    let f1 = prf(&confusion(&golds, &preds, &Label::names()).unwrap(), Averaging::Macro).unwrap().f1;
    assert!(f1 >= 0.95, "training macro-F1 {f1}");
}

#[test]
fn saved_checkpoint_reloads_bit_exact() {
    let (prep, plan, dir) = small_split();
    let net = LmNetwork::<f32>::new(plan.model.config(prep.vocab.len()), 1).unwrap();
    let path = dir.path().join("x.ckpt");
    let id = save_checkpoint(&Checkpoint::new(CheckpointModel::Lm(net.clone()), prep.vocab.digest()), &path).unwrap();
    assert_eq!(load_lm(&path, prep.vocab.digest()).unwrap(), net);
    assert_eq!(id.len(), 16);
}
