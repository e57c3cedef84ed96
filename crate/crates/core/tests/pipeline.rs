//! Corpus files, checkpoints and end-to-end runs through the public API.

use std::io::Write;

use planhead::corpus::{generate_corpus, read_corpus, write_corpus, CorpusConfig, CorpusError, ScenarioRecord};
use planhead::evaluator::{evaluate_openloop, Convention, EvalOptions, GtReplay, ModelPlanner};
use planhead::model::{ModelConfig, Variant};
use planhead::reasoner::{oracle_reason, ReasonerError, ReasonerOutput};
use planhead::training::{prepare_corpus, train, Checkpoint, TrainConfig};

fn oracle(r: &ScenarioRecord) -> Result<ReasonerOutput, ReasonerError> {
    Ok(oracle_reason(r))
}

#[test]
fn corpus_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let recs = generate_corpus(0..64, &CorpusConfig::default()).unwrap();
    assert_eq!(write_corpus(&recs, &path).unwrap(), 64);
    assert_eq!(read_corpus(&path).unwrap(), recs);
}

#[test]
fn missing_field_names_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let recs = generate_corpus(0..3, &CorpusConfig::default()).unwrap();
    let mut f = std::fs::File::create(&path).unwrap();
    for (i, r) in recs.iter().enumerate() {
        let mut v = serde_json::to_value(r).unwrap();
        if i == 2 {
            v.as_object_mut().unwrap().remove("gt_traj");
        }
        writeln!(f, "{v}").unwrap();
    }
    drop(f);
    let err = read_corpus(&path).unwrap_err();
    match &err {
        CorpusError::Malformed { line, message } => {
            assert_eq!(*line, 3);
            assert!(message.contains("gt_traj"), "{message}");
        }
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().starts_with("line 3:"));
}

#[test]
fn duplicate_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let r = generate_corpus(5..6, &CorpusConfig::default()).unwrap();
    write_corpus(&[r[0].clone(), r[0].clone()], &path).unwrap();
    assert!(matches!(read_corpus(&path), Err(CorpusError::DuplicateId { line: 2, .. })));
}

#[test]
fn checkpoint_round_trip_plans_identically() {
    let recs = generate_corpus(0..48, &CorpusConfig::default()).unwrap();
    let cfg = ModelConfig::default().variant(Variant::SingleLevel);
    let samples = prepare_corpus(&recs, &cfg, oracle).unwrap();
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 16,
        seed: 3,
        ..Default::default()
    };
    let out = train(&samples, &cfg, &tc, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let a = ModelPlanner::new(out.params, cfg);
    let b = ModelPlanner::from_checkpoint(&loaded).unwrap();
    let ra = evaluate_openloop(&a, &recs, oracle, &EvalOptions::default()).unwrap();
    let rb = evaluate_openloop(&b, &recs, oracle, &EvalOptions::default()).unwrap();
    assert_eq!(ra.tables, rb.tables);
}

#[test]
fn training_lowers_the_loss() {
    let recs = generate_corpus(0..128, &CorpusConfig::default()).unwrap();
    let cfg = ModelConfig::default();
    let samples = prepare_corpus(&recs, &cfg, oracle).unwrap();
    let tc = TrainConfig {
        epochs: 4,
        ..Default::default()
    };
    let out = train(&samples, &cfg, &tc, None).unwrap();
    let first = out.epochs.first().unwrap().losses.total;
    let last = out.epochs.last().unwrap().losses.total;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn ground_truth_planner_scores_zero_l2() {
    let recs = generate_corpus(0..32, &CorpusConfig::default()).unwrap();
    let rep = evaluate_openloop(&GtReplay, &recs, oracle, &EvalOptions::default()).unwrap();
    for conv in Convention::ALL {
        assert_eq!(rep.table(conv).l2_at.avg, 0.0);
        assert_eq!(rep.table(conv).samples, 32);
    }
}
