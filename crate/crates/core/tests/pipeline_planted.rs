mod common;

use common::fixture_wordnet;
use failslice::featurize::{build_dataset, build_dataset_with_vocab};
use failslice::ingest::{split_collection, ExampleCollection, ExampleRecord, Outcome, Schema};
use failslice::pipeline::{run_pipeline, PipelineConfig, PipelineError, RuleReport};
use failslice::rulekit::{evaluate_rule, Condition, Rule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2000 records over tokens f00..f19. Errors are `f00 and f01` (about 8% of
/// rows) plus about 2% background errors elsewhere, so the conjunction
/// explains roughly 80% of them.
fn planted(seed: u64) -> ExampleCollection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..2000)
        .map(|i| {
            let tokens: Vec<String> = (0..20)
                .filter(|_| rng.random::<f64>() < 0.283)
                .map(|f| format!("f{f:02}"))
                .collect();
            let planted = tokens.iter().any(|t| t == "f00") && tokens.iter().any(|t| t == "f01");
            let error = planted || rng.random::<f64>() < 0.0217;
            let outcome = if error { Outcome::Error } else { Outcome::Correct };
            ExampleRecord::new(format!("p{i:04}"), outcome).with_channel("question", tokens)
        })
        .collect();
    ExampleCollection::new(Schema::default(), records).unwrap()
}

fn planted_rule() -> Rule {
    Rule::new([Condition::gt("question_f00", 0.5), Condition::gt("question_f01", 0.5)])
}

fn cfg() -> PipelineConfig {
    PipelineConfig {
        seed: 17,
        ..PipelineConfig::default()
    }
}

#[test]
fn planted_rule_survives_both_gates() {
    let c = planted(5);
    let rate = c.error_count() as f64 / c.len() as f64;
    assert!((0.07..0.13).contains(&rate), "{rate}");

    // Oracle first: the planted rule itself clears the held-out gate.
    let lex = fixture_wordnet();
    let cfg = cfg();
    let (train_c, test_c) = split_collection(&c, cfg.train_fraction, cfg.seed).unwrap();
    let fc = cfg.feature_config();
    let train = build_dataset(&train_c, lex, &fc);
    let test = build_dataset_with_vocab(&test_c, lex, &fc, &train.vocab);
    let all: Vec<usize> = (0..test.len()).collect();
    let own = evaluate_rule(&planted_rule(), &test, &all);
    assert!(own.precision >= 0.6 && own.support > 0);
    let explained = evaluate_rule(&planted_rule(), &train, &(0..train.len()).collect::<Vec<_>>()).recall;
    assert!((0.7..0.9).contains(&explained), "{explained}");

    let report = run_pipeline(&c, lex, &cfg).unwrap();
    let found = report.rules().find(|r| r.conditions == planted_rule().conditions);
    let found = found.unwrap_or_else(|| panic!("planted rule missing:\n{}", report.to_json()));
    assert!(found.stats_test.unwrap().precision >= 0.6);
    for r in report.rules() {
        assert!(r.stats_train.unwrap().precision >= cfg.precision_threshold);
        assert!(r.stats_test.unwrap().precision >= cfg.test_precision_threshold);
    }
    assert_eq!(report.to_json(), run_pipeline(&c, lex, &cfg).unwrap().to_json());
}

fn learned(r: &RuleReport) -> Vec<String> {
    r.clusters
        .iter()
        .flat_map(|c| {
            c.iterations
                .iter()
                .map(|t| format!("{}:{}:{:?}", c.cluster, t.iteration, t.covered))
        })
        .collect()
}

#[test]
fn test_split_never_influences_learning() {
    let c = planted(9);
    let cfg = cfg();
    let (_, test_c) = split_collection(&c, cfg.train_fraction, cfg.seed).unwrap();
    let test_ids: std::collections::HashSet<&str> = test_c.records().iter().map(|r| r.id.as_str()).collect();
    let mutated: Vec<ExampleRecord> = c
        .records()
        .iter()
        .map(|r| {
            if test_ids.contains(r.id.as_str()) {
                let mut m = r.clone();
                m.channels.insert("question".into(), vec!["zzz".into(), "f00".into()]);
                m
            } else {
                r.clone()
            }
        })
        .collect();
    let mutated = ExampleCollection::new(Schema::default(), mutated).unwrap();
    let lex = fixture_wordnet();
    let a = run_pipeline(&c, lex, &cfg).unwrap();
    let b = run_pipeline(&mutated, lex, &cfg).unwrap();
    assert_eq!(learned(&a), learned(&b));
}

#[test]
fn zero_errors_is_a_precondition_error() {
    let records = (0..10)
        .map(|i| ExampleRecord::new(format!("z{i}"), Outcome::Correct).with_channel("question", ["dog"]))
        .collect();
    let c = ExampleCollection::new(Schema::default(), records).unwrap();
    assert!(matches!(run_pipeline(&c, fixture_wordnet(), &cfg()), Err(PipelineError::NoErrors)));
}
