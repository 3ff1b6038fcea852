//! Synthetic data with a known error-generating conjunction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featurize::{feature_name, FeatureCounts, SparseDataset};
use crate::ingest::{ExampleCollection, ExampleRecord, Outcome, Schema};
use crate::rulekit::{Condition, Rule};

pub const SYNTH_CHANNEL: &str = "question";

/// Each of `features` tokens appears in a row with probability `density`,
/// 1 or 2 times. A row is an error iff the first two tokens are both
/// present, after which every label flips with probability `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n: usize,
    pub features: usize,
    pub density: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            n: 2000,
            features: 40,
            density: 0.3,
            noise: 0.05,
            seed: 0,
        }
    }
}

pub fn token(i: usize) -> String {
    format!("f{i:02}")
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub collection: ExampleCollection,
    /// Feature counts per record, as featurization would produce them.
    pub counts: Vec<FeatureCounts>,
    pub rule: Rule,
}

impl Planted {
    pub fn generate(spec: &PlantedSpec) -> Planted {
        assert!(spec.features >= 2, "need at least two features");
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut records = Vec::with_capacity(spec.n);
        let mut counts = Vec::with_capacity(spec.n);
        for i in 0..spec.n {
            let mut tokens = Vec::new();
            let mut m = FeatureCounts::new();
            for f in 0..spec.features {
                if rng.random::<f64>() < spec.density {
                    let c = rng.random_range(1..=2u32);
                    tokens.extend(std::iter::repeat_n(token(f), c as usize));
                    m.insert(feature_name(SYNTH_CHANNEL, &token(f)), c);
                }
            }
            let planted = m.len() >= 2
                && m.contains_key(&feature_name(SYNTH_CHANNEL, &token(0)))
                && m.contains_key(&feature_name(SYNTH_CHANNEL, &token(1)));
            let error = planted != (rng.random::<f64>() < spec.noise);
            let outcome = if error { Outcome::Error } else { Outcome::Correct };
            records.push(ExampleRecord::new(format!("s{i:05}"), outcome).with_channel(SYNTH_CHANNEL, tokens));
            counts.push(m);
        }
        let collection = ExampleCollection::new(Schema::default(), records).expect("synthetic records are valid");
        let rule = Rule::new([
            Condition::gt(feature_name(SYNTH_CHANNEL, &token(0)), 0.5),
            Condition::gt(feature_name(SYNTH_CHANNEL, &token(1)), 0.5),
        ]);
        Planted {
            collection,
            counts,
            rule,
        }
    }

    /// The dataset over the full feature set (`question_f00` ...).
    pub fn dataset(&self) -> SparseDataset {
        let records = self.collection.records();
        SparseDataset::from_feature_maps(
            &self.counts,
            records.iter().map(|r| r.id.clone()).collect(),
            records.iter().map(ExampleRecord::is_error).collect(),
            vec![None; records.len()],
            None,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled_by_rule() {
        let spec = PlantedSpec {
            n: 500,
            noise: 0.0,
            seed: 4,
            ..PlantedSpec::default()
        };
        let a = Planted::generate(&spec);
        let b = Planted::generate(&spec);
        assert_eq!(a.counts, b.counts);
        let ds = a.dataset();
        assert_eq!(ds.len(), 500);
        for r in 0..ds.len() {
            assert_eq!(a.rule.matches_row(&ds, r), ds.labels[r]);
        }
        assert_eq!(a.rule.condition_string(), "question_f00 > 0.5 and question_f01 > 0.5");
        let rec = &a.collection.records()[0];
        let total: usize = rec.channels[SYNTH_CHANNEL].len();
        assert_eq!(total as u32, a.counts[0].values().sum::<u32>());
    }

    #[test]
    fn noise_flips_some_labels() {
        let p = Planted::generate(&PlantedSpec { seed: 1, ..PlantedSpec::default() });
        let ds = p.dataset();
        let disagree = (0..ds.len()).filter(|&r| p.rule.matches_row(&ds, r) != ds.labels[r]).count();
        let rate = disagree as f64 / ds.len() as f64;
        assert!((0.02..0.08).contains(&rate), "{rate}");
    }
}
