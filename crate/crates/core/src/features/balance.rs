use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_translate, AugmentationSpec};
use super::dataset::{FeatureKind, FeatureSet, Sample};
use super::extract::TimeSeriesFeature;
use crate::classes::ClassSet;
use crate::ingest::Flow;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceStrategy {
    /// Fill deficits with translation-augmented copies (time series only).
    Augment,
    /// Fill deficits by resampling originals with replacement.
    Oversample,
}

/// Brings every class to `target` samples (default: the largest class).
///
/// Originals are kept in order; generated samples follow, grouped by class
/// in class-name order. `flows` resolves `Sample::flow_id` for augmentation.
pub fn balance(
    set: &FeatureSet,
    strategy: BalanceStrategy,
    target: Option<usize>,
    seed: u64,
    flows: Option<&[Flow]>,
    classes: Option<&ClassSet>,
    max_shift: usize,
) -> Result<FeatureSet> {
    if strategy == BalanceStrategy::Augment && set.kind != FeatureKind::TimeSeries {
        return Err(Error::Config(
            "translation augmentation applies to time-series features only".into(),
        ));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in set.samples.iter().enumerate() {
        by_class.entry(s.label.as_str()).or_default().push(i);
    }
    if let Some(cs) = classes {
        if let Some(missing) = cs.names().iter().find(|n| !by_class.contains_key(n.as_str())) {
            return Err(Error::EmptyClass(missing.clone()));
        }
    }
    if by_class.is_empty() {
        return Ok(set.clone());
    }
    let largest = by_class.values().map(Vec::len).max().unwrap_or(0);
    let target = target.unwrap_or(largest);
    if let Some((name, idx)) = by_class.iter().find(|(_, v)| v.len() > target) {
        return Err(Error::Config(format!(
            "class `{name}` already has {} samples, above target {target}",
            idx.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.clone();
    for idx in by_class.values() {
        for _ in idx.len()..target {
            let src = &set.samples[idx[rng.gen_range(0..idx.len())]];
            let values = match strategy {
                BalanceStrategy::Oversample => src.values.clone(),
                BalanceStrategy::Augment => {
                    let ts = TimeSeriesFeature::from_slice(&src.values).ok_or(Error::Shape {
                        expected: FeatureKind::TimeSeries.width(),
                        got: src.values.len(),
                    })?;
                    let flow = match (flows, src.flow_id) {
                        (Some(fl), Some(id)) => Some(fl.get(id).ok_or_else(|| {
                            Error::Data(format!("flow_id {id} is out of range"))
                        })?),
                        _ => None,
                    };
                    let spec = AugmentationSpec::sample(&mut rng, max_shift);
                    augment_translate(&ts, flow, &spec)?.to_vec()
                }
            };
            out.samples.push(Sample {
                values,
                ..src.clone()
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract::tests::flow_with;
    use crate::features::extract_timeseries;

    fn set_with(counts: &[(&str, usize)], flows: &mut Vec<Flow>) -> FeatureSet {
        let mut set = FeatureSet::new(FeatureKind::TimeSeries);
        for (label, n) in counts {
            for _ in 0..*n {
                let f = flow_with(45, 5..15);
                set.push(Sample {
                    label: label.to_string(),
                    session_id: "s".into(),
                    flow_id: Some(flows.len()),
                    values: extract_timeseries(&f).to_vec(),
                })
                .unwrap();
                flows.push(f);
            }
        }
        set
    }

    fn count(set: &FeatureSet, label: &str) -> usize {
        set.labels().filter(|l| *l == label).count()
    }

    #[test]
    fn oversample_fills_deficit() {
        let mut flows = Vec::new();
        let set = set_with(&[("A", 10), ("B", 4)], &mut flows);
        let out = balance(&set, BalanceStrategy::Oversample, Some(10), 1, None, None, 10).unwrap();
        assert_eq!(count(&out, "A"), 10);
        assert_eq!(count(&out, "B"), 10);
        assert_eq!(out.samples[..14], set.samples[..]);
    }

    #[test]
    fn augment_generates_shifted_copies() {
        let mut flows = Vec::new();
        let set = set_with(&[("A", 10), ("B", 4)], &mut flows);
        let out = balance(&set, BalanceStrategy::Augment, None, 1, Some(&flows), None, 10).unwrap();
        assert_eq!(count(&out, "B"), 10);
        let original = &set.samples[10].values;
        for s in &out.samples[14..] {
            assert_eq!(s.label, "B");
            assert_ne!(&s.values, original);
        }
    }

    #[test]
    fn balanced_input_is_fixed_point() {
        let mut flows = Vec::new();
        let set = set_with(&[("A", 3), ("B", 3)], &mut flows);
        let out = balance(&set, BalanceStrategy::Augment, None, 9, Some(&flows), None, 10).unwrap();
        assert_eq!(out, set);
    }

    #[test]
    fn empty_class_named_in_error() {
        let mut flows = Vec::new();
        let set = set_with(&[("A", 3)], &mut flows);
        let cs = ClassSet::new(["A", "Chat"]).unwrap();
        let err = balance(&set, BalanceStrategy::Oversample, None, 0, None, Some(&cs), 10).unwrap_err();
        assert!(matches!(err, Error::EmptyClass(ref c) if c == "Chat"));
    }
}
