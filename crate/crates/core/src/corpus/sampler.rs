use rand::seq::SliceRandom;

use super::{Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed::rng_for;

fn per_label_draw(dataset: &LabeledDataset, per_label: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    let mut draws: [Vec<usize>; 3] = Default::default();
    for label in Label::ALL {
        let mut pool: Vec<usize> = dataset
            .examples
            .iter()
            .enumerate()
            .filter(|(_, ex)| ex.label == label)
            .map(|(i, _)| i)
            .collect();
        if pool.len() < per_label {
            return Err(Error::InsufficientExamples {
                label,
                requested: per_label,
                available: pool.len(),
            });
        }
        pool.shuffle(&mut rng_for(seed, &[0x5a3f, label.index() as u64]));
        pool.truncate(per_label);
        draws[label.index()] = pool;
    }
    Ok(draws)
}

fn gather(dataset: &LabeledDataset, mut idx: Vec<usize>) -> LabeledDataset {
    idx.sort_unstable();
    LabeledDataset::new(
        dataset.split,
        idx.into_iter().map(|i| dataset.examples[i].clone()).collect(),
    )
}

/// Draws `k` examples of every label without replacement. The result keeps
/// the dataset's original order.
pub fn sample_few_shot(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<LabeledDataset> {
    if k == 0 {
        return Err(Error::Invalid("shots per class must be at least 1".into()));
    }
    let draws = per_label_draw(dataset, k, seed)?;
    Ok(gather(dataset, draws.concat()))
}

/// Train and dev samples of `k` per label drawn from one pool; the two are
/// disjoint.
pub fn sample_few_shot_with_dev(
    dataset: &LabeledDataset,
    k: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if k == 0 {
        return Err(Error::Invalid("shots per class must be at least 1".into()));
    }
    let draws = per_label_draw(dataset, 2 * k, seed)?;
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for d in draws {
        train.extend_from_slice(&d[..k]);
        dev.extend_from_slice(&d[k..]);
    }
    let mut dev_set = gather(dataset, dev);
    dev_set.split = super::Split::Dev;
    Ok((gather(dataset, train), dev_set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{NliExample, Split};
    use proptest::prelude::*;

    fn dataset(per_label: [usize; 3]) -> LabeledDataset {
        let mut examples = Vec::new();
        for (li, &n) in per_label.iter().enumerate() {
            for j in 0..n {
                examples.push(
                    NliExample::from_text(&format!("p{li} {j}"), "h", Label::ALL[li], "en").unwrap(),
                );
            }
        }
        LabeledDataset::new(Split::Train, examples)
    }

    #[test]
    fn eight_shots() {
        let ds = dataset([300, 300, 300]);
        let s = sample_few_shot(&ds, 8, 1).unwrap();
        assert_eq!(s.len(), 24);
        assert_eq!(s.label_counts(), [8, 8, 8]);
    }

    #[test]
    fn seeds() {
        let ds = dataset([300, 300, 300]);
        let a = sample_few_shot(&ds, 1, 1).unwrap();
        let b = sample_few_shot(&ds, 1, 2).unwrap();
        assert_eq!(a, sample_few_shot(&ds, 1, 1).unwrap());
        assert_ne!(a, b);
    }

    #[test]
    fn insufficient_names_class() {
        let ds = dataset([300, 300, 100]);
        let err = sample_few_shot(&ds, 256, 1).unwrap_err();
        assert!(err.to_string().contains("Contradiction"), "{err}");
    }

    #[test]
    fn dev_disjoint_from_train() {
        let ds = dataset([40, 40, 40]);
        let (train, dev) = sample_few_shot_with_dev(&ds, 16, 3).unwrap();
        assert_eq!(train.label_counts(), [16, 16, 16]);
        assert_eq!(dev.label_counts(), [16, 16, 16]);
        for ex in &dev.examples {
            assert!(!train.examples.contains(ex));
        }
    }

    proptest! {
        #[test]
        fn always_class_balanced(k in 1usize..20, seed in any::<u64>()) {
            let ds = dataset([25, 30, 20]);
            let s = sample_few_shot(&ds, k, seed).unwrap();
            prop_assert_eq!(s.label_counts(), [k, k, k]);
            prop_assert_eq!(s, sample_few_shot(&ds, k, seed).unwrap());
        }
    }
}
