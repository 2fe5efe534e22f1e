use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Domain, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
}

/// Per-domain test size: `floor(n * (1 - fraction))`, remainder to train.
/// The tiny slack absorbs binary representation error (`1 - 0.8` is just
/// under `0.2`).
fn test_size(n: usize, fraction: f64) -> usize {
    ((n as f64) * (1.0 - fraction) + 1e-9).floor() as usize
}

/// Stratified split: each domain is shuffled independently with a generator
/// seeded from `seed`, then partitioned. Output keeps domain order
/// (memory, then reasoning) with shuffled order inside each domain.
pub fn split(samples: &[Sample], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for domain in Domain::ALL {
        let mut group: Vec<&Sample> = samples.iter().filter(|s| s.domain == domain).collect();
        group.shuffle(&mut rng);
        let n_test = test_size(group.len(), fraction);
        let (te, tr) = group.split_at(n_test);
        test.extend(te.iter().map(|s| (*s).clone()));
        train.extend(tr.iter().map(|s| (*s).clone()));
    }
    Ok(DatasetSplit { train, test, seed })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;
    use crate::tasks::{domain_count, synthetic_corpus};

    #[test]
    fn standard_sizes() {
        let corpus = synthetic_corpus(500, 500, 42).unwrap();
        let s = split(&corpus, 0.8, 42).unwrap();
        assert_eq!(domain_count(&s.train, Domain::Memory), 400);
        assert_eq!(domain_count(&s.train, Domain::Reasoning), 400);
        assert_eq!(domain_count(&s.test, Domain::Memory), 100);
        assert_eq!(domain_count(&s.test, Domain::Reasoning), 100);
    }

    #[test]
    fn boundary_fractions_rejected() {
        let corpus = synthetic_corpus(4, 4, 1).unwrap();
        for f in [0.0, 1.0, 1.5, -0.2, f64::NAN] {
            assert!(split(&corpus, f, 42).is_err(), "{f}");
        }
    }

    #[test]
    fn same_seed_same_membership() {
        let corpus = synthetic_corpus(40, 40, 1).unwrap();
        let ids = |v: &[Sample]| v.iter().map(|s| s.id.clone()).collect::<BTreeSet<_>>();
        let a = split(&corpus, 0.8, 42).unwrap();
        let b = split(&corpus, 0.8, 42).unwrap();
        assert_eq!(ids(&a.test), ids(&b.test));
        let c = split(&corpus, 0.8, 43).unwrap();
        assert_ne!(ids(&a.test), ids(&c.test));
    }

    #[test]
    fn uneven_sizes_floor_the_test_side() {
        let corpus = synthetic_corpus(14, 6, 1).unwrap();
        let s = split(&corpus, 0.75, 0).unwrap();
        assert_eq!(domain_count(&s.test, Domain::Memory), 3);
        assert_eq!(domain_count(&s.train, Domain::Memory), 11);
        assert_eq!(domain_count(&s.test, Domain::Reasoning), 1);
    }

    proptest! {
        #[test]
        fn split_partitions_each_domain(n_mem in 0usize..40, n_rea in 0usize..40, frac in 0.05f64..0.95, seed: u64) {
            let corpus = synthetic_corpus(n_mem * 2, n_rea * 2, 5).unwrap();
            let s = split(&corpus, frac, seed).unwrap();
            let train: BTreeSet<_> = s.train.iter().map(|x| &x.id).collect();
            let test: BTreeSet<_> = s.test.iter().map(|x| &x.id).collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(train.len() + test.len(), corpus.len());
            for d in Domain::ALL {
                let n = domain_count(&corpus, d);
                prop_assert_eq!(domain_count(&s.test, d), test_size(n, frac));
            }
        }
    }
}
