//! Synthetic corpora.
//!
//! Memory items query a seeded fact table (`relation of entity = value`)
//! behind a distractor prefix naming a random archive and source. Reasoning items describe an
//! action on an object; the consistent continuation depends on the action and
//! on the object's material class, so it cannot be read off either word alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Domain, Sample};
use crate::error::{Error, Result};

const ENTITIES: [&str; 8] = [
    "zorbia", "quillan", "marvek", "tesloa", "brindor", "kaphet", "ulmira", "dravos",
];
/// Each entity is asked about one relation, chosen by its index.
const RELATIONS: [&str; 3] = ["capital", "currency", "founder"];
const VALUES: [&str; 8] = [
    "lumen", "orrin", "pellax", "vostra", "kirrel", "amdune", "selvik", "tharn",
];

const ARCHIVES: [&str; 4] = ["old", "royal", "coastal", "northern"];
const SOURCES: [&str; 4] = ["ledger", "chronicle", "census", "gazette"];

const AGENTS: [&str; 5] = ["mara", "tobin", "cook", "child", "farmer"];
const ACTIONS: [&str; 3] = ["heats", "drops", "soaks"];
/// Objects grouped by material class; class order matches `EFFECTS` columns.
const OBJECTS: [[&str; 2]; 3] = [["ice", "butter"], ["glass", "vase"], ["paper", "twig"]];
/// `EFFECTS[action][class]`
const EFFECTS: [[&str; 3]; 3] = [
    ["melts", "cracks", "chars"],
    ["splatters", "shatters", "flutters"],
    ["dissolves", "gleams", "sags"],
];

fn check_even(n: usize) -> Result<()> {
    if !n.is_multiple_of(2) {
        return Err(Error::invalid(format!("sample count {n} must be even")));
    }
    Ok(())
}

fn fact_table(rng: &mut ChaCha8Rng) -> Vec<(String, String, String)> {
    let mut values = VALUES.to_vec();
    values.shuffle(rng);
    ENTITIES
        .iter()
        .enumerate()
        .map(|(i, ent)| {
            (
                RELATIONS[i % RELATIONS.len()].to_owned(),
                ent.to_string(),
                values[i].to_owned(),
            )
        })
        .collect()
}

fn memory_premise(rng: &mut ChaCha8Rng, relation: &str, entity: &str) -> String {
    let archive = ARCHIVES.choose(rng).expect("non-empty");
    let source = SOURCES.choose(rng).expect("non-empty");
    format!("{archive} {source} {relation} {entity}")
}

/// Fact-lookup items: `n/2` with the stored value, `n/2` with the value of a
/// different key. Positive keys cycle through the whole table, and negative
/// candidates are drawn only from keys that also appear as positives.
pub fn gen_memory(n: usize, seed: u64) -> Result<Vec<Sample>> {
    check_even(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_6d6f_7279);
    let facts = fact_table(&mut rng);
    let mut order: Vec<usize> = (0..facts.len()).collect();
    order.shuffle(&mut rng);

    let half = n / 2;
    let positive_keys: Vec<usize> = (0..half).map(|i| order[i % order.len()]).collect();
    let mut used = positive_keys.clone();
    used.sort_unstable();
    used.dedup();

    let mut out = Vec::with_capacity(n);
    for (i, &key) in positive_keys.iter().enumerate() {
        let (rel, ent, value) = &facts[key];
        out.push(Sample {
            id: format!("mem-{i:05}"),
            domain: Domain::Memory,
            premise: memory_premise(&mut rng, rel, ent),
            candidate: value.clone(),
            label: true,
        });
    }
    for i in 0..half {
        let key = rng.gen_range(0..facts.len());
        let (rel, ent, value) = &facts[key];
        let mut donors: Vec<usize> = used.iter().copied().filter(|&k| k != key).collect();
        if donors.is_empty() {
            // Only reachable for n = 2, where one key is used.
            donors = (0..facts.len()).filter(|&k| k != key).collect();
        }
        let donor = *donors.choose(&mut rng).expect("table has several keys");
        let wrong = &facts[donor].2;
        debug_assert_ne!(wrong, value);
        out.push(Sample {
            id: format!("mem-{:05}", half + i),
            domain: Domain::Memory,
            premise: memory_premise(&mut rng, rel, ent),
            candidate: wrong.clone(),
            label: false,
        });
    }
    Ok(out)
}

fn reasoning_premise(rng: &mut ChaCha8Rng, action: &str, object: &str) -> String {
    let agent = AGENTS.choose(rng).expect("non-empty");
    format!("{agent} {action} the {object}")
}

/// Event-continuation items: `n/2` with the consistent effect, `n/2` with an
/// effect that violates the action/material schema.
pub fn gen_reasoning(n: usize, seed: u64) -> Result<Vec<Sample>> {
    check_even(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7265_6173_6f6e);
    let all_effects: Vec<&str> = EFFECTS.iter().flatten().copied().collect();
    let half = n / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label = i < half;
        let a = rng.gen_range(0..ACTIONS.len());
        let class = rng.gen_range(0..OBJECTS.len());
        let object = OBJECTS[class].choose(&mut rng).expect("non-empty");
        let consistent = EFFECTS[a][class];
        let candidate = if label {
            consistent
        } else {
            let distractors: Vec<&str> = all_effects
                .iter()
                .copied()
                .filter(|e| *e != consistent)
                .collect();
            *distractors.choose(&mut rng).expect("non-empty")
        };
        out.push(Sample {
            id: format!("rea-{i:05}"),
            domain: Domain::Reasoning,
            premise: reasoning_premise(&mut rng, ACTIONS[a], object),
            candidate: candidate.to_owned(),
            label,
        });
    }
    Ok(out)
}

/// `n_memory` memory items followed by `n_reasoning` reasoning items.
pub fn synthetic_corpus(n_memory: usize, n_reasoning: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut out = gen_memory(n_memory, seed)?;
    out.extend(gen_reasoning(n_reasoning, seed)?);
    Ok(out)
}

/// The schema-consistent effect for a reasoning premise, if it parses.
#[cfg(test)]
pub(crate) fn consistent_effect(premise: &str) -> Option<&'static str> {
    let a = ACTIONS
        .iter()
        .position(|act| premise.contains(&format!(" {act} ")))?;
    let class = OBJECTS
        .iter()
        .position(|objs| objs.iter().any(|o| premise.ends_with(&format!("the {o}"))))?;
    Some(EFFECTS[a][class])
}

#[cfg(test)]
mod tests {
    use std::collections::{HashMap, HashSet};

    use super::*;
    use crate::tasks::label_counts;

    #[test]
    fn odd_counts_are_rejected() {
        assert!(gen_memory(3, 1).is_err());
        for seed in 0..20 {
            assert_eq!(gen_memory(2, seed).unwrap().len(), 2);
        }
        assert!(gen_reasoning(5, 1).is_err());
    }

    #[test]
    fn small_corpora_are_balanced_with_unique_ids() {
        for s in [gen_memory(4, 9).unwrap(), gen_reasoning(4, 9).unwrap()] {
            let domain = s[0].domain;
            assert_eq!(label_counts(&s, domain), (2, 2));
            let ids: HashSet<_> = s.iter().map(|x| &x.id).collect();
            assert_eq!(ids.len(), 4);
        }
    }

    #[test]
    fn memory_negatives_come_from_other_keys() {
        let s = gen_memory(500, 42).unwrap();
        let query = |p: &str| p.split(' ').skip(2).collect::<Vec<_>>().join(" ");
        let mut answer: HashMap<String, String> = HashMap::new();
        for x in s.iter().filter(|x| x.label) {
            let prev = answer.insert(query(&x.premise), x.candidate.clone());
            assert!(
                prev.is_none_or(|p| p == x.candidate),
                "fact table must be functional"
            );
        }
        for x in s.iter().filter(|x| !x.label) {
            let q = query(&x.premise);
            if let Some(correct) = answer.get(&q) {
                assert_ne!(&x.candidate, correct);
            }
            let donor = answer.iter().find(|(k, v)| **v == x.candidate && **k != q);
            assert!(
                donor.is_some(),
                "negative `{}` is not a positive answer for another key",
                x.candidate
            );
        }
    }

    #[test]
    fn reasoning_negatives_violate_the_schema() {
        let s = gen_reasoning(400, 7).unwrap();
        for x in &s {
            let effect = consistent_effect(&x.premise).expect("premise parses");
            assert_eq!(x.candidate == effect, x.label, "{x:?}");
        }
    }

    #[test]
    fn generation_is_seed_pure() {
        assert_eq!(
            synthetic_corpus(10, 10, 3).unwrap(),
            synthetic_corpus(10, 10, 3).unwrap()
        );
        assert_ne!(
            synthetic_corpus(10, 10, 3).unwrap(),
            synthetic_corpus(10, 10, 4).unwrap()
        );
    }
}
