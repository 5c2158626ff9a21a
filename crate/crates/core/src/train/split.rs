//! Parent-grouped, label-stratified splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Record;
use crate::rng::{stream, tag};

/// Anything with an id, a parent group and a binary label.
pub trait Labeled {
    fn id(&self) -> &str;
    fn group(&self) -> &str;
    fn label(&self) -> u8;
}

impl Labeled for Record {
    fn id(&self) -> &str {
        &self.id
    }
    fn group(&self) -> &str {
        &self.parent_id
    }
    fn label(&self) -> u8 {
        self.label
    }
}

impl<L: Labeled> Labeled for &L {
    fn id(&self) -> &str {
        (*self).id()
    }
    fn group(&self) -> &str {
        (*self).group()
    }
    fn label(&self) -> u8 {
        (*self).label()
    }
}

struct Group {
    members: Vec<usize>,
    label: u8,
}

/// Parent groups per class, in parent-id order.
fn groups<L: Labeled>(items: &[L]) -> Result<[Vec<Group>; 2]> {
    let mut by_parent: BTreeMap<&str, Group> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        let label = it.label();
        if label > 1 {
            return Err(Error::Data(format!("sample {} has label {label}", it.id())));
        }
        let g = by_parent.entry(it.group()).or_insert(Group {
            members: Vec::new(),
            label,
        });
        if g.label != label {
            return Err(Error::Data(format!(
                "parent {} mixes labels {} and {label}",
                it.group(),
                g.label
            )));
        }
        g.members.push(i);
    }
    let mut out = [Vec::new(), Vec::new()];
    for g in by_parent.into_values() {
        out[g.label as usize].push(g);
    }
    Ok(out)
}

/// Train and test indices into `items`, both sorted. Every parent group lands
/// wholly on one side and each class contributes `round(groups * test_frac)`
/// groups to the test side (at least one when it has two or more).
pub fn split_train_test<L: Labeled>(items: &[L], test_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::Argument(format!("test fraction {test_frac} outside [0, 1)")));
    }
    let classes = groups(items)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut gs) in classes.into_iter().enumerate() {
        if gs.is_empty() {
            return Err(Error::Data(format!("class {c} has no samples")));
        }
        gs.shuffle(&mut stream(seed, &[tag::SPLIT, c as u64]));
        let mut n_test = (gs.len() as f64 * test_frac).round() as usize;
        if test_frac > 0.0 && gs.len() >= 2 {
            n_test = n_test.clamp(1, gs.len() - 1);
        }
        for (j, g) in gs.into_iter().enumerate() {
            if j < n_test { &mut test } else { &mut train }.extend(g.members);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Sample ids of each validation fold.
    pub folds: Vec<Vec<String>>,
    /// `[undamaged, damaged]` counts per fold.
    pub class_counts: Vec<[usize; 2]>,
}

impl FoldPlan {
    /// Indices of `items` in fold `f` and in the remaining folds.
    pub fn partition<L: Labeled>(&self, items: &[L], f: usize) -> (Vec<usize>, Vec<usize>) {
        let val: std::collections::HashSet<&str> = self.folds[f].iter().map(String::as_str).collect();
        (0..items.len()).partition(|&i| !val.contains(items[i].id()))
    }
}

/// Stratified k-fold over parent groups. Groups of each class are shuffled and
/// dealt to the fold holding the fewest samples of that class so far.
pub fn stratified_kfold<L: Labeled>(items: &[L], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Argument(format!("k-fold needs k >= 2, got {k}")));
    }
    let classes = groups(items)?;
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut class_counts = vec![[0usize; 2]; k];
    for (c, mut gs) in classes.into_iter().enumerate() {
        if gs.len() < k {
            return Err(Error::Data(format!(
                "class {c} has {} parent groups, fewer than k = {k}",
                gs.len()
            )));
        }
        gs.shuffle(&mut stream(seed, &[tag::FOLDS, c as u64]));
        for g in gs {
            let f = (0..k).min_by_key(|&f| (class_counts[f][c], f)).expect("k >= 2");
            class_counts[f][c] += g.members.len();
            folds[f].extend(g.members);
        }
    }
    let folds = folds
        .into_iter()
        .map(|mut f| {
            f.sort_unstable();
            f.into_iter().map(|i| items[i].id().to_string()).collect()
        })
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        folds,
        class_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize, per_parent: usize) -> Vec<Record> {
        (0..n)
            .map(|i| {
                let parent = i / per_parent;
                let label = (parent % 2) as u8;
                Record::new(&format!("r{i}"), "x.png", label, &format!("p{parent}"))
            })
            .collect()
    }

    #[test]
    fn ten_singletons_give_one_test_sample_per_class() {
        let rs = records(10, 1);
        let (train, test) = split_train_test(&rs, 0.2, 3).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(test.iter().map(|&i| rs[i].label as usize).sum::<usize>(), 1);
        assert_eq!(split_train_test(&rs, 0.2, 3).unwrap(), (train, test));
    }

    #[test]
    fn quadrants_stay_with_their_parent() {
        let rs = records(400, 4);
        let (_, test) = split_train_test(&rs, 0.1, 9).unwrap();
        assert_eq!(test.len(), 40);
        for &i in &test {
            let siblings = test.iter().filter(|&&j| rs[j].parent_id == rs[i].parent_id).count();
            assert_eq!(siblings, 4);
        }
    }

    #[test]
    fn missing_class_is_an_error() {
        let rs: Vec<Record> = (0..4).map(|i| Record::new(&format!("r{i}"), "x", 1, &format!("p{i}"))).collect();
        assert!(split_train_test(&rs, 0.25, 0).is_err());
        assert!(stratified_kfold(&rs, 2, 0).is_err());
    }

    #[test]
    fn balanced_folds() {
        let rs = records(100, 1);
        let plan = stratified_kfold(&rs, 5, 1).unwrap();
        assert!(plan.class_counts.iter().all(|c| *c == [10, 10]));
        let mut all: Vec<&String> = plan.folds.iter().flatten().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
        let (train, val) = plan.partition(&rs, 2);
        assert_eq!((train.len(), val.len()), (80, 20));
    }

    #[test]
    fn too_few_groups_for_k() {
        let rs = records(16, 4);
        assert!(stratified_kfold(&rs, 3, 0).is_err());
    }
}
