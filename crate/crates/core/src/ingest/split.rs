use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{DatasetManifest, Split};

/// Clip counts per split by largest remainder, so each count is the floor
/// or ceiling of its exact share. A small split may get no clip at all.
fn allocate(n_clips: usize, fractions: &[(Split, f64)]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|(_, f)| f * n_clips as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n_clips - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Assigns whole clips to splits in the given proportions. Clip ids are
/// sorted before a seeded shuffle, so the result depends only on the set of
/// clips, the fractions and the seed.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fractions: &BTreeMap<Split, f64>,
    seed: u64,
) -> Result<DatasetManifest> {
    let total: f64 = fractions.values().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.values().any(|f| !(*f >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative and sum to 1, got {total}"
        )));
    }
    let active: Vec<(Split, f64)> = fractions
        .iter()
        .filter(|(_, f)| **f > 0.0)
        .map(|(s, f)| (*s, *f))
        .collect();
    let mut clips: Vec<&str> = manifest.clip_ids();
    if clips.len() < active.len() {
        return Err(Error::InvalidArgument(format!(
            "{} clips cannot fill {} splits",
            clips.len(),
            active.len()
        )));
    }
    clips.sort_unstable();
    clips.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = allocate(clips.len(), &active);

    let mut clip_split: BTreeMap<&str, Split> = BTreeMap::new();
    let mut it = clips.into_iter();
    for ((split, _), n) in active.iter().zip(counts) {
        for clip in it.by_ref().take(n) {
            clip_split.insert(clip, *split);
        }
    }
    let assignment = manifest
        .records()
        .iter()
        .map(|r| (r.id.clone(), clip_split[r.clip_id.as_str()]))
        .collect();
    DatasetManifest::with_class_labels(
        manifest.name(),
        manifest.class_labeled(),
        manifest.records().to_vec(),
        assignment,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ImageRecord, Modality};
    use proptest::prelude::*;
    use std::collections::{BTreeSet, HashMap};

    fn manifest(n_clips: usize, per_clip: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for c in 0..n_clips {
            for f in 0..per_clip {
                records.push(ImageRecord {
                    id: format!("c{c}_f{f}"),
                    path: "x.png".into(),
                    modality: if f % 2 == 0 { Modality::Wli } else { Modality::Nbi },
                    clip_id: format!("c{c}"),
                    width: 4,
                    height: 4,
                    annotations: vec![],
                    source_id: None,
                });
            }
        }
        DatasetManifest::new("m", records, BTreeMap::new()).unwrap()
    }

    fn clip_counts(m: &DatasetManifest) -> HashMap<Split, usize> {
        let mut seen: HashMap<Split, BTreeSet<&str>> = HashMap::new();
        for r in m.records() {
            seen.entry(m.split_of(&r.id).unwrap()).or_default().insert(&r.clip_id);
        }
        seen.into_iter().map(|(k, v)| (k, v.len())).collect()
    }

    #[test]
    fn seventy_thirty_of_ten() {
        let fr = BTreeMap::from([(Split::Train, 0.7), (Split::Val, 0.3)]);
        let m = split_dataset(&manifest(10, 3), &fr, 5).unwrap();
        let c = clip_counts(&m);
        assert_eq!((c[&Split::Train], c[&Split::Val]), (7, 3));
    }

    #[test]
    fn four_and_seventeen_of_twenty_one() {
        let fr = BTreeMap::from([(Split::Val, 4.0 / 21.0), (Split::Test, 17.0 / 21.0)]);
        let m = split_dataset(&manifest(21, 2), &fr, 9).unwrap();
        let c = clip_counts(&m);
        assert_eq!((c[&Split::Val], c[&Split::Test]), (4, 17));
    }

    #[test]
    fn deterministic_for_seed() {
        let fr = BTreeMap::from([(Split::Train, 0.5), (Split::Val, 0.25), (Split::Test, 0.25)]);
        let base = manifest(12, 2);
        let a = split_dataset(&base, &fr, 1).unwrap();
        let b = split_dataset(&base, &fr, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_clips_or_bad_fractions() {
        let fr = BTreeMap::from([(Split::Train, 0.5), (Split::Val, 0.25), (Split::Test, 0.25)]);
        assert!(split_dataset(&manifest(2, 2), &fr, 1).is_err());
        let bad = BTreeMap::from([(Split::Train, 0.5), (Split::Val, 0.4)]);
        assert!(split_dataset(&manifest(5, 2), &bad, 1).is_err());
    }

    proptest! {
        #[test]
        fn clip_granular_and_within_one(n in 3usize..40, a in 1u32..10, b in 1u32..10, c in 0u32..10, seed in any::<u64>()) {
            let s = (a + b + c) as f64;
            let fr = BTreeMap::from([
                (Split::Train, a as f64 / s),
                (Split::Val, b as f64 / s),
                (Split::Test, c as f64 / s),
            ]);
            let m = split_dataset(&manifest(n, 3), &fr, seed).unwrap();
            // Clip leakage is impossible by construction of DatasetManifest;
            // check it anyway against the records.
            let mut per_clip: HashMap<&str, Split> = HashMap::new();
            for r in m.records() {
                let s = m.split_of(&r.id).unwrap();
                prop_assert_eq!(*per_clip.entry(&r.clip_id).or_insert(s), s);
            }
            let counts = clip_counts(&m);
            for (split, f) in &fr {
                let got = counts.get(split).copied().unwrap_or(0) as f64;
                prop_assert!((got - f * n as f64).abs() <= 1.0 + 1e-9, "{split}: {got} vs {}", f * n as f64);
            }
        }
    }
}
