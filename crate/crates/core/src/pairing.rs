//! Semi-paired sampling: every WLI/NBI training pair comes from the same clip.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{parse_line, read_lines, LineWriter};
use crate::types::{DatasetManifest, Modality};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipPairs {
    pub clip_id: String,
    pub wli_ids: Vec<String>,
    pub nbi_ids: Vec<String>,
}

/// Clips having both modalities, sorted by clip id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemiPairIndex {
    clips: Vec<ClipPairs>,
}

impl SemiPairIndex {
    pub fn new(mut clips: Vec<ClipPairs>) -> Result<Self> {
        clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let mut seen = std::collections::HashSet::new();
        for c in &clips {
            if c.wli_ids.is_empty() || c.nbi_ids.is_empty() {
                return Err(Error::validation(
                    format!("clip `{}`", c.clip_id),
                    "needs at least one WLI and one NBI record",
                ));
            }
            for id in c.wli_ids.iter().chain(&c.nbi_ids) {
                if !seen.insert(id.clone()) {
                    return Err(Error::validation(
                        format!("record `{id}`"),
                        "listed more than once in the pair index",
                    ));
                }
            }
        }
        if clips.windows(2).any(|w| w[0].clip_id == w[1].clip_id) {
            return Err(Error::validation("pair index", "duplicate clip id"));
        }
        Ok(SemiPairIndex { clips })
    }

    pub fn clips(&self) -> &[ClipPairs] {
        &self.clips
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn wli_count(&self) -> usize {
        self.clips.iter().map(|c| c.wli_ids.len()).sum()
    }

    /// Checks that every id resolves in `manifest` with the listed modality and clip.
    pub fn check_against(&self, manifest: &DatasetManifest) -> Result<()> {
        for c in &self.clips {
            for (ids, modality) in [(&c.wli_ids, Modality::Wli), (&c.nbi_ids, Modality::Nbi)] {
                for id in ids {
                    let r = manifest.get(id).ok_or_else(|| {
                        Error::validation(format!("record `{id}`"), "not in manifest")
                    })?;
                    if r.modality != modality || r.clip_id != c.clip_id {
                        return Err(Error::validation(
                            format!("record `{id}`"),
                            format!(
                                "indexed as {modality} of clip `{}` but manifest says {} of `{}`",
                                c.clip_id, r.modality, r.clip_id
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Result of indexing a manifest: the index plus the clips left out because
/// they lack one of the two modalities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemiPairBuild {
    pub index: SemiPairIndex,
    pub excluded_clips: Vec<String>,
}

pub fn build_semi_pairs(manifest: &DatasetManifest) -> Result<SemiPairBuild> {
    let mut by_clip: BTreeMap<&str, (Vec<String>, Vec<String>)> = BTreeMap::new();
    for r in manifest.records() {
        let entry = by_clip.entry(r.clip_id.as_str()).or_default();
        match r.modality {
            Modality::Wli => entry.0.push(r.id.clone()),
            Modality::Nbi => entry.1.push(r.id.clone()),
            Modality::Snbi => {}
        }
    }
    let mut clips = Vec::new();
    let mut excluded = Vec::new();
    for (clip, (wli, nbi)) in by_clip {
        if wli.is_empty() || nbi.is_empty() {
            excluded.push(clip.to_string());
        } else {
            clips.push(ClipPairs {
                clip_id: clip.to_string(),
                wli_ids: wli,
                nbi_ids: nbi,
            });
        }
    }
    if clips.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no clip of `{}` has both WLI and NBI records",
            manifest.name()
        )));
    }
    Ok(SemiPairBuild {
        index: SemiPairIndex::new(clips)?,
        excluded_clips: excluded,
    })
}

/// Draws a clip uniformly, then one WLI and one NBI id uniformly within it.
/// Frames are drawn with replacement.
pub fn sample_pair<'a>(index: &'a SemiPairIndex, rng: &mut impl Rng) -> (&'a str, &'a str) {
    let clip = &index.clips[rng.random_range(0..index.clips.len())];
    let w = &clip.wli_ids[rng.random_range(0..clip.wli_ids.len())];
    let n = &clip.nbi_ids[rng.random_range(0..clip.nbi_ids.len())];
    (w, n)
}

/// Iterator over a fixed number of sampled pairs; owns its generator.
#[derive(Debug, Clone)]
pub struct PairIter<'a> {
    index: &'a SemiPairIndex,
    rng: ChaCha8Rng,
    remaining: usize,
}

impl<'a> PairIter<'a> {
    pub fn from_rng(index: &'a SemiPairIndex, iterations: usize, rng: ChaCha8Rng) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if index.is_empty() {
            return Err(Error::EmptyInput("pair index has no clips".into()));
        }
        Ok(PairIter {
            index,
            rng,
            remaining: iterations,
        })
    }

    pub fn into_rng(self) -> ChaCha8Rng {
        self.rng
    }
}

impl<'a> Iterator for PairIter<'a> {
    type Item = (&'a str, &'a str);

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(sample_pair(self.index, &mut self.rng))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

pub fn epoch_iterator(index: &SemiPairIndex, iterations: usize, seed: u64) -> Result<PairIter<'_>> {
    PairIter::from_rng(index, iterations, ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexHeader {
    name: String,
    #[serde(default)]
    excluded_clips: Vec<String>,
}

/// Writes the index in the manifest's line-delimited layout: a header line,
/// then one line per clip.
pub fn save_index(build: &SemiPairBuild, name: &str, path: &Path) -> Result<()> {
    let mut out = LineWriter::create(path)?;
    out.write(&IndexHeader {
        name: name.to_string(),
        excluded_clips: build.excluded_clips.clone(),
    })?;
    for c in build.index.clips() {
        out.write(c)?;
    }
    out.finish()
}

pub fn load_index(path: &Path) -> Result<SemiPairBuild> {
    let lines = read_lines(path)?;
    let Some(((hl, ht), rest)) = lines.split_first() else {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 1,
            msg: "missing header line".into(),
        });
    };
    let header: IndexHeader = parse_line(path, *hl, ht)?;
    let clips = rest
        .iter()
        .map(|(n, t)| parse_line(path, *n, t))
        .collect::<Result<Vec<ClipPairs>>>()?;
    Ok(SemiPairBuild {
        index: SemiPairIndex::new(clips)?,
        excluded_clips: header.excluded_clips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ImageRecord;

    fn manifest(spec: &[(&str, usize, usize)]) -> DatasetManifest {
        let mut records = Vec::new();
        for (clip, nw, nn) in spec {
            for (m, n) in [(Modality::Wli, *nw), (Modality::Nbi, *nn)] {
                for i in 0..n {
                    records.push(ImageRecord {
                        id: format!("{clip}_{m}_{i}"),
                        path: "x.png".into(),
                        modality: m,
                        clip_id: clip.to_string(),
                        width: 8,
                        height: 8,
                        annotations: vec![],
                        source_id: None,
                    });
                }
            }
        }
        DatasetManifest::new("t", records, Default::default()).unwrap()
    }

    #[test]
    fn single_modality_clips_are_excluded() {
        let b = build_semi_pairs(&manifest(&[("A", 3, 2), ("B", 4, 0)])).unwrap();
        assert_eq!(b.index.clips().len(), 1);
        assert_eq!(b.index.clips()[0].clip_id, "A");
        assert_eq!(b.excluded_clips, vec!["B".to_string()]);
    }

    #[test]
    fn no_nbi_is_an_error() {
        assert!(matches!(
            build_semi_pairs(&manifest(&[("A", 3, 0)])),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn twenty_one_dual_clips() {
        let spec: Vec<(String, usize, usize)> = (0..21).map(|i| (format!("v{i:02}"), 5, 4)).collect();
        let spec: Vec<(&str, usize, usize)> = spec.iter().map(|(a, b, c)| (a.as_str(), *b, *c)).collect();
        let m = manifest(&spec);
        let b = build_semi_pairs(&m).unwrap();
        assert_eq!(b.index.clips().len(), 21);
        b.index.check_against(&m).unwrap();
    }

    #[test]
    fn one_by_one_clip_is_always_the_same_pair() {
        let b = build_semi_pairs(&manifest(&[("A", 1, 1)])).unwrap();
        for (w, n) in epoch_iterator(&b.index, 50, 3).unwrap() {
            assert_eq!((w, n), ("A_WLI_0", "A_NBI_0"));
        }
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let b = build_semi_pairs(&manifest(&[("A", 1, 1)])).unwrap();
        assert!(epoch_iterator(&b.index, 0, 3).is_err());
    }

    #[test]
    fn same_seed_same_sequence() {
        let b = build_semi_pairs(&manifest(&[("A", 4, 3), ("B", 2, 5), ("C", 1, 1)])).unwrap();
        let a: Vec<_> = epoch_iterator(&b.index, 200, 11).unwrap().collect();
        let c: Vec<_> = epoch_iterator(&b.index, 200, 11).unwrap().collect();
        assert_eq!(a, c);
        let d: Vec<_> = epoch_iterator(&b.index, 200, 12).unwrap().collect();
        assert_ne!(a, d);
    }

    #[test]
    fn clip_coverage_when_iterations_equal_wli_count() {
        // 6 clips, 60 WLI frames: 60 iterations visit every clip.
        let spec: Vec<(String, usize, usize)> = (0..6).map(|i| (format!("c{i}"), 10, 3)).collect();
        let spec: Vec<(&str, usize, usize)> = spec.iter().map(|(a, b, c)| (a.as_str(), *b, *c)).collect();
        let b = build_semi_pairs(&manifest(&spec)).unwrap();
        let n = b.index.wli_count();
        assert_eq!(n, 60);
        for seed in 0..20 {
            let mut seen = std::collections::HashSet::new();
            for (w, _) in epoch_iterator(&b.index, n, seed).unwrap() {
                seen.insert(w.split('_').next().unwrap().to_string());
            }
            assert_eq!(seen.len(), 6, "seed {seed}");
        }
    }

    #[test]
    fn index_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.jsonl");
        let b = build_semi_pairs(&manifest(&[("A", 2, 2), ("B", 1, 0)])).unwrap();
        save_index(&b, "t", &p).unwrap();
        assert_eq!(load_index(&p).unwrap(), b);
    }
}
