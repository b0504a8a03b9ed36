//! Segmentation of feature matrices, manifests, label maps and split plans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, SplitTag};
use crate::layers::FrameBlock;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("segment length and hop must be >= 1 (q = {q}, hop = {hop})")]
    InvalidSegmentation { q: usize, hop: usize },
    #[error("class {class:?} has {have} clips, {need} folds need at least {need}")]
    TooFewClips { class: String, have: usize, need: usize },
    #[error("fold count must be >= 2, got {0}")]
    InvalidFolds(usize),
    #[error("clip {0:?} appears more than once")]
    DuplicateClip(String),
    #[error("clip {0:?} is in both the training and test lists")]
    Overlap(String),
    #[error("validation fraction must be in [0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("fold {fold} out of range for a {folds}-fold plan")]
    FoldOutOfRange { fold: usize, folds: usize },
    #[error("plan is not a fold plan")]
    NotFolded,
    #[error("{what} line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },
    #[error("clip {0:?} has no label")]
    Unlabelled(String),
}

/// `q` consecutive frames of one clip with the clip's label.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub frames: FrameBlock,
    pub label: usize,
    pub clip_id: String,
    pub start: usize,
}

/// Segments of one clip, plus a note when the clip was too short to yield any.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    pub warning: Option<String>,
}

/// Number of segments `segment_clip` produces.
pub fn segment_count(frames: usize, q: usize, hop: usize) -> usize {
    if frames < q {
        0
    } else {
        (frames - q) / hop + 1
    }
}

/// Cuts segments starting at `0, hop, 2 hop, ...` while they fit; the tail is
/// dropped.
pub fn segment_clip(features: &FeatureMatrix, q: usize, hop: usize) -> Result<Segmentation, DatasetError> {
    if q == 0 || hop == 0 {
        return Err(DatasetError::InvalidSegmentation { q, hop });
    }
    let label = features
        .label
        .ok_or_else(|| DatasetError::Unlabelled(features.clip_id.clone()))?;
    let t = features.frame_count();
    let count = segment_count(t, q, hop);
    let warning = (count == 0).then(|| {
        format!(
            "clip {:?} has {t} frames, fewer than the segment size {q}; no segments",
            features.clip_id
        )
    });
    let segments = (0..count)
        .map(|i| {
            let start = i * hop;
            Segment {
                frames: FrameBlock::new(features.frames.slice_rows(start, q)).expect("q >= 1"),
                label,
                clip_id: features.clip_id.clone(),
                start,
            }
        })
        .collect();
    Ok(Segmentation { segments, warning })
}

/// A clip and its class, as listed in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClipEntry {
    pub id: String,
    pub class: String,
}

/// Sorted class names; a class's id is its index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn from_names<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Self {
            names: set.into_iter().collect(),
        }
    }

    pub fn from_clips(clips: &[ClipEntry]) -> Self {
        Self::from_names(clips.iter().map(|c| c.class.clone()))
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Parses a manifest: one `path<TAB>class` row per clip (a comma is accepted
/// when the line has no tab). Blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ClipEntry>, DatasetError> {
    let mut clips = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let split = line.rsplit_once('\t').or_else(|| line.rsplit_once(','));
        let Some((id, class)) = split else {
            return Err(DatasetError::Parse {
                what: "manifest",
                line: i + 1,
                message: "expected `path<TAB>class`".into(),
            });
        };
        let (id, class) = (id.trim(), class.trim());
        if id.is_empty() || class.is_empty() {
            return Err(DatasetError::Parse {
                what: "manifest",
                line: i + 1,
                message: "empty path or class".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(DatasetError::DuplicateClip(id.into()));
        }
        clips.push(ClipEntry {
            id: id.into(),
            class: class.into(),
        });
    }
    Ok(clips)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ClipEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_manifest(&text)?)
}

pub fn format_manifest(clips: &[ClipEntry]) -> String {
    clips.iter().map(|c| format!("{}\t{}\n", c.id, c.class)).collect()
}

/// Where a clip goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bucket {
    Train,
    Validation,
    Test,
    /// 0-based fold index.
    Fold(usize),
}

impl Bucket {
    fn format(self) -> String {
        match self {
            Bucket::Train => "train".into(),
            Bucket::Validation => "validation".into(),
            Bucket::Test => "test".into(),
            Bucket::Fold(k) => format!("fold{k}"),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Bucket::Train),
            "validation" => Some(Bucket::Validation),
            "test" => Some(Bucket::Test),
            _ => s.strip_prefix("fold")?.parse().ok().map(Bucket::Fold),
        }
    }

    pub fn split_tag(self) -> SplitTag {
        match self {
            Bucket::Train => SplitTag::Train,
            Bucket::Validation => SplitTag::Validation,
            Bucket::Test => SplitTag::Test,
            Bucket::Fold(_) => SplitTag::Unassigned,
        }
    }
}

/// Assignment of every clip to exactly one bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    /// Number of folds, 0 for a train/validation/test plan.
    pub folds: usize,
    assignment: BTreeMap<String, Bucket>,
    /// Class of every clip, used for stratified carve-outs.
    classes: BTreeMap<String, String>,
}

impl SplitPlan {
    pub fn bucket(&self, clip: &str) -> Option<Bucket> {
        self.assignment.get(clip).copied()
    }

    pub fn class_of(&self, clip: &str) -> Option<&str> {
        self.classes.get(clip).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Bucket)> {
        self.assignment.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Clip ids in `bucket`, sorted.
    pub fn clips_in(&self, bucket: Bucket) -> Vec<&str> {
        self.iter().filter(|&(_, b)| b == bucket).map(|(c, _)| c).collect()
    }

    pub fn clip_entries(&self) -> Vec<ClipEntry> {
        self.classes
            .iter()
            .map(|(id, class)| ClipEntry {
                id: id.clone(),
                class: class.clone(),
            })
            .collect()
    }

    /// Train/validation/test view of fold `test_fold`: that fold is the test
    /// set, the rest is training with a stratified validation carve-out.
    pub fn fold_view(&self, test_fold: usize, validation_fraction: f64) -> Result<SplitPlan, DatasetError> {
        if self.folds == 0 {
            return Err(DatasetError::NotFolded);
        }
        if test_fold >= self.folds {
            return Err(DatasetError::FoldOutOfRange {
                fold: test_fold,
                folds: self.folds,
            });
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (id, bucket) in &self.assignment {
            let entry = ClipEntry {
                id: id.clone(),
                class: self.classes[id].clone(),
            };
            if *bucket == Bucket::Fold(test_fold) {
                test.push(entry);
            } else {
                train.push(entry);
            }
        }
        fixed_split(
            &train,
            &test,
            validation_fraction,
            self.seed.wrapping_add(test_fold as u64),
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# seed={} folds={}\n", self.seed, self.folds);
        for (id, bucket) in &self.assignment {
            let _ = writeln!(s, "{id}\t{}\t{}", self.classes[id], bucket.format());
        }
        s
    }

    pub fn parse(text: &str) -> Result<SplitPlan, DatasetError> {
        let err = |line: usize, message: String| DatasetError::Parse {
            what: "plan",
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty plan".into()))?;
        let mut seed = None;
        let mut folds = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("seed", v)) => seed = v.parse().ok(),
                Some(("folds", v)) => folds = v.parse().ok(),
                _ => return Err(err(1, format!("unexpected header field {field:?}"))),
            }
        }
        let (Some(seed), Some(folds)) = (seed, folds) else {
            return Err(err(1, "header must be `# seed=<n> folds=<n>`".into()));
        };
        let mut plan = SplitPlan {
            seed,
            folds,
            assignment: BTreeMap::new(),
            classes: BTreeMap::new(),
        };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.rsplitn(3, '\t');
            let (Some(bucket), Some(class), Some(id)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err(i + 1, "expected `clip<TAB>class<TAB>bucket`".into()));
            };
            let bucket = Bucket::parse(bucket).ok_or_else(|| err(i + 1, format!("unknown bucket {bucket:?}")))?;
            if let Bucket::Fold(k) = bucket {
                if k >= folds {
                    return Err(err(i + 1, format!("fold {k} >= {folds}")));
                }
            }
            if plan.assignment.insert(id.into(), bucket).is_some() {
                return Err(DatasetError::DuplicateClip(id.into()));
            }
            plan.classes.insert(id.into(), class.into());
        }
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SplitPlan> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(SplitPlan::parse(&text)?)
    }
}

fn by_class(clips: &[ClipEntry]) -> Result<BTreeMap<&str, Vec<&str>>, DatasetError> {
    let mut seen = BTreeSet::new();
    let mut map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for c in clips {
        if !seen.insert(c.id.as_str()) {
            return Err(DatasetError::DuplicateClip(c.id.clone()));
        }
        map.entry(c.class.as_str()).or_default().push(c.id.as_str());
    }
    for ids in map.values_mut() {
        ids.sort_unstable();
    }
    Ok(map)
}

/// Stratified `folds`-fold assignment. Each class is shuffled with the seed
/// and dealt round-robin, continuing from where the previous class stopped so
/// fold totals stay balanced too.
pub fn make_folds(clips: &[ClipEntry], folds: usize, seed: u64) -> Result<SplitPlan, DatasetError> {
    if folds < 2 {
        return Err(DatasetError::InvalidFolds(folds));
    }
    let groups = by_class(clips)?;
    for (class, ids) in &groups {
        if ids.len() < folds {
            return Err(DatasetError::TooFewClips {
                class: (*class).into(),
                have: ids.len(),
                need: folds,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    let mut next = 0usize;
    for ids in groups.values() {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        for id in ids {
            assignment.insert(id.to_string(), Bucket::Fold(next % folds));
            next += 1;
        }
    }
    Ok(SplitPlan {
        seed,
        folds,
        assignment,
        classes: clips.iter().map(|c| (c.id.clone(), c.class.clone())).collect(),
    })
}

/// Plan honouring a given train/test assignment. A stratified
/// `validation_fraction` of each training class (rounded) becomes validation.
pub fn fixed_split(
    train: &[ClipEntry],
    test: &[ClipEntry],
    validation_fraction: f64,
    seed: u64,
) -> Result<SplitPlan, DatasetError> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(DatasetError::InvalidFraction(validation_fraction));
    }
    let test_ids: BTreeSet<&str> = test.iter().map(|c| c.id.as_str()).collect();
    if test_ids.len() != test.len() {
        let mut seen = BTreeSet::new();
        let dup = test.iter().find(|c| !seen.insert(&c.id)).expect("duplicate exists");
        return Err(DatasetError::DuplicateClip(dup.id.clone()));
    }
    if let Some(c) = train.iter().find(|c| test_ids.contains(c.id.as_str())) {
        return Err(DatasetError::Overlap(c.id.clone()));
    }
    let groups = by_class(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for ids in groups.values() {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        let carve = (ids.len() as f64 * validation_fraction).round() as usize;
        for (i, id) in ids.into_iter().enumerate() {
            let bucket = if i < carve { Bucket::Validation } else { Bucket::Train };
            assignment.insert(id.to_string(), bucket);
        }
    }
    for c in test {
        assignment.insert(c.id.clone(), Bucket::Test);
    }
    Ok(SplitPlan {
        seed,
        folds: 0,
        assignment,
        classes: train
            .iter()
            .chain(test)
            .map(|c| (c.id.clone(), c.class.clone()))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn fm(t: usize, id: &str) -> FeatureMatrix {
        FeatureMatrix::new(Matrix::from_fn(t, 2, |r, c| (r * 2 + c) as f64), id, Some(1)).unwrap()
    }

    fn clips(per_class: &[(&str, usize)]) -> Vec<ClipEntry> {
        per_class
            .iter()
            .flat_map(|&(class, n)| {
                (0..n).map(move |i| ClipEntry {
                    id: format!("{class}/{class}.{i:05}.wav"),
                    class: class.into(),
                })
            })
            .collect()
    }

    #[test]
    fn segment_examples() {
        let s = segment_clip(&fm(100, "a"), 26, 26).unwrap();
        assert_eq!(s.segments.iter().map(|s| s.start).collect::<Vec<_>>(), vec![0, 26, 52]);
        assert!(s.warning.is_none());
        assert_eq!(s.segments[1].frames.frame(0), &[52.0, 53.0]);
        assert!(s.segments.iter().all(|s| s.label == 1 && s.clip_id == "a"));

        assert_eq!(segment_clip(&fm(26, "b"), 26, 5).unwrap().segments.len(), 1);
        assert_eq!(segment_clip(&fm(645, "c"), 26, 1).unwrap().segments.len(), 620);

        let short = segment_clip(&fm(10, "d"), 26, 1).unwrap();
        assert!(short.segments.is_empty());
        assert!(short.warning.unwrap().contains("\"d\""));
        assert!(segment_clip(&fm(10, "e"), 0, 1).is_err());
    }

    #[test]
    fn gtzan_folds_are_exact() {
        let genres = [
            "blues",
            "classical",
            "country",
            "disco",
            "hiphop",
            "jazz",
            "metal",
            "pop",
            "reggae",
            "rock",
        ];
        let all = clips(&genres.map(|g| (g, 100)));
        let plan = make_folds(&all, 10, 1337).unwrap();
        for k in 0..10 {
            let ids = plan.clips_in(Bucket::Fold(k));
            assert_eq!(ids.len(), 100);
            for g in genres {
                assert_eq!(ids.iter().filter(|id| plan.class_of(id) == Some(g)).count(), 10);
            }
        }
        assert_eq!(plan, make_folds(&all, 10, 1337).unwrap());
        assert_ne!(plan, make_folds(&all, 10, 1338).unwrap());
    }

    #[test]
    fn unbalanced_folds_within_one_of_proportional() {
        let counts = [
            ("classical", 320),
            ("electronic", 115),
            ("jazz_blues", 26),
            ("metal_punk", 45),
            ("rock_pop", 101),
            ("world", 122),
        ];
        let plan = make_folds(&clips(&counts), 10, 7).unwrap();
        for k in 0..10 {
            let ids = plan.clips_in(Bucket::Fold(k));
            for (class, n) in counts {
                let have = ids.iter().filter(|id| plan.class_of(id) == Some(class)).count() as f64;
                assert!((have - n as f64 / 10.0).abs() <= 1.0, "{class} fold {k}: {have}");
            }
        }
    }

    #[test]
    fn too_few_clips_rejected() {
        let err = make_folds(&clips(&[("a", 20), ("b", 9)]), 10, 0).unwrap_err();
        assert_eq!(
            err,
            DatasetError::TooFewClips {
                class: "b".into(),
                have: 9,
                need: 10
            }
        );
    }

    #[test]
    fn fixed_split_rules() {
        let train = clips(&[("a", 50), ("b", 50)]);
        let test = vec![ClipEntry {
            id: "t1".into(),
            class: "a".into(),
        }];
        let plan = fixed_split(&train, &test, 0.1, 3).unwrap();
        assert_eq!(plan.clips_in(Bucket::Validation).len(), 10);
        assert_eq!(plan.clips_in(Bucket::Train).len(), 90);
        assert_eq!(plan.clips_in(Bucket::Test), vec!["t1"]);

        let clash = vec![train[3].clone()];
        assert_eq!(
            fixed_split(&train, &clash, 0.0, 3).unwrap_err(),
            DatasetError::Overlap(train[3].id.clone())
        );
        assert!(fixed_split(&train, &test, 1.0, 3).is_err());
    }

    #[test]
    fn fold_view_is_disjoint() {
        let plan = make_folds(&clips(&[("a", 30), ("b", 20)]), 5, 11).unwrap();
        let view = plan.fold_view(2, 0.1).unwrap();
        let test: BTreeSet<_> = view.clips_in(Bucket::Test).into_iter().collect();
        let expected: BTreeSet<_> = plan.clips_in(Bucket::Fold(2)).into_iter().collect();
        assert_eq!(test, expected);
        assert_eq!(view.len(), 50);
        assert!(plan.fold_view(5, 0.1).is_err());
        assert_eq!(view.fold_view(0, 0.1).unwrap_err(), DatasetError::NotFolded);
    }

    #[test]
    fn plan_text_round_trip() {
        let plan = make_folds(&clips(&[("a b", 4), ("c", 3)]), 3, 99).unwrap();
        let text = plan.to_text();
        assert_eq!(SplitPlan::parse(&text).unwrap(), plan);
        assert!(SplitPlan::parse("# seed=1\n").is_err());
        assert!(SplitPlan::parse("# seed=1 folds=2\nx\ta\tfold7\n").is_err());
    }

    #[test]
    fn manifest_parsing() {
        let text = "# comment\nblues/a.wav\tblues\n\njazz/b c.wav\tjazz\nrock/d.wav,rock\n";
        let m = parse_manifest(text).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(
            m[1],
            ClipEntry {
                id: "jazz/b c.wav".into(),
                class: "jazz".into()
            }
        );
        assert!(parse_manifest("nofield\n").is_err());
        assert!(matches!(
            parse_manifest("a\tx\na\ty\n"),
            Err(DatasetError::DuplicateClip(_))
        ));
        let labels = LabelMap::from_clips(&m);
        assert_eq!(labels.names(), &["blues", "jazz", "rock"]);
        assert_eq!(labels.id("jazz"), Some(1));
    }
}
