//! Dataset unification: frame-rate standardization, annotated-frame pairing,
//! coarse taxonomy mapping and manifest construction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io;
use crate::types::{CoarseClass, FramePair, ObjectAnnotation, PointCloud};
use crate::{Error, Result};

/// Timestamp tolerance for the standardized inter-frame interval, seconds.
pub const DT_TOLERANCE: f64 = 1e-6;
/// Tolerance on weight normalization.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

const DEFAULT_TAXONOMY: &str = include_str!("../assets/taxonomy.json");

/// `(dataset_id, raw_class) -> coarse class`, loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaxonomyMap {
    entries: BTreeMap<String, BTreeMap<String, CoarseClass>>,
}

impl Default for TaxonomyMap {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid JSON")
    }
}

impl TaxonomyMap {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("<taxonomy>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn insert(&mut self, dataset_id: &str, raw_class: &str, coarse: CoarseClass) {
        self.entries
            .entry(dataset_id.to_owned())
            .or_default()
            .insert(raw_class.to_owned(), coarse);
    }

    fn table(&self, dataset_id: &str) -> Option<&BTreeMap<String, CoarseClass>> {
        self.entries
            .get(dataset_id)
            .or_else(|| base_dataset_id(dataset_id).and_then(|base| self.entries.get(base)))
    }

    /// Looks up a raw class. Datasets derived by velocity resampling
    /// (`<id>-fast<k>`) share the table of their source dataset.
    pub fn map(&self, dataset_id: &str, raw_class: &str) -> Result<CoarseClass> {
        self.table(dataset_id)
            .and_then(|t| t.get(raw_class))
            .copied()
            .ok_or_else(|| Error::UnmappedClass {
                dataset_id: dataset_id.to_owned(),
                raw_class: raw_class.to_owned(),
            })
    }

    /// Fails on the first raw class that has no mapping.
    pub fn check_total<'a>(&self, dataset_id: &str, raw_classes: impl IntoIterator<Item = &'a str>) -> Result<()> {
        raw_classes
            .into_iter()
            .try_for_each(|c| self.map(dataset_id, c).map(|_| ()))
    }
}

pub fn map_taxonomy(tax: &TaxonomyMap, dataset_id: &str, raw_class: &str) -> Result<CoarseClass> {
    tax.map(dataset_id, raw_class)
}

fn split_fast(dataset_id: &str) -> Option<(&str, usize)> {
    let (base, suffix) = dataset_id.rsplit_once("-fast")?;
    if suffix.is_empty() || !suffix.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((base, suffix.parse().ok()?))
}

/// Strips a `-fast<k>` suffix.
pub fn base_dataset_id(dataset_id: &str) -> Option<&str> {
    split_fast(dataset_id).map(|(base, _)| base)
}

/// The `k` of a `-fast<k>` dataset id.
pub fn velocity_factor(dataset_id: &str) -> Option<usize> {
    split_fast(dataset_id).map(|(_, k)| k)
}

/// Integer decimation factor between two rates.
pub fn rate_ratio(native_hz: f64, target_hz: f64) -> Result<usize> {
    let err = Error::IncompatibleRate { native_hz, target_hz };
    if !(native_hz > 0.0 && target_hz > 0.0) || target_hz > native_hz {
        return Err(err);
    }
    let ratio = native_hz / target_hz;
    let k = ratio.round();
    if (ratio - k).abs() > 1e-9 * ratio.max(1.0) || k < 1.0 {
        return Err(err);
    }
    Ok(k as usize)
}

/// Keeps every k-th frame starting at position 0, where `k = native_hz / target_hz`.
pub fn resample_framerate<T: Clone>(frames: &[T], native_hz: f64, target_hz: f64) -> Result<Vec<T>> {
    let k = rate_ratio(native_hz, target_hz)?;
    Ok(frames.iter().step_by(k).cloned().collect())
}

/// One frame of an in-memory sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFrame {
    pub cloud: PointCloud,
    /// Box tracks visible in this frame; may be empty.
    pub annotations: Vec<ObjectAnnotation>,
    /// True when this frame is an annotated keyframe.
    pub keyframe: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub dataset_id: String,
    pub sequence_id: String,
    pub hz: f64,
    pub frames: Vec<SequenceFrame>,
}

impl Sequence {
    pub fn annotated_frame_indices(&self) -> Vec<u32> {
        self.frames
            .iter()
            .filter(|f| f.keyframe)
            .map(|f| f.cloud.frame_index)
            .collect()
    }

    pub fn resample(&self, target_hz: f64) -> Result<Sequence> {
        Ok(Sequence {
            dataset_id: self.dataset_id.clone(),
            sequence_id: self.sequence_id.clone(),
            hz: target_hz,
            frames: resample_framerate(&self.frames, self.hz, target_hz)?,
        })
    }

    /// Renames the dataset of the sequence and of every frame in it.
    pub fn relabel(&mut self, dataset_id: &str) {
        self.dataset_id = dataset_id.to_owned();
        for f in &mut self.frames {
            f.cloud.dataset_id = dataset_id.to_owned();
        }
    }
}

/// Positions `(i, i + 1)` of the pairs formed by each annotated frame and
/// its real successor. Successors whose interval deviates from `1 / hz` are
/// gaps, not pairs.
pub fn pair_positions(stamps: &[(u32, f64)], annotated_frame_indices: &[u32], hz: f64) -> Result<Vec<(usize, usize)>> {
    let period = 1.0 / hz;
    let mut out = Vec::with_capacity(annotated_frame_indices.len());
    let mut sorted: Vec<u32> = annotated_frame_indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for idx in sorted {
        let pos = stamps
            .binary_search_by_key(&idx, |s| s.0)
            .map_err(|_| Error::ManifestMismatch(format!("annotated frame {idx} is not in the sequence")))?;
        if pos + 1 < stamps.len() {
            let dt = stamps[pos + 1].1 - stamps[pos].1;
            if (dt - period).abs() <= DT_TOLERANCE {
                out.push((pos, pos + 1));
            }
        }
    }
    Ok(out)
}

/// Pairs each annotated frame with its real adjacent scan. Nothing is
/// interpolated: frames without a successor at the sequence rate are skipped.
pub fn pair_annotated_frames(sequence: &Sequence, annotated_frame_indices: &[u32]) -> Result<Vec<FramePair>> {
    let stamps: Vec<(u32, f64)> = sequence
        .frames
        .iter()
        .map(|f| (f.cloud.frame_index, f.cloud.timestamp))
        .collect();
    if stamps.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::ManifestMismatch(format!(
            "sequence `{}` is not sorted by frame index",
            sequence.sequence_id
        )));
    }
    pair_positions(&stamps, annotated_frame_indices, sequence.hz)?
        .into_iter()
        .map(|(a, b)| {
            let (fa, fb) = (&sequence.frames[a], &sequence.frames[b]);
            FramePair::new(
                fa.cloud.clone(),
                fb.cloud.clone(),
                fa.annotations.clone(),
                fb.annotations.clone(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub sequence_id: String,
    pub frame_indices: Vec<u32>,
    pub annotated_frame_indices: Vec<u32>,
}

impl SequenceEntry {
    /// `(first, second)` frame indices of every pair: each annotated frame
    /// and the next frame at the standardized rate.
    pub fn pair_frames(&self) -> Vec<(u32, u32)> {
        self.annotated_frame_indices
            .iter()
            .filter_map(|idx| {
                let pos = self.frame_indices.binary_search(idx).ok()?;
                self.frame_indices.get(pos + 1).map(|next| (*idx, *next))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub dataset_id: String,
    pub root: PathBuf,
    pub native_hz: f64,
    pub annotation_hz: f64,
    /// Rate after standardization.
    pub target_hz: f64,
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetEntry {
    pub fn pair_count(&self) -> usize {
        self.sequences.iter().map(|s| s.pair_frames().len()).sum()
    }
}

/// Reference to one frame pair in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairRef {
    pub dataset_id: String,
    pub sequence_id: String,
    pub first_frame: u32,
    pub second_frame: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub datasets: Vec<DatasetEntry>,
    pub weights: BTreeMap<String, f64>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: DatasetManifest = io::read_json(path)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn dataset(&self, dataset_id: &str) -> Option<&DatasetEntry> {
        self.datasets.iter().find(|d| d.dataset_id == dataset_id)
    }

    pub fn dataset_ids(&self) -> Vec<&str> {
        self.datasets.iter().map(|d| d.dataset_id.as_str()).collect()
    }

    /// Every pair in the manifest, in (dataset, sequence, frame) order.
    pub fn pairs(&self) -> Vec<PairRef> {
        let mut out = Vec::new();
        for d in &self.datasets {
            out.extend(self.dataset_pairs(d));
        }
        out
    }

    pub fn dataset_pairs(&self, d: &DatasetEntry) -> Vec<PairRef> {
        d.sequences
            .iter()
            .flat_map(|s| {
                s.pair_frames().into_iter().map(|(a, b)| PairRef {
                    dataset_id: d.dataset_id.clone(),
                    sequence_id: s.sequence_id.clone(),
                    first_frame: a,
                    second_frame: b,
                })
            })
            .collect()
    }

    /// Reads both sweeps of a pair and their annotations from disk.
    pub fn load_pair(&self, r: &PairRef, taxonomy: &TaxonomyMap) -> Result<FramePair> {
        let d = self.dataset(&r.dataset_id).ok_or(Error::UnknownDataset(r.dataset_id.clone()))?;
        let load = |idx: u32| -> Result<(PointCloud, Vec<ObjectAnnotation>)> {
            let cloud = io::read_frame(&io::frame_path(&d.root, &r.sequence_id, idx))?;
            let anns = io::read_frame_annotations(&d.root, &d.dataset_id, &r.sequence_id, idx, taxonomy)?;
            Ok((cloud, anns))
        };
        let (first, annotations_first) = load(r.first_frame)?;
        let (second, annotations_second) = load(r.second_frame)?;
        FramePair::new(first, second, annotations_first, annotations_second)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for d in &self.datasets {
            if !ids.insert(d.dataset_id.as_str()) {
                return Err(Error::ManifestMismatch(format!("dataset `{}` listed twice", d.dataset_id)));
            }
            if d.annotation_hz > d.native_hz {
                return Err(Error::ManifestMismatch(format!(
                    "dataset `{}` annotates faster than it records",
                    d.dataset_id
                )));
            }
            for s in &d.sequences {
                let frames: BTreeSet<u32> = s.frame_indices.iter().copied().collect();
                if let Some(missing) = s.annotated_frame_indices.iter().find(|i| !frames.contains(i)) {
                    return Err(Error::ManifestMismatch(format!(
                        "annotated frame {missing} of `{}/{}` is not a frame of the sequence",
                        d.dataset_id, s.sequence_id
                    )));
                }
            }
        }
        validate_weights(&self.weights, &ids)
    }
}

pub fn validate_weights(weights: &BTreeMap<String, f64>, dataset_ids: &BTreeSet<&str>) -> Result<()> {
    for (id, w) in weights {
        if !dataset_ids.contains(id.as_str()) {
            return Err(Error::InvalidWeights(format!("weight given for unknown dataset `{id}`")));
        }
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::InvalidWeights(format!("weight for `{id}` is {w}")));
        }
    }
    if let Some(missing) = dataset_ids.iter().find(|id| !weights.contains_key(**id)) {
        return Err(Error::InvalidWeights(format!("no weight for dataset `{missing}`")));
    }
    let total: f64 = weights.values().sum();
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::InvalidWeights(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Scans unified-format dataset roots and builds a manifest at `target_hz`.
/// A velocity-augmented `<id>-fast<k>` dataset is standardized to
/// `target_hz / k`, so each of its pairs spans `k` source intervals.
pub fn build_manifest(roots: &[PathBuf], weights: &BTreeMap<String, f64>, target_hz: f64) -> Result<DatasetManifest> {
    let mut datasets = Vec::with_capacity(roots.len());
    for root in roots {
        let meta = io::read_dataset_meta(root)?;
        let target_hz = target_hz / velocity_factor(&meta.dataset_id).unwrap_or(1) as f64;
        let k = rate_ratio(meta.native_hz, target_hz)?;
        let mut sequences = Vec::new();
        for sequence_id in io::list_sequences(root)? {
            let all_frames = io::list_frames(root, &sequence_id)?;
            let frame_indices: Vec<u32> = all_frames.iter().step_by(k).copied().collect();
            let kept: BTreeSet<u32> = frame_indices.iter().copied().collect();
            let annotated_frame_indices = io::keyframes(root, &sequence_id)?
                .into_iter()
                .filter(|i| kept.contains(i))
                .collect();
            sequences.push(SequenceEntry {
                sequence_id,
                frame_indices,
                annotated_frame_indices,
            });
        }
        sequences.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
        datasets.push(DatasetEntry {
            dataset_id: meta.dataset_id,
            root: root.clone(),
            native_hz: meta.native_hz,
            annotation_hz: meta.annotation_hz,
            target_hz,
            sequences,
        });
    }
    datasets.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    let manifest = DatasetManifest {
        datasets,
        weights: weights.clone(),
    };
    manifest.validate()?;
    Ok(manifest)
}
