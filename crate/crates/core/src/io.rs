//! On-disk interchange formats.
//!
//! Frame and flow payloads are little-endian binary; annotations, dataset
//! metadata, manifests and reports are JSON.
//!
//! Frame file (`.uflw`):
//!
//! ```text
//! magic "UFLW" | version u16 | point_count u32 | beam_count u16
//! dataset_id: u16 byte length + UTF-8 bytes | frame_index u32 | timestamp f64
//! ego_pose: 12 x f64, row-major [R | t]
//! point_count x { x f32 | y f32 | z f32 | beam_id u16 | t_offset f32 }
//! ```
//!
//! Flow file (`.uflo`):
//!
//! ```text
//! magic "UFLO" | version u16 | point_count u32
//! point_count x { fx f32 | fy f32 | fz f32 | valid u8 }
//! ```
//!
//! Dataset directory layout:
//!
//! ```text
//! <root>/dataset.json                       DatasetMeta
//! <root>/<sequence>/sequence.json           optional, {"keyframes": [...]}
//! <root>/<sequence>/frames/<index>.uflw
//! <root>/<sequence>/annotations/<index>.json
//! ```
//!
//! Frame indices are zero-padded to six digits in file names.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::pose::Pose;
use crate::types::{FlowField, ObjectAnnotation, Point, PointCloud};
use crate::unify::{Sequence, SequenceFrame, TaxonomyMap};
use crate::{Error, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"UFLW";
pub const FLOW_MAGIC: &[u8; 4] = b"UFLO";
pub const FORMAT_VERSION: u16 = 1;

const FRAME_RECORD_BYTES: usize = 18;
const FLOW_RECORD_BYTES: usize = 13;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated at byte {} (needed {n} more)", self.pos),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn expect_exact_remaining(&self, n: usize) -> Result<()> {
        let remaining = self.buf.len() - self.pos;
        if remaining != n {
            return Err(Error::format(
                self.path,
                format!("payload is {remaining} bytes, header implies {n}"),
            ));
        }
        Ok(())
    }
}

fn check_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<()> {
    let found: [u8; 4] = r.array()?;
    if &found != magic {
        return Err(Error::format(r.path, format!("bad magic {found:?}")));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(r.path, format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn encode_frame(cloud: &PointCloud) -> Result<Vec<u8>> {
    let id = cloud.dataset_id.as_bytes();
    let id_len = u16::try_from(id.len())
        .map_err(|_| Error::InvalidConfig("dataset id longer than 65535 bytes".into()))?;
    let count = u32::try_from(cloud.points.len())
        .map_err(|_| Error::InvalidConfig("more than u32::MAX points".into()))?;
    let mut out = Vec::with_capacity(4 + 2 + 4 + 2 + 2 + id.len() + 4 + 8 + 96 + cloud.points.len() * FRAME_RECORD_BYTES);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&cloud.beam_count.to_le_bytes());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&cloud.frame_index.to_le_bytes());
    out.extend_from_slice(&cloud.timestamp.to_le_bytes());
    for v in cloud.ego_pose.to_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in &cloud.points {
        for c in p.position.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        out.extend_from_slice(&p.beam_id.to_le_bytes());
        out.extend_from_slice(&(p.t_offset as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_frame(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    check_header(&mut r, FRAME_MAGIC)?;
    let count = r.u32()? as usize;
    let beam_count = r.u16()?;
    let id_len = usize::from(r.u16()?);
    let dataset_id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|e| Error::format(path, format!("dataset id is not UTF-8: {e}")))?
        .to_owned();
    let frame_index = r.u32()?;
    let timestamp = r.f64()?;
    let mut pose = [0.0; 12];
    for v in &mut pose {
        *v = r.f64()?;
    }
    let ego_pose = Pose::from_row_major(&pose).map_err(|e| Error::format(path, e.to_string()))?;
    r.expect_exact_remaining(count * FRAME_RECORD_BYTES)?;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let x = f64::from(r.f32()?);
        let y = f64::from(r.f32()?);
        let z = f64::from(r.f32()?);
        let beam_id = r.u16()?;
        let t_offset = f64::from(r.f32()?);
        points.push(Point {
            position: Vector3::new(x, y, z),
            beam_id,
            t_offset,
        });
    }
    Ok(PointCloud {
        points,
        ego_pose,
        frame_index,
        timestamp,
        beam_count,
        dataset_id,
    })
}

pub fn encode_flow(flow: &FlowField) -> Result<Vec<u8>> {
    let count = u32::try_from(flow.len()).map_err(|_| Error::InvalidConfig("more than u32::MAX vectors".into()))?;
    let mut out = Vec::with_capacity(10 + flow.len() * FLOW_RECORD_BYTES);
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (v, ok) in flow.vectors.iter().zip(&flow.valid) {
        for c in v.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        out.push(u8::from(*ok));
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8], path: &Path) -> Result<FlowField> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    check_header(&mut r, FLOW_MAGIC)?;
    let count = r.u32()? as usize;
    r.expect_exact_remaining(count * FLOW_RECORD_BYTES)?;
    let mut vectors = Vec::with_capacity(count);
    let mut valid = Vec::with_capacity(count);
    for _ in 0..count {
        let x = f64::from(r.f32()?);
        let y = f64::from(r.f32()?);
        let z = f64::from(r.f32()?);
        let flag = r.u8()?;
        if flag > 1 {
            return Err(Error::format(path, format!("valid flag must be 0 or 1, found {flag}")));
        }
        vectors.push(Vector3::new(x, y, z));
        valid.push(flag == 1);
    }
    Ok(FlowField { vectors, valid })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: &Path) -> Result<PointCloud> {
    decode_frame(&read_bytes(path)?, path)
}

pub fn write_frame(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_bytes(path, &encode_frame(cloud)?)
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    decode_flow(&read_bytes(path)?, path)
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &encode_flow(flow)?)
}

/// One box in an annotation file, world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub raw_class: String,
    pub center: [f64; 3],
    /// Length, width, height.
    pub size: [f64; 3],
    /// Radians.
    pub yaw: f64,
}

impl AnnotationRecord {
    pub fn from_annotation(a: &ObjectAnnotation) -> Self {
        Self {
            instance_id: a.instance_id.clone(),
            raw_class: a.raw_class.clone(),
            center: a.box_center.into(),
            size: a.box_size.into(),
            yaw: a.box_yaw,
        }
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let finite = self.center.iter().chain(&self.size).chain(std::iter::once(&self.yaw)).all(|v| v.is_finite());
        if !finite {
            return Err(Error::format(path, format!("instance `{}` has non-finite fields", self.instance_id)));
        }
        if self.size.iter().any(|s| *s <= 0.0) {
            return Err(Error::format(path, format!("instance `{}` has a non-positive size", self.instance_id)));
        }
        Ok(())
    }
}

pub fn read_annotations(
    path: &Path,
    dataset_id: &str,
    frame_index: u32,
    taxonomy: &TaxonomyMap,
) -> Result<Vec<ObjectAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<AnnotationRecord> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    records
        .into_iter()
        .map(|r| {
            r.validate(path)?;
            let coarse = taxonomy.map(dataset_id, &r.raw_class)?;
            Ok(ObjectAnnotation {
                instance_id: r.instance_id,
                raw_class: r.raw_class,
                coarse_class: Some(coarse),
                box_center: Vector3::from(r.center),
                box_size: Vector3::from(r.size),
                box_yaw: r.yaw,
                frame_index,
            })
        })
        .collect()
}

pub fn write_annotations(path: &Path, anns: &[ObjectAnnotation]) -> Result<()> {
    let records: Vec<AnnotationRecord> = anns.iter().map(AnnotationRecord::from_annotation).collect();
    write_json(path, &records)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// `<root>/dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dataset_id: String,
    pub native_hz: f64,
    pub annotation_hz: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub keyframes: Vec<u32>,
}

pub fn dataset_meta_path(root: &Path) -> PathBuf {
    root.join("dataset.json")
}

pub fn frame_path(root: &Path, sequence_id: &str, frame_index: u32) -> PathBuf {
    root.join(sequence_id).join("frames").join(format!("{frame_index:06}.uflw"))
}

pub fn annotation_path(root: &Path, sequence_id: &str, frame_index: u32) -> PathBuf {
    root.join(sequence_id).join("annotations").join(format!("{frame_index:06}.json"))
}

pub fn sequence_meta_path(root: &Path, sequence_id: &str) -> PathBuf {
    root.join(sequence_id).join("sequence.json")
}

/// `<pred_root>/<dataset_id>/<sequence>/<index>.uflo`, keyed by the first frame of the pair.
pub fn prediction_path(pred_root: &Path, dataset_id: &str, sequence_id: &str, frame_index: u32) -> PathBuf {
    pred_root
        .join(dataset_id)
        .join(sequence_id)
        .join(format!("{frame_index:06}.uflo"))
}

fn sorted_dir_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry
            .file_name()
            .into_string()
            .map_err(|_| Error::format(dir, "non UTF-8 file name"))?;
        out.push((name, entry.path()));
    }
    out.sort();
    Ok(out)
}

fn indices_with_extension(dir: &Path, ext: &str) -> Result<Vec<u32>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (name, _) in sorted_dir_entries(dir)? {
        let Some(stem) = name.strip_suffix(ext) else {
            continue;
        };
        let idx: u32 = stem
            .parse()
            .map_err(|_| Error::format(dir.join(&name), "file name is not a frame index"))?;
        out.push(idx);
    }
    out.sort_unstable();
    Ok(out)
}

/// Sequence directory names under a dataset root, sorted.
pub fn list_sequences(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (name, path) in sorted_dir_entries(root)? {
        if path.is_dir() {
            if !path.join("frames").is_dir() {
                return Err(Error::format(&path, "sequence directory has no frames/ subdirectory"));
            }
            out.push(name);
        }
    }
    Ok(out)
}

pub fn list_frames(root: &Path, sequence_id: &str) -> Result<Vec<u32>> {
    indices_with_extension(&root.join(sequence_id).join("frames"), ".uflw")
}

pub fn list_annotations(root: &Path, sequence_id: &str) -> Result<Vec<u32>> {
    indices_with_extension(&root.join(sequence_id).join("annotations"), ".json")
}

/// Annotated keyframes: `sequence.json` when present, else every frame with an annotation file.
pub fn keyframes(root: &Path, sequence_id: &str) -> Result<Vec<u32>> {
    let meta = sequence_meta_path(root, sequence_id);
    if meta.is_file() {
        let m: SequenceMeta = read_json(&meta)?;
        let mut k = m.keyframes;
        k.sort_unstable();
        k.dedup();
        Ok(k)
    } else {
        list_annotations(root, sequence_id)
    }
}

/// Writes one sequence: every frame, an annotation file per frame and the
/// keyframe list.
pub fn write_sequence(root: &Path, sequence: &Sequence) -> Result<()> {
    let id = &sequence.sequence_id;
    for f in &sequence.frames {
        write_frame(&frame_path(root, id, f.cloud.frame_index), &f.cloud)?;
        write_annotations(&annotation_path(root, id, f.cloud.frame_index), &f.annotations)?;
    }
    let keyframes = SequenceMeta {
        keyframes: sequence.annotated_frame_indices(),
    };
    write_json(&sequence_meta_path(root, id), &keyframes)
}

/// Writes `dataset.json` and every sequence under `root`.
pub fn write_dataset(root: &Path, meta: &DatasetMeta, sequences: &[Sequence]) -> Result<()> {
    write_json(&dataset_meta_path(root), meta)?;
    sequences.iter().try_for_each(|s| write_sequence(root, s))
}

pub fn read_dataset_meta(root: &Path) -> Result<DatasetMeta> {
    let path = dataset_meta_path(root);
    if !path.is_file() {
        return Err(Error::format(root, "missing dataset.json"));
    }
    read_json(&path)
}

/// Annotations of one frame; a missing file means no boxes.
pub fn read_frame_annotations(
    root: &Path,
    dataset_id: &str,
    sequence_id: &str,
    frame_index: u32,
    taxonomy: &TaxonomyMap,
) -> Result<Vec<ObjectAnnotation>> {
    let path = annotation_path(root, sequence_id, frame_index);
    if path.is_file() {
        read_annotations(&path, dataset_id, frame_index, taxonomy)
    } else {
        Ok(Vec::new())
    }
}

/// Reads a whole sequence at its native rate.
pub fn read_sequence(root: &Path, meta: &DatasetMeta, sequence_id: &str, taxonomy: &TaxonomyMap) -> Result<Sequence> {
    let keyframes = keyframes(root, sequence_id)?;
    let frames = list_frames(root, sequence_id)?
        .into_iter()
        .map(|idx| {
            let cloud = read_frame(&frame_path(root, sequence_id, idx))?;
            if cloud.dataset_id != meta.dataset_id || cloud.frame_index != idx {
                return Err(Error::format(
                    frame_path(root, sequence_id, idx),
                    "frame header does not match its dataset or file name",
                ));
            }
            Ok(SequenceFrame {
                annotations: read_frame_annotations(root, &meta.dataset_id, sequence_id, idx, taxonomy)?,
                keyframe: keyframes.binary_search(&idx).is_ok(),
                cloud,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        dataset_id: meta.dataset_id.clone(),
        sequence_id: sequence_id.to_owned(),
        hz: meta.native_hz,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_cloud() -> PointCloud {
        let mut c = PointCloud::new("synth", 12, 1.25, 64);
        c.ego_pose = Pose::from_yaw(0.3, Vector3::new(1.0, -2.0, 1.8));
        c.points = vec![
            Point { position: Vector3::new(1.5, -2.25, 0.125), beam_id: 3, t_offset: 0.03125 },
            Point { position: Vector3::new(-10.0, 4.0, -1.75), beam_id: 63, t_offset: 0.0 },
        ];
        c
    }

    #[test]
    fn frame_round_trip_is_bit_exact_for_f32_values() {
        let c = sample_cloud();
        let bytes = encode_frame(&c).unwrap();
        let back = decode_frame(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_frame(&back).unwrap(), bytes);
    }

    #[test]
    fn frame_header_layout() {
        let bytes = encode_frame(&sample_cloud()).unwrap();
        assert_eq!(&bytes[0..4], b"UFLW");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 64);
        assert_eq!(u16::from_le_bytes([bytes[12], bytes[13]]), 5);
        assert_eq!(&bytes[14..19], b"synth");
        // header + 2 records of 18 bytes
        assert_eq!(bytes.len(), 19 + 4 + 8 + 96 + 36);
    }

    #[test]
    fn truncated_and_padded_frames_are_rejected() {
        let bytes = encode_frame(&sample_cloud()).unwrap();
        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_frame(short, Path::new("x")), Err(Error::Format { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_frame(&long, Path::new("x")), Err(Error::Format { .. })));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(decode_frame(&bad, Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn flow_rejects_bad_valid_flag() {
        let mut bytes = encode_flow(&FlowField::zeros(1)).unwrap();
        *bytes.last_mut().unwrap() = 7;
        assert!(decode_flow(&bytes, Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn flow_round_trip(vals in prop::collection::vec((prop::array::uniform3(-50.0f32..50.0), any::<bool>()), 0..64)) {
            let flow = FlowField {
                vectors: vals.iter().map(|(v, _)| Vector3::new(f64::from(v[0]), f64::from(v[1]), f64::from(v[2]))).collect(),
                valid: vals.iter().map(|(_, b)| *b).collect(),
            };
            let back = decode_flow(&encode_flow(&flow).unwrap(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, flow);
        }
    }
}
