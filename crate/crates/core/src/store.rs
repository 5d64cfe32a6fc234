//! Binary artifact container.
//!
//! Layout: magic `SNNOOD01`, u32 format version, u32 section count, one
//! `(4-byte tag, u64 length)` entry per section, the section payloads, and a
//! trailing CRC32 of everything before it. Integers and IEEE-754 arrays are
//! little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::scp::{ClassModel, ScpDetector};
use crate::snn::{Layer, LayerKind, LifParams, NetworkModel};

pub const MAGIC: &[u8; 8] = b"SNNOOD01";
pub const FORMAT_VERSION: u32 = 1;

type Tag = [u8; 4];

#[derive(Debug, Default)]
struct Container {
    sections: Vec<(Tag, Vec<u8>)>,
}

impl Container {
    fn push(&mut self, tag: Tag, payload: Vec<u8>) {
        self.sections.push((tag, payload));
    }

    fn get(&self, tag: Tag) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| {
                Error::Format(format!("missing section {}", String::from_utf8_lossy(&tag)))
            })
    }

    fn to_bytes(&self, version: u32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (tag, payload) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        }
        for (_, payload) in &self.sections {
            out.extend_from_slice(payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    fn from_bytes(bytes: &[u8], version: u32) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 {
            return Err(Error::Corruption(format!(
                "file of {} bytes is truncated",
                bytes.len()
            )));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corruption("checksum mismatch".into()));
        }
        if &body[..8] != MAGIC {
            return Err(Error::Format("not an artifact file (bad magic)".into()));
        }
        let mut cur = Cursor { buf: body, pos: 8 };
        let found = cur.u32()?;
        if found != version {
            return Err(Error::Format(format!(
                "format version {found}, this build reads {version}"
            )));
        }
        let count = cur.u32()? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let tag: Tag = cur.take(4)?.try_into().expect("4 bytes");
            let len = usize::try_from(cur.u64()?)
                .map_err(|_| Error::Format("section length overflows".into()))?;
            table.push((tag, len));
        }
        let mut sections = Vec::with_capacity(count);
        for (tag, len) in table {
            sections.push((tag, cur.take(len)?.to_vec()));
        }
        if cur.pos != body.len() {
            return Err(Error::Format("trailing bytes after sections".into()));
        }
        Ok(Container { sections })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("section table exceeds file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn f32_bytes<'a>(values: impl IntoIterator<Item = &'a f32>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn u32_bytes<'a>(values: impl IntoIterator<Item = &'a u32>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(
            "f32 section length not a multiple of 4".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

fn read_u32(bytes: &[u8]) -> Result<Vec<u32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(
            "u32 section length not a multiple of 4".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

/// Splits `flat` into consecutive pieces of the given lengths.
fn split_runs<T: Clone>(
    flat: &[T],
    lens: impl IntoIterator<Item = usize>,
    what: &str,
) -> Result<Vec<Vec<T>>> {
    let mut out = Vec::new();
    let mut pos = 0;
    for len in lens {
        let end = pos + len;
        if end > flat.len() {
            return Err(Error::Format(format!("{what} section too short")));
        }
        out.push(flat[pos..end].to_vec());
        pos = end;
    }
    if pos != flat.len() {
        return Err(Error::Format(format!("{what} section has extra values")));
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    #[serde(flatten)]
    kind: LayerKind,
    lif: Option<LifParams>,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    encoder: EncoderConfig,
    class_count: usize,
    input_shape: (usize, usize, usize),
    layers: Vec<LayerMeta>,
}

pub fn model_to_bytes(model: &NetworkModel) -> Result<Vec<u8>> {
    let meta = ModelMeta {
        encoder: model.encoder,
        class_count: model.class_count,
        input_shape: model.input_shape,
        layers: model
            .layers
            .iter()
            .map(|l| LayerMeta {
                kind: l.kind,
                lif: l.lif,
            })
            .collect(),
    };
    let mut c = Container::default();
    c.push(*b"META", serde_json::to_vec(&meta)?);
    c.push(
        *b"WGTS",
        f32_bytes(model.layers.iter().flat_map(|l| &l.weights)),
    );
    Ok(c.to_bytes(FORMAT_VERSION))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<NetworkModel> {
    let c = Container::from_bytes(bytes, FORMAT_VERSION)?;
    let meta: ModelMeta = serde_json::from_slice(c.get(*b"META")?)?;
    let flat = read_f32(c.get(*b"WGTS")?)?;
    let weights = split_runs(
        &flat,
        meta.layers.iter().map(|l| l.kind.weight_len()),
        "weight",
    )?;
    let model = NetworkModel {
        layers: meta
            .layers
            .into_iter()
            .zip(weights)
            .map(|(m, weights)| Layer {
                kind: m.kind,
                weights,
                lif: m.lif,
            })
            .collect(),
        encoder: meta.encoder,
        class_count: meta.class_count,
        input_shape: meta.input_shape,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct ClassMeta {
    class: usize,
    threshold: f64,
    /// Member count of every cluster; the cluster count is its length.
    cluster_sizes: Vec<usize>,
    backprojected_len: usize,
}

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    layer_index: usize,
    width: usize,
    target_tpr: f64,
    classes: Vec<ClassMeta>,
}

pub fn detector_to_bytes(det: &ScpDetector) -> Result<Vec<u8>> {
    let meta = DetectorMeta {
        layer_index: det.layer_index,
        width: det.width,
        target_tpr: det.target_tpr,
        classes: det
            .classes
            .iter()
            .map(|(&class, m)| ClassMeta {
                class,
                threshold: m.threshold,
                cluster_sizes: m.members.iter().map(Vec::len).collect(),
                backprojected_len: m.backprojected.first().map_or(0, Vec::len),
            })
            .collect(),
    };
    for (c, m) in &det.classes {
        if m.centroids.len() != m.members.len() || m.backprojected.len() != m.centroids.len() {
            return Err(Error::Consistency(format!(
                "class {c}: centroid, member and reconstruction lists differ in length"
            )));
        }
    }
    let classes = || det.classes.values();
    let mut c = Container::default();
    c.push(*b"META", serde_json::to_vec(&meta)?);
    c.push(
        *b"CENT",
        f32_bytes(classes().flat_map(|m| m.centroids.iter().flatten())),
    );
    c.push(
        *b"MEMB",
        u32_bytes(classes().flat_map(|m| m.members.iter().flatten())),
    );
    c.push(
        *b"BACK",
        f32_bytes(classes().flat_map(|m| m.backprojected.iter().flatten())),
    );
    Ok(c.to_bytes(FORMAT_VERSION))
}

pub fn detector_from_bytes(bytes: &[u8]) -> Result<ScpDetector> {
    let c = Container::from_bytes(bytes, FORMAT_VERSION)?;
    let meta: DetectorMeta = serde_json::from_slice(c.get(*b"META")?)?;
    let centroids = split_runs(
        &read_f32(c.get(*b"CENT")?)?,
        meta.classes
            .iter()
            .flat_map(|m| std::iter::repeat_n(meta.width, m.cluster_sizes.len())),
        "centroid",
    )?;
    let members = split_runs(
        &read_u32(c.get(*b"MEMB")?)?,
        meta.classes
            .iter()
            .flat_map(|m| m.cluster_sizes.iter().copied()),
        "member",
    )?;
    let back = split_runs(
        &read_f32(c.get(*b"BACK")?)?,
        meta.classes
            .iter()
            .flat_map(|m| std::iter::repeat_n(m.backprojected_len, m.cluster_sizes.len())),
        "reconstruction",
    )?;
    let (mut centroids, mut members, mut back) =
        (centroids.into_iter(), members.into_iter(), back.into_iter());
    let mut classes = BTreeMap::new();
    for m in meta.classes {
        let k = m.cluster_sizes.len();
        classes.insert(
            m.class,
            ClassModel {
                centroids: centroids.by_ref().take(k).collect(),
                members: members.by_ref().take(k).collect(),
                threshold: m.threshold,
                backprojected: back.by_ref().take(k).collect(),
            },
        );
    }
    Ok(ScpDetector {
        layer_index: meta.layer_index,
        width: meta.width,
        target_tpr: meta.target_tpr,
        classes,
    })
}

pub fn save_model(path: &Path, model: &NetworkModel) -> Result<()> {
    write_atomic(path, &model_to_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    model_from_bytes(&fs::read(path)?)
}

pub fn save_detector(path: &Path, det: &ScpDetector) -> Result<()> {
    write_atomic(path, &detector_to_bytes(det)?)
}

pub fn load_detector(path: &Path) -> Result<ScpDetector> {
    detector_from_bytes(&fs::read(path)?)
}

/// A directory holding `model.bin` and `detector.bin`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactStore {
    pub path: PathBuf,
    pub format_version: u32,
}

impl ArtifactStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ArtifactStore {
            path: path.into(),
            format_version: FORMAT_VERSION,
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.path.join("model.bin")
    }

    pub fn detector_path(&self) -> PathBuf {
        self.path.join("detector.bin")
    }

    fn check_version(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "store requests format version {}, this build supports {FORMAT_VERSION}",
                self.format_version
            )));
        }
        Ok(())
    }

    pub fn persist(&self, model: &NetworkModel, detector: &ScpDetector) -> Result<()> {
        self.check_version()?;
        fs::create_dir_all(&self.path)?;
        save_model(&self.model_path(), model)?;
        save_detector(&self.detector_path(), detector)
    }

    pub fn restore(&self) -> Result<(NetworkModel, ScpDetector)> {
        self.check_version()?;
        Ok((
            load_model(&self.model_path())?,
            load_detector(&self.detector_path())?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::Architecture;

    fn model() -> NetworkModel {
        Architecture::parse("784E-20fc0.25-10fc0.5-LI")
            .unwrap()
            .build(10, EncoderConfig::default(), 3)
            .unwrap()
    }

    fn detector() -> ScpDetector {
        let mut det = ScpDetector::empty(1, 10, 0.95);
        for c in 0..3 {
            det.classes.insert(
                c,
                ClassModel {
                    centroids: (0..c + 1).map(|k| vec![(k + c) as f32; 10]).collect(),
                    members: (0..c + 1).map(|k| (0..k as u32 + 2).collect()).collect(),
                    threshold: 12.0 + c as f64 + 0.1,
                    backprojected: (0..c + 1).map(|k| vec![k as f32 * 0.3; 784]).collect(),
                },
            );
        }
        det
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = model();
        let back = model_from_bytes(&model_to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.layers.iter().zip(&back.layers) {
            assert!(a
                .weights
                .iter()
                .zip(&b.weights)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn infinite_readout_threshold_survives() {
        let m = model();
        let back = model_from_bytes(&model_to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back.layers.last().unwrap().lif.unwrap().v_th, f64::INFINITY);
    }

    #[test]
    fn detector_round_trip() {
        let d = detector();
        assert_eq!(
            detector_from_bytes(&detector_to_bytes(&d).unwrap()).unwrap(),
            d
        );
    }

    #[test]
    fn empty_detector_round_trip() {
        let d = ScpDetector::empty(0, 200, 0.95);
        assert_eq!(
            detector_from_bytes(&detector_to_bytes(&d).unwrap()).unwrap(),
            d
        );
    }

    #[test]
    fn store_persists_and_restores() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path().join("run"));
        store.persist(&model(), &detector()).unwrap();
        let (m, d) = store.restore().unwrap();
        assert_eq!((m, d), (model(), detector()));
    }

    #[test]
    fn every_flipped_byte_is_detected() {
        let bytes = detector_to_bytes(&detector()).unwrap();
        for i in (0..bytes.len()).step_by(7).chain(0..24) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(
                matches!(detector_from_bytes(&bad), Err(Error::Corruption(_))),
                "byte {i}"
            );
        }
    }

    #[test]
    fn flipped_header_byte_is_corruption() {
        let mut bytes = model_to_bytes(&model()).unwrap();
        bytes[3] ^= 0xff;
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn version_mismatch_is_a_format_error() {
        let mut c = Container::default();
        c.push(*b"META", b"{}".to_vec());
        let bytes = c.to_bytes(FORMAT_VERSION + 1);
        assert!(matches!(model_from_bytes(&bytes), Err(Error::Format(_))));
        let store = ArtifactStore {
            format_version: 7,
            ..ArtifactStore::new("unused")
        };
        assert!(matches!(store.restore(), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_corruption() {
        let bytes = model_to_bytes(&model()).unwrap();
        assert!(matches!(
            model_from_bytes(&bytes[..10]),
            Err(Error::Corruption(_))
        ));
        assert!(matches!(
            model_from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Corruption(_))
        ));
    }
}
