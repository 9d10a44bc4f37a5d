//! Pose dataset files, streaming synthesis and skeleton-video export.
//!
//! Text datasets are line-delimited JSON: a header line, then one record per
//! line. Reals are written in shortest round-trip form, so a save/load cycle
//! is exact. The binary variant stores the same records as little-endian
//! `f32` after the same JSON header line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{project_pose, CameraIntrinsics, Pose2D};
use crate::constraint::{validate_params, ConstraintTable};
use crate::error::{Error, Result};
use crate::gan::generator::{DhGenerator, GeneratedSample};
use crate::skeleton::{
    forward_kinematics, GlobalTransform, ParamKind, ParamVector, Pose3D, SkeletonTopology,
};

pub const DATASET_FORMAT: &str = "dhaug-dataset";
pub const DATASET_VERSION: u32 = 1;
const VIDEO_FORMAT: &str = "dhaug-skeleton-video";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub sequence_id: u64,
    pub frame_index: u32,
    pub provenance: Provenance,
    pub camera: CameraIntrinsics,
    pub pose3d: Pose3D,
    pub pose2d: Pose2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<GlobalTransform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub topology: String,
    pub keypoints: usize,
    pub params: usize,
    pub encoding: Encoding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Jsonl,
    /// Little-endian `f32` reals.
    Binary,
}

impl Encoding {
    /// `.bin` selects the binary variant.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Encoding::Binary,
            _ => Encoding::Jsonl,
        }
    }
}

impl DatasetHeader {
    pub fn new(topology: &SkeletonTopology, encoding: Encoding) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            topology: topology.hash().to_string(),
            keypoints: topology.keypoint_count(),
            params: topology.num_params(),
            encoding,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl LoadedDataset {
    /// Warning text when the file was written for a different topology table.
    pub fn topology_warning(&self, topology: &SkeletonTopology) -> Option<String> {
        (self.header.topology != topology.hash()).then(|| {
            format!(
                "warning: dataset topology {} differs from loaded topology {}",
                self.header.topology,
                topology.hash()
            )
        })
    }
}

/// Writes records one at a time; memory use does not grow with the record count.
pub struct DatasetWriter<W: Write> {
    out: W,
    header: DatasetHeader,
    written: usize,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: &Path, topology: &SkeletonTopology) -> Result<Self> {
        let out = BufWriter::new(File::create(path)?);
        Self::new(out, DatasetHeader::new(topology, Encoding::for_path(path)))
    }
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut out: W, header: DatasetHeader) -> Result<Self> {
        serde_json::to_writer(&mut out, &header).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(Self {
            out,
            header,
            written: 0,
        })
    }

    pub fn write(&mut self, r: &DatasetRecord) -> Result<()> {
        if r.pose3d.joints.len() != self.header.keypoints
            || r.pose2d.joints.len() != self.header.keypoints
        {
            return Err(Error::shape(
                "dataset record",
                &[r.pose3d.joints.len(), r.pose2d.joints.len()],
                &[self.header.keypoints],
            ));
        }
        match self.header.encoding {
            Encoding::Jsonl => {
                serde_json::to_writer(&mut self.out, r).map_err(|e| Error::Data(e.to_string()))?;
                self.out.write_all(b"\n")?;
            }
            Encoding::Binary => write_binary(&mut self.out, r, self.header.params)?,
        }
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

fn put_f32(out: &mut impl Write, v: f64) -> std::io::Result<()> {
    out.write_all(&(v as f32).to_le_bytes())
}

fn write_binary(out: &mut impl Write, r: &DatasetRecord, n_params: usize) -> Result<()> {
    out.write_all(&r.sequence_id.to_le_bytes())?;
    out.write_all(&r.frame_index.to_le_bytes())?;
    out.write_all(&[r.provenance as u8])?;
    let solved = match (&r.params, &r.global) {
        (Some(p), Some(_)) if p.len() == n_params => true,
        (None, None) => false,
        _ => {
            return Err(Error::Data(
                "record params and global must come together".into(),
            ))
        }
    };
    out.write_all(&[solved as u8])?;
    let c = &r.camera;
    for v in [c.fx, c.fy, c.cx, c.cy, c.z_min] {
        put_f32(out, v)?;
    }
    for v in r
        .pose3d
        .joints
        .iter()
        .flatten()
        .chain(r.pose2d.joints.iter().flatten())
    {
        put_f32(out, *v)?;
    }
    if let (Some(p), Some(g)) = (&r.params, &r.global) {
        for v in p.values.iter().chain(g.to_array().iter()) {
            put_f32(out, *v)?;
        }
    }
    Ok(())
}

struct BinReader<R: Read> {
    inner: R,
}

impl<R: Read> BinReader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    fn f32s(&mut self, n: usize) -> std::io::Result<Vec<f64>> {
        (0..n)
            .map(|_| Ok(f32::from_le_bytes(self.bytes::<4>()?) as f64))
            .collect()
    }

    /// `None` at a clean end of file.
    fn record(&mut self, header: &DatasetHeader) -> std::io::Result<Option<DatasetRecord>> {
        let mut first = [0u8; 8];
        let got = self.inner.read(&mut first)?;
        if got == 0 {
            return Ok(None);
        }
        self.inner.read_exact(&mut first[got..])?;
        let sequence_id = u64::from_le_bytes(first);
        let frame_index = u32::from_le_bytes(self.bytes::<4>()?);
        let [prov, solved] = self.bytes::<2>()?;
        let provenance = match prov {
            0 => Provenance::Real,
            1 => Provenance::Synthetic,
            _ => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    "bad provenance byte",
                ))
            }
        };
        let c = self.f32s(5)?;
        let k = header.keypoints;
        let p3 = self.f32s(3 * k)?;
        let p2 = self.f32s(2 * k)?;
        let (params, global) = if solved == 1 {
            let p = self.f32s(header.params)?;
            let g = self.f32s(6)?;
            (
                Some(ParamVector::from_vec(p)),
                Some(GlobalTransform::from_array(std::array::from_fn(|i| g[i]))),
            )
        } else {
            (None, None)
        };
        Ok(Some(DatasetRecord {
            sequence_id,
            frame_index,
            provenance,
            camera: CameraIntrinsics {
                fx: c[0],
                fy: c[1],
                cx: c[2],
                cy: c[3],
                z_min: c[4],
            },
            pose3d: Pose3D::new(p3.chunks(3).map(|v| [v[0], v[1], v[2]]).collect()),
            pose2d: Pose2D {
                joints: p2.chunks(2).map(|v| [v[0], v[1]]).collect(),
            },
            params,
            global,
        }))
    }
}

pub fn save_dataset(
    records: &[DatasetRecord],
    path: &Path,
    topology: &SkeletonTopology,
) -> Result<()> {
    let mut w = DatasetWriter::create(path, topology)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let mut reader = BufReader::new(File::open(path)?);
    let parse = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let header: DatasetHeader =
        serde_json::from_str(first.trim_end()).map_err(|e| parse(1, e.to_string()))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(parse(
            1,
            format!("unsupported dataset {} v{}", header.format, header.version),
        ));
    }
    let mut records = Vec::new();
    match header.encoding {
        Encoding::Jsonl => {
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                let n = i + 2;
                if line.trim().is_empty() {
                    continue;
                }
                let r: DatasetRecord =
                    serde_json::from_str(&line).map_err(|e| parse(n, e.to_string()))?;
                check_shape(&r, &header).map_err(|m| parse(n, m))?;
                records.push(r);
            }
        }
        Encoding::Binary => {
            let mut bin = BinReader { inner: reader };
            loop {
                let n = records.len() + 1;
                match bin.record(&header) {
                    Ok(Some(r)) => records.push(r),
                    Ok(None) => break,
                    Err(e) => return Err(parse(n, format!("binary record {n}: {e}"))),
                }
            }
        }
    }
    Ok(LoadedDataset { header, records })
}

fn check_shape(r: &DatasetRecord, h: &DatasetHeader) -> std::result::Result<(), String> {
    if r.pose3d.joints.len() != h.keypoints || r.pose2d.joints.len() != h.keypoints {
        return Err(format!("expected {} keypoints", h.keypoints));
    }
    if let Some(p) = &r.params {
        if p.len() != h.params {
            return Err(format!("expected {} parameters", h.params));
        }
    }
    if !r.pose3d.is_finite() || !r.pose2d.joints.iter().flatten().all(|v| v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    Ok(())
}

/// Problems found in one record: projection mismatch beyond `px_tol`,
/// constraint violations, and (when parameters are stored) a 3D pose that
/// differs from forward kinematics by more than `m_tol`.
pub fn check_record(
    r: &DatasetRecord,
    topology: &SkeletonTopology,
    table: &ConstraintTable,
    px_tol: f64,
    m_tol: f64,
) -> Vec<String> {
    let mut problems = Vec::new();
    match project_pose(&r.pose3d, &r.camera) {
        Ok(p2) => {
            let worst = p2
                .joints
                .iter()
                .zip(&r.pose2d.joints)
                .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
                .fold(0.0, f64::max);
            if !(worst <= px_tol) {
                problems.push(format!("projection off by {worst:e} px"));
            }
        }
        Err(e) => problems.push(e.to_string()),
    }
    if let (Some(p), Some(g)) = (&r.params, &r.global) {
        let report = validate_params(p, table);
        for v in &report.violations {
            problems.push(format!(
                "parameter {} ({}) = {} outside {:?} bound {}",
                v.param,
                table.name(v.param),
                v.value,
                v.side,
                v.bound
            ));
        }
        match forward_kinematics(topology, p, g) {
            Ok(fk) => {
                let worst = fk
                    .joints
                    .iter()
                    .zip(&r.pose3d.joints)
                    .flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]).abs()))
                    .fold(0.0, f64::max);
                if !(worst <= m_tol) {
                    problems.push(format!(
                        "3D pose differs from its parameters by {worst:e} m"
                    ));
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
    }
    problems
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub samples: usize,
    pub records: usize,
    pub violations: usize,
    pub inconsistent: usize,
    pub redrawn: usize,
    pub seconds: f64,
}

/// Records of one generated sample; `sequence_id` numbers the samples.
pub fn records_of(
    sample: &GeneratedSample,
    sequence_id: u64,
    camera: &CameraIntrinsics,
) -> Vec<DatasetRecord> {
    sample
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| DatasetRecord {
            sequence_id,
            frame_index: t as u32,
            provenance: Provenance::Synthetic,
            camera: *camera,
            pose3d: f.pose3d.clone(),
            pose2d: f.pose2d.clone(),
            params: Some(f.params.clone()),
            global: Some(f.global),
        })
        .collect()
}

const SYNTH_BATCH: usize = 1024;

/// Streams `count` generated samples (sequences in video mode) to `path`.
pub fn synthesize_dataset(
    gen: &DhGenerator,
    count: usize,
    seed: u64,
    path: &Path,
) -> Result<SynthSummary> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DatasetWriter::create(path, &gen.topology)?;
    let mut summary = SynthSummary {
        samples: 0,
        records: 0,
        violations: 0,
        inconsistent: 0,
        redrawn: 0,
        seconds: 0.0,
    };
    while summary.samples < count {
        let n = (count - summary.samples).min(SYNTH_BATCH);
        let (samples, redrawn) = gen.generate_valid(n, &mut rng)?;
        summary.redrawn += redrawn;
        for s in &samples {
            for r in records_of(s, summary.samples as u64, &gen.camera) {
                if let Some(p) = &r.params {
                    summary.violations += validate_params(p, &gen.table).violations.len();
                }
                let reprojected = project_pose(&r.pose3d, &r.camera)?;
                if reprojected != r.pose2d {
                    summary.inconsistent += 1;
                }
                w.write(&r)?;
                summary.records += 1;
            }
            summary.samples += 1;
        }
    }
    w.finish()?;
    summary.seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// A stand-in "real" corpus: smooth motion of an upright subject with every
/// parameter inside a narrow band near a nominal pose.
pub fn narrow_band_corpus(
    topology: &SkeletonTopology,
    table: &ConstraintTable,
    camera: &CameraIntrinsics,
    sequences: usize,
    frames: usize,
    seed: u64,
) -> Result<Vec<DatasetRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = topology.num_params();
    let mut out = Vec::with_capacity(sequences * frames);
    for s in 0..sequences {
        let mut center = Vec::with_capacity(n);
        let mut amp = Vec::with_capacity(n);
        let mut phase = Vec::with_capacity(n);
        for id in 0..n {
            let (lo, hi) = table.bound(id);
            let w = hi - lo;
            let (c, a) = match topology.param_kind(id) {
                ParamKind::Angle => {
                    let c = 0.0f64.clamp(lo + 0.1 * w, hi - 0.1 * w);
                    (
                        c + rng.random_range(-0.02..0.02) * w,
                        0.05 * w * rng.random::<f64>(),
                    )
                }
                ParamKind::Length => (rng.random_range(-0.05..0.05) * w, 0.0),
            };
            center.push(c);
            amp.push(a);
            phase.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        let heading = rng.random_range(-0.5..0.5);
        let start = [
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.1..0.1),
            rng.random_range(4.5..5.5),
        ];
        let velocity = [
            rng.random_range(-0.01..0.01),
            0.0,
            rng.random_range(-0.01..0.01),
        ];
        let rate = rng.random_range(0.5..1.5);
        for t in 0..frames {
            let u = t as f64 / frames.max(1) as f64;
            let values: Vec<f64> = (0..n)
                .map(|id| {
                    center[id] + amp[id] * (std::f64::consts::TAU * rate * u + phase[id]).sin()
                })
                .collect();
            let params = ParamVector::from_vec(values);
            let global = GlobalTransform::from_array([
                0.0,
                heading,
                0.0,
                start[0] + velocity[0] * t as f64,
                start[1],
                start[2] + velocity[2] * t as f64,
            ]);
            let pose3d = forward_kinematics(topology, &params, &global)?;
            let pose2d = project_pose(&pose3d, camera)?;
            out.push(DatasetRecord {
                sequence_id: s as u64,
                frame_index: t as u32,
                provenance: Provenance::Real,
                camera: *camera,
                pose3d,
                pose2d,
                params: Some(params),
                global: Some(global),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFrame {
    pub index: usize,
    pub joints3d: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints2d: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonVideo {
    pub format: String,
    pub version: u32,
    pub keypoints: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub frames: Vec<VideoFrame>,
}

impl SkeletonVideo {
    pub fn poses(&self) -> Vec<Pose3D> {
        self.frames
            .iter()
            .map(|f| Pose3D::new(f.joints3d.clone()))
            .collect()
    }
}

/// Per-frame keypoints plus the bone edges, for external plotting.
pub fn export_skeleton_video(
    seq3d: &[Pose3D],
    seq2d: Option<&[Pose2D]>,
    topology: &SkeletonTopology,
    path: &Path,
) -> Result<()> {
    if seq3d.is_empty() {
        return Err(Error::invalid("cannot export an empty sequence"));
    }
    if let Some(s2) = seq2d {
        if s2.len() != seq3d.len() {
            return Err(Error::shape(
                "export_skeleton_video",
                &[seq3d.len()],
                &[s2.len()],
            ));
        }
    }
    let video = SkeletonVideo {
        format: VIDEO_FORMAT.into(),
        version: 1,
        keypoints: topology.keypoint_names().to_vec(),
        edges: topology.bone_list().to_vec(),
        frames: seq3d
            .iter()
            .enumerate()
            .map(|(i, p)| VideoFrame {
                index: i,
                joints3d: p.joints.clone(),
                joints2d: seq2d.map(|s| s[i].joints.clone()),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &video).map_err(|e| Error::Data(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_skeleton_video(path: &Path) -> Result<SkeletonVideo> {
    let text = std::fs::read_to_string(path)?;
    let video: SkeletonVideo = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if video.format != VIDEO_FORMAT {
        return Err(Error::Data(format!(
            "not a skeleton video: {}",
            video.format
        )));
    }
    Ok(video)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::default_camera;
    use crate::constraint::default_constraint_table;
    use crate::skeleton::default_topology;

    fn corpus(n_seq: usize, frames: usize) -> Vec<DatasetRecord> {
        narrow_band_corpus(
            &default_topology(),
            &default_constraint_table(),
            &default_camera(),
            n_seq,
            frames,
            1,
        )
        .unwrap()
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let topo = default_topology();
        let recs = corpus(3, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&recs, &path, &topo).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.records, recs);
        assert!(back.topology_warning(&topo).is_none());
    }

    #[test]
    fn empty_file_is_header_only() {
        let topo = default_topology();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        save_dataset(&[], &path, &topo).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        assert!(load_dataset(&path).unwrap().records.is_empty());
    }

    #[test]
    fn corrupt_line_is_named() {
        let topo = default_topology();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_dataset(&corpus(1, 10), &path, &topo).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[6] = "{\"sequence_id\": oops";
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binary_round_trip_at_f32_precision() {
        let topo = default_topology();
        let recs = corpus(2, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_dataset(&recs, &path, &topo).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.header.encoding, Encoding::Binary);
        assert_eq!(back.records.len(), recs.len());
        for (a, b) in recs.iter().zip(&back.records) {
            assert_eq!(
                (a.sequence_id, a.frame_index),
                (b.sequence_id, b.frame_index)
            );
            for (p, q) in a.pose3d.joints.iter().zip(&b.pose3d.joints) {
                for i in 0..3 {
                    assert_eq!(p[i] as f32, q[i] as f32);
                }
            }
        }
    }

    #[test]
    fn corpus_records_check_clean() {
        let topo = default_topology();
        let table = default_constraint_table();
        for r in corpus(2, 8) {
            assert!(check_record(&r, &topo, &table, 1e-9, 1e-12).is_empty());
        }
    }

    #[test]
    fn video_export_round_trip() {
        let topo = default_topology();
        let recs = corpus(1, 9);
        let poses: Vec<Pose3D> = recs.iter().map(|r| r.pose3d.clone()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        export_skeleton_video(&poses, None, &topo, &path).unwrap();
        let v = load_skeleton_video(&path).unwrap();
        assert_eq!(v.frames.len(), 9);
        assert_eq!(v.edges.len(), 15);
        assert_eq!(v.poses(), poses);
        assert!(export_skeleton_video(&[], None, &topo, &path).is_err());
    }
}
