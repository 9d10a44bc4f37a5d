//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors (bad files,
//! constraint violations, failed self-checks).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{read_checkpoint, write_checkpoint};
use crate::camera::{default_camera, project_pose, CameraIntrinsics};
use crate::constraint::{default_constraint_table, validate_params, ConstraintTable};
use crate::dataset::{
    check_record, export_skeleton_video, load_dataset, narrow_band_corpus, records_of,
    save_dataset, synthesize_dataset, DatasetRecord, DatasetWriter,
};
use crate::error::{Error, Result};
use crate::features::{feature_bundle, AdjacentBonePairs, PoseSequence2D, PoseSequence3D};
use crate::gan::{DhGenerator, GeneratedSample, Mode, RealData, TrainConfig, TrainState};
use crate::skeleton::{
    default_topology, forward_kinematics, GlobalTransform, ParamVector, Pose3D, SkeletonTopology,
};

#[derive(Debug, Parser)]
#[command(
    name = "dhaug",
    version,
    about = "DH-skeleton pose augmentation toolkit"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Skeleton topology table (TOML); defaults to the built-in table.
    #[arg(long, global = true)]
    topology: Option<PathBuf>,
    /// Joint constraint table (TOML); defaults to the built-in table.
    #[arg(long, global = true)]
    constraints: Option<PathBuf>,
    /// Camera intrinsics as `fx,fy,cx,cy` pixels.
    #[arg(long, global = true, value_parser = parse_camera)]
    camera: Option<CameraIntrinsics>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Video,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Single => Mode::Single,
            ModeArg::Video => Mode::Video,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward kinematics of a parameter file (rest pose when omitted).
    Fk {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a parameter file or dataset against the constraint table.
    Validate { file: PathBuf },
    /// Project a 3D pose file to pixels.
    Project {
        pose: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Motion features of every sequence in a dataset.
    Features {
        dataset: PathBuf,
        #[arg(long)]
        sequence: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic 2D-3D dataset.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write smooth narrow-band "real" sequences instead of generator output.
        #[arg(long)]
        narrow_band: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train generator and critics on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        frames: Option<usize>,
        /// Also keep the pairs synthesized after each epoch.
        #[arg(long)]
        synth_out: Option<PathBuf>,
    },
    /// Export one skeleton sequence for external plotting.
    ExportVideo {
        /// Take the sequence from this dataset instead of generating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        sequence: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in consistency checks, optionally over a dataset file.
    Selftest {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

fn parse_camera(s: &str) -> std::result::Result<CameraIntrinsics, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    let [fx, fy, cx, cy] = v[..] else {
        return Err("expected fx,fy,cx,cy".into());
    };
    CameraIntrinsics::new(fx, fy, cx, cy, default_camera().z_min).map_err(|e| e.to_string())
}

/// `{"params": [...], "global": [...]}` or a bare array of parameters.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ParamFile {
    Full {
        params: Vec<f64>,
        #[serde(default)]
        global: Option<[f64; 6]>,
    },
    Bare(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PoseFile {
    Wrapped(Pose3D),
    Bare(Vec<[f64; 3]>),
}

struct Context {
    seed: u64,
    config: TrainConfig,
    topology: SkeletonTopology,
    table: ConstraintTable,
    camera: CameraIntrinsics,
}

impl Context {
    fn new(g: &GlobalArgs) -> Result<Self> {
        let topology = match &g.topology {
            Some(p) => SkeletonTopology::load(p)?,
            None => default_topology(),
        };
        let table = match &g.constraints {
            Some(p) => ConstraintTable::load(p)?,
            None => default_constraint_table(),
        };
        table.check_against(&topology)?;
        let mut config = match &g.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = g.seed {
            config.seed = s;
        }
        Ok(Self {
            seed: config.seed,
            config,
            topology,
            table,
            camera: g.camera.unwrap_or_else(default_camera),
        })
    }

    fn generator(
        &self,
        checkpoint: Option<&Path>,
        mode: Option<Mode>,
        frames: Option<usize>,
    ) -> Result<DhGenerator> {
        match checkpoint {
            Some(p) => {
                let ckpt = read_checkpoint(p)?;
                DhGenerator::from_checkpoint(
                    &ckpt,
                    self.topology.clone(),
                    self.table.clone(),
                    self.camera,
                )
            }
            None => {
                let mut cfg = self.config.clone();
                if let Some(m) = mode {
                    cfg.mode = m;
                }
                if let Some(t) = frames {
                    cfg.frames = t;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                DhGenerator::new(
                    &cfg,
                    self.topology.clone(),
                    self.table.clone(),
                    self.camera,
                    &mut rng,
                )
            }
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}

fn read_params(path: &Path, n: usize) -> Result<(ParamVector, GlobalTransform)> {
    let (params, global) = match read_json::<ParamFile>(path)? {
        ParamFile::Full { params, global } => (params, global),
        ParamFile::Bare(params) => (params, None),
    };
    if params.len() != n {
        return Err(Error::Data(format!(
            "{}: expected {n} parameters, found {}",
            path.display(),
            params.len()
        )));
    }
    let g = global.map_or_else(GlobalTransform::identity, GlobalTransform::from_array);
    Ok((ParamVector::from_vec(params), g))
}

fn sequences(records: &[DatasetRecord]) -> BTreeMap<u64, Vec<&DatasetRecord>> {
    let mut out: BTreeMap<u64, Vec<&DatasetRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.sequence_id).or_default().push(r);
    }
    for seq in out.values_mut() {
        seq.sort_by_key(|r| r.frame_index);
    }
    out
}

fn warn_topology(loaded: &crate::dataset::LoadedDataset, topo: &SkeletonTopology) {
    if let Some(w) = loaded.topology_warning(topo) {
        eprintln!("{w}");
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                2
            } else {
                1
            }
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let ctx = Context::new(&cli.global)?;
    match cli.command {
        Command::Fk { params, out } => {
            let (p, g) = match params {
                Some(path) => read_params(&path, ctx.topology.num_params())?,
                None => (ParamVector::zeros(), GlobalTransform::identity()),
            };
            let pose = forward_kinematics(&ctx.topology, &p, &g)?;
            emit(&pose, out.as_deref())?;
            Ok(0)
        }
        Command::Validate { file } => validate(&ctx, &file),
        Command::Project { pose, out } => {
            let pose = match read_json::<PoseFile>(&pose)? {
                PoseFile::Wrapped(p) => p,
                PoseFile::Bare(j) => Pose3D::new(j),
            };
            if pose.joints.len() != ctx.topology.keypoint_count() {
                return Err(Error::Data(format!(
                    "expected {} keypoints, found {}",
                    ctx.topology.keypoint_count(),
                    pose.joints.len()
                )));
            }
            emit(&project_pose(&pose, &ctx.camera)?, out.as_deref())?;
            Ok(0)
        }
        Command::Features {
            dataset,
            sequence,
            out,
        } => {
            let loaded = load_dataset(&dataset)?;
            warn_topology(&loaded, &ctx.topology);
            let pairs = AdjacentBonePairs::from_topology(&ctx.topology);
            let mut all = BTreeMap::new();
            for (id, seq) in sequences(&loaded.records) {
                if sequence.is_some_and(|s| s != id) {
                    continue;
                }
                let s3 = PoseSequence3D {
                    frames: seq.iter().map(|r| r.pose3d.clone()).collect(),
                };
                let s2 = PoseSequence2D {
                    frames: seq.iter().map(|r| r.pose2d.clone()).collect(),
                };
                all.insert(
                    id,
                    feature_bundle(&s3, &s2, &pairs, ctx.topology.root_keypoint())?,
                );
            }
            if all.is_empty() {
                return Err(Error::Data("no matching sequence".into()));
            }
            emit(&all, out.as_deref())?;
            Ok(0)
        }
        Command::Synth {
            count,
            mode,
            frames,
            checkpoint,
            narrow_band,
            out,
        } => {
            if count == 0 {
                return Err(Error::invalid("--count must be at least 1"));
            }
            if narrow_band {
                let t = frames.unwrap_or(match mode.map(Mode::from).unwrap_or(ctx.config.mode) {
                    Mode::Single => 1,
                    Mode::Video => ctx.config.frames,
                });
                let recs =
                    narrow_band_corpus(&ctx.topology, &ctx.table, &ctx.camera, count, t, ctx.seed)?;
                save_dataset(&recs, &out, &ctx.topology)?;
                eprintln!("wrote {} records to {}", recs.len(), out.display());
                return Ok(0);
            }
            let gen = ctx.generator(checkpoint.as_deref(), mode.map(Mode::from), frames)?;
            let summary = synthesize_dataset(&gen, count, ctx.seed, &out)?;
            emit(&summary, None)?;
            Ok(if summary.violations == 0 && summary.inconsistent == 0 {
                0
            } else {
                2
            })
        }
        Command::Train {
            data,
            out,
            epochs,
            mode,
            frames,
            synth_out,
        } => {
            let mut cfg = ctx.config.clone();
            if let Some(e) = epochs {
                cfg.epochs = e;
                cfg.beta_epoch = cfg.beta_epoch.min(e);
            }
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if let Some(t) = frames {
                cfg.frames = t;
            }
            let loaded = load_dataset(&data)?;
            if loaded.header.topology != ctx.topology.hash() {
                return Err(Error::TopologyMismatch {
                    expected: ctx.topology.hash().to_string(),
                    found: loaded.header.topology.clone(),
                });
            }
            let mut state = TrainState::new(
                cfg.clone(),
                ctx.topology.clone(),
                ctx.table.clone(),
                ctx.camera,
            )?;
            let real = RealData::from_records(
                &loaded.records,
                state.generator.layout(),
                cfg.mode,
                cfg.frames,
            )?;
            let mut writer = synth_out
                .as_deref()
                .map(|p| DatasetWriter::create(p, &ctx.topology))
                .transpose()?;
            let mut next_id = 0u64;
            for _ in 0..cfg.epochs {
                let camera = ctx.camera;
                let m = state.train_epoch(&real, &mut |samples: &[GeneratedSample]| {
                    if let Some(w) = writer.as_mut() {
                        for s in samples {
                            for r in records_of(s, next_id, &camera) {
                                w.write(&r)?;
                            }
                            next_id += 1;
                        }
                    }
                    Ok(())
                })?;
                println!(
                    "{}",
                    serde_json::to_string(&m).map_err(|e| Error::Data(e.to_string()))?
                );
            }
            if let Some(w) = writer {
                w.finish()?;
            }
            write_checkpoint(&out, &state.checkpoint())?;
            Ok(0)
        }
        Command::ExportVideo {
            dataset,
            sequence,
            checkpoint,
            frames,
            out,
        } => {
            let (s3, s2) = match dataset {
                Some(path) => {
                    let loaded = load_dataset(&path)?;
                    warn_topology(&loaded, &ctx.topology);
                    let seqs = sequences(&loaded.records);
                    let seq = match sequence {
                        Some(id) => seqs
                            .get(&id)
                            .ok_or_else(|| Error::Data(format!("no sequence {id}")))?,
                        None => seqs
                            .values()
                            .next()
                            .ok_or_else(|| Error::Data("dataset is empty".into()))?,
                    };
                    (
                        seq.iter().map(|r| r.pose3d.clone()).collect::<Vec<_>>(),
                        seq.iter().map(|r| r.pose2d.clone()).collect::<Vec<_>>(),
                    )
                }
                None => {
                    let gen = ctx.generator(checkpoint.as_deref(), Some(Mode::Video), frames)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
                    let (mut samples, _) = gen.generate_valid(1, &mut rng)?;
                    let s = samples.pop().expect("one sample");
                    (
                        s.frames.iter().map(|f| f.pose3d.clone()).collect(),
                        s.frames.iter().map(|f| f.pose2d.clone()).collect(),
                    )
                }
            };
            export_skeleton_video(&s3, Some(&s2), &ctx.topology, &out)?;
            eprintln!("wrote {} frames to {}", s3.len(), out.display());
            Ok(0)
        }
        Command::Selftest { dataset, samples } => selftest(&ctx, dataset.as_deref(), samples),
    }
}

fn validate(ctx: &Context, file: &Path) -> Result<i32> {
    let is_dataset = std::fs::read_to_string(file)
        .ok()
        .and_then(|t| t.lines().next().map(|l| l.contains("dhaug-dataset")))
        .unwrap_or(false)
        || file.extension().is_some_and(|e| e == "bin");
    if is_dataset {
        let loaded = load_dataset(file)?;
        warn_topology(&loaded, &ctx.topology);
        let (px, m) = tolerances(&loaded);
        let mut bad = 0;
        for r in &loaded.records {
            for p in check_record(r, &ctx.topology, &ctx.table, px, m) {
                println!("sequence {} frame {}: {p}", r.sequence_id, r.frame_index);
                bad += 1;
            }
        }
        println!("{} records, {bad} problems", loaded.records.len());
        return Ok(if bad == 0 { 0 } else { 2 });
    }
    let (p, _) = read_params(file, ctx.topology.num_params())?;
    let report = validate_params(&p, &ctx.table);
    for v in &report.violations {
        println!(
            "parameter {} ({}) = {:.6} violates {:?} bound {:.6}",
            v.param,
            ctx.table.name(v.param),
            v.value,
            v.side,
            v.bound
        );
    }
    println!("{} violations", report.violations.len());
    Ok(if report.ok { 0 } else { 2 })
}

/// Pixel and meter tolerances for record checks: tight for text files,
/// single-precision for the binary variant.
fn tolerances(loaded: &crate::dataset::LoadedDataset) -> (f64, f64) {
    match loaded.header.encoding {
        crate::dataset::Encoding::Jsonl => (1e-6, 1e-9),
        crate::dataset::Encoding::Binary => (1e-2, 1e-5),
    }
}

fn selftest(ctx: &Context, dataset: Option<&Path>, samples: usize) -> Result<i32> {
    let mut failed = 0;
    let mut report = |name: &str, outcome: std::result::Result<String, String>| match outcome {
        Ok(detail) => println!("ok    {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL  {name}: {detail}");
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let topo = &ctx.topology;

    let mut worst = 0.0f64;
    for _ in 0..samples {
        let p = ParamVector::from_vec(
            ctx.table
                .bounds()
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect(),
        );
        let g = GlobalTransform::from_array(std::array::from_fn(|i| {
            if i < 3 {
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
            } else {
                rng.random_range(-1.0..1.0)
            }
        }));
        let fast = forward_kinematics(topo, &p, &g)?;
        let slow = crate::oracle::naive_forward_kinematics(topo, &p, &g);
        for (a, b) in fast.joints.iter().zip(&slow) {
            for i in 0..3 {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
    }
    report(
        "forward kinematics vs naive chain",
        if worst <= 1e-9 {
            Ok(format!("max error {worst:e} m"))
        } else {
            Err(format!("max error {worst:e} m"))
        },
    );

    let mut invalid = 0;
    for _ in 0..samples {
        let raw: Vec<f64> = (0..topo.num_params())
            .map(|_| rng.random_range(-20.0..20.0))
            .collect();
        if !validate_params(
            &crate::constraint::squash_params(&raw, &ctx.table)?,
            &ctx.table,
        )
        .ok
        {
            invalid += 1;
        }
    }
    report(
        "squashed parameters are valid",
        if invalid == 0 {
            Ok(format!("{samples} draws"))
        } else {
            Err(format!("{invalid} invalid draws"))
        },
    );

    let recs = narrow_band_corpus(topo, &ctx.table, &ctx.camera, 2, 9, ctx.seed)?;
    let problems: Vec<String> = recs
        .iter()
        .flat_map(|r| check_record(r, topo, &ctx.table, 1e-6, 1e-9))
        .collect();
    report(
        "narrow-band records are consistent",
        if problems.is_empty() {
            Ok(format!("{} records", recs.len()))
        } else {
            Err(problems.join("; "))
        },
    );

    if let Some(path) = dataset {
        let loaded = load_dataset(path)?;
        warn_topology(&loaded, topo);
        let (px, m) = tolerances(&loaded);
        let bad: Vec<String> = loaded
            .records
            .iter()
            .flat_map(|r| {
                check_record(r, topo, &ctx.table, px, m)
                    .into_iter()
                    .map(move |p| {
                        format!("sequence {} frame {}: {p}", r.sequence_id, r.frame_index)
                    })
            })
            .collect();
        report(
            "dataset records",
            if bad.is_empty() {
                Ok(format!("{} records", loaded.records.len()))
            } else {
                Err(format!("{} problems, first: {}", bad.len(), bad[0]))
            },
        );
    }

    Ok(if failed == 0 { 0 } else { 2 })
}
