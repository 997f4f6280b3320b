//! Files on disk: experiment configuration, checkpoints, run manifests,
//! CSV tables and episode traces.
//!
//! A checkpoint is the magic `EMACCKPT`, a little-endian `u32` header
//! length, a JSON header, then the four online networks as little-endian
//! `f64` in the order UE actor, UE critic, BS actor, BS critic.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{SimConfig, TrainConfig};
use crate::env::{EpisodeLog, TtiRecord};
use crate::error::PersistError;
use crate::harness::{mean_ci95, CurvePoint, ExperimentPlan, ProtocolSnapshot, ResultRow};
use crate::neural::{read_payload, write_payload, MlpParams, MlpShape};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EMACCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temporary file so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn parse_plan(text: &str) -> Result<ExperimentPlan, PersistError> {
    let plan: ExperimentPlan =
        serde_json::from_str(text).map_err(|e| PersistError::ConfigParse(e.to_string()))?;
    plan.validate()?;
    Ok(plan)
}

pub fn load_plan(path: &Path) -> Result<ExperimentPlan, PersistError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PersistError::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
    parse_plan(&text)
}

pub fn plan_to_json(plan: &ExperimentPlan) -> String {
    serde_json::to_string_pretty(plan).expect("plan serializes")
}

/// Hash of the learner-relevant configuration.
pub fn config_hash(sim: &SimConfig, train: &TrainConfig) -> String {
    let bytes = serde_json::to_vec(&(sim, train)).expect("config serializes");
    sha256_hex(&bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub ue_actor: MlpShape,
    pub ue_critic: MlpShape,
    pub bs_actor: MlpShape,
    pub bs_critic: MlpShape,
    pub config: SimConfig,
    pub train: TrainConfig,
    pub config_hash: String,
    pub eval_goodput: f64,
    pub repetition: usize,
    pub checkpoint_episode: usize,
    pub payload_sha256: String,
}

fn nets(s: &ProtocolSnapshot) -> [&MlpParams; 4] {
    [&s.ue_actor, &s.ue_critic, &s.bs_actor, &s.bs_critic]
}

pub fn encode_checkpoint(snapshot: &ProtocolSnapshot) -> Vec<u8> {
    let mut payload = Vec::new();
    for net in nets(snapshot) {
        write_payload(net, &mut payload);
    }
    let [ua, uc, ba, bc] = nets(snapshot).map(|n| n.shape());
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        ue_actor: ua,
        ue_critic: uc,
        bs_actor: ba,
        bs_critic: bc,
        config: snapshot.config.clone(),
        train: snapshot.train.clone(),
        config_hash: config_hash(&snapshot.config, &snapshot.train),
        eval_goodput: snapshot.eval_goodput,
        repetition: snapshot.repetition,
        checkpoint_episode: snapshot.checkpoint_episode,
        payload_sha256: sha256_hex(&payload),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ProtocolSnapshot, PersistError> {
    let corrupt = |m: &str| PersistError::Corrupt(m.to_string());
    if bytes.get(..8) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(corrupt("missing checkpoint magic"));
    }
    let len: [u8; 4] = bytes
        .get(8..12)
        .ok_or_else(|| corrupt("truncated header length"))?
        .try_into()
        .expect("4 bytes");
    let header_len = u32::from_le_bytes(len) as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| corrupt("truncated header"))?;
    // read the version alone first so a newer layout reports a version error
    let loose: serde_json::Value =
        serde_json::from_slice(header_bytes).map_err(|e| corrupt(&e.to_string()))?;
    let found = loose
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("header lacks format_version"))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(PersistError::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: CheckpointHeader =
        serde_json::from_value(loose).map_err(|e| corrupt(&e.to_string()))?;
    header.config.validate()?;
    if header.config_hash != config_hash(&header.config, &header.train) {
        return Err(corrupt("config hash mismatch"));
    }
    let payload = &bytes[12 + header_len..];
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(corrupt("payload checksum mismatch"));
    }
    let shapes = [
        header.ue_actor,
        header.ue_critic,
        header.bs_actor,
        header.bs_critic,
    ];
    let expected: usize = shapes.iter().map(|s| s.num_params() * 8).sum();
    if payload.len() != expected {
        return Err(corrupt("payload length disagrees with shapes"));
    }
    let mut offset = 0;
    let mut read = |shape: MlpShape| -> Result<MlpParams, PersistError> {
        let p = read_payload(shape, &payload[offset..]).map_err(|e| corrupt(&e.to_string()))?;
        offset += shape.num_params() * 8;
        Ok(p)
    };
    let snapshot = ProtocolSnapshot {
        ue_actor: read(header.ue_actor)?,
        ue_critic: read(header.ue_critic)?,
        bs_actor: read(header.bs_actor)?,
        bs_critic: read(header.bs_critic)?,
        config: header.config,
        train: header.train,
        eval_goodput: header.eval_goodput,
        repetition: header.repetition,
        checkpoint_episode: header.checkpoint_episode,
    };
    // shapes must also fit the stored configuration
    snapshot
        .agents()
        .map_err(|e| PersistError::Corrupt(e.to_string()))?;
    Ok(snapshot)
}

pub fn save_checkpoint(path: &Path, snapshot: &ProtocolSnapshot) -> Result<(), PersistError> {
    write_atomic(path, &encode_checkpoint(snapshot))
}

pub fn load_checkpoint(path: &Path) -> Result<ProtocolSnapshot, PersistError> {
    decode_checkpoint(&fs::read(path)?)
}

/// Provenance of one CLI run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub plan: ExperimentPlan,
    pub repetition_seeds: Vec<u64>,
    /// Hash of the deterministic fields above.
    pub manifest_hash: String,
    /// Hash of the surviving checkpoint file, when one was produced.
    pub params_hash: Option<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, plan: &ExperimentPlan) -> Self {
        let repetition_seeds = plan.repetition_seeds();
        let hashed = serde_json::to_vec(&(TOOL_VERSION, command, plan, &repetition_seeds))
            .expect("manifest serializes");
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            plan: plan.clone(),
            repetition_seeds,
            manifest_hash: sha256_hex(&hashed),
            params_hash: None,
            started_unix: unix_now(),
            finished_unix: None,
        }
    }

    pub fn finish(&mut self, params: Option<&[u8]>) {
        self.params_hash = params.map(sha256_hex);
        self.finished_unix = Some(unix_now());
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(path, text.as_bytes())
    }
}

// the csv writer cannot serialize flattened structs, hence the spelled-out rows
#[derive(Serialize)]
struct CurveCsvRow<'a> {
    repetition: usize,
    episode: usize,
    eval_goodput: f64,
    eval_goodput_ci95: f64,
    eval_collision: f64,
    best_goodput: f64,
    manifest_hash: &'a str,
}

#[derive(Serialize)]
struct CurveSummaryRow<'a> {
    episode: usize,
    repetitions: usize,
    eval_goodput_mean: f64,
    eval_goodput_ci95: f64,
    eval_collision_mean: f64,
    manifest_hash: &'a str,
}

#[derive(Serialize)]
struct ResultCsvRow<'a> {
    method: &'static str,
    n_ue: usize,
    arrival_prob: f64,
    goodput_mean: f64,
    goodput_ci95: f64,
    collision_mean: f64,
    upper_bound: f64,
    manifest_hash: &'a str,
}

fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), PersistError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| PersistError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// One row per (repetition, checkpoint).
pub fn write_curve(
    path: &Path,
    points: &[CurvePoint],
    manifest_hash: &str,
) -> Result<(), PersistError> {
    write_csv(
        path,
        points.iter().map(|p| CurveCsvRow {
            repetition: p.repetition,
            episode: p.episode,
            eval_goodput: p.eval_goodput,
            eval_goodput_ci95: p.eval_goodput_ci95,
            eval_collision: p.eval_collision,
            best_goodput: p.best_goodput,
            manifest_hash,
        }),
    )
}

/// One row per checkpoint with mean and 95% CI across repetitions.
pub fn write_curve_summary(
    path: &Path,
    points: &[CurvePoint],
    manifest_hash: &str,
) -> Result<(), PersistError> {
    let mut episodes: Vec<usize> = points.iter().map(|p| p.episode).collect();
    episodes.sort_unstable();
    episodes.dedup();
    let rows = episodes.into_iter().map(|episode| {
        let at: Vec<&CurvePoint> = points.iter().filter(|p| p.episode == episode).collect();
        let g: Vec<f64> = at.iter().map(|p| p.eval_goodput).collect();
        let c: Vec<f64> = at.iter().map(|p| p.eval_collision).collect();
        let (eval_goodput_mean, eval_goodput_ci95) = mean_ci95(&g);
        CurveSummaryRow {
            episode,
            repetitions: at.len(),
            eval_goodput_mean,
            eval_goodput_ci95,
            eval_collision_mean: mean_ci95(&c).0,
            manifest_hash,
        }
    });
    write_csv(path, rows.collect::<Vec<_>>())
}

pub fn write_results(
    path: &Path,
    rows: &[ResultRow],
    manifest_hash: &str,
) -> Result<(), PersistError> {
    write_csv(
        path,
        rows.iter().map(|r| ResultCsvRow {
            method: r.method.as_str(),
            n_ue: r.n_ue,
            arrival_prob: r.arrival_prob,
            goodput_mean: r.goodput_mean,
            goodput_ci95: r.goodput_ci95,
            collision_mean: r.collision_mean,
            upper_bound: r.upper_bound,
            manifest_hash,
        }),
    )
}

#[derive(Serialize)]
struct TraceLine<'a> {
    episode: usize,
    #[serde(flatten)]
    record: &'a TtiRecord,
}

/// Appends one JSON line per TTI of `log`.
pub fn append_trace<W: Write>(
    out: &mut W,
    episode: usize,
    log: &EpisodeLog,
) -> Result<(), PersistError> {
    for record in &log.records {
        serde_json::to_writer(&mut *out, &TraceLine { episode, record })
            .map_err(|e| PersistError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_writer(path: &Path) -> Result<BufWriter<File>, PersistError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub const FILE_NAME: &'static str = ".emac.lock";

    pub fn acquire(dir: &Path) -> Result<Self, PersistError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(Self::FILE_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PersistError::Locked(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
