//! Event-stream ingestion: timestep framing, sensor downsampling, synthetic
//! task generators, and the neutral on-disk event format.
//!
//! All ingestion flows through the neutral format: one event per line as
//! `timestamp_us,channel,polarity` in decimal ASCII, with a sidecar
//! `manifest.json` mapping sample ids to labels and carrying the dataset
//! spec. Vendor binary containers are out of scope; convert to this format
//! first.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, STREAM_DATA};

/// One input event: microsecond timestamp, flat channel index, polarity.
/// Polarity is 0 where the source has none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_us: u64,
    pub channel: u32,
    pub polarity: u8,
}

/// Binary input vector for one timestep. Multiple events hitting the same
/// channel within a timestep collapse to a single spike.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputFrame {
    pub index: usize,
    pub s_in: Vec<u8>,
}

impl InputFrame {
    pub fn empty(index: usize, n_input: usize) -> Self {
        Self { index, s_in: vec![0; n_input] }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.s_in.iter().map(|&b| b as f64).collect()
    }

    pub fn n_spikes(&self) -> usize {
        self.s_in.iter().filter(|&&b| b > 0).count()
    }
}

/// Dataset description carried by the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub n_input: usize,
    pub n_classes: usize,
    pub timestep_ms: f64,
    pub duration_cap_ms: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Maps events to timestep frames: an event at time `t` lands in frame
/// `floor(t / timestep)`. Events at or past the duration cap are dropped.
/// Interior empty frames are preserved (they still advance elapsed time);
/// trailing empty frames are not materialized.
pub fn frame_events(
    events: &[EventRecord],
    timestep_ms: f64,
    duration_cap_ms: f64,
    n_input: usize,
) -> Result<Vec<InputFrame>> {
    if !(timestep_ms > 0.0) {
        return Err(Error::InvalidConfig(format!("timestep must be > 0 ms, got {timestep_ms}")));
    }
    let step_us = (timestep_ms * 1000.0).round() as u64;
    let cap_us = (duration_cap_ms * 1000.0).round() as u64;
    let mut frames: Vec<InputFrame> = Vec::new();
    for e in events {
        if e.t_us >= cap_us {
            continue;
        }
        if e.channel as usize >= n_input {
            return Err(Error::Geometry(format!(
                "channel {} out of range (n_input = {n_input})",
                e.channel
            )));
        }
        let idx = (e.t_us / step_us) as usize;
        while frames.len() <= idx {
            let next = frames.len();
            frames.push(InputFrame::empty(next, n_input));
        }
        frames[idx].s_in[e.channel as usize] = 1;
    }
    Ok(frames)
}

/// Raw sensor event before downsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawEvent {
    Vision { t_us: u64, x: u16, y: u16, polarity: u8 },
    Audio { t_us: u64, channel: u16 },
}

/// Benchmark source geometries with their downsampling rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    /// 34x34 pixels, 2 polarities; passthrough flattening to 2312 channels.
    NMnist,
    /// 700 cochlear channels halved to 350.
    Shd,
    /// 128x128 pixels, 2 polarities; 4x4 pooling to a 32x32 frame (2048
    /// channels).
    DvsGesture,
}

impl SensorKind {
    pub fn n_input(self) -> usize {
        match self {
            SensorKind::NMnist => 34 * 34 * 2,
            SensorKind::Shd => 350,
            SensorKind::DvsGesture => 32 * 32 * 2,
        }
    }
}

/// Applies the dataset's downsampling rule to one raw event.
pub fn downsample(kind: SensorKind, raw: RawEvent) -> Result<EventRecord> {
    match (kind, raw) {
        (SensorKind::NMnist, RawEvent::Vision { t_us, x, y, polarity }) => {
            if x >= 34 || y >= 34 || polarity >= 2 {
                return Err(Error::Geometry(format!("N-MNIST event out of 34x34x2: ({x},{y},{polarity})")));
            }
            Ok(EventRecord { t_us, channel: (y as u32 * 34 + x as u32) * 2 + polarity as u32, polarity })
        }
        (SensorKind::DvsGesture, RawEvent::Vision { t_us, x, y, polarity }) => {
            if x >= 128 || y >= 128 || polarity >= 2 {
                return Err(Error::Geometry(format!("DVS event out of 128x128x2: ({x},{y},{polarity})")));
            }
            let (xd, yd) = (x as u32 / 4, y as u32 / 4);
            Ok(EventRecord { t_us, channel: (yd * 32 + xd) * 2 + polarity as u32, polarity })
        }
        (SensorKind::Shd, RawEvent::Audio { t_us, channel }) => {
            if channel >= 700 {
                return Err(Error::Geometry(format!("SHD channel out of range: {channel}")));
            }
            Ok(EventRecord { t_us, channel: channel as u32 / 2, polarity: 0 })
        }
        (kind, raw) => Err(Error::Geometry(format!("event {raw:?} does not match sensor {kind:?}"))),
    }
}

/// A labeled sample: its id, class label, and sorted event stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: u32,
    pub events: Vec<EventRecord>,
}

impl Sample {
    pub fn frames(&self, spec: &DatasetSpec) -> Result<Vec<InputFrame>> {
        frame_events(&self.events, spec.timestep_ms, spec.duration_cap_ms, spec.n_input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Synthetic task generators: the desk-scale substrate for end-to-end
/// checks. Both tasks use 16 channels in two groups of 8 and 10 timesteps
/// of 10 ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Class decided by which half of the channels carries the high firing
    /// rate (rates 10:1). Linearly separable; purely spatial.
    RatePair,
    /// Class decided by which channel group fires first across timesteps.
    /// A group "fires" at the first timestep where at least 3 of its
    /// channels are active; ties and fully silent samples are class 0 by
    /// construction.
    TemporalOrder,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rate_pair" => Ok(SynthKind::RatePair),
            "temporal_order" => Ok(SynthKind::TemporalOrder),
            other => Err(Error::Parse(format!("unknown synthetic task `{other}`"))),
        }
    }
}

pub const SYNTH_N_INPUT: usize = 16;
pub const SYNTH_N_CLASSES: usize = 2;
pub const SYNTH_N_FRAMES: usize = 10;
pub const SYNTH_TIMESTEP_MS: f64 = 10.0;

const SYNTH_STEP_US: u64 = 10_000;
const GROUP_A: std::ops::Range<usize> = 0..8;
const GROUP_B: std::ops::Range<usize> = 8..16;

/// Label rule for the temporal-order task, applied to generated events so
/// the label always reflects the stream actually written out.
pub fn temporal_order_label(events: &[EventRecord]) -> u32 {
    let mut active = [[0u32; 2]; SYNTH_N_FRAMES];
    for e in events {
        let frame = (e.t_us / SYNTH_STEP_US) as usize;
        if frame >= SYNTH_N_FRAMES {
            continue;
        }
        let group = usize::from(GROUP_B.contains(&(e.channel as usize)));
        active[frame][group] += 1;
    }
    let first = |g: usize| active.iter().position(|f| f[g] >= 3);
    match (first(0), first(1)) {
        (Some(a), Some(b)) if b < a => 1,
        (None, Some(_)) => 1,
        // Group A first, ties, and silent samples are class 0.
        _ => 0,
    }
}

/// Generates `n_samples` labeled event streams for a synthetic task.
/// Deterministic given `(kind, seed)`; sample `i` draws from its own stream.
pub fn synth_task(kind: SynthKind, n_samples: usize, seed: u64) -> Vec<Sample> {
    (0..n_samples)
        .map(|i| {
            let mut rng = derive_rng(seed, &[STREAM_DATA, kind as u64, i as u64]);
            let intended = (i % 2) as u32;
            let mut events = Vec::new();
            match kind {
                SynthKind::RatePair => {
                    let high = if intended == 0 { GROUP_A } else { GROUP_B };
                    for frame in 0..SYNTH_N_FRAMES {
                        for ch in 0..SYNTH_N_INPUT {
                            let p = if high.contains(&ch) { 0.45 } else { 0.045 };
                            if rng.gen_bool(p) {
                                let offset = rng.gen_range(0..SYNTH_STEP_US);
                                events.push(EventRecord {
                                    t_us: frame as u64 * SYNTH_STEP_US + offset,
                                    channel: ch as u32,
                                    polarity: 0,
                                });
                            }
                        }
                    }
                }
                SynthKind::TemporalOrder => {
                    let (early, late) = if intended == 0 { (GROUP_A, GROUP_B) } else { (GROUP_B, GROUP_A) };
                    for frame in 0..SYNTH_N_FRAMES {
                        for ch in 0..SYNTH_N_INPUT {
                            let in_window = (frame < 5 && early.contains(&ch))
                                || (frame >= 5 && late.contains(&ch));
                            let p = if in_window { 0.4 } else { 0.02 };
                            if rng.gen_bool(p) {
                                let offset = rng.gen_range(0..SYNTH_STEP_US);
                                events.push(EventRecord {
                                    t_us: frame as u64 * SYNTH_STEP_US + offset,
                                    channel: ch as u32,
                                    polarity: 0,
                                });
                            }
                        }
                    }
                }
            }
            events.sort_by_key(|e| (e.t_us, e.channel));
            let label = match kind {
                SynthKind::RatePair => intended,
                SynthKind::TemporalOrder => temporal_order_label(&events),
            };
            Sample { id: format!("{i:05}"), label, events }
        })
        .collect()
}

pub fn synth_spec(kind: SynthKind, n_train: usize, n_test: usize) -> DatasetSpec {
    DatasetSpec {
        name: match kind {
            SynthKind::RatePair => "rate_pair".into(),
            SynthKind::TemporalOrder => "temporal_order".into(),
        },
        n_input: SYNTH_N_INPUT,
        n_classes: SYNTH_N_CLASSES,
        timestep_ms: SYNTH_TIMESTEP_MS,
        duration_cap_ms: SYNTH_TIMESTEP_MS * SYNTH_N_FRAMES as f64,
        n_train,
        n_test,
    }
}

/// Generates a synthetic dataset split into train and test. Test samples
/// continue the sample-index sequence so the splits never share streams.
pub fn synth_dataset(kind: SynthKind, n_train: usize, n_test: usize, seed: u64) -> Dataset {
    let mut all = synth_task(kind, n_train + n_test, seed);
    let test = all.split_off(n_train);
    Dataset { spec: synth_spec(kind, n_train, n_test), train: all, test }
}

// --- neutral on-disk format ---

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSample {
    id: String,
    split: String,
    label: u32,
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    spec: DatasetSpec,
    samples: Vec<ManifestSample>,
}

const MANIFEST_FORMAT: &str = "asnn-dataset";
const MANIFEST_VERSION: u32 = 1;

fn write_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    let mut out = String::with_capacity(events.len() * 16);
    for e in events {
        out.push_str(&format!("{},{},{}\n", e.t_us, e.channel, e.polarity));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let text = fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = |name: &str| {
            parts
                .next()
                .ok_or_else(|| Error::Parse(format!("{}:{}: missing {name}", path.display(), lineno + 1)))
        };
        let t_us = field("timestamp")?.trim().parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?;
        let channel = field("channel")?.trim().parse::<u32>().map_err(|e| Error::Parse(e.to_string()))?;
        let polarity = field("polarity")?.trim().parse::<u8>().map_err(|e| Error::Parse(e.to_string()))?;
        events.push(EventRecord { t_us, channel, polarity });
    }
    events.sort_by_key(|e| (e.t_us, e.channel, e.polarity));
    Ok(events)
}

/// Writes a dataset directory: `manifest.json` plus one event file per
/// sample under `train/` and `test/`. Output is byte-stable for a fixed
/// dataset.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("train"))?;
    fs::create_dir_all(dir.join("test"))?;
    let mut samples = Vec::new();
    for (split, list) in [("train", &dataset.train), ("test", &dataset.test)] {
        for s in list {
            let rel = format!("{split}/{}.csv", s.id);
            write_events(&dir.join(&rel), &s.events)?;
            samples.push(ManifestSample {
                id: format!("{split}/{}", s.id),
                split: split.to_string(),
                label: s.label,
                path: rel,
            });
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        spec: dataset.spec.clone(),
        samples,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Parse(format!("not an event dataset manifest: {}", manifest.format)));
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Parse(format!("unsupported manifest version {}", manifest.version)));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for m in manifest.samples {
        let events = read_events(&dir.join(&m.path))?;
        let sample = Sample { id: m.id, label: m.label, events };
        match m.split.as_str() {
            "train" => train.push(sample),
            "test" => test.push(sample),
            other => return Err(Error::Parse(format!("unknown split `{other}`"))),
        }
    }
    Ok(Dataset { spec: manifest.spec, train, test })
}
