//! Expert demonstrations: random instances solved by M*, sampled into
//! labeled observation records and written as `LMD1` files.
//!
//! ```text
//! magic "LMD1" | version u32 | record count u64
//! per record: map seed u32 | instance seed u32 | agent u32 | time u32
//!             | label u8 | 10x32x32 f32 | CRC-32 of the preceding fields
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_world::{generate_instance, generate_random_map, Action, MapfInstance, Solution};
use crate::observation::{encode, future_positions_from_path, ObservationTensor, LEN};
use crate::policy::{goal_fields, CostToGoField, DijkstraPolicy};
use crate::search::{mstar_plan, PlanConfig};

pub const DATASET_MAGIC: [u8; 4] = *b"LMD1";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: u64 = 16;
const BODY_LEN: usize = 16 + 1 + LEN * 4;
/// Bytes per record on disk, checksum included.
pub const RECORD_LEN: usize = BODY_LEN + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub map_seed: u32,
    pub instance_seed: u32,
    pub agent: u32,
    pub time: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub observation: ObservationTensor,
    pub label: u8,
    pub provenance: Provenance,
}

impl DatasetRecord {
    fn body(&self) -> Vec<u8> {
        let p = &self.provenance;
        let mut out = Vec::with_capacity(BODY_LEN);
        for w in [p.map_seed, p.instance_seed, p.agent, p.time] {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.push(self.label);
        out.extend_from_slice(&self.observation.to_le_bytes());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body();
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decodes one on-disk record; `index` is only used in errors.
    pub fn from_bytes(bytes: &[u8], index: u64) -> Result<Self> {
        if bytes.len() != RECORD_LEN {
            return Err(Error::DatasetFormat(format!(
                "record {index}: wrong length"
            )));
        }
        let (body, crc) = bytes.split_at(BODY_LEN);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(Error::Checksum { index });
        }
        let word = |i: usize| u32::from_le_bytes(body[i * 4..i * 4 + 4].try_into().unwrap());
        let provenance = Provenance {
            map_seed: word(0),
            instance_seed: word(1),
            agent: word(2),
            time: word(3),
        };
        let label = body[16];
        if label as usize >= Action::ALL.len() {
            return Err(Error::DatasetFormat(format!(
                "record {index}: label {label} out of range"
            )));
        }
        let observation = ObservationTensor::from_le_bytes(
            &body[17..],
            provenance.agent as usize,
            provenance.time,
        )?;
        Ok(DatasetRecord {
            observation,
            label,
            provenance,
        })
    }
}

/// Record for `agent` at step `t` of a joint path: the observation at `t`
/// with the other agents' next three cells read from the path, labeled
/// with the action taken between `t` and `t + 1`.
pub fn label_from_transition(
    solution: &Solution,
    agent: usize,
    t: usize,
    fields: &[CostToGoField],
    instance: &MapfInstance,
    map_seed: u32,
    instance_seed: u32,
) -> Result<DatasetRecord> {
    let steps = solution.horizon().saturating_sub(1);
    if t >= steps {
        return Err(Error::InvalidArgument(format!(
            "time {t} has no successor (path has {steps} steps)"
        )));
    }
    let path = &solution.paths[agent];
    let (from, to) = (path.at(t), path.at(t + 1));
    let action = Action::between(from, to).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "corrupt path: agent {agent} jumps from {from} to {to} at time {t}"
        ))
    })?;
    let positions = solution.joint_at(t);
    let future = future_positions_from_path(solution, agent, t);
    let observation = encode(instance, &positions, agent, fields, &future, t as u32)?;
    Ok(DatasetRecord {
        observation,
        label: action.index() as u8,
        provenance: Provenance {
            map_seed,
            instance_seed,
            agent: agent as u32,
            time: t as u32,
        },
    })
}

/// Streaming `LMD1` writer. The record count in the header is patched by
/// [`DatasetWriter::finish`].
pub struct DatasetWriter {
    out: BufWriter<File>,
    count: u64,
}

impl DatasetWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&DATASET_MAGIC)?;
        out.write_all(&DATASET_VERSION.to_le_bytes())?;
        out.write_all(&0u64.to_le_bytes())?;
        Ok(DatasetWriter { out, count: 0 })
    }

    pub fn push(&mut self, record: &DatasetRecord) -> Result<()> {
        self.out.write_all(&record.to_bytes())?;
        self.count += 1;
        Ok(())
    }

    fn push_raw(&mut self, bytes: &[u8]) -> Result<()> {
        self.out.write_all(bytes)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        self.out.seek(SeekFrom::Start(8))?;
        self.out.write_all(&self.count.to_le_bytes())?;
        self.out.flush()?;
        Ok(self.count)
    }
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut w = DatasetWriter::create(path)?;
    for r in records {
        w.push(r)?;
    }
    w.finish()?;
    Ok(())
}

/// Iterator over the records of an `LMD1` stream, in file order.
pub struct DatasetReader<R> {
    input: R,
    count: u64,
    next: u64,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN as usize];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::DatasetFormat("truncated header".into()))?;
        if header[..4] != DATASET_MAGIC {
            return Err(Error::DatasetFormat("bad magic, expected LMD1".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(Error::DatasetFormat(format!(
                "unsupported version {version}, expected {DATASET_VERSION}"
            )));
        }
        let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
        Ok(DatasetReader {
            input,
            count,
            next: 0,
        })
    }

    /// Record count from the header.
    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<DatasetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let mut buf = vec![0u8; RECORD_LEN];
        if self.input.read_exact(&mut buf).is_err() {
            self.next = self.count;
            return Some(Err(Error::DatasetFormat(format!(
                "truncated at record {index}"
            ))));
        }
        Some(DatasetRecord::from_bytes(&buf, index))
    }
}

pub fn read_dataset(path: &Path) -> Result<DatasetReader<BufReader<File>>> {
    DatasetReader::new(BufReader::new(File::open(path)?))
}

/// Generation parameters. Defaults follow the published setup except for
/// the number of maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub map_count: u32,
    pub map_width: u32,
    pub map_height: u32,
    pub obstacle_probabilities: Vec<f64>,
    pub min_agents: u32,
    pub max_agents: u32,
    pub expert_epsilon: f64,
    pub expert_time_limit_s: f64,
    pub vertex_rate: f64,
    pub agent_rate: f64,
    pub train_fraction: f64,
    pub master_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            map_count: 10,
            map_width: 32,
            map_height: 32,
            obstacle_probabilities: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            min_agents: 2,
            max_agents: 50,
            expert_epsilon: 1.1,
            expert_time_limit_s: 300.0,
            vertex_rate: 0.3,
            agent_rate: 0.3,
            train_fraction: 0.9,
            master_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let rate_ok = |r: f64| r > 0.0 && r <= 1.0;
        if !rate_ok(self.vertex_rate) || !rate_ok(self.agent_rate) {
            return bad("sample rates must lie in (0, 1]".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train fraction must lie in (0, 1)".into());
        }
        if self.obstacle_probabilities.is_empty()
            || self
                .obstacle_probabilities
                .iter()
                .any(|p| !(0.0..=0.5).contains(p))
        {
            return bad("obstacle probabilities must be a non-empty list in [0, 0.5]".into());
        }
        if self.min_agents == 0 || self.min_agents > self.max_agents {
            return bad(format!(
                "bad agent range {}..={}",
                self.min_agents, self.max_agents
            ));
        }
        if self.map_width == 0
            || self.map_height == 0
            || self.map_width > 32
            || self.map_height > 32
        {
            return bad("map sides must lie in 1..=32".into());
        }
        if self.expert_epsilon.is_nan()
            || self.expert_epsilon < 1.0
            || self.expert_time_limit_s.is_nan()
            || self.expert_time_limit_s <= 0.0
        {
            return bad("expert epsilon must be >= 1 and time limit positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub agents: u32,
    pub instance_seed: u32,
    pub solved: bool,
    pub records: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub index: u32,
    pub map_seed: u32,
    pub obstacle_probability: f64,
    pub instances: Vec<InstanceSummary>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCountStats {
    pub instances: u64,
    pub solved: u64,
    pub records: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub split_seed: u64,
    pub maps: Vec<MapSummary>,
    pub per_agent_count: BTreeMap<u32, AgentCountStats>,
    pub total_records: u64,
    pub train_records: u64,
    pub test_records: u64,
    pub train_file: PathBuf,
    pub test_file: PathBuf,
}

/// `max(1, floor(rate * n))` distinct sorted indices from `0..n`.
fn sample_sorted(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = ((rate * n as f64).floor() as usize).clamp(1, n);
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Records sampled from one solved instance, in (time, agent) order.
pub fn sample_records(
    instance: &MapfInstance,
    solution: &Solution,
    rng: &mut ChaCha8Rng,
    vertex_rate: f64,
    agent_rate: f64,
    map_seed: u32,
    instance_seed: u32,
) -> Result<Vec<DatasetRecord>> {
    let fields = goal_fields(instance)?;
    let steps = solution.horizon().saturating_sub(1);
    let mut out = Vec::new();
    for t in sample_sorted(rng, steps, vertex_rate) {
        for agent in sample_sorted(rng, instance.agent_count(), agent_rate) {
            out.push(label_from_transition(
                solution,
                agent,
                t,
                &fields,
                instance,
                map_seed,
                instance_seed,
            )?);
        }
    }
    Ok(out)
}

struct MapOutput {
    summary: MapSummary,
    records: Vec<DatasetRecord>,
}

fn process_map(config: &DatasetConfig, index: u32, map_seed: u32) -> Result<MapOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(map_seed as u64);
    let p = config.obstacle_probabilities[rng.gen_range(0..config.obstacle_probabilities.len())];
    let map = generate_random_map(config.map_width, config.map_height, p, map_seed as u64)?;
    let plan = PlanConfig {
        epsilon: config.expert_epsilon,
        time_limit: Duration::from_secs_f64(config.expert_time_limit_s),
        record_conflicts: false,
        ..PlanConfig::default()
    };
    let mut instances = Vec::new();
    let mut records = Vec::new();
    for agents in config.min_agents..=config.max_agents {
        let instance_seed = rng.next_u32();
        let mut summary = InstanceSummary {
            agents,
            instance_seed,
            solved: false,
            records: 0,
        };
        // Maps too crowded for this many agents contribute nothing.
        if let Ok(instance) = generate_instance(&map, agents as usize, instance_seed as u64) {
            let outcome = mstar_plan(&instance, DijkstraPolicy::new(&instance)?, &plan)?;
            if let Some(solution) = outcome.solution {
                let recs = sample_records(
                    &instance,
                    &solution,
                    &mut rng,
                    config.vertex_rate,
                    config.agent_rate,
                    map_seed,
                    instance_seed,
                )?;
                summary.solved = true;
                summary.records = recs.len() as u64;
                records.extend(recs);
            }
        }
        instances.push(summary);
    }
    Ok(MapOutput {
        summary: MapSummary {
            index,
            map_seed,
            obstacle_probability: p,
            instances,
        },
        records,
    })
}

fn process_maps(
    config: &DatasetConfig,
    jobs: &[(u32, u32)],
    workers: usize,
) -> Result<Vec<MapOutput>> {
    #[cfg(feature = "parallel")]
    if workers != 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        return pool.install(|| {
            jobs.par_iter()
                .map(|&(i, s)| process_map(config, i, s))
                .collect()
        });
    }
    let _ = workers;
    jobs.iter()
        .map(|&(i, s)| process_map(config, i, s))
        .collect()
}

/// Generates `train.lmd1`, `test.lmd1` and `manifest.json` in `out_dir`.
///
/// Maps are solved on `jobs` threads (0 = one per core; ignored without
/// the `parallel` feature). Output does not depend on `jobs`.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path, jobs: usize) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut master = ChaCha8Rng::seed_from_u64(config.master_seed);
    let map_seeds: Vec<(u32, u32)> = (0..config.map_count)
        .map(|i| (i, master.next_u32()))
        .collect();
    let split_seed = master.next_u64();

    // All records in generation order, written in map order a batch at a
    // time so memory stays bounded.
    let all_path = out_dir.join(".all.lmd1.tmp");
    let mut all = DatasetWriter::create(&all_path)?;
    let mut maps = Vec::new();
    let batch = 4 * available_workers(jobs);
    for chunk in map_seeds.chunks(batch) {
        for out in process_maps(config, chunk, jobs)? {
            for r in &out.records {
                all.push(r)?;
            }
            maps.push(out.summary);
        }
    }
    let total = all.finish()?;

    let mut order: Vec<u64> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let train_n = (total as f64 * config.train_fraction).floor() as u64;
    let (train_idx, test_idx) = order.split_at(train_n as usize);
    let train_file = out_dir.join("train.lmd1");
    let test_file = out_dir.join("test.lmd1");
    let mut src = File::open(&all_path)?;
    for (path, idx) in [(&train_file, train_idx), (&test_file, test_idx)] {
        let mut w = DatasetWriter::create(path)?;
        let mut buf = vec![0u8; RECORD_LEN];
        for &i in idx {
            src.seek(SeekFrom::Start(HEADER_LEN + i * RECORD_LEN as u64))?;
            src.read_exact(&mut buf)?;
            w.push_raw(&buf)?;
        }
        w.finish()?;
    }
    drop(src);
    std::fs::remove_file(&all_path)?;

    let mut per_agent_count: BTreeMap<u32, AgentCountStats> = BTreeMap::new();
    for inst in maps.iter().flat_map(|m| &m.instances) {
        let s = per_agent_count.entry(inst.agents).or_default();
        s.instances += 1;
        s.solved += inst.solved as u64;
        s.records += inst.records;
    }
    let manifest = Manifest {
        config: config.clone(),
        split_seed,
        maps,
        per_agent_count,
        total_records: total,
        train_records: train_n,
        test_records: total - train_n,
        train_file: "train.lmd1".into(),
        test_file: "test.lmd1".into(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

fn available_workers(jobs: usize) -> usize {
    #[cfg(feature = "parallel")]
    if jobs == 0 {
        return rayon::current_num_threads();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    #[cfg(not(feature = "parallel"))]
    return 1;
    #[cfg(feature = "parallel")]
    jobs
}
