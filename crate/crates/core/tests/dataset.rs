use std::collections::BTreeSet;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use lmstar::datagen::{
    generate_dataset, read_dataset, write_dataset, DatasetConfig, DatasetReader, DatasetRecord,
    Provenance, RECORD_LEN,
};
use lmstar::grid_world::{generate_instance, generate_random_map, Action, Cell, GridMap};
use lmstar::observation::{ObservationTensor, SIDE};
use lmstar::policy::DijkstraPolicy;
use lmstar::search::{mstar_plan, PlanConfig};
use lmstar::Error;

fn small_config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        map_count: 4,
        map_width: 12,
        map_height: 10,
        min_agents: 2,
        max_agents: 4,
        expert_time_limit_s: 10.0,
        master_seed: seed,
        ..DatasetConfig::default()
    }
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

fn read_all(path: &Path) -> Vec<DatasetRecord> {
    read_dataset(path)
        .unwrap()
        .collect::<lmstar::Result<_>>()
        .unwrap()
}

#[test]
fn generation_is_deterministic_and_parallel_safe() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_config(17);
    let ma = generate_dataset(&cfg, a.path(), 1).unwrap();
    let mb = generate_dataset(&cfg, b.path(), 0).unwrap();
    assert_eq!(ma, mb);
    for f in ["train.lmd1", "test.lmd1", "manifest.json"] {
        assert_eq!(digest(&a.path().join(f)), digest(&b.path().join(f)), "{f}");
    }
    assert!(!a.path().join(".all.lmd1.tmp").exists());

    let c = tempfile::tempdir().unwrap();
    generate_dataset(&small_config(18), c.path(), 3).unwrap();
    assert_ne!(
        digest(&a.path().join("train.lmd1")),
        digest(&c.path().join("train.lmd1"))
    );
}

#[test]
fn records_are_legal_and_manifest_adds_up() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(5);
    let m = generate_dataset(&cfg, dir.path(), 0).unwrap();
    let train = read_all(&dir.path().join("train.lmd1"));
    let test = read_all(&dir.path().join("test.lmd1"));
    assert_eq!(train.len() as u64, m.train_records);
    assert_eq!(test.len() as u64, m.test_records);
    assert_eq!(m.train_records + m.test_records, m.total_records);
    assert_eq!(
        m.train_records,
        (m.total_records as f64 * cfg.train_fraction).floor() as u64
    );
    assert!(m.total_records > 0);
    let per_count: u64 = m.per_agent_count.values().map(|s| s.records).sum();
    assert_eq!(per_count, m.total_records);
    assert_eq!(m.maps.len(), 4);
    for s in m.per_agent_count.values() {
        assert!(s.solved <= s.instances);
    }

    for r in train.iter().chain(&test) {
        r.observation.check_invariants().unwrap();
        // Rebuild the map from the obstacle channel and apply the label.
        let own: Vec<usize> = (0..SIDE * SIDE)
            .filter(|&i| r.observation.channel(1)[i] == 1.0)
            .collect();
        assert_eq!(own.len(), 1);
        let cell = Cell::new((own[0] / SIDE) as u32, (own[0] % SIDE) as u32);
        let mut map = GridMap::empty(cfg.map_width, cfg.map_height);
        for row in 0..cfg.map_height {
            for col in 0..cfg.map_width {
                let c = Cell::new(row, col);
                map.set_blocked(c, r.observation.get(0, c) == 1.0);
            }
        }
        let action = Action::from_index(r.label as usize).unwrap();
        assert!(
            map.step(cell, action).is_some(),
            "label {action:?} leaves {cell} illegally"
        );
    }
}

#[test]
fn records_per_instance_match_sampling_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(9);
    let m = generate_dataset(&cfg, dir.path(), 0).unwrap();
    let mut all = read_all(&dir.path().join("train.lmd1"));
    all.extend(read_all(&dir.path().join("test.lmd1")));
    for map in &m.maps {
        let grid = generate_random_map(
            cfg.map_width,
            cfg.map_height,
            map.obstacle_probability,
            map.map_seed as u64,
        )
        .unwrap();
        for inst in &map.instances {
            let ours: Vec<&DatasetRecord> = all
                .iter()
                .filter(|r| {
                    r.provenance.map_seed == map.map_seed
                        && r.provenance.instance_seed == inst.instance_seed
                })
                .collect();
            assert_eq!(ours.len() as u64, inst.records);
            if !inst.solved {
                assert_eq!(inst.records, 0);
                continue;
            }
            // Re-solve to learn the path length.
            let instance =
                generate_instance(&grid, inst.agents as usize, inst.instance_seed as u64).unwrap();
            let out = mstar_plan(
                &instance,
                DijkstraPolicy::new(&instance).unwrap(),
                &PlanConfig::with_epsilon(cfg.expert_epsilon),
            )
            .unwrap();
            let steps = out.solution.unwrap().horizon() - 1;
            let per = |rate: f64, n: usize| ((rate * n as f64).floor() as u64).clamp(1, n as u64);
            let vertices = per(cfg.vertex_rate, steps);
            let agents = per(cfg.agent_rate, inst.agents as usize);
            assert_eq!(inst.records, vertices * agents);
            assert!(
                inst.records as f64
                    <= steps as f64 * inst.agents as f64 * cfg.vertex_rate * cfg.agent_rate
                        + (steps + inst.agents as usize) as f64
            );
            let times: BTreeSet<u32> = ours.iter().map(|r| r.provenance.time).collect();
            assert_eq!(times.len() as u64, vertices);
            assert!(times.iter().all(|&t| (t as usize) < steps));
        }
    }
}

fn random_record(rng: &mut ChaCha8Rng) -> DatasetRecord {
    let mut obs = ObservationTensor::zeros(0, 0);
    for v in obs.data.iter_mut() {
        *v = if rng.gen_bool(0.1) {
            rng.gen_range(0.0..1.0)
        } else {
            0.0
        };
    }
    let provenance = Provenance {
        map_seed: rng.gen(),
        instance_seed: rng.gen(),
        agent: rng.gen_range(0..50),
        time: rng.gen_range(0..500),
    };
    obs.agent = provenance.agent as usize;
    obs.time = provenance.time;
    DatasetRecord {
        observation: obs,
        label: rng.gen_range(0..5),
        provenance,
    }
}

#[test]
fn thousand_records_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.lmd1");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<DatasetRecord> = (0..1000).map(|_| random_record(&mut rng)).collect();
    write_dataset(&path, &records).unwrap();
    assert_eq!(
        std::fs::metadata(&path).unwrap().len(),
        16 + 1000 * RECORD_LEN as u64
    );
    let back = read_all(&path);
    assert_eq!(back.len(), 1000);
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a, b);
    }
}

#[test]
fn flipped_byte_reports_record_index() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.lmd1");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let records: Vec<DatasetRecord> = (0..100).map(|_| random_record(&mut rng)).collect();
    write_dataset(&path, &records).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[16 + 7 * RECORD_LEN + 500] ^= 0x40;
    let results: Vec<_> = DatasetReader::new(bytes.as_slice()).unwrap().collect();
    assert_eq!(results.len(), 100);
    for (i, r) in results.iter().enumerate() {
        match (i, r) {
            (7, Err(Error::Checksum { index })) => assert_eq!(*index, 7),
            (7, other) => panic!("{other:?}"),
            (_, r) => assert!(r.is_ok()),
        }
    }
}

#[test]
fn header_handling() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.lmd1");
    write_dataset(&path, &[]).unwrap();
    assert_eq!(read_dataset(&path).unwrap().count(), 0);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[3] = b'X';
    assert!(matches!(
        DatasetReader::new(bytes.as_slice()),
        Err(Error::DatasetFormat(_))
    ));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4] = 2;
    assert!(
        matches!(DatasetReader::new(bytes.as_slice()), Err(Error::DatasetFormat(m)) if m.contains("version"))
    );
    // Header claims a record that is not there.
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = 1;
    let r: Vec<_> = DatasetReader::new(bytes.as_slice()).unwrap().collect();
    assert!(matches!(r.as_slice(), [Err(Error::DatasetFormat(_))]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn any_record_round_trips(seed in any::<u64>()) {
        let r = random_record(&mut ChaCha8Rng::seed_from_u64(seed));
        let back = DatasetRecord::from_bytes(&r.to_bytes(), 0).unwrap();
        prop_assert_eq!(back, r);
    }
}
