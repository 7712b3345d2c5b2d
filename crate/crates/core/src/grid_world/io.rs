//! MovingAI `.map` / `.scen` files and the JSON instance format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentPath, Cell, GridMap, MapfInstance, Solution};
use crate::error::{Error, Result};

pub(super) fn parse_map(text: &str) -> Result<GridMap> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let err = |line: usize, msg: String| Error::MapParse { line, msg };

    let mut header = |key: &str| -> Result<Option<String>> {
        let (n, line) = lines
            .next()
            .ok_or_else(|| err(0, format!("missing `{key}` header")))?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.next().map(str::to_owned)),
            _ => Err(err(n, format!("expected `{key}`, found `{line}`"))),
        }
    };
    let ty = header("type")?;
    if ty.as_deref() != Some("octile") {
        return Err(err(1, format!("unsupported map type {ty:?}")));
    }
    let parse_dim = |v: Option<String>, line: usize, key: &str| -> Result<u32> {
        v.and_then(|s| s.parse().ok())
            .filter(|&d: &u32| d > 0)
            .ok_or_else(|| err(line, format!("invalid `{key}` value")))
    };
    let height = parse_dim(header("height")?, 2, "height")?;
    let width = parse_dim(header("width")?, 3, "width")?;
    header("map")?;

    let mut map = GridMap::empty(width, height);
    let mut row = 0u32;
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        if row >= height {
            return Err(err(n, format!("more than {height} rows")));
        }
        if line.chars().count() != width as usize {
            return Err(err(
                n,
                format!("row has {} cells, expected {width}", line.chars().count()),
            ));
        }
        for (col, ch) in line.chars().enumerate() {
            let blocked = match ch {
                '.' | 'G' => false,
                '@' | 'O' | 'T' => true,
                other => return Err(err(n, format!("unknown cell character `{other}`"))),
            };
            map.set_blocked(Cell::new(row, col as u32), blocked);
        }
        row += 1;
    }
    if row != height {
        return Err(err(0, format!("found {row} rows, expected {height}")));
    }
    Ok(map)
}

pub(super) fn write_map(map: &GridMap) -> String {
    let mut out = format!(
        "type octile\nheight {}\nwidth {}\nmap\n",
        map.height(),
        map.width()
    );
    for row in 0..map.height() {
        for col in 0..map.width() {
            out.push(if map.is_blocked(Cell::new(row, col)) {
                '@'
            } else {
                '.'
            });
        }
        out.push('\n');
    }
    out
}

/// One line of a version-1 `.scen` file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenEntry {
    pub bucket: u32,
    pub map_name: String,
    pub map_width: u32,
    pub map_height: u32,
    pub start: Cell,
    pub goal: Cell,
    pub optimal_length: f64,
}

pub fn parse_scen(text: &str) -> Result<Vec<ScenEntry>> {
    let mut lines = text.lines().enumerate();
    let err = |line: usize, msg: &str| Error::ScenParse {
        line,
        msg: msg.to_owned(),
    };
    match lines.next() {
        Some((_, l)) if l.split_whitespace().collect::<Vec<_>>() == ["version", "1"] => {}
        _ => return Err(err(1, "expected `version 1` header")),
    }
    let mut entries = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let f = if f.len() == 9 {
            f
        } else {
            line.split_whitespace().collect()
        };
        if f.len() != 9 {
            return Err(err(n, "expected 9 fields"));
        }
        let int = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| err(n, "invalid integer field"))
        };
        entries.push(ScenEntry {
            bucket: int(f[0])?,
            map_name: f[1].to_owned(),
            map_width: int(f[2])?,
            map_height: int(f[3])?,
            start: Cell::new(int(f[5])?, int(f[4])?),
            goal: Cell::new(int(f[7])?, int(f[6])?),
            optimal_length: f[8].parse().map_err(|_| err(n, "invalid optimal length"))?,
        });
    }
    Ok(entries)
}

pub fn write_scen(entries: &[ScenEntry]) -> String {
    let mut out = String::from("version 1\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.bucket,
            e.map_name,
            e.map_width,
            e.map_height,
            e.start.col,
            e.start.row,
            e.goal.col,
            e.goal.row,
            e.optimal_length
        );
    }
    out
}

impl MapfInstance {
    /// First `agents` entries of a scenario as an instance on `map`.
    pub fn from_scen(map: GridMap, entries: &[ScenEntry], agents: usize) -> Result<Self> {
        if entries.len() < agents {
            return Err(Error::InvalidArgument(format!(
                "scenario has {} entries, {agents} agents requested",
                entries.len()
            )));
        }
        let used = &entries[..agents];
        MapfInstance::new(
            map,
            used.iter().map(|e| e.start).collect(),
            used.iter().map(|e| e.goal).collect(),
        )
    }
}

/// JSON instance file. `map` holds either inline MovingAI map text (starting
/// with `type`) or a path to a `.map` file, relative to the instance file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub map: String,
    pub starts: Vec<Cell>,
    pub goals: Vec<Cell>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl InstanceFile {
    pub fn inline(instance: &MapfInstance, seed: Option<u64>) -> Self {
        InstanceFile {
            map: instance.map.to_map_string(),
            starts: instance.starts.clone(),
            goals: instance.goals.clone(),
            seed,
        }
    }

    pub fn to_instance(&self, base_dir: Option<&Path>) -> Result<MapfInstance> {
        let map = if self.map.trim_start().starts_with("type") {
            GridMap::parse(&self.map)?
        } else {
            let p = Path::new(&self.map);
            let p = match base_dir {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p.to_path_buf(),
            };
            GridMap::parse(&std::fs::read_to_string(p)?)?
        };
        MapfInstance::new(map, self.starts.clone(), self.goals.clone())
    }

    pub fn load(path: &Path) -> Result<(MapfInstance, Option<u64>)> {
        let file: InstanceFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let inst = file.to_instance(path.parent())?;
        Ok((inst, file.seed))
    }
}

/// JSON solution file: `{"cost": int, "paths": [[[r, c], ...], ...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub cost: u64,
    pub paths: Vec<Vec<Cell>>,
}

impl From<&Solution> for SolutionFile {
    fn from(s: &Solution) -> Self {
        SolutionFile {
            cost: s.sum_of_costs,
            paths: s.paths.iter().map(|p| p.vertices.clone()).collect(),
        }
    }
}

impl From<SolutionFile> for Solution {
    fn from(f: SolutionFile) -> Self {
        Solution {
            paths: f
                .paths
                .into_iter()
                .map(|vertices| AgentPath { vertices })
                .collect(),
            sum_of_costs: f.cost,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_world::generate_random_map;
    use proptest::prelude::*;

    #[test]
    fn parses_small_maps() {
        let m = GridMap::parse("type octile\nheight 2\nwidth 2\nmap\n..\n.@\n").unwrap();
        assert_eq!(m.blocked_cells().collect::<Vec<_>>(), vec![Cell::new(1, 1)]);
        let m = GridMap::parse("type octile\nheight 3\nwidth 3\nmap\n...\n...\n...\n").unwrap();
        assert_eq!(m.blocked_cells().count(), 0);
        let m = GridMap::parse("type octile\nheight 1\nwidth 5\nmap\n.GOT@\n").unwrap();
        assert_eq!(m.blocked_cells().count(), 3);
    }

    #[test]
    fn rejects_malformed_maps() {
        for text in [
            "type octile\nheight 2\nwidth 4\nmap\n...\n....\n",
            "type octile\nheight 3\nwidth 2\nmap\n..\n..\n",
            "type octile\nheight 1\nwidth 2\nmap\n.x\n",
            "type octile\nwidth 2\nheight 1\nmap\n..\n",
            "type hex\nheight 1\nwidth 2\nmap\n..\n",
            "type octile\nheight 1\nwidth 2\n..\n",
        ] {
            assert!(
                matches!(GridMap::parse(text), Err(Error::MapParse { .. })),
                "{text}"
            );
        }
    }

    #[test]
    fn scen_roundtrip_and_instance() {
        let text = "version 1\n0\tm.map\t4\t3\t0\t1\t3\t2\t4\n0\tm.map\t4\t3\t3\t0\t0\t0\t3\n";
        let entries = parse_scen(text).unwrap();
        assert_eq!(entries[0].start, Cell::new(1, 0));
        assert_eq!(entries[0].goal, Cell::new(2, 3));
        assert_eq!(parse_scen(&write_scen(&entries)).unwrap(), entries);
        let inst = MapfInstance::from_scen(GridMap::empty(4, 3), &entries, 2).unwrap();
        assert_eq!(inst.agent_count(), 2);
        assert!(MapfInstance::from_scen(GridMap::empty(4, 3), &entries, 3).is_err());
        assert!(parse_scen("version 2\n").is_err());
    }

    #[test]
    fn instance_json_inline() {
        let map = GridMap::empty(4, 4);
        let inst = MapfInstance::new(map, vec![Cell::new(0, 0)], vec![Cell::new(3, 3)]).unwrap();
        let json = serde_json::to_string(&InstanceFile::inline(&inst, Some(7))).unwrap();
        assert!(json.contains("\"starts\":[[0,0]]"));
        let back: InstanceFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.seed, Some(7));
        assert_eq!(back.to_instance(None).unwrap(), inst);
    }

    proptest! {
        #[test]
        fn map_text_roundtrip(w in 1u32..20, h in 1u32..20, p in 0.0f64..0.5, seed: u64) {
            let map = generate_random_map(w, h, p, seed).unwrap();
            let text = map.to_map_string();
            let back = GridMap::parse(&text).unwrap();
            prop_assert_eq!(&back, &map);
            prop_assert_eq!(back.to_map_string(), text);
        }
    }

    #[test]
    fn solution_json_shape() {
        let f = SolutionFile {
            cost: 3,
            paths: vec![
                vec![Cell::new(0, 0), Cell::new(0, 1)],
                vec![Cell::new(2, 1)],
            ],
        };
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(text, r#"{"cost":3,"paths":[[[0,0],[0,1]],[[2,1]]]}"#);
        let back: SolutionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(SolutionFile::from(&Solution::from(back)), f);
    }
}
