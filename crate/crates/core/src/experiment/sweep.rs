use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{run_experiment, ExperimentConfig, MetricsRow, SUMMARY_HEADER};
use crate::error::{Error, Result};

/// Sets `path` (dot separated; numeric segments index arrays) inside `root`,
/// creating missing object keys.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("'{part}' in '{path}' is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} out of range ({len}) in '{path}'")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("'{path}' descends into a scalar"))),
        };
    }
    Err(Error::Config("empty sweep path".into()))
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub points: Vec<BTreeMap<String, Value>>,
    pub rows: Vec<(usize, MetricsRow)>,
    pub summary_path: PathBuf,
}

/// Cartesian sweep over a grid `{ "dotted.path": [v1, v2, ...], ... }`. Each
/// point runs in `<output_dir>/sweep/pNNN`; `sweep_summary.csv` collects all rows.
pub fn sweep(
    cfg: &ExperimentConfig,
    base: &Path,
    grid: &BTreeMap<String, Vec<Value>>,
    threads: Option<usize>,
) -> Result<SweepOutput> {
    if grid.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Err(Error::Config("sweep grid needs at least one value per key".into()));
    }
    let keys: Vec<&String> = grid.keys().collect();
    let total: usize = grid.values().map(|v| v.len()).product();
    let root = serde_json::to_value(cfg)?;
    let out = super::output_dir(cfg, base);

    let mut points = Vec::with_capacity(total);
    let mut configs = Vec::with_capacity(total);
    for p in 0..total {
        let mut rem = p;
        let mut value = root.clone();
        let mut point = BTreeMap::new();
        for key in keys.iter().rev() {
            let vals = &grid[*key];
            let v = vals[rem % vals.len()].clone();
            rem /= vals.len();
            set_path(&mut value, key, v.clone())?;
            point.insert((*key).clone(), v);
        }
        let mut pc: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("sweep point {p}: {e}")))?;
        pc.output_dir = out.join("sweep").join(format!("p{p:03}"));
        pc.run_id = format!("{}_p{p:03}", cfg.run_id);
        points.push(point);
        configs.push(pc);
    }

    let mut rows = Vec::new();
    let mut first_err = None;
    for (p, pc) in configs.iter().enumerate() {
        match run_experiment(pc, base, threads) {
            Ok(o) => rows.extend(o.rows.into_iter().map(|r| (p, r))),
            Err(e) if first_err.is_none() => first_err = Some(e),
            Err(_) => {}
        }
    }

    let mut s = String::from("point");
    for k in &keys {
        let _ = write!(s, ",{k}");
    }
    let _ = writeln!(s, ",{SUMMARY_HEADER}");
    for (p, row) in &rows {
        let _ = write!(s, "{p}");
        for k in &keys {
            let _ = write!(s, ",{}", points[*p][*k]);
        }
        let _ = writeln!(s, ",{}", row.to_csv_line());
    }
    std::fs::create_dir_all(&out)?;
    let summary_path = out.join("sweep_summary.csv");
    std::fs::write(&summary_path, s)?;
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(SweepOutput {
        points,
        rows,
        summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn set_path_walks_objects_and_arrays() {
        let mut v = json!({"solver": {"gamma": 1.0}, "seeds": [1, 2]});
        set_path(&mut v, "solver.gamma", json!(0.5)).unwrap();
        set_path(&mut v, "seeds.1", json!(7)).unwrap();
        set_path(&mut v, "solver.tau", json!(2.0)).unwrap();
        assert_eq!(v, json!({"solver": {"gamma": 0.5, "tau": 2.0}, "seeds": [1, 7]}));
        assert!(set_path(&mut v, "solver.gamma.x", json!(1)).is_err());
        assert!(set_path(&mut v, "seeds.5", json!(1)).is_err());
    }
}
