//! Self-describing text datasets: a key=value header followed by CSV blocks
//! for sensors, observations and collocation sets. Floats are printed with
//! 17 significant digits so round trips are value-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::physics::{CollocationSet, Problem};

use super::SolveError;

/// One labelled space-time sample, clean and with the applied noise draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub x: f64,
    pub t: f64,
    pub clean: f64,
    pub observed: f64,
}

/// Everything a training run consumes: the input-function trace, labelled
/// observations with their split, collocation sets and noise metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub problem: Problem,
    pub sensor_locations: Vec<f64>,
    pub kappa: Vec<f64>,
    pub obs: Vec<Observation>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub colloc: CollocationSet,
    pub noise_ratio: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn train_batch(&self) -> (Vec<(f64, f64)>, Vec<f64>) {
        self.batch(&self.train_idx)
    }

    pub fn test_batch(&self) -> (Vec<(f64, f64)>, Vec<f64>) {
        self.batch(&self.test_idx)
    }

    fn batch(&self, idx: &[usize]) -> (Vec<(f64, f64)>, Vec<f64>) {
        let pts = idx.iter().map(|&i| (self.obs[i].x, self.obs[i].t)).collect();
        let labels = idx.iter().map(|&i| self.obs[i].observed).collect();
        (pts, labels)
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), SolveError> {
    let mut out = String::new();
    out.push_str("# morephy dataset v1\n");
    let _ = writeln!(out, "problem={}", ds.problem.name());
    let _ = writeln!(out, "pde_param={}", fmt_f(ds.problem.pde_param()));
    let _ = writeln!(out, "noise_ratio={}", fmt_f(ds.noise_ratio));
    let _ = writeln!(out, "seed={}", ds.seed);
    let _ = writeln!(out, "history_divisions={}", ds.colloc.history_divisions);
    out.push_str("[sensors]\nx\n");
    for s in &ds.sensor_locations {
        let _ = writeln!(out, "{}", fmt_f(*s));
    }
    out.push_str("[kappa]\nvalue\n");
    for k in &ds.kappa {
        let _ = writeln!(out, "{}", fmt_f(*k));
    }
    out.push_str("[observations]\nx,t,clean,observed\n");
    for o in &ds.obs {
        let _ = writeln!(out, "{},{},{},{}", fmt_f(o.x), fmt_f(o.t), fmt_f(o.clean), fmt_f(o.observed));
    }
    out.push_str("[train_indices]\nindex\n");
    for i in &ds.train_idx {
        let _ = writeln!(out, "{i}");
    }
    out.push_str("[collocation_interior]\nx,t\n");
    for (x, t) in &ds.colloc.interior {
        let _ = writeln!(out, "{},{}", fmt_f(*x), fmt_f(*t));
    }
    out.push_str("[collocation_boundary]\nx,t\n");
    for (x, t) in &ds.colloc.boundary {
        let _ = writeln!(out, "{},{}", fmt_f(*x), fmt_f(*t));
    }
    out.push_str("[collocation_initial]\nx\n");
    for x in &ds.colloc.initial {
        let _ = writeln!(out, "{}", fmt_f(*x));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, SolveError> {
    let text = fs::read_to_string(path)?;
    let mut header = std::collections::HashMap::new();
    let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push((name.to_string(), Vec::new()));
        } else if let Some((k, v)) = line.split_once('=').filter(|_| sections.is_empty()) {
            header.insert(k.to_string(), v.to_string());
        } else if let Some(last) = sections.last_mut() {
            last.1.push(line);
        } else {
            return Err(SolveError::Parse(format!("unexpected line outside sections: {line}")));
        }
    }

    let get = |k: &str| {
        header
            .get(k)
            .cloned()
            .ok_or_else(|| SolveError::Parse(format!("missing header key `{k}`")))
    };
    let parse_f = |s: &str| {
        s.parse::<f64>().map_err(|e| SolveError::Parse(format!("bad float `{s}`: {e}")))
    };
    let pde_param = parse_f(&get("pde_param")?)?;
    let problem = match get("problem")?.as_str() {
        "burgers" => Problem::Burgers { nu: pde_param },
        "tfmdwe" => Problem::Tfmdwe { alpha: pde_param },
        other => return Err(SolveError::Parse(format!("unknown problem `{other}`"))),
    };
    let noise_ratio = parse_f(&get("noise_ratio")?)?;
    let seed = get("seed")?
        .parse::<u64>()
        .map_err(|e| SolveError::Parse(format!("bad seed: {e}")))?;
    let history_divisions = get("history_divisions")?
        .parse::<usize>()
        .map_err(|e| SolveError::Parse(format!("bad history_divisions: {e}")))?;

    let mut sensors = Vec::new();
    let mut kappa = Vec::new();
    let mut obs = Vec::new();
    let mut train_idx = Vec::new();
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    let mut initial = Vec::new();
    for (name, lines) in &sections {
        // First line of every section is its column header.
        let rows = &lines[1.min(lines.len())..];
        match name.as_str() {
            "sensors" => {
                for r in rows {
                    sensors.push(parse_f(r)?);
                }
            }
            "kappa" => {
                for r in rows {
                    kappa.push(parse_f(r)?);
                }
            }
            "observations" => {
                for r in rows {
                    let mut it = r.split(',');
                    let mut next = || {
                        it.next()
                            .ok_or_else(|| SolveError::Parse(format!("short observation row `{r}`")))
                    };
                    let (x, t, c, o) = (next()?, next()?, next()?, next()?);
                    obs.push(Observation {
                        x: parse_f(x)?,
                        t: parse_f(t)?,
                        clean: parse_f(c)?,
                        observed: parse_f(o)?,
                    });
                }
            }
            "train_indices" => {
                for r in rows {
                    train_idx.push(
                        r.parse::<usize>()
                            .map_err(|e| SolveError::Parse(format!("bad index `{r}`: {e}")))?,
                    );
                }
            }
            "collocation_interior" | "collocation_boundary" => {
                for r in rows {
                    let (x, t) = r
                        .split_once(',')
                        .ok_or_else(|| SolveError::Parse(format!("bad point row `{r}`")))?;
                    let p = (parse_f(x)?, parse_f(t)?);
                    if name == "collocation_interior" {
                        interior.push(p);
                    } else {
                        boundary.push(p);
                    }
                }
            }
            "collocation_initial" => {
                for r in rows {
                    initial.push(parse_f(r)?);
                }
            }
            other => return Err(SolveError::Parse(format!("unknown section `{other}`"))),
        }
    }

    let train_set: std::collections::HashSet<usize> = train_idx.iter().copied().collect();
    let test_idx: Vec<usize> = (0..obs.len()).filter(|i| !train_set.contains(i)).collect();
    Ok(Dataset {
        problem,
        sensor_locations: sensors,
        kappa,
        obs,
        train_idx,
        test_idx,
        colloc: CollocationSet { interior, boundary, initial, history_divisions },
        noise_ratio,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{build_dataset, tfmdwe_reference, CollocCounts};
    use super::*;
    use crate::opnet::SensorGrid;

    #[test]
    fn file_round_trip_is_value_exact() {
        let field = tfmdwe_reference(0.5, 24, 24).unwrap();
        let sensors = SensorGrid::uniform(16, 0.0, std::f64::consts::PI);
        let counts = CollocCounts { interior: 30, boundary: 6, initial: 6, history_divisions: 16 };
        let ds = build_dataset(&field, &sensors, 80, 123, 0.5, &counts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.txt");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);

        // Re-serialization is byte-identical.
        let path2 = dir.path().join("ds2.txt");
        write_dataset(&back, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn header_mentions_noise_and_parameter() {
        let field = tfmdwe_reference(0.5, 16, 16).unwrap();
        let sensors = SensorGrid::uniform(8, 0.0, std::f64::consts::PI);
        let counts = CollocCounts { interior: 10, boundary: 4, initial: 4, history_divisions: 8 };
        let ds = build_dataset(&field, &sensors, 40, 9, 0.5, &counts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.txt");
        write_dataset(&ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("noise_ratio=5.0000000000000000e-1"));
        assert!(text.contains("problem=tfmdwe"));
    }
}
