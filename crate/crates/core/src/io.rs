//! Map, dataset and result files.
//!
//! Inputs are plain text: a centroid CSV (`id,x,y`), an adjacency edge list
//! (`id_a id_b` per line, or 0-based row indices under an `i j` header) and
//! a dataset CSV (`id,y,<covariates...>`). Areas are put in a canonical
//! order at load: numeric when every id is an integer, lexicographic
//! otherwise.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SpockError};
use crate::fit::{posterior_summary, Family, ModelFit, ParamSummary};
use crate::geometry::{CentroidSet, DesignMatrix};
use crate::graph::NeighborhoodGraph;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Areas with centroids and adjacency, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct AreaMap {
    pub centroids: CentroidSet<f64>,
    pub adjacency: NeighborhoodGraph,
}

impl AreaMap {
    pub fn new(centroids: CentroidSet<f64>, adjacency: NeighborhoodGraph, allow_islands: bool) -> Result<Self> {
        if centroids.len() != adjacency.n() {
            return Err(SpockError::DimensionMismatch(format!(
                "{} centroids but adjacency over {} areas",
                centroids.len(),
                adjacency.n()
            )));
        }
        if !allow_islands {
            if let Some(i) = (0..adjacency.n()).find(|&i| adjacency.degree(i) == 0) {
                return Err(SpockError::IsolatedArea(centroids.area_ids()[i].clone()));
            }
        }
        Ok(Self { centroids, adjacency })
    }

    /// `rows × cols` rook lattice with the given spacing, centered on the
    /// origin; area `r·cols + c` sits at `((c − c̄)·spacing, (r − r̄)·spacing)`.
    pub fn lattice(rows: usize, cols: usize, spacing: f64) -> Self {
        let (rc, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        let pts: Vec<(f64, f64)> = (0..rows * cols)
            .map(|i| (((i % cols) as f64 - cc) * spacing, ((i / cols) as f64 - rc) * spacing))
            .collect();
        Self {
            centroids: CentroidSet::from_points(&pts).expect("distinct lattice points"),
            adjacency: NeighborhoodGraph::lattice(rows, cols),
        }
    }

    pub fn n(&self) -> usize {
        self.centroids.len()
    }

    pub fn ids(&self) -> &[String] {
        self.centroids.area_ids()
    }
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> SpockError {
    SpockError::parse(&file.display().to_string(), line, msg)
}

/// Canonical ordering permutation of `ids`.
fn canonical_order(ids: &[String]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    let numeric: Option<Vec<i64>> = ids.iter().map(|s| s.parse::<i64>().ok()).collect();
    match numeric {
        Some(v) => idx.sort_by_key(|&i| v[i]),
        None => idx.sort_by(|&a, &b| ids[a].cmp(&ids[b])),
    }
    idx
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        SpockError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn csv_rows(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<String>)>)> {
    let text = read(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

fn parse_f64(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| parse_err(path, line, format!("{what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{what} is not finite")));
    }
    Ok(v)
}

/// Loads a map. Adjacency lines are `a b` (whitespace or comma separated,
/// `#` comments allowed). A first line `i j` selects 0-based indices into
/// the centroid file's row order; otherwise entries are area ids (an
/// optional `id_a id_b` header is skipped).
pub fn load_map(centroid_path: &Path, adjacency_path: &Path, allow_islands: bool) -> Result<AreaMap> {
    let (header, rows) = csv_rows(centroid_path)?;
    if header != ["id", "x", "y"] {
        return Err(parse_err(centroid_path, 1, format!("expected header id,x,y, found {}", header.join(","))));
    }
    let mut file_ids = Vec::with_capacity(rows.len());
    let mut pts = Vec::with_capacity(rows.len());
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, r) in &rows {
        if r.len() != 3 {
            return Err(parse_err(centroid_path, *line, format!("expected 3 fields, found {}", r.len())));
        }
        let p = (parse_f64(centroid_path, *line, &r[1], "x")?, parse_f64(centroid_path, *line, &r[2], "y")?);
        if let Some(&k) = seen.get(&r[0]) {
            if pts[k] == p {
                return Err(SpockError::DuplicateCentroid(r[0].clone(), r[0].clone()));
            }
            return Err(parse_err(centroid_path, *line, format!("area id {:?} appears twice", r[0])));
        }
        seen.insert(r[0].clone(), pts.len());
        file_ids.push(r[0].clone());
        pts.push(p);
    }
    if file_ids.is_empty() {
        return Err(parse_err(centroid_path, 1, "no areas"));
    }
    let order = canonical_order(&file_ids);
    let mut rank = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let ids: Vec<String> = order.iter().map(|&i| file_ids[i].clone()).collect();
    let coords = DMatrix::from_fn(ids.len(), 2, |r, c| if c == 0 { pts[order[r]].0 } else { pts[order[r]].1 });
    let centroids = CentroidSet::new(coords, ids.clone())?;
    let by_id: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let text = read(adjacency_path)?;
    let mut by_index = None;
    let mut pairs = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
        if toks.len() != 2 {
            return Err(parse_err(adjacency_path, line, format!("expected two entries, found {}", toks.len())));
        }
        if by_index.is_none() {
            match (toks[0], toks[1]) {
                ("i", "j") => {
                    by_index = Some(true);
                    continue;
                }
                ("id_a", "id_b") => {
                    by_index = Some(false);
                    continue;
                }
                _ => by_index = Some(false),
            }
        }
        let resolve = |t: &str| -> Result<usize> {
            if by_index == Some(true) {
                let i: usize =
                    t.parse().map_err(|_| parse_err(adjacency_path, line, format!("{t:?} is not an index")))?;
                if i >= rank.len() {
                    return Err(parse_err(adjacency_path, line, format!("index {i} out of range 0..{}", rank.len())));
                }
                Ok(rank[i])
            } else {
                by_id.get(t).copied().ok_or_else(|| SpockError::UnknownAreaId(t.to_string()))
            }
        };
        let (a, b) = (resolve(toks[0])?, resolve(toks[1])?);
        if a == b {
            return Err(parse_err(adjacency_path, line, format!("self-loop on {}", toks[0])));
        }
        pairs.push((a, b));
    }
    let adjacency = NeighborhoodGraph::from_edges(ids.len(), pairs)?;
    AreaMap::new(centroids, adjacency, allow_islands)
}

/// Writes a map in the formats [`load_map`] reads (adjacency by id).
pub fn write_map(map: &AreaMap, centroid_path: &Path, adjacency_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(centroid_path)?;
    w.write_record(["id", "x", "y"])?;
    for i in 0..map.n() {
        let (x, y) = map.centroids.point(i);
        w.write_record([map.ids()[i].clone(), x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    let mut text = String::from("id_a id_b\n");
    for &(a, b) in map.adjacency.edges() {
        text.push_str(&format!("{} {}\n", map.ids()[a], map.ids()[b]));
    }
    fs::write(adjacency_path, text)?;
    Ok(())
}

/// Column name reserved for an additive linear-predictor offset.
pub const OFFSET_COLUMN: &str = "offset";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub y: Vec<f64>,
    pub x: DesignMatrix<f64>,
    pub offset: Option<Vec<f64>>,
    pub family: Family,
}

/// Loads `id,y,<covariates...>` aligned to `map`'s area order. A column
/// named `offset` is kept apart from the covariates. An intercept column is
/// prepended unless `intercept` is false.
pub fn load_dataset(path: &Path, map: &AreaMap, family: Family, intercept: bool) -> Result<Dataset> {
    let (header, rows) = csv_rows(path)?;
    if header.len() < 2 || header[0] != "id" || header[1] != "y" {
        return Err(parse_err(path, 1, format!("expected header id,y,..., found {}", header.join(","))));
    }
    let offset_col = header.iter().position(|h| h == OFFSET_COLUMN);
    let cov_cols: Vec<usize> = (2..header.len()).filter(|&c| Some(c) != offset_col).collect();
    let names: Vec<String> = cov_cols.iter().map(|&c| header[c].clone()).collect();
    let n = map.n();
    if rows.len() != n {
        return Err(SpockError::LengthMismatch(format!("{} data rows for {n} areas", rows.len())));
    }
    let index: HashMap<&str, usize> = map.ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut y = vec![f64::NAN; n];
    let mut off = vec![0.0; n];
    let mut cov = DMatrix::zeros(n, cov_cols.len());
    let mut filled = vec![false; n];
    for (line, r) in &rows {
        if r.len() != header.len() {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", header.len(), r.len())));
        }
        let i = *index.get(r[0].as_str()).ok_or_else(|| SpockError::UnknownAreaId(r[0].clone()))?;
        if std::mem::replace(&mut filled[i], true) {
            return Err(parse_err(path, *line, format!("area {:?} appears twice", r[0])));
        }
        let v = parse_f64(path, *line, &r[1], "y")?;
        if family == Family::Poisson {
            if v < 0.0 {
                return Err(SpockError::NegativeCount { id: r[0].clone(), value: v });
            }
            if v.fract() != 0.0 {
                return Err(parse_err(path, *line, format!("count {v} is not an integer")));
            }
        }
        y[i] = v;
        if let Some(c) = offset_col {
            off[i] = parse_f64(path, *line, &r[c], OFFSET_COLUMN)?;
        }
        for (k, &c) in cov_cols.iter().enumerate() {
            cov[(i, k)] = parse_f64(path, *line, &r[c], &header[c])?;
        }
    }
    let x = if intercept {
        DesignMatrix::with_intercept(&cov, &names)?
    } else {
        DesignMatrix::with_names(cov, false, names)?
    };
    Ok(Dataset { ids: map.ids().to_vec(), y, x, offset: offset_col.map(|_| off), family })
}

/// Writes a dataset in the format [`load_dataset`] reads (intercept column
/// omitted).
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let skip = usize::from(ds.x.has_intercept());
    let mut header = vec!["id".to_string(), "y".to_string()];
    header.extend(ds.x.names()[skip..].iter().cloned());
    if ds.offset.is_some() {
        header.push(OFFSET_COLUMN.into());
    }
    w.write_record(&header)?;
    for i in 0..ds.y.len() {
        let mut rec = vec![ds.ids[i].clone(), ds.y[i].to_string()];
        rec.extend((skip..ds.x.ncols()).map(|c| ds.x.values()[(i, c)].to_string()));
        if let Some(off) = &ds.offset {
            rec.push(off[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Hex SHA-256 of the JSON serialization of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let digest = Sha256::digest(fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Contents of `fit.json`. Wall time is written separately so this file is
/// reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub n_draws: usize,
    pub summaries: Vec<ParamSummary>,
    pub acceptance: Option<crate::fit::AcceptanceStats>,
}

/// Writes `fit.json`, `timing.json` and, when `draws` is set, `draws.csv`
/// into `dir`. Refuses fits with too few draws to summarize.
pub fn write_fit(fit: &ModelFit, config: &serde_json::Value, dir: &Path, draws: bool) -> Result<FitRecord> {
    let summaries = posterior_summary(fit)?;
    fs::create_dir_all(dir)?;
    let record = FitRecord {
        version: VERSION.to_string(),
        seed: fit.spec.mcmc.seed,
        config_hash: config_hash(config),
        config: config.clone(),
        n_draws: fit.n_draws(),
        summaries,
        acceptance: fit.acceptance.clone(),
    };
    fs::write(dir.join("fit.json"), serde_json::to_string_pretty(&record)?)?;
    let timing = serde_json::json!({ "method": fit.method.name(), "wall_time_seconds": fit.wall_time });
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    if draws {
        let mut w = csv::Writer::from_path(dir.join("draws.csv"))?;
        let mut header: Vec<String> = fit.beta_names.clone();
        let (has_te, has_tt) = (!fit.tau_e_draws.is_empty(), !fit.tau_theta_draws.is_empty());
        if has_te {
            header.push("tau_e".into());
        }
        if has_tt {
            header.push("tau_theta".into());
        }
        header.extend((0..fit.theta_draws.ncols).map(|i| format!("theta[{i}]")));
        w.write_record(&header)?;
        for r in 0..fit.n_draws() {
            let mut rec: Vec<String> = fit.beta_draws.row(r).iter().map(f64::to_string).collect();
            if has_te {
                rec.push(fit.tau_e_draws[r].to_string());
            }
            if has_tt {
                rec.push(fit.tau_theta_draws[r].to_string());
            }
            if fit.theta_draws.ncols > 0 {
                rec.extend(fit.theta_draws.row(r).iter().map(f64::to_string));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(record)
}

pub fn read_fit_record(path: &Path) -> Result<FitRecord> {
    Ok(serde_json::from_str(&read(path)?)?)
}

/// One `summary.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub parameter: String,
    pub statistic: String,
    pub value: f64,
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<SummaryRow>, _> = rdr.deserialize().collect();
    Ok(rows?)
}

/// Stable string map for JSON echoes of file inputs.
pub fn input_manifest(files: &[(&str, &Path)]) -> Result<BTreeMap<String, String>> {
    files.iter().map(|(k, p)| Ok((k.to_string(), file_hash(p)?))).collect()
}
