//! File formats and dataset bundles.
//!
//! - Edge list: one `u v [w]` per line, whitespace separated, `#` comments, 0-based ids.
//! - Coordinates: CSV `node_id,x,y[,z...]` with a header row.
//! - Signal: CSV with one row per node and one column per time step, optional `t0,t1,...` header.
//! - Mask: one line of space-separated `0`/`1` flags.
//! - Manifest: TOML naming the graph source, signal file and units.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{knn_graph, Graph, GraphError, KnnWeights};
use crate::signal::{SamplingMask, SignalError, SignalSeries};

/// Dimensions of the hourly wind-speed dataset: stations and time points.
pub const WIND_DATASET_NODES: usize = 197;
pub const WIND_DATASET_STEPS: usize = 95;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{file}:{line}:{column}: non-finite value")]
    NonFinite {
        file: String,
        line: usize,
        column: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

fn parse_err(file: &str, line: usize, column: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        file: file.to_owned(),
        line,
        column,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), DatasetError> {
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Parses an edge list. With `num_nodes = None` the node count is `max id + 1`.
pub fn parse_edge_list(
    text: &str,
    num_nodes: Option<usize>,
    file: &str,
) -> Result<Graph, DatasetError> {
    let mut edges = Vec::new();
    let mut max_id = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<(usize, &str)> = line
            .split_whitespace()
            .map(|f| (f.as_ptr() as usize - raw.as_ptr() as usize + 1, f))
            .collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(
                file,
                idx + 1,
                1,
                format!("expected `u v [w]`, got {} fields", fields.len()),
            ));
        }
        let id = |(col, f): (usize, &str)| {
            f.parse::<usize>()
                .map_err(|_| parse_err(file, idx + 1, col, format!("invalid node id `{f}`")))
        };
        let u = id(fields[0])?;
        let v = id(fields[1])?;
        let w = match fields.get(2) {
            Some(&(col, f)) => {
                let w: f64 = f
                    .parse()
                    .map_err(|_| parse_err(file, idx + 1, col, format!("invalid weight `{f}`")))?;
                if !w.is_finite() {
                    return Err(DatasetError::NonFinite {
                        file: file.to_owned(),
                        line: idx + 1,
                        column: col,
                    });
                }
                w
            }
            None => 1.0,
        };
        max_id = max_id.max(u).max(v);
        edges.push((u, v, w));
    }
    let n = num_nodes.unwrap_or(if edges.is_empty() { 0 } else { max_id + 1 });
    Ok(Graph::from_weighted_edges(n, edges)?)
}

pub fn write_edge_list(g: &Graph) -> String {
    let mut out = format!("# {} nodes, {} edges\n", g.num_nodes(), g.num_edges());
    for (u, v, w) in g.edges() {
        if w == 1.0 {
            out.push_str(&format!("{u} {v}\n"));
        } else {
            out.push_str(&format!("{u} {v} {w}\n"));
        }
    }
    out
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_record(
    rec: Result<csv::StringRecord, csv::Error>,
    file: &str,
) -> Result<(usize, csv::StringRecord), DatasetError> {
    match rec {
        Ok(r) => {
            let line = r.position().map_or(0, |p| p.line() as usize);
            Ok((line, r))
        }
        Err(e) => {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Err(parse_err(file, line, 1, e.to_string()))
        }
    }
}

fn parse_finite(field: &str, file: &str, line: usize, column: usize) -> Result<f64, DatasetError> {
    let x: f64 = field
        .parse()
        .map_err(|_| parse_err(file, line, column, format!("invalid number `{field}`")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(DatasetError::NonFinite {
            file: file.to_owned(),
            line,
            column,
        })
    }
}

/// Parses `node_id,x,y[,...]` rows (header required). Rows may come in any
/// order but ids must cover `0..N` exactly once.
pub fn parse_coords_csv(text: &str, file: &str) -> Result<Vec<Vec<f64>>, DatasetError> {
    let max_rows = text.lines().count().saturating_sub(1);
    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    let mut dim = None;
    for (i, rec) in csv_reader(text).records().enumerate() {
        let (line, rec) = csv_record(rec, file)?;
        if i == 0 {
            continue;
        }
        if rec.len() < 2 {
            return Err(parse_err(
                file,
                line,
                1,
                "expected node_id and at least one coordinate",
            ));
        }
        let id: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(file, line, 1, format!("invalid node id `{}`", &rec[0])))?;
        let coords = rec
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, f)| parse_finite(f, file, line, c + 1))
            .collect::<Result<Vec<_>, _>>()?;
        if *dim.get_or_insert(coords.len()) != coords.len() {
            return Err(parse_err(
                file,
                line,
                1,
                "inconsistent coordinate dimension",
            ));
        }
        if id >= max_rows {
            return Err(parse_err(
                file,
                line,
                1,
                format!("node id {id} exceeds the {max_rows} data rows"),
            ));
        }
        if rows.len() <= id {
            rows.resize(id + 1, None);
        }
        if rows[id].replace(coords).is_some() {
            return Err(parse_err(file, line, 1, format!("duplicate node id {id}")));
        }
    }
    rows.into_iter()
        .enumerate()
        .map(|(id, r)| {
            r.ok_or_else(|| {
                DatasetError::Dimension(format!("{file}: node id {id} has no coordinates"))
            })
        })
        .collect()
}

pub fn write_coords_csv(points: &[Vec<f64>]) -> String {
    let dim = points.first().map_or(2, Vec::len);
    let axes = ["x", "y", "z"];
    let mut header = vec!["node_id".to_owned()];
    header.extend((0..dim).map(|d| {
        axes.get(d)
            .map_or_else(|| format!("x{d}"), |a| (*a).to_owned())
    }));
    let mut out = header.join(",") + "\n";
    for (i, p) in points.iter().enumerate() {
        let fields: Vec<String> = std::iter::once(i.to_string())
            .chain(p.iter().map(|x| x.to_string()))
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Parses a signal CSV: one row per node, one column per time step.
pub fn parse_signal_csv(text: &str, units: &str, file: &str) -> Result<SignalSeries, DatasetError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, rec) in csv_reader(text).records().enumerate() {
        let (line, rec) = csv_record(rec, file)?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && rec.get(0).is_some_and(|f| f.starts_with('t')) {
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, f)| parse_finite(f, file, line, c + 1))
            .collect::<Result<Vec<_>, _>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(parse_err(
                file,
                line,
                1,
                format!(
                    "row has {} columns, expected {}",
                    row.len(),
                    width.unwrap_or(0)
                ),
            ));
        }
        rows.push(row);
    }
    Ok(SignalSeries::from_rows(&rows, units)?)
}

/// Writes a signal CSV with a `t0,t1,...` header. Values use shortest
/// round-trip formatting, so parsing the output restores them exactly.
pub fn write_signal_csv(series: &SignalSeries) -> String {
    let header: Vec<String> = (0..series.len()).map(|t| format!("t{t}")).collect();
    let mut out = header.join(",") + "\n";
    for i in 0..series.num_nodes() {
        let row: Vec<String> = (0..series.len())
            .map(|t| format!("{:?}", series.get(i, t)))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_mask(text: &str, file: &str) -> Result<SamplingMask, DatasetError> {
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| parse_err(file, 1, 1, "empty mask file"))?;
    let flags = line
        .split_whitespace()
        .enumerate()
        .map(|(i, f)| match f {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(parse_err(
                file,
                1,
                i + 1,
                format!("expected 0 or 1, got `{other}`"),
            )),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SamplingMask::new(flags)?)
}

pub fn write_mask(mask: &SamplingMask) -> String {
    let flags: Vec<&str> = mask
        .flags()
        .iter()
        .map(|&o| if o { "1" } else { "0" })
        .collect();
    flags.join(" ") + "\n"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    #[default]
    Unit,
    Gaussian,
}

/// Where the graph comes from: an explicit edge list or coordinates plus k-NN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub weights: WeightScheme,
}

fn default_k() -> usize {
    5
}

/// Contents of a dataset manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub signal: PathBuf,
    #[serde(default)]
    pub units: String,
    /// Require the wind-speed dataset's 197 x 95 shape.
    #[serde(default)]
    pub wind_dimensions: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub graph: GraphSource,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self, DatasetError> {
        toml::from_str(text).map_err(|e| DatasetError::Manifest {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    fn expected_dims(&self) -> (Option<usize>, Option<usize>) {
        if self.wind_dimensions {
            (Some(WIND_DATASET_NODES), Some(WIND_DATASET_STEPS))
        } else {
            (self.nodes, self.steps)
        }
    }
}

/// A loaded dataset.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub graph: Graph,
    pub series: SignalSeries,
    pub units: String,
    pub manifest: Manifest,
}

/// Loads and validates the dataset named by a manifest. Relative paths are
/// resolved against the manifest's directory.
pub fn load_bundle(manifest_path: &Path) -> Result<Bundle, DatasetError> {
    let manifest = Manifest::parse(&read(manifest_path)?, manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_owned()
        } else {
            base.join(p)
        }
    };

    let signal_path = resolve(&manifest.signal);
    let series = parse_signal_csv(
        &read(&signal_path)?,
        &manifest.units,
        &signal_path.display().to_string(),
    )?;
    let n = series.num_nodes();

    let (want_n, want_t) = manifest.expected_dims();
    if let Some(want) = want_n.filter(|&w| w != n) {
        return Err(DatasetError::Dimension(format!(
            "signal has {n} nodes, expected {want}"
        )));
    }
    if let Some(want) = want_t.filter(|&w| w != series.len()) {
        return Err(DatasetError::Dimension(format!(
            "signal has {} time steps, expected {want}",
            series.len()
        )));
    }

    let graph = match (&manifest.graph.edges, &manifest.graph.coords) {
        (Some(edges), None) => {
            let p = resolve(edges);
            parse_edge_list(&read(&p)?, Some(n), &p.display().to_string())?
        }
        (None, Some(coords)) => {
            let p = resolve(coords);
            let points = parse_coords_csv(&read(&p)?, &p.display().to_string())?;
            if points.len() != n {
                return Err(DatasetError::Dimension(format!(
                    "{} coordinate rows for {n} signal rows",
                    points.len()
                )));
            }
            let weights = match manifest.graph.weights {
                WeightScheme::Unit => KnnWeights::Unit,
                WeightScheme::Gaussian => KnnWeights::Gaussian,
            };
            knn_graph(&points, manifest.graph.k, weights)?
        }
        _ => {
            return Err(DatasetError::Manifest {
                path: manifest_path.to_owned(),
                message: "graph needs exactly one of `edges` or `coords`".into(),
            })
        }
    };
    if graph.num_nodes() != n {
        return Err(DatasetError::Dimension(format!(
            "graph has {} nodes, signal has {n}",
            graph.num_nodes()
        )));
    }
    let units = manifest.units.clone();
    Ok(Bundle {
        graph,
        series,
        units,
        manifest,
    })
}

/// Writes `edges.txt`, `signal.csv`, optional `coords.csv` and `manifest.toml`
/// into `dir`, returning the manifest path.
pub fn save_bundle(
    dir: &Path,
    graph: &Graph,
    series: &SignalSeries,
    coords: Option<&[Vec<f64>]>,
) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_owned(),
        source,
    })?;
    write(&dir.join("edges.txt"), &write_edge_list(graph))?;
    write(&dir.join("signal.csv"), &write_signal_csv(series))?;
    if let Some(points) = coords {
        write(&dir.join("coords.csv"), &write_coords_csv(points))?;
    }
    let manifest = Manifest {
        signal: "signal.csv".into(),
        units: series.units().to_owned(),
        wind_dimensions: false,
        nodes: Some(series.num_nodes()),
        steps: Some(series.len()),
        graph: GraphSource {
            edges: Some("edges.txt".into()),
            coords: None,
            k: default_k(),
            weights: WeightScheme::Unit,
        },
    };
    let path = dir.join("manifest.toml");
    write(&path, &manifest.to_toml())?;
    Ok(path)
}
