//! Canonical CSV formats.
//!
//! - events: `node_id,violation_start,violation_end` (integer seconds)
//! - nodes: `node_id,x_m,y_m`
//! - distance matrix: `n` rows of `n` meters, no header
//! - dataset: `t,officer_node,d_0..d_{n-1},chi_0..chi_{n-1},label`

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::labeling::{DatasetMeta, LabelledDataset, LabelledSample};
use crate::model::{EventSet, NodeId, ParkingEvent, Point, ProblemGraph};
use crate::optimizers::OptimizerTag;

pub const EVENTS_HEADER: [&str; 3] = ["node_id", "violation_start", "violation_end"];
pub const NODES_HEADER: [&str; 3] = ["node_id", "x_m", "y_m"];

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn reader<R: Read>(r: R, has_headers: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn check_header(path: &Path, rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header '{}', found '{}'",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    rec: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing column {name}")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} '{raw}'")))
}

/// Loads and validates events. Returns them sorted with the node count
/// (`max node_id + 1`). Every bad row is reported with its line number.
pub fn load_events_csv(path: &Path) -> Result<(Vec<ParkingEvent>, usize)> {
    let mut rdr = reader(open(path)?, true);
    check_header(path, &mut rdr, &EVENTS_HEADER)?;
    let mut events = Vec::new();
    let mut lines = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != 3 {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 columns, found {}", rec.len()),
            ));
        }
        let node: usize = field(path, line, &rec, 0, "node_id")?;
        let start: i64 = field(path, line, &rec, 1, "violation_start")?;
        let end: i64 = field(path, line, &rec, 2, "violation_end")?;
        if start >= end {
            return Err(parse_err(
                path,
                line,
                format!("violation_start {start} >= violation_end {end}"),
            ));
        }
        events.push(ParkingEvent {
            node: NodeId(node),
            start,
            end,
        });
        lines.push(line);
    }
    let n = events.iter().map(|e| e.node.index() + 1).max().unwrap_or(0);
    // overlap check with line numbers
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (events[i].node, events[i].start, events[i].end));
    for w in order.windows(2) {
        let (a, b) = (&events[w[0]], &events[w[1]]);
        if a.node == b.node && b.start < a.end {
            return Err(parse_err(
                path,
                lines[w[1]].max(lines[w[0]]),
                format!(
                    "event [{}, {}) at node {} overlaps [{}, {}) from line {}",
                    b.start,
                    b.end,
                    b.node,
                    a.start,
                    a.end,
                    lines[w[1]].min(lines[w[0]])
                ),
            ));
        }
    }
    let sorted = order.into_iter().map(|i| events[i]).collect();
    Ok((sorted, n))
}

pub fn save_events_csv(path: &Path, events: &EventSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(EVENTS_HEADER)?;
    for e in events.iter() {
        w.write_record(&[e.node.to_string(), e.start.to_string(), e.end.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Node positions; ids must be exactly `0..n` in order.
pub fn load_nodes_csv(path: &Path) -> Result<Vec<Point>> {
    let mut rdr = reader(open(path)?, true);
    check_header(path, &mut rdr, &NODES_HEADER)?;
    let mut pts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        let id: usize = field(path, line, &rec, 0, "node_id")?;
        if id != pts.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected node_id {}, found {id}", pts.len()),
            ));
        }
        let x: f64 = field(path, line, &rec, 1, "x_m")?;
        let y: f64 = field(path, line, &rec, 2, "y_m")?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(parse_err(path, line, "coordinates must be finite"));
        }
        pts.push(Point::new(x, y));
    }
    Ok(pts)
}

pub fn save_nodes_csv(path: &Path, positions: &[Point]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(NODES_HEADER)?;
    for (i, p) in positions.iter().enumerate() {
        w.write_record(&[i.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Square matrix of route meters. Shape, sign and the zero diagonal are checked.
pub fn load_distance_matrix(path: &Path) -> Result<(usize, Vec<f64>)> {
    let rdr = reader(open(path)?, false);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.into_records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("bad distance '{v}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(parse_err(
                path,
                line,
                format!("negative or non-finite distance {v}"),
            ));
        }
        if row.get(i).is_some_and(|&d| d != 0.0) {
            return Err(parse_err(
                path,
                line,
                format!("diagonal entry is {}, must be 0", row[i]),
            ));
        }
        rows.push(row);
    }
    let n = rows.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(parse_err(
            path,
            i + 1,
            format!("row has {} columns, matrix has {n} rows", r.len()),
        ));
    }
    Ok((n, rows.into_iter().flatten().collect()))
}

pub fn save_distance_matrix(path: &Path, n: usize, meters: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    for r in 0..n {
        w.write_record(meters[r * n..(r + 1) * n].iter().map(|d| d.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Builds a graph from a nodes file and an optional matrix file; without a
/// matrix the Euclidean model with `detour_factor` is used.
pub fn load_graph(
    nodes: &Path,
    matrix: Option<&Path>,
    detour_factor: f64,
    speed: f64,
) -> Result<ProblemGraph> {
    let positions = load_nodes_csv(nodes)?;
    match matrix {
        None => ProblemGraph::euclidean(positions, detour_factor, speed),
        Some(mp) => {
            let (n, meters) = load_distance_matrix(mp)?;
            if n != positions.len() {
                return Err(parse_err(
                    mp,
                    1,
                    format!("matrix is {n}x{n} but there are {} nodes", positions.len()),
                ));
            }
            ProblemGraph::with_matrix(positions, meters, speed)
        }
    }
}

/// Events file plus graph node count: events referencing unknown nodes are an error.
pub fn load_event_set(path: &Path, n: usize) -> Result<EventSet> {
    let (events, seen) = load_events_csv(path)?;
    if seen > n {
        return Err(parse_err(
            path,
            1,
            format!(
                "events reference node {} but the graph has {n} nodes",
                seen - 1
            ),
        ));
    }
    EventSet::new(n, events)
}

fn dataset_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "officer_node".to_string()];
    h.extend((0..n).map(|j| format!("d_{j}")));
    h.extend((0..n).map(|j| format!("chi_{j}")));
    h.push("label".into());
    h
}

/// Writes `<path>` (rows) and `<path>.json` (metadata sidecar).
pub fn save_dataset(path: &Path, ds: &LabelledDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(dataset_header(ds.node_count()))?;
    for s in &ds.samples {
        let mut rec = Vec::with_capacity(3 + 2 * ds.node_count());
        rec.push(s.t.to_string());
        rec.push(s.officer.to_string());
        rec.extend(s.features.as_slice().iter().map(|v| v.to_string()));
        rec.push(s.label.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut f = create(&side)?;
    serde_json::to_writer_pretty(&mut f, &ds.meta)?;
    f.write_all(b"\n").map_err(|e| Error::io(&side, e))?;
    f.flush().map_err(|e| Error::io(&side, e))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn load_dataset(path: &Path) -> Result<LabelledDataset> {
    let side = sidecar_path(path);
    let meta: DatasetMeta = serde_json::from_reader(open(&side)?)?;
    let tag = meta
        .provenance
        .as_ref()
        .map_or(OptimizerTag::Greedy, |p| p.optimizer.tag());
    let n = meta.n;
    let mut rdr = reader(open(path)?, true);
    let expected = dataset_header(n);
    check_header(
        path,
        &mut rdr,
        &expected.iter().map(String::as_str).collect::<Vec<_>>(),
    )?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != 2 * n + 3 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", 2 * n + 3, rec.len()),
            ));
        }
        let t: f64 = field(path, line, &rec, 0, "t")?;
        let officer: usize = field(path, line, &rec, 1, "officer_node")?;
        let x = (0..2 * n)
            .map(|k| field::<f64>(path, line, &rec, 2 + k, "feature"))
            .collect::<Result<Vec<_>>>()?;
        let label: usize = field(path, line, &rec, 2 * n + 2, "label")?;
        if label >= n || officer >= n {
            return Err(parse_err(
                path,
                line,
                format!("node index out of range (n = {n})"),
            ));
        }
        samples.push(LabelledSample {
            t,
            officer: NodeId(officer),
            features: FeatureVector::from_vec(x)?,
            label: NodeId(label),
            optimizer: tag,
        });
    }
    LabelledDataset::new(meta, samples)
}
