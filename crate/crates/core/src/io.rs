//! CSV ingestion and export: counts, leaf adjacency and election returns.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::er::PrecinctRecord;
use crate::error::{Error, Result};
use crate::hierarchy::{aggregate, CountTable, Hierarchy, HierarchyBuilder, TypeSchema};

fn ingest(path: &str, line: u64, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_string(),
        line: line as usize,
        msg: msg.into(),
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, name: &str, expected: &[&str]) -> Result<()> {
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(ingest(name, 1, format!("header {got:?}, expected {expected:?}")));
    }
    Ok(())
}

fn records<R: Read>(
    rdr: &mut csv::Reader<R>,
    name: &str,
    width: usize,
) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest(name, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(ingest(name, line, format!("{} fields, expected {width}", rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_count(s: &str, name: &str, line: u64) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| ingest(name, line, format!("count `{s}` is not a number")))?;
    if !v.is_finite() || v < 0.0 || v.fract() != 0.0 {
        return Err(ingest(name, line, format!("count `{s}` is not a non-negative integer")));
    }
    Ok(v)
}

/// Reads `unit_path,type,count` rows. Paths list labels from the root down;
/// the tree is built from them in order of first appearance. Leaf rows give
/// the counts (missing leaf/type pairs are 0); internal rows are optional but
/// must equal the sums of their leaves.
pub fn read_counts<R: Read>(input: R, name: &str) -> Result<CountTable> {
    let mut rdr = reader(input);
    check_header(&mut rdr, name, &["unit_path", "type", "count"])?;
    let rows = records(&mut rdr, name, 3)?;
    if rows.is_empty() {
        return Err(ingest(name, 1, "no count rows"));
    }

    let mut builder: Option<HierarchyBuilder> = None;
    let mut root_label = String::new();
    let mut node_of: HashMap<String, usize> = HashMap::new();
    let mut first_line: Vec<u64> = Vec::new();
    let mut has_child: Vec<bool> = Vec::new();
    let mut depth_of: Vec<usize> = Vec::new();
    let mut types: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut parsed = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let (path, ty) = (&rec[0], &rec[1]);
        let parts: Vec<&str> = path.split('/').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(ingest(name, *line, format!("malformed unit path `{path}`")));
        }
        let b = builder.get_or_insert_with(|| {
            root_label = parts[0].to_string();
            node_of.insert(parts[0].to_string(), 0);
            first_line.push(*line);
            has_child.push(false);
            depth_of.push(1);
            HierarchyBuilder::new(parts[0])
        });
        if parts[0] != root_label {
            return Err(ingest(name, *line, format!("root `{}` differs from `{root_label}`", parts[0])));
        }
        let mut cur = 0;
        for i in 1..parts.len() {
            let key = parts[..=i].join("/");
            cur = match node_of.get(&key) {
                Some(&id) => id,
                None => {
                    let id = b.add_child(cur, parts[i])?;
                    has_child[cur] = true;
                    node_of.insert(key, id);
                    first_line.push(*line);
                    has_child.push(false);
                    depth_of.push(i + 1);
                    id
                }
            };
        }
        if ty.is_empty() {
            return Err(ingest(name, *line, "empty type label"));
        }
        if !seen.insert((cur, ty.to_string())) {
            return Err(ingest(name, *line, format!("duplicate row for `{path}`, type `{ty}`")));
        }
        if !types.iter().any(|t| t == ty) {
            types.push(ty.to_string());
        }
        parsed.push((*line, path.to_string(), ty.to_string(), parse_count(&rec[2], name, *line)?));
    }
    let depth = depth_of.iter().copied().max().unwrap_or(1);
    for id in 0..depth_of.len() {
        if !has_child[id] && depth_of[id] != depth {
            return Err(ingest(
                name,
                first_line[id],
                format!("leaf at depth {} but the hierarchy has depth {depth}", depth_of[id]),
            ));
        }
    }
    let h = Arc::new(builder.expect("rows are nonempty").build()?);
    let index = h.path_index();
    let schema = TypeSchema::new(types.clone())?;
    let w = schema.len();
    let mut leaf_values = vec![vec![0.0; w]; h.leaves().len()];
    for (_, path, ty, v) in &parsed {
        let node = index[path];
        if let Some(i) = h.leaf_index(node) {
            leaf_values[i][schema.index_of(ty).expect("type was recorded")] = *v;
        }
    }
    let table = aggregate(h.clone(), schema.clone(), &leaf_values)?;
    for (line, path, ty, v) in &parsed {
        let node = index[path];
        let sum = table.get(node, schema.index_of(ty).expect("type was recorded"));
        if !h.is_leaf(node) && sum != *v {
            return Err(ingest(
                name,
                *line,
                format!("`{path}` type `{ty}` is {v} but its leaves sum to {sum}"),
            ));
        }
    }
    Ok(table)
}

pub fn load_counts(path: &Path) -> Result<CountTable> {
    read_counts(std::fs::File::open(path)?, &path.display().to_string())
}

fn fmt_count(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Writes every node and type as `unit_path,type,count`, breadth first.
pub fn write_counts<W: Write>(table: &CountTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit_path", "type", "count"])?;
    let h = table.hierarchy();
    for node in 0..h.len() {
        let path = h.path(node);
        for (t, label) in table.schema().labels().iter().enumerate() {
            w.write_record([path.as_str(), label, &fmt_count(table.get(node, t))])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_counts(table: &CountTable, path: &Path) -> Result<()> {
    write_counts(table, std::fs::File::create(path)?)
}

/// Resolves a leaf by full path or, when unambiguous, by its own label.
fn leaf_resolver(h: &Hierarchy) -> impl Fn(&str) -> Option<usize> + '_ {
    let mut by_path = HashMap::new();
    let mut by_label: HashMap<&str, Option<usize>> = HashMap::new();
    for (i, &leaf) in h.leaves().iter().enumerate() {
        by_path.insert(h.path(leaf), i);
        by_label
            .entry(h.label(leaf))
            .and_modify(|e| *e = None)
            .or_insert(Some(i));
    }
    move |s: &str| by_path.get(s).copied().or_else(|| by_label.get(s).copied().flatten())
}

/// Reads `unit_a,unit_b` rows into sorted, deduplicated pairs of leaf
/// positions. Units are leaf paths or unambiguous leaf labels.
pub fn read_adjacency<R: Read>(input: R, name: &str, h: &Hierarchy) -> Result<Vec<(usize, usize)>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, name, &["unit_a", "unit_b"])?;
    let resolve = leaf_resolver(h);
    let mut edges = BTreeSet::new();
    for (line, rec) in records(&mut rdr, name, 2)? {
        let a = resolve(&rec[0]).ok_or_else(|| ingest(name, line, format!("unknown leaf `{}`", &rec[0])))?;
        let b = resolve(&rec[1]).ok_or_else(|| ingest(name, line, format!("unknown leaf `{}`", &rec[1])))?;
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    Ok(edges.into_iter().collect())
}

pub fn load_adjacency(path: &Path, h: &Hierarchy) -> Result<Vec<(usize, usize)>> {
    read_adjacency(std::fs::File::open(path)?, &path.display().to_string(), h)
}

/// Writes leaf-position pairs as `unit_a,unit_b` leaf paths.
pub fn write_adjacency<W: Write>(h: &Hierarchy, edges: &[(usize, usize)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit_a", "unit_b"])?;
    let leaves = h.leaves();
    for &(a, b) in edges {
        w.write_record([h.path(leaves[a]), h.path(leaves[b])])?;
    }
    w.flush()?;
    Ok(())
}

const ELECTION_HEADER: [&str; 5] = ["precinct", "group_vap", "total_vap", "votes_cast", "candidate_votes"];

/// Reads `precinct,group_vap,total_vap,votes_cast,candidate_votes` rows.
pub fn read_elections<R: Read>(input: R, name: &str) -> Result<Vec<PrecinctRecord>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, name, &ELECTION_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in records(&mut rdr, name, 5)? {
        let int = |i: usize| -> Result<u64> {
            rec[i]
                .parse()
                .map_err(|_| ingest(name, line, format!("`{}` is not a non-negative integer", &rec[i])))
        };
        let group = parse_count(&rec[1], name, line)?;
        let total = parse_count(&rec[2], name, line)?;
        out.push(
            PrecinctRecord::new(&rec[0], group, total, int(3)?, int(4)?)
                .map_err(|e| ingest(name, line, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn load_elections(path: &Path) -> Result<Vec<PrecinctRecord>> {
    read_elections(std::fs::File::open(path)?, &path.display().to_string())
}

pub fn write_elections<W: Write>(records: &[PrecinctRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ELECTION_HEADER)?;
    for r in records {
        let cand = (r.y * r.votes_cast as f64).round() as u64;
        w.write_record([
            r.id.clone(),
            fmt_count(r.group_vap),
            fmt_count(r.total_vap),
            r.votes_cast.to_string(),
            cand.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
