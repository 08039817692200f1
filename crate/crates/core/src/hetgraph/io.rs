//! Line-delimited JSON cohort files.
//!
//! Line 1 is a header `{"format":"hetsurv-cohort-v1","patients":N}`; each
//! following line is one patient.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{
    HetGraph, Layout, NodeKind, NodeType, PatientRecord, RelationType, SurvivalLabel,
};
use crate::numeric::Tensor;
use crate::persist::write_atomic;
use crate::scalar::Scalar;

pub const COHORT_FORMAT: &str = "hetsurv-cohort-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    patients: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationTypeJson {
    source: String,
    target: String,
    directed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphJson {
    node_types: Vec<String>,
    features: Vec<Vec<f64>>,
    relations: BTreeMap<String, Vec<[usize; 2]>>,
    relation_types: BTreeMap<String, RelationTypeJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    id: String,
    time: f64,
    event: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pathology: Option<GraphJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    genomic: Option<GraphJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clinical: Option<GraphJson>,
}

fn graph_to_json<T: Scalar>(g: &HetGraph<T>) -> GraphJson {
    let mut relations = BTreeMap::new();
    let mut relation_types = BTreeMap::new();
    let n = g.num_nodes();
    for r in g.relations() {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if r.adjacency.at(i, j) != T::zero() {
                    pairs.push([i, j]);
                }
            }
        }
        relations.insert(r.kind.name.clone(), pairs);
        relation_types.insert(
            r.kind.name.clone(),
            RelationTypeJson {
                source: r.kind.source.name().into(),
                target: r.kind.target.name().into(),
                directed: r.kind.directed,
            },
        );
    }
    GraphJson {
        node_types: g.node_types().iter().map(ToString::to_string).collect(),
        features: g.features().to_rows_f64(),
        relations,
        relation_types,
        grid: match g.layout() {
            Layout::Grid { h, w } => Some([h, w]),
            Layout::Sequence => None,
        },
    }
}

fn graph_from_json<T: Scalar>(j: GraphJson) -> Result<HetGraph<T>> {
    let types = j.node_types.iter().map(|s| s.parse::<NodeType>()).collect::<Result<Vec<_>>>()?;
    let n = types.len();
    let rows: Vec<Vec<T>> =
        j.features.iter().map(|r| r.iter().map(|&v| T::lit(v)).collect()).collect();
    let features = Tensor::from_rows(&rows)?;
    let layout = match j.grid {
        Some([h, w]) => Layout::Grid { h, w },
        None => Layout::Sequence,
    };
    let mut g = HetGraph::new(types, features, layout)?;
    if j.relations.len() != j.relation_types.len() {
        return Err(Error::Schema("relations and relation_types disagree".into()));
    }
    for (name, pairs) in j.relations {
        let rt = j
            .relation_types
            .get(&name)
            .ok_or_else(|| Error::Schema(format!("relation `{name}` has no type")))?;
        let kind = RelationType {
            name: name.clone(),
            source: rt.source.parse::<NodeKind>()?,
            target: rt.target.parse::<NodeKind>()?,
            directed: rt.directed,
        };
        let mut adj = Tensor::zeros(&[n, n]);
        for [a, b] in pairs {
            if a >= n || b >= n {
                return Err(Error::Schema(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            adj.set(a, b, T::one());
        }
        g.add_relation(kind, adj)?;
    }
    Ok(g)
}

fn record_to_json<T: Scalar>(p: &PatientRecord<T>) -> RecordJson {
    RecordJson {
        id: p.id.clone(),
        time: p.label.time.as_f64(),
        event: u8::from(p.label.event),
        pathology: p.pathology.as_ref().map(graph_to_json),
        genomic: p.genomic.as_ref().map(graph_to_json),
        clinical: p.clinical.as_ref().map(graph_to_json),
    }
}

fn record_from_json<T: Scalar>(r: RecordJson) -> Result<PatientRecord<T>> {
    let event = match r.event {
        0 => false,
        1 => true,
        e => return Err(Error::Schema(format!("event must be 0 or 1, got {e}"))),
    };
    PatientRecord::new(
        r.id,
        r.pathology.map(graph_from_json).transpose()?,
        r.genomic.map(graph_from_json).transpose()?,
        r.clinical.map(graph_from_json).transpose()?,
        SurvivalLabel::new(T::lit(r.time), event)?,
    )
}

/// Serializes a cohort to the line-delimited text format.
pub fn cohort_to_string<T: Scalar>(records: &[PatientRecord<T>]) -> String {
    let header = Header { format: COHORT_FORMAT.into(), patients: records.len() };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(&record_to_json(r)).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes a cohort atomically: the file appears complete or not at all.
pub fn write_cohort<T: Scalar>(records: &[PatientRecord<T>], path: &Path) -> Result<()> {
    write_atomic(path, cohort_to_string(records).as_bytes())
}

fn parse_err(line: usize, message: impl ToString) -> Error {
    Error::Parse { context: format!("line {line}"), message: message.to_string() }
}

/// Parses a whole cohort; any malformed or missing record fails the read.
pub fn read_cohort_from<T: Scalar>(reader: impl Read) -> Result<Vec<PatientRecord<T>>> {
    let mut lines = BufReader::new(reader).lines();
    let first = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| parse_err(1, e))?;
    if header.format != COHORT_FORMAT {
        return Err(parse_err(1, format!("unsupported format `{}`", header.format)));
    }
    let mut out = Vec::with_capacity(header.patients);
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordJson = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        let id = rec.id.clone();
        out.push(record_from_json(rec).map_err(|e| Error::Parse {
            context: format!("line {lineno} (record `{id}`)"),
            message: e.to_string(),
        })?);
    }
    if out.len() != header.patients {
        return Err(parse_err(
            out.len() + 2,
            format!("header announces {} patients, found {}", header.patients, out.len()),
        ));
    }
    Ok(out)
}

pub fn read_cohort<T: Scalar>(path: &Path) -> Result<Vec<PatientRecord<T>>> {
    read_cohort_from(std::fs::File::open(path)?)
}
