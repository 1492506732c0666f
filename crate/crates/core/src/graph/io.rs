// JSON Lines dataset files: one graph per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, MolecularGraph, PairLabel};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    node_feats: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_label: Option<GraphLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_labels: Option<Vec<[usize; 3]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum GraphLabel {
    Class(usize),
    Vector(Vec<f64>),
}

impl Record {
    fn into_graph(self) -> std::result::Result<MolecularGraph, String> {
        let label = match (self.graph_label, self.pair_labels) {
            (Some(_), Some(_)) => return Err("both graph_label and pair_labels present".into()),
            (None, None) => return Err("missing graph_label or pair_labels".into()),
            (Some(GraphLabel::Class(c)), None) => Label::Class(c),
            (Some(GraphLabel::Vector(v)), None) => Label::Vector(v),
            (None, Some(pairs)) => {
                let mut out = Vec::with_capacity(pairs.len());
                for [u, v, flag] in pairs {
                    if flag > 1 {
                        return Err(format!("pair label flag must be 0 or 1, got {flag}"));
                    }
                    out.push(PairLabel {
                        u,
                        v,
                        contact: flag == 1,
                    });
                }
                Label::Pairs(out)
            }
        };
        let edges = self.edges.into_iter().map(|[u, v]| (u, v)).collect();
        MolecularGraph::new(self.num_nodes, edges, self.node_feats, Some(label))
            .map_err(|e| e.to_string())
    }

    fn from_graph(g: &MolecularGraph) -> Result<Self> {
        let (graph_label, pair_labels) = match g.label() {
            Some(Label::Class(c)) => (Some(GraphLabel::Class(*c)), None),
            Some(Label::Vector(v)) => (Some(GraphLabel::Vector(v.clone())), None),
            Some(Label::Pairs(p)) => (
                None,
                Some(p.iter().map(|p| [p.u, p.v, p.contact as usize]).collect()),
            ),
            None => return Err(Error::Graph("cannot save a graph without a label".into())),
        };
        Ok(Self {
            num_nodes: g.num_nodes(),
            edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
            node_feats: g.node_features().to_vec(),
            graph_label,
            pair_labels,
        })
    }
}

/// Reads a dataset; `origin` is only used in error messages.
pub fn parse_dataset<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<MolecularGraph>> {
    let mut graphs: Vec<MolecularGraph> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            message,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let g = record.into_graph().map_err(err)?;
        if let Some(first) = graphs.first() {
            if first.feature_dim() != g.feature_dim() {
                return Err(err(format!(
                    "inconsistent feature dimension {} (earlier graphs have {})",
                    g.feature_dim(),
                    first.feature_dim()
                )));
            }
        }
        graphs.push(g);
    }
    Ok(graphs)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<MolecularGraph>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(crate::error::file_err(path))?;
    parse_dataset(BufReader::new(file), path)
}

pub fn write_dataset<W: Write>(mut writer: W, graphs: &[MolecularGraph]) -> Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut writer, &Record::from_graph(g)?)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, graphs: &[MolecularGraph]) -> Result<()> {
    let path = path.as_ref();
    write_dataset(BufWriter::new(File::create(path).map_err(crate::error::file_err(path))?), graphs)
}
