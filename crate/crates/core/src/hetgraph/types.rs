use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::scalar::Scalar;

/// Functional gene family used to type gene nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GeneGroup {
    TumorSuppressor,
    Oncogene,
    ProteinKinase,
    CellDifferentiation,
    CytokineGrowth,
}

impl GeneGroup {
    pub const ALL: [GeneGroup; 5] = [
        GeneGroup::TumorSuppressor,
        GeneGroup::Oncogene,
        GeneGroup::ProteinKinase,
        GeneGroup::CellDifferentiation,
        GeneGroup::CytokineGrowth,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GeneGroup::TumorSuppressor => "tumor_suppressor",
            GeneGroup::Oncogene => "oncogene",
            GeneGroup::ProteinKinase => "protein_kinase",
            GeneGroup::CellDifferentiation => "cell_differentiation",
            GeneGroup::CytokineGrowth => "cytokine_growth",
        }
    }
}

impl FromStr for GeneGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GeneGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown gene group `{s}`")))
    }
}

/// Node kind without the gene-group payload; relations are typed by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Patch,
    Gene,
    Clinical,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Patch => "patch",
            NodeKind::Gene => "gene",
            NodeKind::Clinical => "clinical",
        }
    }
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch" => Ok(NodeKind::Patch),
            "gene" => Ok(NodeKind::Gene),
            "clinical" => Ok(NodeKind::Clinical),
            _ => Err(Error::Schema(format!("unknown node kind `{s}`"))),
        }
    }
}

/// Type of a single node. Gene nodes always carry their group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeType {
    Patch,
    Gene(GeneGroup),
    Clinical,
}

impl NodeType {
    pub fn kind(self) -> NodeKind {
        match self {
            NodeType::Patch => NodeKind::Patch,
            NodeType::Gene(_) => NodeKind::Gene,
            NodeType::Clinical => NodeKind::Clinical,
        }
    }

    pub fn group(self) -> Option<GeneGroup> {
        match self {
            NodeType::Gene(g) => Some(g),
            _ => None,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeType::Gene(g) => write!(f, "gene:{}", g.name()),
            other => f.write_str(other.kind().name()),
        }
    }
}

impl FromStr for NodeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("gene", g)) => Ok(NodeType::Gene(g.parse()?)),
            Some(_) => Err(Error::Schema(format!("unknown node type `{s}`"))),
            None => match s.parse::<NodeKind>()? {
                NodeKind::Patch => Ok(NodeType::Patch),
                NodeKind::Clinical => Ok(NodeType::Clinical),
                NodeKind::Gene => Err(Error::Schema("gene node without a group".into())),
            },
        }
    }
}

/// Relation schema: identifier plus endpoint kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationType {
    pub name: String,
    pub source: NodeKind,
    pub target: NodeKind,
    pub directed: bool,
}

impl RelationType {
    pub fn undirected(name: &str, kind: NodeKind) -> Self {
        Self { name: name.to_string(), source: kind, target: kind, directed: false }
    }
}

/// Spatial arrangement of a graph's nodes, used when gridding embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Row-major `h × w` patch grid.
    Grid { h: usize, w: usize },
    /// No spatial structure; nodes are laid out as a `1 × N` strip.
    Sequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relation<T> {
    pub kind: RelationType,
    pub adjacency: Tensor<T>,
}

/// Heterogeneous graph of one modality for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct HetGraph<T> {
    node_types: Vec<NodeType>,
    features: Tensor<T>,
    relations: BTreeMap<String, Relation<T>>,
    layout: Layout,
}

impl<T: Scalar> HetGraph<T> {
    pub fn new(node_types: Vec<NodeType>, features: Tensor<T>, layout: Layout) -> Result<Self> {
        let n = node_types.len();
        if n == 0 {
            return Err(Error::Schema("graph needs at least one node".into()));
        }
        let (rows, _) = features.dims2()?;
        if features.rank() != 2 || rows != n {
            return Err(Error::dim(format!(
                "features {:?} do not match {n} nodes",
                features.shape()
            )));
        }
        if let Layout::Grid { h, w } = layout {
            if h * w != n {
                return Err(Error::dim(format!("grid {h}×{w} does not hold {n} nodes")));
            }
        }
        Ok(Self { node_types, features, relations: BTreeMap::new(), layout })
    }

    /// Adds a relation after checking the adjacency invariants.
    pub fn add_relation(&mut self, kind: RelationType, adjacency: Tensor<T>) -> Result<()> {
        let n = self.num_nodes();
        if adjacency.shape() != [n, n] {
            return Err(Error::dim(format!(
                "relation `{}` adjacency {:?} is not {n}×{n}",
                kind.name,
                adjacency.shape()
            )));
        }
        if self.relations.contains_key(&kind.name) {
            return Err(Error::Schema(format!("duplicate relation `{}`", kind.name)));
        }
        for i in 0..n {
            if adjacency.at(i, i) != T::zero() {
                return Err(Error::Schema(format!("relation `{}` has a self-loop at {i}", kind.name)));
            }
            for j in 0..n {
                let v = adjacency.at(i, j);
                if v != T::zero() && v != T::one() {
                    return Err(Error::Schema(format!("relation `{}` is not binary", kind.name)));
                }
                if !kind.directed && v != adjacency.at(j, i) {
                    return Err(Error::Schema(format!(
                        "undirected relation `{}` is not symmetric",
                        kind.name
                    )));
                }
                if v == T::one()
                    && (self.node_types[i].kind() != kind.source
                        || self.node_types[j].kind() != kind.target)
                {
                    return Err(Error::Schema(format!(
                        "relation `{}` connects {} to {}",
                        kind.name, self.node_types[i], self.node_types[j]
                    )));
                }
            }
        }
        self.relations.insert(kind.name.clone(), Relation { kind, adjacency });
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.last_dim()
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn relation(&self, name: &str) -> Result<&Relation<T>> {
        self.relations
            .get(name)
            .ok_or_else(|| Error::Schema(format!("graph has no relation `{name}`")))
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation<T>> {
        self.relations.values()
    }

    /// Number of nonzero adjacency entries of a relation, halved for
    /// undirected relations.
    pub fn edge_count(&self, name: &str) -> Result<usize> {
        let r = self.relation(name)?;
        let nnz = r.adjacency.data().iter().filter(|&&v| v != T::zero()).count();
        Ok(if r.kind.directed { nnz } else { nnz / 2 })
    }

    /// Same graph with features replaced (for zero padding).
    pub fn with_features(mut self, features: Tensor<T>) -> Result<Self> {
        if features.rows() != self.num_nodes() || features.rank() != 2 {
            return Err(Error::dim(format!(
                "features {:?} do not match {} nodes",
                features.shape(),
                self.num_nodes()
            )));
        }
        self.features = features;
        Ok(self)
    }
}

/// Modalities in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Pathology,
    Genomic,
    Clinical,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Pathology, Modality::Genomic, Modality::Clinical];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Modality::Pathology => 'P',
            Modality::Genomic => 'G',
            Modality::Clinical => 'C',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Pathology => "pathology",
            Modality::Genomic => "genomic",
            Modality::Clinical => "clinical",
        }
    }

    pub fn from_letter(c: char) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.letter() == c.to_ascii_uppercase())
            .ok_or_else(|| Error::config(format!("unknown modality `{c}`")))
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Observed survival outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalLabel<T> {
    pub time: T,
    pub event: bool,
}

impl<T: Scalar> SurvivalLabel<T> {
    pub fn new(time: T, event: bool) -> Result<Self> {
        if !(time > T::zero()) || !time.is_finite() {
            return Err(Error::Schema(format!("survival time must be positive, got {time}")));
        }
        Ok(Self { time, event })
    }
}

/// One patient: up to three modality graphs plus the survival label.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord<T> {
    pub id: String,
    pub pathology: Option<HetGraph<T>>,
    pub genomic: Option<HetGraph<T>>,
    pub clinical: Option<HetGraph<T>>,
    pub label: SurvivalLabel<T>,
}

impl<T: Scalar> PatientRecord<T> {
    pub fn new(
        id: impl Into<String>,
        pathology: Option<HetGraph<T>>,
        genomic: Option<HetGraph<T>>,
        clinical: Option<HetGraph<T>>,
        label: SurvivalLabel<T>,
    ) -> Result<Self> {
        let rec = Self { id: id.into(), pathology, genomic, clinical, label };
        if rec.available().is_empty() {
            return Err(Error::Schema(format!("patient `{}` has no modality", rec.id)));
        }
        Ok(rec)
    }

    pub fn graph(&self, m: Modality) -> Option<&HetGraph<T>> {
        match m {
            Modality::Pathology => self.pathology.as_ref(),
            Modality::Genomic => self.genomic.as_ref(),
            Modality::Clinical => self.clinical.as_ref(),
        }
    }

    pub fn graph_mut(&mut self, m: Modality) -> &mut Option<HetGraph<T>> {
        match m {
            Modality::Pathology => &mut self.pathology,
            Modality::Genomic => &mut self.genomic,
            Modality::Clinical => &mut self.clinical,
        }
    }

    pub fn available(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| self.graph(m).is_some()).collect()
    }

    /// Copy with one modality removed. Fails if nothing would remain.
    pub fn without(&self, m: Modality) -> Result<Self> {
        let mut out = self.clone();
        *out.graph_mut(m) = None;
        if out.available().is_empty() {
            return Err(Error::MissingModality(format!(
                "removing {m} leaves patient `{}` empty",
                self.id
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_type_strings_roundtrip() {
        for t in [NodeType::Patch, NodeType::Clinical, NodeType::Gene(GeneGroup::ProteinKinase)] {
            assert_eq!(t.to_string().parse::<NodeType>().unwrap(), t);
        }
        assert!("gene".parse::<NodeType>().is_err());
        assert!("gene:unknown".parse::<NodeType>().is_err());
    }

    #[test]
    fn group_present_iff_gene() {
        assert_eq!(NodeType::Patch.group(), None);
        assert_eq!(NodeType::Gene(GeneGroup::Oncogene).group(), Some(GeneGroup::Oncogene));
    }

    #[test]
    fn relation_invariants_enforced() {
        let mut g = HetGraph::<f64>::new(
            vec![NodeType::Clinical; 2],
            Tensor::zeros(&[2, 3]),
            Layout::Sequence,
        )
        .unwrap();
        let asym = Tensor::from_f64(&[2, 2], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(g.add_relation(RelationType::undirected("r", NodeKind::Clinical), asym).is_err());
        let selfloop = Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(g.add_relation(RelationType::undirected("r", NodeKind::Clinical), selfloop).is_err());
        let wrong_kind = Tensor::from_f64(&[2, 2], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(g.add_relation(RelationType::undirected("r", NodeKind::Patch), wrong_kind.clone()).is_err());
        g.add_relation(RelationType::undirected("r", NodeKind::Clinical), wrong_kind).unwrap();
        assert_eq!(g.edge_count("r").unwrap(), 1);
    }

    #[test]
    fn label_requires_positive_time() {
        assert!(SurvivalLabel::new(0.0f64, true).is_err());
        assert!(SurvivalLabel::new(-1.0f64, false).is_err());
        assert!(SurvivalLabel::new(f64::NAN, false).is_err());
        assert!(SurvivalLabel::new(0.5f64, false).is_ok());
    }
}
