use crate::error::{Error, Result};
use crate::hetgraph::build::{
    CLINICAL_RELATION, CROSS_GROUP_RELATION, PATCH_RELATION, SAME_GROUP_RELATION,
};
use crate::hetgraph::{HetGraph, Modality};
use crate::numeric::Tensor;
use crate::scalar::Scalar;

/// One hop of a meta-path: a relation, optionally traversed target→source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPathStep {
    pub relation: String,
    pub inverse: bool,
}

/// Ordered relation sequence describing a composite semantic relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPath {
    pub name: String,
    pub steps: Vec<MetaPathStep>,
}

impl MetaPath {
    pub fn new(name: impl Into<String>, relations: &[&str]) -> Self {
        Self {
            name: name.into(),
            steps: relations
                .iter()
                .map(|r| MetaPathStep { relation: r.to_string(), inverse: false })
                .collect(),
        }
    }

    /// The same path walked backwards.
    pub fn reversed(&self) -> Self {
        Self {
            name: format!("{}^-1", self.name),
            steps: self
                .steps
                .iter()
                .rev()
                .map(|s| MetaPathStep { relation: s.relation.clone(), inverse: !s.inverse })
                .collect(),
        }
    }

    /// Checks that every relation exists and consecutive steps chain by kind.
    pub fn validate<T: Scalar>(&self, g: &HetGraph<T>) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Schema(format!("meta-path `{}` is empty", self.name)));
        }
        let mut prev_target: Option<crate::hetgraph::NodeKind> = None;
        for s in &self.steps {
            let kind = &g.relation(&s.relation)?.kind;
            let (src, dst) =
                if s.inverse { (kind.target, kind.source) } else { (kind.source, kind.target) };
            if let Some(t) = prev_target {
                if t != src {
                    return Err(Error::Schema(format!(
                        "meta-path `{}` breaks at `{}`: {} does not chain into {}",
                        self.name,
                        s.relation,
                        t.name(),
                        src.name()
                    )));
                }
            }
            prev_target = Some(dst);
        }
        Ok(())
    }
}

/// Binarized product of the path's adjacencies with the diagonal cleared.
pub fn metapath_adjacency<T: Scalar>(g: &HetGraph<T>, path: &MetaPath) -> Result<Tensor<T>> {
    path.validate(g)?;
    let mut acc: Option<Tensor<T>> = None;
    for s in &path.steps {
        let a = &g.relation(&s.relation)?.adjacency;
        let next = match acc {
            None if s.inverse => a.transpose()?,
            None => a.clone(),
            Some(m) => m.matmul_t(false, a, s.inverse)?,
        };
        // binarize each partial product so counts never overflow on long paths
        acc = Some(next.map(|v| if v > T::zero() { T::one() } else { T::zero() }));
    }
    let mut out = acc.expect("non-empty path");
    for i in 0..g.num_nodes() {
        out.set(i, i, T::zero());
    }
    Ok(out)
}

/// Meta-paths used for each modality's graph.
pub fn default_metapaths(m: Modality) -> Vec<MetaPath> {
    match m {
        Modality::Pathology => vec![
            MetaPath::new("adjacent", &[PATCH_RELATION]),
            MetaPath::new("adjacent-adjacent", &[PATCH_RELATION, PATCH_RELATION]),
        ],
        Modality::Genomic => vec![
            MetaPath::new("same_group", &[SAME_GROUP_RELATION]),
            MetaPath::new("same_group-cross_group", &[SAME_GROUP_RELATION, CROSS_GROUP_RELATION]),
        ],
        Modality::Clinical => vec![MetaPath::new("complete", &[CLINICAL_RELATION])],
    }
}
