//! Constructors for the three modality graphs.

use crate::error::{Error, Result};
use crate::hetgraph::{GeneGroup, HetGraph, Layout, NodeKind, NodeType, RelationType};
use crate::numeric::Tensor;
use crate::scalar::Scalar;

pub const PATCH_RELATION: &str = "adjacent";
pub const SAME_GROUP_RELATION: &str = "same_group";
pub const CROSS_GROUP_RELATION: &str = "cross_group";
pub const CLINICAL_RELATION: &str = "complete";

/// Patch grid `h × w × D` connected 8-adjacently.
pub fn build_pathology_graph<T: Scalar>(patch_features: &Tensor<T>) -> Result<HetGraph<T>> {
    let [h, w, d] = *patch_features.shape() else {
        return Err(Error::dim(format!(
            "patch features must be h×w×D, got {:?}",
            patch_features.shape()
        )));
    };
    let n = h * w;
    let features = patch_features.clone().reshape(&[n, d])?;
    let mut g = HetGraph::new(vec![NodeType::Patch; n], features, Layout::Grid { h, w })?;
    let mut adj = Tensor::zeros(&[n, n]);
    for r in 0..h {
        for c in 0..w {
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    adj.set(r * w + c, rr as usize * w + cc as usize, T::one());
                }
            }
        }
    }
    g.add_relation(RelationType::undirected(PATCH_RELATION, NodeKind::Patch), adj)?;
    Ok(g)
}

/// Gene graph: complete within each group, plus one edge per pair of
/// non-empty groups joining their highest-norm genes (lowest index on ties).
pub fn build_gene_graph<T: Scalar>(gene_features: &Tensor<T>, groups: &[GeneGroup]) -> Result<HetGraph<T>> {
    let (n, _) = gene_features.dims2()?;
    if gene_features.rank() != 2 || n != groups.len() {
        return Err(Error::dim(format!(
            "{} group labels for gene features {:?}",
            groups.len(),
            gene_features.shape()
        )));
    }
    let types = groups.iter().map(|&g| NodeType::Gene(g)).collect();
    let mut g = HetGraph::new(types, gene_features.clone(), Layout::Sequence)?;

    let mut same = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j && groups[i] == groups[j] {
                same.set(i, j, T::one());
            }
        }
    }

    let mut rep: [Option<(usize, T)>; 5] = [None; 5];
    for (i, &grp) in groups.iter().enumerate() {
        let norm = gene_features.row(i).iter().map(|&v| v * v).sum::<T>();
        let slot = &mut rep[grp.index()];
        if slot.is_none_or(|(_, best)| norm > best) {
            *slot = Some((i, norm));
        }
    }
    let reps: Vec<usize> = rep.iter().flatten().map(|&(i, _)| i).collect();
    let mut cross = Tensor::zeros(&[n, n]);
    for (a, &i) in reps.iter().enumerate() {
        for &j in &reps[a + 1..] {
            cross.set(i, j, T::one());
            cross.set(j, i, T::one());
        }
    }

    g.add_relation(RelationType::undirected(SAME_GROUP_RELATION, NodeKind::Gene), same)?;
    g.add_relation(RelationType::undirected(CROSS_GROUP_RELATION, NodeKind::Gene), cross)?;
    Ok(g)
}

/// Clinical graph: one node per record field, fully connected.
///
/// Each field occupies its own column block so fields stay distinguishable
/// after pooling: node `k` holds field `k`'s values at the offset equal to the
/// total width of fields `0..k`, zeros elsewhere.
pub fn build_clinical_graph<T: Scalar>(fields: &[Tensor<T>]) -> Result<HetGraph<T>> {
    if fields.is_empty() {
        return Err(Error::Schema("clinical record needs at least one field".into()));
    }
    let total: usize = fields.iter().map(Tensor::len).sum();
    let k = fields.len();
    let mut features = Tensor::zeros(&[k, total]);
    let mut off = 0;
    for (i, f) in fields.iter().enumerate() {
        features.row_mut(i)[off..off + f.len()].copy_from_slice(f.data());
        off += f.len();
    }
    let mut g = HetGraph::new(vec![NodeType::Clinical; k], features, Layout::Sequence)?;
    let mut adj = Tensor::full(&[k, k], T::one());
    for i in 0..k {
        adj.set(i, i, T::zero());
    }
    g.add_relation(RelationType::undirected(CLINICAL_RELATION, NodeKind::Clinical), adj)?;
    Ok(g)
}

/// Appends zero columns so every row has width `d`.
pub fn zero_pad_features<T: Scalar>(x: &Tensor<T>, d: usize) -> Result<Tensor<T>> {
    let (n, cur) = x.dims2()?;
    if cur > d {
        return Err(Error::dim(format!("cannot pad width {cur} down to {d}")));
    }
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        out.row_mut(i)[..cur].copy_from_slice(x.row(i));
    }
    Ok(out)
}

/// Pads a graph's features to width `d`.
pub fn pad_graph<T: Scalar>(g: HetGraph<T>, d: usize) -> Result<HetGraph<T>> {
    let f = zero_pad_features(g.features(), d)?;
    g.with_features(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degrees(g: &HetGraph<f64>, rel: &str) -> Vec<usize> {
        let a = &g.relation(rel).unwrap().adjacency;
        (0..g.num_nodes()).map(|i| a.row(i).iter().filter(|&&v| v == 1.0).count()).collect()
    }

    #[test]
    fn single_patch_has_no_edges() {
        let g = build_pathology_graph(&Tensor::<f64>::zeros(&[1, 1, 4])).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.edge_count(PATCH_RELATION).unwrap(), 0);
    }

    #[test]
    fn two_by_two_grid_is_complete() {
        let g = build_pathology_graph(&Tensor::<f64>::zeros(&[2, 2, 3])).unwrap();
        assert_eq!(degrees(&g, PATCH_RELATION), vec![3, 3, 3, 3]);
        assert_eq!(g.edge_count(PATCH_RELATION).unwrap(), 6);
    }

    #[test]
    fn grid_degrees_and_edge_count() {
        // 3×4 grid: edges = horizontal 3·3 + vertical 2·4 + diagonal 2·2·3 = 29.
        let g = build_pathology_graph(&Tensor::<f64>::zeros(&[3, 4, 2])).unwrap();
        assert_eq!(g.edge_count(PATCH_RELATION).unwrap(), 29);
        let d = degrees(&g, PATCH_RELATION);
        assert_eq!(d[0], 3);
        assert_eq!(d[5], 8);
        assert_eq!(g.layout(), Layout::Grid { h: 3, w: 4 });
    }

    #[test]
    fn features_flatten_row_major() {
        let x = Tensor::<f64>::from_f64(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = build_pathology_graph(&x).unwrap();
        assert_eq!(g.features().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn one_group_has_no_cross_edges() {
        let g = build_gene_graph(&Tensor::<f64>::zeros(&[3, 2]), &[GeneGroup::Oncogene; 3]).unwrap();
        assert_eq!(g.edge_count(SAME_GROUP_RELATION).unwrap(), 3);
        assert_eq!(g.edge_count(CROSS_GROUP_RELATION).unwrap(), 0);
    }

    #[test]
    fn two_groups_two_genes_each() {
        use GeneGroup::*;
        let x = Tensor::<f64>::from_f64(&[4, 1], &[1.0, 5.0, 2.0, 0.5]).unwrap();
        let g = build_gene_graph(&x, &[Oncogene, Oncogene, ProteinKinase, ProteinKinase]).unwrap();
        assert_eq!(g.edge_count(SAME_GROUP_RELATION).unwrap(), 2);
        assert_eq!(g.edge_count(CROSS_GROUP_RELATION).unwrap(), 1);
        // representatives: gene 1 (norm 25) and gene 2 (norm 4)
        assert_eq!(g.relation(CROSS_GROUP_RELATION).unwrap().adjacency.at(1, 2), 1.0);
    }

    #[test]
    fn gene_label_count_must_match() {
        assert!(build_gene_graph(&Tensor::<f64>::zeros(&[3, 2]), &[GeneGroup::Oncogene; 2]).is_err());
    }

    #[test]
    fn clinical_edges() {
        let one = build_clinical_graph(&[Tensor::<f64>::vector(vec![1.0])]).unwrap();
        assert_eq!(one.edge_count(CLINICAL_RELATION).unwrap(), 0);
        let fields: Vec<_> = (0..4).map(|i| Tensor::<f64>::vector(vec![i as f64; 2])).collect();
        let four = build_clinical_graph(&fields).unwrap();
        assert_eq!(four.edge_count(CLINICAL_RELATION).unwrap(), 6);
        assert_eq!(four.feature_dim(), 8);
        assert_eq!(four.features().row(2), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn padding() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1.0, 2.0]).unwrap();
        assert_eq!(zero_pad_features(&x, 2).unwrap(), x);
        assert_eq!(zero_pad_features(&x, 4).unwrap().data(), &[1.0, 2.0, 0.0, 0.0]);
        assert!(matches!(zero_pad_features(&x, 1), Err(Error::Dimension(_))));
    }
}
