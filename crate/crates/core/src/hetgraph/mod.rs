//! Multimodal heterogeneous graphs: data model, builders, meta-path algebra,
//! synthetic cohorts and the cohort file format.

mod build;
mod io;
mod metapath;
mod synth;
mod types;

pub use build::{
    build_clinical_graph, build_gene_graph, build_pathology_graph, pad_graph, zero_pad_features,
    CLINICAL_RELATION, CROSS_GROUP_RELATION, PATCH_RELATION, SAME_GROUP_RELATION,
};
pub use io::{cohort_to_string, read_cohort, read_cohort_from, write_cohort, COHORT_FORMAT};
pub use metapath::{default_metapaths, metapath_adjacency, MetaPath, MetaPathStep};
pub use synth::{
    generate_synthetic_cohort, planted_latents, RiskModel, SynthConfig, GENE_RAW_DIM,
    MAX_CLINICAL_FIELDS,
};
pub use types::{
    GeneGroup, HetGraph, Layout, Modality, NodeKind, NodeType, PatientRecord, Relation,
    RelationType, SurvivalLabel,
};
