//! AMR graph data model, PENMAN text formats, NULL-node augmentation,
//! shortest-label-path relations, alignment normalization and edge
//! projection.

pub mod graph;
pub mod paths;
pub mod penman;
pub mod project;


pub use graph::{augment_null, AmrGraph, AugmentedGraph, Edge, NodeId, NULL_CONCEPT, ROOT_EDGE_LABEL};
pub use paths::{
    add_single_step_labels, build_relation_matrix, shortest_label_path, RelationVocab, PATH_LONG, PATH_NONE,
    PATH_SELF, REL_NONE_ID, REL_ROOT_ID, REL_SELF_ID,
};
pub use penman::{parse_penman, render_penman, split_penman_blocks};
pub use project::{normalize_alignment, project_edges, validate_arcs, AlignmentDist, ProjectedArc};
