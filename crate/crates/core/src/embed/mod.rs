//! Vertex and edge embeddings of the matching graph.

pub mod skipgram;
pub mod walk;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{MatchingGraph, VertexId};

pub use skipgram::{train_skipgram, SgnsConfig, SkipGramModel};
pub use walk::{generate_walks, WalkConfig, WalkGraph};

/// One vector per graph vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbedding {
    pub emb_dim: usize,
    ids: Vec<VertexId>,
    vectors: Vec<f64>,
    index: HashMap<VertexId, usize>,
}

impl NodeEmbedding {
    pub fn new(ids: Vec<VertexId>, emb_dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != ids.len() * emb_dim {
            return Err(Error::DimMismatch {
                expected: ids.len() * emb_dim,
                got: vectors.len(),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("embedding has non-finite entries".into()));
        }
        let index = ids.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
        Ok(Self {
            emb_dim,
            ids,
            vectors,
            index,
        })
    }

    pub fn ids(&self) -> &[VertexId] {
        &self.ids
    }

    pub fn by_index(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.emb_dim..(i + 1) * self.emb_dim]
    }

    pub fn get(&self, id: &VertexId) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.by_index(i))
    }
}

/// Walk the graph and train SGNS vectors for every vertex.
pub fn embed_graph(g: &MatchingGraph, walk_cfg: &WalkConfig, sgns_cfg: &SgnsConfig) -> Result<NodeEmbedding> {
    let walks = generate_walks(g, walk_cfg)?;
    train_node_embeddings(g, &walks, sgns_cfg)
}

/// Train on an existing corpus of walks over `g`.
pub fn train_node_embeddings(g: &MatchingGraph, walks: &[Vec<usize>], cfg: &SgnsConfig) -> Result<NodeEmbedding> {
    let model = train_skipgram(walks, g.vertices().len(), cfg)?;
    NodeEmbedding::new(g.vertices().to_vec(), model.dim, model.input)
}

/// Hadamard product of two endpoint vectors.
pub fn edge_embedding(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(u.iter().zip(v).map(|(a, b)| a * b).collect())
}
