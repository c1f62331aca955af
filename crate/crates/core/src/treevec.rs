//! Per-tree embedding vectors: the band embeddings of every (segment, index)
//! cell concatenated segments center-to-outer, indices in catalog order, with
//! nearest-segment imputation for outlier cells.

use crate::banding::{BandCell, BandTable, TokenId};
use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::vegindex::{VegIndex, ALL_INDICES};

/// Concatenated band-embedding vector of one tree
/// (|S| x |Indices| x embed_dim entries; 5 x 21 x 64 = 6720 by default).
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEmbedding {
    pub tree_id: u32,
    pub values: Vec<f64>,
}

fn cell_embedding(
    table: &BandTable,
    model: &EmbeddingModel,
    tree_pos: usize,
    segment: usize,
    index: VegIndex,
) -> Result<Option<Vec<f64>>> {
    match table.cell(tree_pos, segment, index) {
        BandCell::Band(b) => {
            let column = model.embedding_column(TokenId::from_parts(index, b))?;
            Ok(Some(column.to_vec()))
        }
        BandCell::Outlier => Ok(None),
    }
}

/// Embedding for an outlier cell: the valid band embedding of the nearest
/// segment (same tree, same index), the element-wise average when two
/// segments tie at the minimal ring distance, or zeros when the tree has no
/// valid band for the index at all.
pub fn impute_cell(
    table: &BandTable,
    model: &EmbeddingModel,
    tree_pos: usize,
    segment: usize,
    index: VegIndex,
) -> Result<Vec<f64>> {
    let n = table.n_segments();
    for k in 1..n {
        let below = segment
            .checked_sub(k)
            .filter(|s| *s >= 1)
            .map(|s| cell_embedding(table, model, tree_pos, s, index))
            .transpose()?
            .flatten();
        let above = (segment + k <= n)
            .then(|| cell_embedding(table, model, tree_pos, segment + k, index))
            .transpose()?
            .flatten();
        match (below, above) {
            (Some(lo), Some(hi)) => {
                return Ok(lo
                    .iter()
                    .zip(&hi)
                    .map(|(a, b)| (a + b) / 2.0)
                    .collect());
            }
            (Some(only), None) | (None, Some(only)) => return Ok(only),
            (None, None) => {}
        }
    }
    log::warn!(
        "tree {} has no valid {} band in any segment; using the zero embedding",
        table.tree_ids()[tree_pos],
        index.name()
    );
    Ok(vec![0.0; model.embed_dim()])
}

/// Assembles the tree vector: segments center-to-outer, indices in catalog
/// order within each segment, embedding dimensions within each index.
pub fn tree_vector(table: &BandTable, model: &EmbeddingModel, tree_id: u32) -> Result<TreeEmbedding> {
    let tree_pos = table
        .tree_position(tree_id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown tree id {tree_id}")))?;
    let n = table.n_segments();
    let mut values = Vec::with_capacity(n * ALL_INDICES.len() * model.embed_dim());
    for segment in 1..=n {
        for index in ALL_INDICES {
            match cell_embedding(table, model, tree_pos, segment, index)? {
                Some(column) => values.extend_from_slice(&column),
                None => values.extend(impute_cell(table, model, tree_pos, segment, index)?),
            }
        }
    }
    Ok(TreeEmbedding { tree_id, values })
}

/// Tree vectors for every tree in the table, in table order.
pub fn all_tree_vectors(table: &BandTable, model: &EmbeddingModel) -> Result<Vec<TreeEmbedding>> {
    table
        .tree_ids()
        .iter()
        .map(|id| tree_vector(table, model, *id))
        .collect()
}
