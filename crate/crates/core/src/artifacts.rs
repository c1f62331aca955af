//! On-disk formats for every stage artifact: CSV tables with header rows,
//! JSON summaries, and SHA-256 digests for the run manifest.
//!
//! All writers are deterministic: fixed column orders, row orders inherited
//! from the inputs, and floats printed with the shortest round-trip
//! representation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{BandDescriptor, ClusterAssignment, DirectTreeVector, FeatureSpace, FractionAccuracy};
use crate::banding::{BandCell, BandTable, ColumnStats, TokenId, OUTLIER_SENTINEL};
use crate::error::{Error, Result};
use crate::segments::{SegmentProfile, SegmentStats};
use crate::synth::CrownTruth;
use crate::treevec::TreeEmbedding;
use crate::treex::TreeRegion;
use crate::vegindex::{PixelIndexRow, VegIndex, ALL_INDICES, INDEX_COUNT};

fn write_error(path: &Path, e: csv::Error) -> Error {
    Error::artifact(path, format!("write: {e}"))
}

fn read_error(path: &Path, e: csv::Error) -> Error {
    Error::artifact(path, format!("read: {e}"))
}

fn parse_field<T: std::str::FromStr>(path: &Path, field: &str, what: &str) -> Result<T> {
    field
        .trim()
        .parse::<T>()
        .map_err(|_| Error::artifact(path, format!("bad {what} value `{field}`")))
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| read_error(path, e))
}

fn field<'a>(path: &Path, record: &'a csv::StringRecord, idx: usize) -> Result<&'a str> {
    record
        .get(idx)
        .ok_or_else(|| Error::artifact(path, format!("row is missing column {idx}")))
}

fn optional_float(path: &Path, field: &str) -> Result<Option<f64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_field(path, field, "float").map(Some)
    }
}

// ---------------------------------------------------------------------------
// Tree masks
// ---------------------------------------------------------------------------

pub fn write_trees(path: &Path, trees: &[TreeRegion]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["tree_id", "x", "y"]).map_err(|e| write_error(path, e))?;
    for tree in trees {
        for (x, y) in &tree.pixels {
            w.write_record([tree.id.to_string(), x.to_string(), y.to_string()])
                .map_err(|e| write_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trees(path: &Path) -> Result<Vec<TreeRegion>> {
    let mut reader = open_reader(path)?;
    let mut by_id: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        let id: u32 = parse_field(path, field(path, &record, 0)?, "tree_id")?;
        let x: u32 = parse_field(path, field(path, &record, 1)?, "x")?;
        let y: u32 = parse_field(path, field(path, &record, 2)?, "y")?;
        by_id.entry(id).or_default().push((x, y));
    }
    Ok(by_id
        .into_iter()
        .map(|(id, pixels)| TreeRegion { id, pixels })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub tree_count: usize,
    pub sizes: Vec<usize>,
}

pub fn write_tree_summary(path: &Path, trees: &[TreeRegion]) -> Result<()> {
    let summary = TreeSummary {
        tree_count: trees.len(),
        sizes: trees.iter().map(|t| t.pixel_count()).collect(),
    };
    write_json(path, &summary)
}

// ---------------------------------------------------------------------------
// Per-pixel indices
// ---------------------------------------------------------------------------

pub fn write_index_rows(path: &Path, rows: &[PixelIndexRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    let mut header = vec!["tree_id".to_string(), "x".to_string(), "y".to_string()];
    header.extend(ALL_INDICES.iter().map(|i| i.name().to_string()));
    w.write_record(&header).map_err(|e| write_error(path, e))?;
    for row in rows {
        let mut record = vec![row.tree_id.to_string(), row.x.to_string(), row.y.to_string()];
        record.extend(row.values.iter().map(|v| match v {
            Some(v) => v.to_string(),
            None => String::new(),
        }));
        w.write_record(&record).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_index_rows(path: &Path) -> Result<Vec<PixelIndexRow>> {
    let mut reader = open_reader(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        if record.len() != 3 + INDEX_COUNT {
            return Err(Error::artifact(path, "wrong column count"));
        }
        let mut values = [None; INDEX_COUNT];
        for (slot, field) in values.iter_mut().zip(record.iter().skip(3)) {
            *slot = optional_float(path, field)?;
        }
        rows.push(PixelIndexRow {
            tree_id: parse_field(path, field(path, &record, 0)?, "tree_id")?,
            x: parse_field(path, field(path, &record, 1)?, "x")?,
            y: parse_field(path, field(path, &record, 2)?, "y")?,
            values,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Segment profiles
// ---------------------------------------------------------------------------

pub fn write_profiles(path: &Path, profiles: &[SegmentProfile]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    let mut header = vec![
        "tree_id".to_string(),
        "segment".to_string(),
        "pixel_count".to_string(),
    ];
    header.extend(ALL_INDICES.iter().map(|i| i.name().to_string()));
    w.write_record(&header).map_err(|e| write_error(path, e))?;
    for profile in profiles {
        for (s, stats) in profile.segments.iter().enumerate() {
            let mut record = vec![
                profile.tree_id.to_string(),
                (s + 1).to_string(),
                stats.pixel_count.to_string(),
            ];
            record.extend(stats.means.iter().map(|v| match v {
                Some(v) => v.to_string(),
                None => String::new(),
            }));
            w.write_record(&record).map_err(|e| write_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_profiles(path: &Path) -> Result<Vec<SegmentProfile>> {
    let mut reader = open_reader(path)?;
    let mut order: Vec<u32> = Vec::new();
    let mut by_tree: BTreeMap<u32, Vec<(usize, SegmentStats)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        if record.len() != 3 + INDEX_COUNT {
            return Err(Error::artifact(path, "wrong column count"));
        }
        let tree_id: u32 = parse_field(path, field(path, &record, 0)?, "tree_id")?;
        let segment: usize = parse_field(path, field(path, &record, 1)?, "segment")?;
        let pixel_count: usize = parse_field(path, field(path, &record, 2)?, "pixel_count")?;
        let mut means = [None; INDEX_COUNT];
        for (slot, field) in means.iter_mut().zip(record.iter().skip(3)) {
            *slot = optional_float(path, field)?;
        }
        if !order.contains(&tree_id) {
            order.push(tree_id);
        }
        by_tree
            .entry(tree_id)
            .or_default()
            .push((segment, SegmentStats { pixel_count, means }));
    }
    order
        .into_iter()
        .map(|tree_id| {
            let mut segments = by_tree.remove(&tree_id).expect("tree recorded");
            segments.sort_by_key(|(s, _)| *s);
            for (expected, (s, _)) in segments.iter().enumerate() {
                if *s != expected + 1 {
                    return Err(Error::artifact(
                        path,
                        format!("tree {tree_id} segments are not 1..=n"),
                    ));
                }
            }
            Ok(SegmentProfile {
                tree_id,
                segments: segments.into_iter().map(|(_, s)| s).collect(),
            })
        })
        .collect()
}

/// Long-format monotone-trend histogram: one row per (index, run length).
pub fn write_monotone_histogram(path: &Path, histograms: &[(VegIndex, Vec<usize>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["index", "run_length", "trees"])
        .map_err(|e| write_error(path, e))?;
    for (index, histogram) in histograms {
        for (l, count) in histogram.iter().enumerate() {
            w.write_record([index.name().to_string(), (l + 1).to_string(), count.to_string()])
                .map_err(|e| write_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Band table
// ---------------------------------------------------------------------------

pub fn write_band_table(path: &Path, table: &BandTable, paper_sentinel: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["tree_id", "segment", "index", "band"])
        .map_err(|e| write_error(path, e))?;
    for (pos, tree_id) in table.tree_ids().iter().enumerate() {
        for segment in 1..=table.n_segments() {
            for index in ALL_INDICES {
                let band = match table.cell(pos, segment, index) {
                    BandCell::Band(b) => b.to_string(),
                    BandCell::Outlier if paper_sentinel => OUTLIER_SENTINEL.to_string(),
                    BandCell::Outlier => String::new(),
                };
                w.write_record([
                    tree_id.to_string(),
                    segment.to_string(),
                    index.name().to_string(),
                    band,
                ])
                .map_err(|e| write_error(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub index: String,
    #[serde(flatten)]
    pub stats: ColumnStats,
}

pub fn write_thresholds(path: &Path, table: &BandTable) -> Result<()> {
    let entries: Vec<ThresholdEntry> = ALL_INDICES
        .iter()
        .map(|index| ThresholdEntry {
            index: index.name().to_string(),
            stats: *table.stats(*index),
        })
        .collect();
    write_json(path, &entries)
}

pub fn read_band_table(bands_path: &Path, thresholds_path: &Path) -> Result<BandTable> {
    let text =
        std::fs::read_to_string(thresholds_path).map_err(|e| Error::io(thresholds_path, e))?;
    let entries: Vec<ThresholdEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::artifact(thresholds_path, format!("parse: {e}")))?;
    if entries.len() != INDEX_COUNT {
        return Err(Error::artifact(thresholds_path, "wrong entry count"));
    }
    let mut stats = Vec::with_capacity(INDEX_COUNT);
    for (entry, index) in entries.iter().zip(ALL_INDICES) {
        if entry.index != index.name() {
            return Err(Error::artifact(
                thresholds_path,
                format!("expected {} at its catalog position", index.name()),
            ));
        }
        stats.push(entry.stats);
    }

    let mut reader = open_reader(bands_path)?;
    let mut order: Vec<u32> = Vec::new();
    let mut cells_by_key: BTreeMap<(u32, usize, usize), BandCell> = BTreeMap::new();
    let mut max_segment = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| read_error(bands_path, e))?;
        let tree_id: u32 = parse_field(bands_path, field(bands_path, &record, 0)?, "tree_id")?;
        let segment: usize = parse_field(bands_path, field(bands_path, &record, 1)?, "segment")?;
        let index_name = field(bands_path, &record, 2)?.trim();
        let index = VegIndex::from_name(index_name)
            .ok_or_else(|| Error::artifact(bands_path, format!("unknown index `{index_name}`")))?;
        let band_field = field(bands_path, &record, 3)?.trim();
        let cell = if band_field.is_empty() || band_field == OUTLIER_SENTINEL.to_string() {
            BandCell::Outlier
        } else {
            let band: u8 = parse_field(bands_path, band_field, "band")?;
            if !(1..=4).contains(&band) {
                return Err(Error::artifact(bands_path, format!("band {band} out of range")));
            }
            BandCell::Band(band)
        };
        if !order.contains(&tree_id) {
            order.push(tree_id);
        }
        max_segment = max_segment.max(segment);
        cells_by_key.insert((tree_id, segment, index.position()), cell);
    }
    if order.is_empty() {
        return Err(Error::artifact(bands_path, "no band rows"));
    }
    let mut cells = Vec::with_capacity(order.len() * max_segment * INDEX_COUNT);
    for tree_id in &order {
        for segment in 1..=max_segment {
            for position in 0..INDEX_COUNT {
                let cell = cells_by_key
                    .get(&(*tree_id, segment, position))
                    .ok_or_else(|| {
                        Error::artifact(
                            bands_path,
                            format!("missing cell (tree {tree_id}, segment {segment})"),
                        )
                    })?;
                cells.push(*cell);
            }
        }
    }
    BandTable::from_parts(order, max_segment, cells, stats)
}

// ---------------------------------------------------------------------------
// Training outputs
// ---------------------------------------------------------------------------

pub fn write_loss_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["epoch", "loss"]).map_err(|e| write_error(path, e))?;
    for (epoch, loss) in history.iter().enumerate() {
        w.write_record([epoch.to_string(), loss.to_string()])
            .map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Embedding matrix as one row per token in vocabulary order.
pub fn write_embedding_matrix(path: &Path, model: &crate::embed::EmbeddingModel) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    let header: Vec<String> = (0..model.embed_dim()).map(|d| format!("dim_{d}")).collect();
    w.write_record(&header).map_err(|e| write_error(path, e))?;
    for t in 1..=model.vocab() as u16 {
        let column = model.embedding_column(TokenId(t))?;
        let record: Vec<String> = column.iter().map(|v| v.to_string()).collect();
        w.write_record(&record).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Vector tables (embedding and direct)
// ---------------------------------------------------------------------------

fn write_vector_rows(path: &Path, rows: &[(u32, &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    let dim = rows.first().map_or(0, |(_, v)| v.len());
    let mut header = vec!["tree_id".to_string()];
    header.extend((0..dim).map(|c| format!("c{c}")));
    w.write_record(&header).map_err(|e| write_error(path, e))?;
    for (tree_id, values) in rows {
        let mut record = vec![tree_id.to_string()];
        record.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_vector_rows(path: &Path) -> Result<Vec<(u32, Vec<f64>)>> {
    let mut reader = open_reader(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        let tree_id: u32 = parse_field(path, field(path, &record, 0)?, "tree_id")?;
        let values = record
            .iter()
            .skip(1)
            .map(|f| parse_field(path, f, "vector entry"))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((tree_id, values));
    }
    Ok(rows)
}

pub fn write_tree_vectors(path: &Path, vectors: &[TreeEmbedding]) -> Result<()> {
    let rows: Vec<(u32, &[f64])> = vectors
        .iter()
        .map(|v| (v.tree_id, v.values.as_slice()))
        .collect();
    write_vector_rows(path, &rows)
}

pub fn read_tree_vectors(path: &Path) -> Result<Vec<TreeEmbedding>> {
    Ok(read_vector_rows(path)?
        .into_iter()
        .map(|(tree_id, values)| TreeEmbedding { tree_id, values })
        .collect())
}

pub fn write_direct_vectors(path: &Path, vectors: &[DirectTreeVector]) -> Result<()> {
    let rows: Vec<(u32, &[f64])> = vectors
        .iter()
        .map(|v| (v.tree_id, v.values.as_slice()))
        .collect();
    write_vector_rows(path, &rows)
}

pub fn read_direct_vectors(path: &Path) -> Result<Vec<DirectTreeVector>> {
    Ok(read_vector_rows(path)?
        .into_iter()
        .map(|(tree_id, values)| DirectTreeVector { tree_id, values })
        .collect())
}

// ---------------------------------------------------------------------------
// Clustering artifacts
// ---------------------------------------------------------------------------

pub fn write_clusters(path: &Path, assignment: &ClusterAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["tree_id", "cluster"]).map_err(|e| write_error(path, e))?;
    for (tree_id, label) in assignment.tree_ids.iter().zip(&assignment.labels) {
        w.write_record([tree_id.to_string(), label.to_string()])
            .map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_clusters(path: &Path, space: FeatureSpace) -> Result<ClusterAssignment> {
    let mut reader = open_reader(path)?;
    let mut tree_ids = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        tree_ids.push(parse_field(path, field(path, &record, 0)?, "tree_id")?);
        labels.push(parse_field(path, field(path, &record, 1)?, "cluster")?);
    }
    let k = labels.iter().copied().max().unwrap_or(0) as usize;
    if k == 0 {
        return Err(Error::artifact(path, "no cluster rows"));
    }
    Ok(ClusterAssignment {
        tree_ids,
        labels,
        k,
        seed: 0,
        space,
    })
}

pub fn write_confusion(path: &Path, matrix: &[Vec<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    let columns = matrix.first().map_or(0, |r| r.len());
    let mut header = vec!["cluster".to_string()];
    header.extend((1..=columns).map(|j| j.to_string()));
    w.write_record(&header).map_err(|e| write_error(path, e))?;
    for (i, row) in matrix.iter().enumerate() {
        let mut record = vec![(i + 1).to_string()];
        record.extend(row.iter().map(|c| c.to_string()));
        w.write_record(&record).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuritySummary {
    pub purity: f64,
    pub trees: usize,
}

pub fn write_accuracy(path: &Path, rows: &[FractionAccuracy]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["test_fraction", "mean_accuracy", "completed"])
        .map_err(|e| write_error(path, e))?;
    for row in rows {
        w.write_record([
            row.test_fraction.to_string(),
            row.mean_accuracy.to_string(),
            row.completed.to_string(),
        ])
        .map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_characterization(path: &Path, ranked: &[BandDescriptor]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["rank", "segment", "index", "band", "band_label", "score"])
        .map_err(|e| write_error(path, e))?;
    for (rank, descriptor) in ranked.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            descriptor.segment.to_string(),
            descriptor.index.name().to_string(),
            descriptor.band.to_string(),
            descriptor.name(),
            descriptor.score.to_string(),
        ])
        .map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_neighbors(path: &Path, neighbors: &[(TokenId, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["rank", "token_id", "token_name", "score"])
        .map_err(|e| write_error(path, e))?;
    for (rank, (token, score)) in neighbors.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            token.0.to_string(),
            token.name(),
            score.to_string(),
        ])
        .map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Synth ground truth
// ---------------------------------------------------------------------------

pub fn write_truth(path: &Path, truths: &[CrownTruth]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["crown_id", "x", "y"]).map_err(|e| write_error(path, e))?;
    for truth in truths {
        for (x, y) in &truth.pixels {
            w.write_record([truth.id.to_string(), x.to_string(), y.to_string()])
                .map_err(|e| write_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Crown id paired with its ground-truth pixel set.
pub type TruthPixels = (u32, Vec<(u32, u32)>);

pub fn read_truth(path: &Path) -> Result<Vec<TruthPixels>> {
    let mut reader = open_reader(path)?;
    let mut by_id: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        let id: u32 = parse_field(path, field(path, &record, 0)?, "crown_id")?;
        let x: u32 = parse_field(path, field(path, &record, 1)?, "x")?;
        let y: u32 = parse_field(path, field(path, &record, 2)?, "y")?;
        by_id.entry(id).or_default().push((x, y));
    }
    Ok(by_id.into_iter().collect())
}

// ---------------------------------------------------------------------------
// JSON + digests
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::artifact(path, format!("serialize: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::artifact(path, format!("parse: {e}")))
}

/// SHA-256 of a file, hex-encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_encode(&hasher.finalize()))
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::banding::build_band_table;
    use crate::segments::SegmentStats;
    use proptest::prelude::*;

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn trees_round_trip() {
        let trees = vec![
            TreeRegion {
                id: 1,
                pixels: vec![(0, 0), (1, 0), (1, 1)],
            },
            TreeRegion {
                id: 2,
                pixels: vec![(5, 5)],
            },
        ];
        let d = dir();
        let path = d.path().join("trees.csv");
        write_trees(&path, &trees).unwrap();
        assert_eq!(read_trees(&path).unwrap(), trees);
    }

    #[test]
    fn index_rows_round_trip_with_missing() {
        let mut values = [Some(0.5); INDEX_COUNT];
        values[3] = None;
        values[20] = Some(-1.25e-7);
        let rows = vec![PixelIndexRow {
            tree_id: 4,
            x: 10,
            y: 11,
            values,
        }];
        let d = dir();
        let path = d.path().join("indices.csv");
        write_index_rows(&path, &rows).unwrap();
        assert_eq!(read_index_rows(&path).unwrap(), rows);
    }

    fn sample_profiles() -> Vec<SegmentProfile> {
        (1..=3u32)
            .map(|tree_id| SegmentProfile {
                tree_id,
                segments: (0..4)
                    .map(|s| {
                        let mut means = [None; INDEX_COUNT];
                        for (i, slot) in means.iter_mut().enumerate() {
                            if (s + i) % 7 != 0 {
                                *slot = Some(tree_id as f64 + s as f64 * 0.25 + i as f64 * 0.01);
                            }
                        }
                        SegmentStats {
                            pixel_count: 3 + s,
                            means,
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn profiles_round_trip() {
        let profiles = sample_profiles();
        let d = dir();
        let path = d.path().join("segments.csv");
        write_profiles(&path, &profiles).unwrap();
        assert_eq!(read_profiles(&path).unwrap(), profiles);
    }

    #[test]
    fn band_table_round_trips_with_and_without_sentinel() {
        // Build a real table so stats and cells are coherent.
        let mut profiles = sample_profiles();
        // Plant a wild value so at least one outlier cell exists.
        profiles[2].segments[3].means[0] = Some(1e9);
        let table = build_band_table(&profiles).unwrap();
        let d = dir();
        let bands = d.path().join("bands.csv");
        let thresholds = d.path().join("thresholds.json");
        write_thresholds(&thresholds, &table).unwrap();

        write_band_table(&bands, &table, false).unwrap();
        assert_eq!(read_band_table(&bands, &thresholds).unwrap(), table);

        write_band_table(&bands, &table, true).unwrap();
        let text = std::fs::read_to_string(&bands).unwrap();
        assert!(text.contains("-1000000"));
        assert_eq!(read_band_table(&bands, &thresholds).unwrap(), table);
    }

    #[test]
    fn vectors_round_trip() {
        let vectors = vec![
            TreeEmbedding {
                tree_id: 1,
                values: vec![0.25, -1.5, 3.0e-9],
            },
            TreeEmbedding {
                tree_id: 2,
                values: vec![1.0, 2.0, 3.0],
            },
        ];
        let d = dir();
        let path = d.path().join("tree_vectors.csv");
        write_tree_vectors(&path, &vectors).unwrap();
        assert_eq!(read_tree_vectors(&path).unwrap(), vectors);
    }

    #[test]
    fn clusters_round_trip() {
        let assignment = ClusterAssignment {
            tree_ids: vec![3, 1, 7],
            labels: vec![2, 1, 2],
            k: 2,
            seed: 0,
            space: FeatureSpace::Direct,
        };
        let d = dir();
        let path = d.path().join("clusters.csv");
        write_clusters(&path, &assignment).unwrap();
        let loaded = read_clusters(&path, FeatureSpace::Direct).unwrap();
        assert_eq!(loaded, assignment);
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let d = dir();
        let path = d.path().join("file.txt");
        std::fs::write(&path, "abc").unwrap();
        let a = file_digest(&path).unwrap();
        assert_eq!(
            a,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        std::fs::write(&path, "abd").unwrap();
        assert_ne!(file_digest(&path).unwrap(), a);
    }

    proptest! {
        /// Float fields survive the CSV round trip bit-exactly.
        #[test]
        fn vector_floats_round_trip(values in proptest::collection::vec(-1e12f64..1e12, 1..30)) {
            let d = dir();
            let path = d.path().join("v.csv");
            let vectors = vec![TreeEmbedding { tree_id: 1, values: values.clone() }];
            write_tree_vectors(&path, &vectors).unwrap();
            let loaded = read_tree_vectors(&path).unwrap();
            prop_assert_eq!(loaded[0].values.clone(), values);
        }
    }
}
