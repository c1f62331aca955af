//! Downstream evaluation: k-means clustering, clustering agreement
//! (confusion + purity), the direct vegetation-index tree representation,
//! cluster characterization, and nearest-band queries in both spaces.

mod classify;

pub use classify::{classification_harness, Classifier, FractionAccuracy};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banding::{assign_band, normalize_with, BandCell, BandTable, Quartiles, TokenId};
use crate::config::{AnalysisConfig, NeighborMetric};
use crate::embed::{CooccurrenceTable, EmbeddingModel};
use crate::error::{Error, Result};
use crate::segments::SegmentProfile;
use crate::vegindex::{VegIndex, INDEX_COUNT};

/// Which tree representation produced a clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    Embedding,
    Direct,
}

impl FeatureSpace {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSpace::Embedding => "embedding",
            FeatureSpace::Direct => "direct",
        }
    }
}

/// Cluster labels (1..=k) per tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub tree_ids: Vec<u32>,
    pub labels: Vec<u32>,
    pub k: usize,
    pub seed: u64,
    pub space: FeatureSpace,
}

impl ClusterAssignment {
    /// Tree ids belonging to one cluster.
    pub fn members(&self, cluster: u32) -> Vec<u32> {
        self.tree_ids
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == cluster)
            .map(|(t, _)| *t)
            .collect()
    }
}

/// Full k-means outcome; the inertia trace backs the monotonicity tests.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: ClusterAssignment,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with distance-weighted (k-means++ style) seeding.
/// Deterministic for a fixed seed; empty clusters are re-seeded with the
/// point farthest from its assigned centroid.
pub fn kmeans(
    features: &[Vec<f64>],
    tree_ids: &[u32],
    k: usize,
    seed: u64,
    space: FeatureSpace,
    cfg: &AnalysisConfig,
) -> Result<KMeansResult> {
    let n = features.len();
    if n != tree_ids.len() {
        return Err(Error::InvalidInput(
            "feature and tree-id counts disagree".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for f in features {
        if !distinct.contains(&f) {
            distinct.push(f);
        }
    }
    if distinct.len() < k {
        return Err(Error::InvalidInput(format!(
            "k-means needs at least {k} distinct points, found {}",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = features[0].len();

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(features[rng.gen_range(0..n)].clone());
    let mut nearest_sq: Vec<f64> = features
        .iter()
        .map(|f| squared_distance(f, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest_sq.iter().sum();
        let next = if total > 0.0 {
            let mut draw = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest_sq.iter().enumerate() {
                draw -= w;
                if draw <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All mass at the chosen centroids; distinctness guarantees an
            // unclaimed point exists.
            (0..n)
                .find(|i| nearest_sq[*i] > 0.0 || !centroids.contains(&features[*i]))
                .unwrap_or(0)
        };
        centroids.push(features[next].clone());
        for (i, f) in features.iter().enumerate() {
            nearest_sq[i] = nearest_sq[i].min(squared_distance(f, centroids.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;
    loop {
        // Assignment phase.
        let mut inertia = 0.0;
        for (i, f) in features.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(f, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            labels[i] = best;
            inertia += best_d;
        }
        inertia_history.push(inertia);
        iterations += 1;

        // Update phase.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, l) in features.iter().zip(&labels) {
            counts[*l] += 1;
            for (s, v) in sums[*l].iter_mut().zip(f) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed with the farthest point from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = squared_distance(&features[a], &centroids[labels[a]]);
                        let db = squared_distance(&features[b], &centroids[labels[b]]);
                        da.partial_cmp(&db).expect("finite distances")
                    })
                    .expect("nonempty input");
                centroids[c] = features[far].clone();
                labels[far] = c;
                reseeded = true;
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(squared_distance(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }

        if (!reseeded && shift < cfg.kmeans_tol) || iterations >= cfg.kmeans_max_iter {
            break;
        }
    }

    // Final assignment against the converged centroids.
    let mut inertia = 0.0;
    for (i, f) in features.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = squared_distance(f, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best;
        inertia += best_d;
    }

    Ok(KMeansResult {
        assignment: ClusterAssignment {
            tree_ids: tree_ids.to_vec(),
            labels: labels.iter().map(|l| *l as u32 + 1).collect(),
            k,
            seed,
            space,
        },
        centroids,
        inertia,
        inertia_history,
        iterations,
    })
}

fn aligned_labels(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<Vec<(u32, u32)>> {
    if a.tree_ids.len() != b.tree_ids.len() {
        return Err(Error::InvalidInput(
            "clusterings cover different tree sets".into(),
        ));
    }
    let mut b_by_tree: std::collections::BTreeMap<u32, u32> = std::collections::BTreeMap::new();
    for (t, l) in b.tree_ids.iter().zip(&b.labels) {
        b_by_tree.insert(*t, *l);
    }
    a.tree_ids
        .iter()
        .zip(&a.labels)
        .map(|(t, la)| {
            b_by_tree
                .get(t)
                .map(|lb| (*la, *lb))
                .ok_or_else(|| Error::InvalidInput(format!("tree {t} missing from one clustering")))
        })
        .collect()
}

/// Cell (i, j) counts the trees labeled i by `a` and j by `b`.
pub fn confusion(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<Vec<Vec<usize>>> {
    let pairs = aligned_labels(a, b)?;
    let mut matrix = vec![vec![0usize; b.k]; a.k];
    for (la, lb) in pairs {
        matrix[la as usize - 1][lb as usize - 1] += 1;
    }
    Ok(matrix)
}

/// Sum of row maxima of the confusion matrix over the tree count.
pub fn purity(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<f64> {
    let matrix = confusion(a, b)?;
    let total: usize = matrix.iter().flatten().sum();
    if total == 0 {
        return Err(Error::InvalidInput("clusterings cover no trees".into()));
    }
    let agree: usize = matrix
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(agree as f64 / total as f64)
}

/// Purity of an explicit confusion matrix.
pub fn purity_of_matrix(matrix: &[Vec<usize>]) -> f64 {
    let total: usize = matrix.iter().flatten().sum();
    let agree: usize = matrix
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    agree as f64 / total as f64
}

// ---------------------------------------------------------------------------
// Direct vegetation-index representation
// ---------------------------------------------------------------------------

/// Normalized per-segment index means of one tree (|S| x 21 entries,
/// segment-major in catalog order), outlier cells imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectTreeVector {
    pub tree_id: u32,
    pub values: Vec<f64>,
}

/// Coordinate layout shared by [`DirectTreeVector`] and cluster
/// characterization.
pub fn coordinate_of(position: usize, _n_segments: usize) -> (usize, VegIndex) {
    (
        position / INDEX_COUNT + 1,
        VegIndex::from_position(position % INDEX_COUNT).expect("coordinate in layout"),
    )
}

fn normalized_cell(
    profile: &SegmentProfile,
    table: &BandTable,
    tree_pos: usize,
    segment: usize,
    index: VegIndex,
) -> Option<f64> {
    match table.cell(tree_pos, segment, index) {
        BandCell::Band(_) => {
            let mean = profile.segments[segment - 1].means[index.position()]
                .expect("validated: banded cell has a mean");
            Some(normalize_with(table.stats(index), mean))
        }
        BandCell::Outlier => None,
    }
}

/// A band table and the profiles it was built from must agree: every banded
/// cell needs a segment mean to normalize.
fn check_profiles_match_table(
    profiles: &[SegmentProfile],
    table: &BandTable,
) -> Result<()> {
    for profile in profiles {
        let tree_pos = table.tree_position(profile.tree_id).ok_or_else(|| {
            Error::InvalidInput(format!("tree {} missing from band table", profile.tree_id))
        })?;
        if profile.segment_count() != table.n_segments() {
            return Err(Error::InvalidInput(format!(
                "tree {} has {} segments but the band table has {}",
                profile.tree_id,
                profile.segment_count(),
                table.n_segments()
            )));
        }
        for segment in 1..=table.n_segments() {
            for index in crate::vegindex::ALL_INDICES {
                let banded = matches!(table.cell(tree_pos, segment, index), BandCell::Band(_));
                let has_mean = profile.segments[segment - 1].means[index.position()].is_some();
                if banded && !has_mean {
                    return Err(Error::InvalidInput(format!(
                        "band table and segment profiles disagree at tree {}, segment {segment}, {}",
                        profile.tree_id,
                        index.name()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Scalar mirror of the embedding imputation rule: nearest valid segment's
/// normalized value, the average when two tie, 0.0 when the tree has none.
fn impute_scalar(
    profile: &SegmentProfile,
    table: &BandTable,
    tree_pos: usize,
    segment: usize,
    index: VegIndex,
) -> f64 {
    let n = table.n_segments();
    for k in 1..n {
        let below = segment
            .checked_sub(k)
            .filter(|s| *s >= 1)
            .and_then(|s| normalized_cell(profile, table, tree_pos, s, index));
        let above = (segment + k <= n)
            .then(|| normalized_cell(profile, table, tree_pos, segment + k, index))
            .flatten();
        match (below, above) {
            (Some(lo), Some(hi)) => return (lo + hi) / 2.0,
            (Some(only), None) | (None, Some(only)) => return only,
            (None, None) => {}
        }
    }
    log::warn!(
        "tree {} has no valid {} value in any segment; using 0.0",
        profile.tree_id,
        index.name()
    );
    0.0
}

/// Direct 105-dim (by default) representations for every profiled tree.
pub fn direct_vectors(
    profiles: &[SegmentProfile],
    table: &BandTable,
) -> Result<Vec<DirectTreeVector>> {
    check_profiles_match_table(profiles, table)?;
    let n = table.n_segments();
    profiles
        .iter()
        .map(|profile| {
            let tree_pos = table.tree_position(profile.tree_id).ok_or_else(|| {
                Error::InvalidInput(format!("tree {} missing from band table", profile.tree_id))
            })?;
            let mut values = Vec::with_capacity(n * INDEX_COUNT);
            for segment in 1..=n {
                for index in crate::vegindex::ALL_INDICES {
                    let value = normalized_cell(profile, table, tree_pos, segment, index)
                        .unwrap_or_else(|| {
                            impute_scalar(profile, table, tree_pos, segment, index)
                        });
                    values.push(value);
                }
            }
            Ok(DirectTreeVector {
                tree_id: profile.tree_id,
                values,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Cluster characterization
// ---------------------------------------------------------------------------

/// One characterizing coordinate of a cluster: its (segment, index) cell, the
/// member-majority band, and the per-coordinate mean squared deviation that
/// ranked it.
#[derive(Debug, Clone, PartialEq)]
pub struct BandDescriptor {
    pub segment: usize,
    pub index: VegIndex,
    pub band: u8,
    pub score: f64,
}

impl BandDescriptor {
    pub fn name(&self) -> String {
        TokenId::from_parts(self.index, self.band).name()
    }
}

/// Ranks the direct-representation coordinates of a cluster by ascending mean
/// squared deviation from the cluster centroid and names each with the
/// member-majority band (ties to the lower band).
pub fn characterize_cluster(
    member_ids: &[u32],
    direct: &[DirectTreeVector],
    table: &BandTable,
    top_n: usize,
) -> Result<Vec<BandDescriptor>> {
    let members: Vec<&DirectTreeVector> = direct
        .iter()
        .filter(|v| member_ids.contains(&v.tree_id))
        .collect();
    if members.is_empty() {
        return Err(Error::InvalidInput("cluster has no members".into()));
    }
    let dim = members[0].values.len();
    let count = members.len() as f64;

    let mut centroid = vec![0.0; dim];
    for member in &members {
        for (c, v) in centroid.iter_mut().zip(&member.values) {
            *c += v;
        }
    }
    for c in centroid.iter_mut() {
        *c /= count;
    }

    let mut deviation = vec![0.0; dim];
    for member in &members {
        for (d, (v, c)) in deviation.iter_mut().zip(member.values.iter().zip(&centroid)) {
            *d += (v - c) * (v - c);
        }
    }
    for d in deviation.iter_mut() {
        *d /= count;
    }

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        deviation[a]
            .partial_cmp(&deviation[b])
            .expect("finite deviations")
            .then(a.cmp(&b))
    });

    let n_segments = table.n_segments();
    Ok(order
        .into_iter()
        .take(top_n)
        .map(|position| {
            let (segment, index) = coordinate_of(position, n_segments);
            let band = majority_band(&members, table, segment, index, centroid[position]);
            BandDescriptor {
                segment,
                index,
                band,
                score: deviation[position],
            }
        })
        .collect())
}

fn majority_band(
    members: &[&DirectTreeVector],
    table: &BandTable,
    segment: usize,
    index: VegIndex,
    centroid_value: f64,
) -> u8 {
    let mut counts = [0usize; crate::banding::BAND_COUNT];
    for member in members {
        if let Some(tree_pos) = table.tree_position(member.tree_id) {
            if let BandCell::Band(b) = table.cell(tree_pos, segment, index) {
                counts[b as usize - 1] += 1;
            }
        }
    }
    match counts.iter().enumerate().max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i))) {
        Some((i, c)) if *c > 0 => i as u8 + 1,
        // All members are outliers for the cell: band the centroid value.
        _ => {
            let stats = table.stats(index);
            assign_band(
                centroid_value,
                &Quartiles {
                    q1: stats.q1,
                    q2: stats.q2,
                    q3: stats.q3,
                },
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Nearest bands
// ---------------------------------------------------------------------------

/// Tokens nearest to `token` in the embedding space (self excluded, ties by
/// token id).
pub fn nearest_bands_embedding(
    model: &EmbeddingModel,
    token: TokenId,
    n: usize,
    metric: NeighborMetric,
) -> Result<Vec<(TokenId, f64)>> {
    let anchor = model.embedding_column(token)?;
    let mut scored: Vec<(TokenId, f64)> = (1..=model.vocab() as u16)
        .filter(|t| *t != token.0)
        .map(|t| {
            let other = TokenId(t);
            let column = model.embedding_column(other).expect("token in range");
            let distance = match metric {
                NeighborMetric::Euclidean => squared_distance(anchor, column).sqrt(),
                NeighborMetric::Cosine => cosine_distance(anchor, column),
            };
            (other, distance)
        })
        .collect();
    scored.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("finite distances")
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(n);
    Ok(scored)
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

/// Tokens most similar to `token` by context-set Jaccard (self excluded,
/// ties by token id).
pub fn nearest_bands_direct(
    contexts: &CooccurrenceTable,
    token: TokenId,
    n: usize,
) -> Result<Vec<(TokenId, f64)>> {
    let vocab = contexts.vocab();
    if token.0 == 0 || token.0 as usize > vocab {
        return Err(Error::TokenOutOfRange {
            token: token.0 as usize,
            vocab,
        });
    }
    let mut scored: Vec<(TokenId, f64)> = (1..=vocab as u16)
        .filter(|t| *t != token.0)
        .map(|t| (TokenId(t), contexts.jaccard(token, TokenId(t))))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite similarities")
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(n);
    Ok(scored)
}
