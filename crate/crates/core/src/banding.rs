//! Equal-frequency banding of index values.
//!
//! Per index, over all (tree, segment) cells: min-max normalize, screen
//! outliers with the 1.5*IQR box-plot rule, then split the survivors into
//! four bands at the quartiles. The 4 x 21 = 84 bands form the embedding
//! vocabulary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segments::SegmentProfile;
use crate::vegindex::{VegIndex, ALL_INDICES, INDEX_COUNT};

pub const BAND_COUNT: usize = 4;
pub const VOCAB_SIZE: usize = BAND_COUNT * INDEX_COUNT;

/// Sentinel written for outlier cells in exported tables when the
/// paper-sentinel flag is set.
pub const OUTLIER_SENTINEL: i64 = -1_000_000;

pub const BAND_NAMES: [&str; BAND_COUNT] = ["Low", "Mid", "High", "Very High"];

/// One cell of the band table: a band id, or the marker shared by box-plot
/// outliers and upstream arithmetic hazards (identical from here on).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandCell {
    Band(u8),
    Outlier,
}

impl BandCell {
    pub fn band(self) -> Option<u8> {
        match self {
            BandCell::Band(b) => Some(b),
            BandCell::Outlier => None,
        }
    }
}

/// Vocabulary token: band `b` of catalog index `j` (both 1-based) has id
/// `(j - 1) * 4 + b`, so ids run 1..=84 with the default catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u16);

impl TokenId {
    pub fn from_parts(index: VegIndex, band: u8) -> Self {
        debug_assert!((1..=BAND_COUNT as u8).contains(&band));
        TokenId((index.position() * BAND_COUNT) as u16 + band as u16)
    }

    pub fn index(self) -> VegIndex {
        VegIndex::from_position((self.0 as usize - 1) / BAND_COUNT).expect("token in vocabulary")
    }

    pub fn band(self) -> u8 {
        ((self.0 as usize - 1) % BAND_COUNT) as u8 + 1
    }

    /// 0-based position in the vocabulary.
    pub fn position(self) -> usize {
        self.0 as usize - 1
    }

    /// Display name such as "Low NDVI" or "Very High SRI".
    pub fn name(self) -> String {
        format!("{} {}", BAND_NAMES[self.band() as usize - 1], self.index().name())
    }

    /// Parses "<band> <INDEX>"; accepts the "V. High" abbreviation.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        let (band_name, index_name) = text.rsplit_once(' ')?;
        let index = VegIndex::from_name(index_name)?;
        let band_name = band_name.trim();
        let band = if band_name.eq_ignore_ascii_case("V. High") {
            4
        } else {
            BAND_NAMES
                .iter()
                .position(|n| n.eq_ignore_ascii_case(band_name))? as u8
                + 1
        };
        Some(TokenId::from_parts(index, band))
    }
}

/// Per-index column statistics captured while building the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: f64,
    pub max: f64,
    /// Box-plot fences over the normalized column; equal to the full range
    /// when the column was too small to screen.
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Band ids per (tree, segment, index) plus the per-index statistics that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    tree_ids: Vec<u32>,
    n_segments: usize,
    /// Flattened [tree][segment][index].
    cells: Vec<BandCell>,
    stats: Vec<ColumnStats>,
}

impl BandTable {
    pub fn tree_ids(&self) -> &[u32] {
        &self.tree_ids
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn stats(&self, index: VegIndex) -> &ColumnStats {
        &self.stats[index.position()]
    }

    pub fn tree_position(&self, tree_id: u32) -> Option<usize> {
        self.tree_ids.iter().position(|t| *t == tree_id)
    }

    /// Cell by tree position, 1-based segment, and index.
    pub fn cell(&self, tree_pos: usize, segment: usize, index: VegIndex) -> BandCell {
        self.cells[(tree_pos * self.n_segments + segment - 1) * INDEX_COUNT + index.position()]
    }

    /// Context id of a (tree position, 1-based segment) pair; contexts count
    /// |T| * |S|.
    pub fn context_id(&self, tree_pos: usize, segment: usize) -> u32 {
        (tree_pos * self.n_segments + segment - 1) as u32
    }

    pub fn context_count(&self) -> usize {
        self.tree_ids.len() * self.n_segments
    }

    /// Builds a table from explicit cells; fixtures and artifact loading use
    /// this.
    pub fn from_parts(
        tree_ids: Vec<u32>,
        n_segments: usize,
        cells: Vec<BandCell>,
        stats: Vec<ColumnStats>,
    ) -> Result<Self> {
        if cells.len() != tree_ids.len() * n_segments * INDEX_COUNT {
            return Err(Error::InvalidInput(format!(
                "band table needs {} cells, got {}",
                tree_ids.len() * n_segments * INDEX_COUNT,
                cells.len()
            )));
        }
        if stats.len() != INDEX_COUNT {
            return Err(Error::InvalidInput(format!(
                "band table needs {INDEX_COUNT} column stats, got {}",
                stats.len()
            )));
        }
        Ok(Self {
            tree_ids,
            n_segments,
            cells,
            stats,
        })
    }
}

/// Quartile by linear interpolation between order statistics (the common
/// convention; numpy's default). `sorted` must be ascending and nonempty.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Quartile triple of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

fn sorted_present(column: &[Option<f64>]) -> Vec<f64> {
    let mut values: Vec<f64> = column.iter().filter_map(|v| *v).collect();
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    values
}

/// Min-max normalizes the non-missing entries of a column into [0, 1];
/// a constant column maps to all zeros. Missing entries pass through.
pub fn minmax_normalize(column: &[Option<f64>]) -> Result<(Vec<Option<f64>>, f64, f64)> {
    let present = sorted_present(column);
    if present.is_empty() {
        return Err(Error::InvalidInput(
            "cannot normalize an all-missing column".into(),
        ));
    }
    let (min, max) = (present[0], present[present.len() - 1]);
    let range = max - min;
    let normalized = column
        .iter()
        .map(|v| {
            v.map(|x| if range == 0.0 { 0.0 } else { (x - min) / range })
        })
        .collect();
    Ok((normalized, min, max))
}

/// Box-plot fences of a column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fences {
    pub lower: f64,
    pub upper: f64,
}

/// Marks values outside [Q1 - 1.5*IQR, Q3 + 1.5*IQR] as missing. Columns with
/// fewer than 4 non-missing values are passed through unscreened with a
/// warning.
pub fn detect_outliers(column: &[Option<f64>]) -> (Vec<Option<f64>>, Option<Fences>) {
    let present = sorted_present(column);
    if present.len() < 4 {
        log::warn!(
            "outlier screening skipped: only {} values present",
            present.len()
        );
        return (column.to_vec(), None);
    }
    let q1 = quantile_linear(&present, 0.25);
    let q3 = quantile_linear(&present, 0.75);
    let iqr = q3 - q1;
    let fences = Fences {
        lower: q1 - 1.5 * iqr,
        upper: q3 + 1.5 * iqr,
    };
    let screened = column
        .iter()
        .map(|v| v.filter(|x| *x >= fences.lower && *x <= fences.upper))
        .collect();
    (screened, Some(fences))
}

/// Quartiles of the surviving values; the band thresholds.
pub fn band_thresholds(column: &[Option<f64>]) -> Result<Quartiles> {
    let present = sorted_present(column);
    if present.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "band thresholds need at least 4 surviving values, got {}",
            present.len()
        )));
    }
    Ok(Quartiles {
        q1: quantile_linear(&present, 0.25),
        q2: quantile_linear(&present, 0.5),
        q3: quantile_linear(&present, 0.75),
    })
}

/// Band of a normalized value: 1 if v <= Q1, 2 if v <= Q2, 3 if v <= Q3,
/// else 4.
pub fn assign_band(value: f64, q: &Quartiles) -> u8 {
    if value <= q.q1 {
        1
    } else if value <= q.q2 {
        2
    } else if value <= q.q3 {
        3
    } else {
        4
    }
}

/// Runs normalize -> screen -> threshold -> assign for every index column of
/// the profiles.
pub fn build_band_table(profiles: &[SegmentProfile]) -> Result<BandTable> {
    if profiles.is_empty() {
        return Err(Error::InvalidInput("no segment profiles".into()));
    }
    let n_segments = profiles[0].segment_count();
    if profiles.iter().any(|p| p.segment_count() != n_segments) {
        return Err(Error::InvalidInput(
            "profiles disagree on segment count".into(),
        ));
    }
    let tree_ids: Vec<u32> = profiles.iter().map(|p| p.tree_id).collect();
    let cell_count = tree_ids.len() * n_segments;

    let mut cells = vec![BandCell::Outlier; cell_count * INDEX_COUNT];
    let mut stats = Vec::with_capacity(INDEX_COUNT);

    for index in ALL_INDICES {
        let position = index.position();
        let column: Vec<Option<f64>> = profiles
            .iter()
            .flat_map(|p| p.segments.iter().map(move |s| s.means[position]))
            .collect();

        let (normalized, min, max) = minmax_normalize(&column)
            .map_err(|_| Error::InvalidInput(format!("index {} has no values", index.name())))?;
        let (screened, fences) = detect_outliers(&normalized);
        let quartiles = band_thresholds(&screened)?;
        let fences = fences.unwrap_or(Fences {
            lower: 0.0,
            upper: 1.0,
        });
        stats.push(ColumnStats {
            min,
            max,
            lower_fence: fences.lower,
            upper_fence: fences.upper,
            q1: quartiles.q1,
            q2: quartiles.q2,
            q3: quartiles.q3,
        });

        for (cell_idx, value) in screened.iter().enumerate() {
            cells[cell_idx * INDEX_COUNT + position] = match value {
                Some(v) => BandCell::Band(assign_band(*v, &quartiles)),
                None => BandCell::Outlier,
            };
        }
    }

    BandTable::from_parts(tree_ids, n_segments, cells, stats)
}

/// Normalized value of a profile cell under the table's column bounds.
pub fn normalize_with(stats: &ColumnStats, value: f64) -> f64 {
    let range = stats.max - stats.min;
    if range == 0.0 {
        0.0
    } else {
        (value - stats.min) / range
    }
}
