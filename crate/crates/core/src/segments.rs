//! Concentric crown segments: geometry from the farthest pixel pair, ring
//! assignment, per-segment index means, and center-to-outer monotone runs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::treex::TreeRegion;
use crate::vegindex::{PixelIndexRow, INDEX_COUNT};

/// Crown center and radius derived from the farthest pixel pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeGeometry {
    pub center: (f64, f64),
    pub radius: f64,
}

impl TreeGeometry {
    /// A zero radius can only arise from a degenerate (single-pixel) region.
    pub fn is_degenerate(&self) -> bool {
        self.radius == 0.0
    }
}

/// Per-segment pixel count and index means for one tree. Segment 1 is the
/// central disc; the rest are rings in center-to-outer order.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentProfile {
    pub tree_id: u32,
    pub segments: Vec<SegmentStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    pub pixel_count: usize,
    pub means: [Option<f64>; INDEX_COUNT],
}

impl SegmentProfile {
    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Means of one index across segments, center to outer.
    pub fn index_means(&self, position: usize) -> Vec<Option<f64>> {
        self.segments.iter().map(|s| s.means[position]).collect()
    }
}

/// Midpoint and half-distance of the exact farthest pixel pair (all pairs;
/// ties resolve to the lexicographically first pair over pixels sorted by
/// (x, y)).
pub fn tree_geometry(region: &TreeRegion) -> TreeGeometry {
    assert!(!region.pixels.is_empty(), "region must be nonempty");
    let mut pixels = region.pixels.clone();
    pixels.sort_unstable();
    let mut best = (pixels[0], pixels[0]);
    let mut best_d2 = 0u64;
    for i in 0..pixels.len() {
        for j in (i + 1)..pixels.len() {
            let dx = pixels[i].0 as i64 - pixels[j].0 as i64;
            let dy = pixels[i].1 as i64 - pixels[j].1 as i64;
            let d2 = (dx * dx + dy * dy) as u64;
            if d2 > best_d2 {
                best_d2 = d2;
                best = (pixels[i], pixels[j]);
            }
        }
    }
    let (a, b) = best;
    TreeGeometry {
        center: (
            (a.0 as f64 + b.0 as f64) / 2.0,
            (a.1 as f64 + b.1 as f64) / 2.0,
        ),
        radius: (best_d2 as f64).sqrt() / 2.0,
    }
}

/// Segment of one pixel: ceil(d * n / r) clamped to [1, n]. The center maps
/// to segment 1, and pixels beyond the radius (possible because the
/// farthest-pair midpoint is not the minimum enclosing circle center) clamp
/// to the outermost ring.
pub fn segment_of(distance: f64, radius: f64, n_segments: usize) -> u8 {
    assert!(n_segments >= 1);
    if radius <= 0.0 || distance <= 0.0 {
        return 1;
    }
    let raw = (distance * n_segments as f64 / radius).ceil() as i64;
    raw.clamp(1, n_segments as i64) as u8
}

/// Assigns every region pixel its segment, aligned with `region.pixels`.
pub fn assign_segments(
    region: &TreeRegion,
    geometry: &TreeGeometry,
    n_segments: usize,
) -> Vec<u8> {
    region
        .pixels
        .iter()
        .map(|&(x, y)| {
            let dx = x as f64 - geometry.center.0;
            let dy = y as f64 - geometry.center.1;
            segment_of((dx * dx + dy * dy).sqrt(), geometry.radius, n_segments)
        })
        .collect()
}

/// Arithmetic mean of each index over each segment, skipping missing entries;
/// a segment with no valid value for an index gets a missing mean.
pub fn segment_means(
    region: &TreeRegion,
    assignment: &[u8],
    rows: &[PixelIndexRow],
    n_segments: usize,
) -> Result<SegmentProfile> {
    if assignment.len() != region.pixels.len() {
        return Err(Error::InvalidInput(
            "segment assignment does not cover the region".into(),
        ));
    }
    let by_pixel: BTreeMap<(u32, u32), &PixelIndexRow> =
        rows.iter().map(|r| ((r.x, r.y), r)).collect();

    let mut sums = vec![[0.0f64; INDEX_COUNT]; n_segments];
    let mut counts = vec![[0usize; INDEX_COUNT]; n_segments];
    let mut pixel_counts = vec![0usize; n_segments];

    for (pixel, segment) in region.pixels.iter().zip(assignment) {
        let row = by_pixel.get(pixel).ok_or_else(|| {
            Error::InvalidInput(format!(
                "no index row for region pixel ({}, {})",
                pixel.0, pixel.1
            ))
        })?;
        let s = (*segment as usize) - 1;
        pixel_counts[s] += 1;
        for (i, value) in row.values.iter().enumerate() {
            if let Some(v) = value {
                sums[s][i] += v;
                counts[s][i] += 1;
            }
        }
    }

    let segments = (0..n_segments)
        .map(|s| {
            let mut means = [None; INDEX_COUNT];
            for i in 0..INDEX_COUNT {
                if counts[s][i] > 0 {
                    means[i] = Some(sums[s][i] / counts[s][i] as f64);
                }
            }
            SegmentStats {
                pixel_count: pixel_counts[s],
                means,
            }
        })
        .collect();

    Ok(SegmentProfile {
        tree_id: region.id,
        segments,
    })
}

/// Two segment means whose difference is at aggregation-rounding scale are
/// ties: summing a constant column over segments of different sizes already
/// perturbs the last few ulps, and a strict comparison must not turn that
/// into a trend.
fn effectively_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Length (in segments) of the longest strictly increasing or strictly
/// decreasing center-to-outer run. Ties (including float-noise-level
/// differences) and missing means break runs; fewer than two comparable
/// segments yield 1.
pub fn monotone_run(values: &[Option<f64>]) -> usize {
    let mut best = 1usize;
    let mut inc = 0usize; // run lengths, 0 while no value seen
    let mut dec = 0usize;
    let mut prev: Option<f64> = None;
    for value in values {
        match (prev, value) {
            (_, None) => {
                inc = 0;
                dec = 0;
                prev = None;
            }
            (None, Some(_)) => {
                inc = 1;
                dec = 1;
                prev = *value;
            }
            (Some(p), Some(v)) => {
                let tie = effectively_equal(*v, p);
                inc = if *v > p && !tie { inc + 1 } else { 1 };
                dec = if *v < p && !tie { dec + 1 } else { 1 };
                best = best.max(inc).max(dec);
                prev = *value;
            }
        }
    }
    best
}

/// Count of trees per longest-run length 1..=n_segments for one index;
/// entry `l - 1` holds the number of trees whose longest run spans `l`
/// segments.
pub fn monotone_histogram(
    profiles: &[SegmentProfile],
    position: usize,
    n_segments: usize,
) -> Vec<usize> {
    let mut histogram = vec![0usize; n_segments];
    for profile in profiles {
        let run = monotone_run(&profile.index_means(position));
        histogram[(run - 1).min(n_segments - 1)] += 1;
    }
    histogram
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn region(pixels: Vec<(u32, u32)>) -> TreeRegion {
        TreeRegion { id: 1, pixels }
    }

    #[test]
    fn two_point_geometry() {
        let g = tree_geometry(&region(vec![(0, 0), (4, 0)]));
        assert_eq!(g.center, (2.0, 0.0));
        assert_relative_eq!(g.radius, 2.0);
    }

    #[test]
    fn unit_square_breaks_tie_lexicographically() {
        let g = tree_geometry(&region(vec![(0, 0), (1, 0), (0, 1), (1, 1)]));
        assert_eq!(g.center, (0.5, 0.5));
        assert_relative_eq!(g.radius, std::f64::consts::SQRT_2 / 2.0);
    }

    #[test]
    fn single_pixel_region_is_degenerate() {
        let g = tree_geometry(&region(vec![(3, 3)]));
        assert!(g.is_degenerate());
        assert_eq!(segment_of(0.0, g.radius, 5), 1);
    }

    #[test]
    fn geometry_matches_all_pairs_oracle_on_random_blob() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut pixels = std::collections::BTreeSet::new();
        while pixels.len() < 60 {
            pixels.insert((rng.gen_range(0..30u32), rng.gen_range(0..30u32)));
        }
        let pixels: Vec<_> = pixels.into_iter().collect();
        let g = tree_geometry(&region(pixels.clone()));

        // Quadratic-scan oracle over f64 distances.
        let mut best = 0.0f64;
        for a in &pixels {
            for b in &pixels {
                let d = ((a.0 as f64 - b.0 as f64).powi(2)
                    + (a.1 as f64 - b.1 as f64).powi(2))
                .sqrt();
                best = best.max(d);
            }
        }
        assert_relative_eq!(g.radius, best / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn ring_arithmetic_examples() {
        assert_eq!(segment_of(0.0, 10.0, 5), 1);
        assert_eq!(segment_of(3.5, 10.0, 5), 2);
        assert_eq!(segment_of(2.0, 10.0, 5), 1); // boundary stays inner
        let beyond = 0.9 * 10.0 * 3.0f64.sqrt();
        assert_eq!(segment_of(beyond, 10.0, 5), 5); // clamped to outer ring
    }

    fn rows_for(region: &TreeRegion, value: impl Fn(u32, u32, usize) -> Option<f64>) -> Vec<PixelIndexRow> {
        region
            .pixels
            .iter()
            .map(|&(x, y)| {
                let mut values = [None; INDEX_COUNT];
                for (i, slot) in values.iter_mut().enumerate() {
                    *slot = value(x, y, i);
                }
                PixelIndexRow {
                    tree_id: region.id,
                    x,
                    y,
                    values,
                }
            })
            .collect()
    }

    #[test]
    fn means_skip_missing_and_mark_empty_cells() {
        let r = region(vec![(0, 0), (1, 0)]);
        let assignment = vec![1u8, 1u8];
        let rows = rows_for(&r, |x, _y, i| match (x, i) {
            (0, 0) => Some(0.2),
            (1, 0) => Some(0.4),
            (0, 1) => Some(0.2),
            (1, 1) => None,
            _ => None,
        });
        let profile = segment_means(&r, &assignment, &rows, 2).unwrap();
        assert_eq!(profile.segments[0].pixel_count, 2);
        assert_relative_eq!(profile.segments[0].means[0].unwrap(), 0.3);
        assert_relative_eq!(profile.segments[0].means[1].unwrap(), 0.2);
        assert_eq!(profile.segments[0].means[2], None);
        assert_eq!(profile.segments[1].pixel_count, 0);
        assert_eq!(profile.segments[1].means[0], None);
    }

    #[test]
    fn means_match_group_by_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pixels: Vec<(u32, u32)> = (0..40).map(|i| (i % 8, i / 8)).collect();
        let r = region(pixels);
        let assignment: Vec<u8> = (0..40).map(|_| rng.gen_range(1..=3u8)).collect();
        let rows = rows_for(&r, |x, y, i| {
            if (x + y + i as u32).is_multiple_of(5) {
                None
            } else {
                Some((x * 31 + y * 7) as f64 + i as f64 * 0.01)
            }
        });
        let profile = segment_means(&r, &assignment, &rows, 3).unwrap();

        // Flat group-by-and-average oracle.
        for s in 0..3 {
            for i in 0..INDEX_COUNT {
                let values: Vec<f64> = r
                    .pixels
                    .iter()
                    .zip(&assignment)
                    .filter(|(_, seg)| **seg as usize == s + 1)
                    .filter_map(|(&(x, y), _)| {
                        rows.iter()
                            .find(|row| row.x == x && row.y == y)
                            .and_then(|row| row.values[i])
                    })
                    .collect();
                let expected = if values.is_empty() {
                    None
                } else {
                    Some(values.iter().sum::<f64>() / values.len() as f64)
                };
                match (profile.segments[s].means[i], expected) {
                    (Some(a), Some(b)) => assert_relative_eq!(a, b, max_relative = 1e-12),
                    (a, b) => assert_eq!(a, b),
                }
            }
        }
    }

    #[test]
    fn missing_rows_are_rejected() {
        let r = region(vec![(0, 0), (1, 0)]);
        let rows = rows_for(&region(vec![(0, 0)]), |_, _, _| Some(1.0));
        assert!(segment_means(&r, &[1, 1], &rows, 2).is_err());
    }

    #[test]
    fn monotone_run_examples() {
        let seq = |v: &[f64]| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
        assert_eq!(monotone_run(&seq(&[0.1, 0.2, 0.3, 0.4, 0.5])), 5);
        assert_eq!(monotone_run(&seq(&[0.3, 0.3, 0.3, 0.3, 0.3])), 1);
        assert_eq!(monotone_run(&seq(&[0.1, 0.2, 0.15, 0.1, 0.05])), 4);
        assert_eq!(monotone_run(&[Some(0.1), None, Some(0.2)]), 1);
        assert_eq!(monotone_run(&[None, None, None]), 1);
        assert_eq!(monotone_run(&[Some(0.5)]), 1);
        assert_eq!(monotone_run(&[Some(0.1), None, Some(0.2), Some(0.3), Some(0.4)]), 3);
    }

    #[test]
    fn aggregation_rounding_does_not_fabricate_runs() {
        // Means of a constant column over segments of different sizes: the
        // values differ only in the last few ulps and must count as ties.
        let x = 25.0 / 28.0;
        let means: Vec<Option<f64>> = [180usize, 538, 896, 1250, 1503]
            .iter()
            .map(|n| {
                let mut sum = 0.0;
                for _ in 0..*n {
                    sum += x;
                }
                Some(sum / *n as f64)
            })
            .collect();
        assert_eq!(monotone_run(&means), 1);
    }

    /// Exhaustive oracle: longest strictly monotone contiguous span with no
    /// missing values, enumerated over all (start, end) windows.
    fn run_oracle(values: &[Option<f64>]) -> usize {
        let mut best = 1;
        for start in 0..values.len() {
            'window: for end in start..values.len() {
                let window = &values[start..=end];
                if window.iter().any(|v| v.is_none()) {
                    continue 'window;
                }
                let w: Vec<f64> = window.iter().map(|v| v.unwrap()).collect();
                let increasing = w.windows(2).all(|p| p[1] > p[0]);
                let decreasing = w.windows(2).all(|p| p[1] < p[0]);
                if increasing || decreasing {
                    best = best.max(w.len());
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn monotone_run_matches_exhaustive_oracle(
            values in proptest::collection::vec(
                proptest::option::weighted(0.85, -3i32..=3), 1..=8
            )
        ) {
            let values: Vec<Option<f64>> =
                values.iter().map(|v| v.map(|x| x as f64)).collect();
            prop_assert_eq!(monotone_run(&values), run_oracle(&values));
        }

        #[test]
        fn segment_assignment_is_total_and_in_range(
            seed in 0u64..300, n in 2usize..=8
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pixels = std::collections::BTreeSet::new();
            let count = rng.gen_range(2..60usize);
            while pixels.len() < count {
                pixels.insert((rng.gen_range(0..25u32), rng.gen_range(0..25u32)));
            }
            let r = region(pixels.into_iter().collect());
            let g = tree_geometry(&r);
            let assignment = assign_segments(&r, &g, n);
            prop_assert_eq!(assignment.len(), r.pixels.len());
            for s in &assignment {
                prop_assert!((1..=n as u8).contains(s));
            }
        }

        #[test]
        fn fully_monotone_profile_has_full_run(n in 2usize..=8, rising in proptest::bool::ANY) {
            let values: Vec<Option<f64>> = (0..n)
                .map(|i| {
                    let v = i as f64 * 0.1;
                    Some(if rising { v } else { -v })
                })
                .collect();
            prop_assert_eq!(monotone_run(&values), n);
        }
    }

    #[test]
    fn histogram_aggregates_runs() {
        let profile = |means: [Option<f64>; 5]| SegmentProfile {
            tree_id: 0,
            segments: means
                .iter()
                .map(|m| {
                    let mut all = [None; INDEX_COUNT];
                    all[0] = *m;
                    SegmentStats {
                        pixel_count: 1,
                        means: all,
                    }
                })
                .collect(),
        };
        let rising = profile([Some(0.1), Some(0.2), Some(0.3), Some(0.4), Some(0.5)]);
        let profiles = vec![rising.clone(), rising.clone(), rising];
        let histogram = monotone_histogram(&profiles, 0, 5);
        assert_eq!(histogram, vec![0, 0, 0, 0, 3]);
        assert_eq!(monotone_histogram(&[], 0, 5), vec![0; 5]);
    }
}
