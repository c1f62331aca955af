//! Tree extraction: leaf-pixel filtering, grid-based connectivity, and
//! depth-first indexing of individual crowns.

use crate::config::{IndexConfig, LeafFilterConfig};
use crate::hypercube::Hypercube;
use crate::vegindex::{compute_index, VegIndex};

/// Per-pixel classification flags for one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafMask {
    width: usize,
    height: usize,
    is_leaf: Vec<bool>,
    in_connected_grid: Vec<bool>,
}

/// One indexed crown: the leaf pixels of a connected component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeRegion {
    /// 1-based id in discovery order.
    pub id: u32,
    /// Leaf pixels, sorted row-major.
    pub pixels: Vec<(u32, u32)>,
}

impl TreeRegion {
    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }
}

/// Leaf test for a single pixel: ARI2 and SIPI above their thresholds plus
/// the three brightness conditions. Arithmetic hazards inside ARI2/SIPI
/// classify the pixel as non-leaf.
pub fn is_leaf(cube: &Hypercube, x: usize, y: usize, cfg: &LeafFilterConfig) -> bool {
    // ARI2 and SIPI only sample fixed wavelengths, so the default index
    // config is not a tunable here.
    let index_cfg = IndexConfig::default();
    let ari2 = match compute_index(cube, x, y, VegIndex::Ari2, &index_cfg) {
        Some(v) => v,
        None => return false,
    };
    let sipi = match compute_index(cube, x, y, VegIndex::Sipi, &index_cfg) {
        Some(v) => v,
        None => return false,
    };
    let s = |nm: f64| cube.value(x, y, cube.nearest_channel(nm)) as f64;
    ari2 > cfg.min_ari2
        && sipi > cfg.min_sipi
        && s(900.0) < cfg.max_p900
        && s(780.0) > cfg.min_p780
        && s(660.0) < cfg.max_p660
}

impl LeafMask {
    /// Classifies every pixel of the cube; connectivity flags start cleared.
    pub fn classify(cube: &Hypercube, cfg: &LeafFilterConfig) -> Self {
        let (width, height) = (cube.width(), cube.height());
        let mut leaf = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                leaf[y * width + x] = is_leaf(cube, x, y, cfg);
            }
        }
        Self {
            width,
            height,
            is_leaf: leaf,
            in_connected_grid: vec![false; width * height],
        }
    }

    /// Builds a mask directly from flags; fixtures use this.
    pub fn from_flags(width: usize, height: usize, is_leaf: Vec<bool>) -> Self {
        assert_eq!(is_leaf.len(), width * height);
        Self {
            width,
            height,
            is_leaf,
            in_connected_grid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_leaf(&self, x: usize, y: usize) -> bool {
        self.is_leaf[y * self.width + x]
    }

    pub fn in_connected_grid(&self, x: usize, y: usize) -> bool {
        self.in_connected_grid[y * self.width + x]
    }

    pub fn leaf_count(&self) -> usize {
        self.is_leaf.iter().filter(|b| **b).count()
    }

    /// Tiles the image with non-overlapping `k` x `k` grids (border grids may
    /// be smaller) and flags every pixel of each grid holding at least
    /// `min_leaf` leaf pixels. Previous connectivity flags are recomputed.
    pub fn mark_connected_grids(&mut self, k: usize, min_leaf: usize) {
        assert!(k >= 2, "grid side must be at least 2");
        self.in_connected_grid.fill(false);
        let mut gy = 0;
        while gy < self.height {
            let y_end = (gy + k).min(self.height);
            let mut gx = 0;
            while gx < self.width {
                let x_end = (gx + k).min(self.width);
                let mut count = 0;
                for y in gy..y_end {
                    for x in gx..x_end {
                        if self.is_leaf(x, y) {
                            count += 1;
                        }
                    }
                }
                if count >= min_leaf {
                    for y in gy..y_end {
                        for x in gx..x_end {
                            self.in_connected_grid[y * self.width + x] = true;
                        }
                    }
                }
                gx += k;
            }
            gy += k;
        }
    }
}

/// Offsets of the 8-neighborhood, in row-major order.
const NEIGHBORS_8: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Depth-first component labeling over connected-grid pixels. Each component
/// keeps only its leaf pixels; components retaining fewer than `min_pixels`
/// are dropped, and survivors are numbered 1.. in discovery order (seeds
/// scanned row-major).
pub fn extract_trees(mask: &LeafMask, min_pixels: usize) -> Vec<TreeRegion> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut trees = Vec::new();
    let mut stack = Vec::new();

    for sy in 0..h {
        for sx in 0..w {
            let seed = sy * w + sx;
            if visited[seed] || !mask.in_connected_grid[seed] {
                continue;
            }
            visited[seed] = true;
            stack.push((sx, sy));
            let mut retained: Vec<(u32, u32)> = Vec::new();
            while let Some((x, y)) = stack.pop() {
                if mask.is_leaf(x, y) {
                    retained.push((x as u32, y as u32));
                }
                for (dx, dy) in NEIGHBORS_8 {
                    let nx = x as i32 + dx;
                    let ny = y as i32 + dy;
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let ni = ny as usize * w + nx as usize;
                    if !visited[ni] && mask.in_connected_grid[ni] {
                        visited[ni] = true;
                        stack.push((nx as usize, ny as usize));
                    }
                }
            }
            if retained.len() >= min_pixels {
                retained.sort_unstable_by_key(|&(x, y)| (y, x));
                trees.push(TreeRegion {
                    id: trees.len() as u32 + 1,
                    pixels: retained,
                });
            }
        }
    }
    trees
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::CubeBuilder;
    use proptest::prelude::*;
    use std::collections::{HashMap, HashSet};

    /// Wavelengths the leaf filter touches.
    fn filter_axis() -> Vec<f64> {
        vec![445.0, 550.0, 660.0, 680.0, 700.0, 780.0, 800.0, 900.0]
    }

    /// Spectrum passing every default filter condition.
    /// ARI2 = 4300*(1/400 - 1/700) = 4.61; SIPI = 4100/4530 = 0.905.
    fn leafy_spectrum() -> Vec<(f64, u16)> {
        vec![
            (445.0, 200),
            (550.0, 400),
            (660.0, 250),
            (680.0, 230),
            (700.0, 700),
            (780.0, 4200),
            (800.0, 4300),
            (900.0, 4500),
        ]
    }

    fn cube_with_spectra(width: usize, height: usize, spectra: &[Vec<(f64, u16)>]) -> Hypercube {
        let axis = filter_axis();
        let mut builder = CubeBuilder::new(width, height, axis.clone());
        for (i, spectrum) in spectra.iter().enumerate() {
            let (x, y) = (i % width, i / width);
            for (nm, v) in spectrum {
                let c = axis.iter().position(|w| w == nm).unwrap();
                builder.set(x, y, c, *v);
            }
        }
        builder.build().unwrap()
    }

    fn with_band(mut spectrum: Vec<(f64, u16)>, nm: f64, value: u16) -> Vec<(f64, u16)> {
        for (w, v) in spectrum.iter_mut() {
            if *w == nm {
                *v = value;
            }
        }
        spectrum
    }

    #[test]
    fn leaf_filter_accepts_canopy_and_rejects_single_violations() {
        let cfg = LeafFilterConfig::default();
        let cube = cube_with_spectra(
            4,
            1,
            &[
                leafy_spectrum(),
                with_band(leafy_spectrum(), 780.0, 2000), // P780 too dark
                with_band(leafy_spectrum(), 660.0, 1500), // P660 too bright
                with_band(leafy_spectrum(), 900.0, 6500), // P900 too bright
            ],
        );
        assert!(is_leaf(&cube, 0, 0, &cfg));
        assert!(!is_leaf(&cube, 1, 0, &cfg));
        assert!(!is_leaf(&cube, 2, 0, &cfg));
        assert!(!is_leaf(&cube, 3, 0, &cfg));
    }

    #[test]
    fn leaf_filter_rejects_low_ari2_and_hazards() {
        let cfg = LeafFilterConfig::default();
        // p550 = p700 makes ARI2 exactly 0; p550 = 0 is a reciprocal hazard.
        let cube = cube_with_spectra(
            2,
            1,
            &[
                with_band(leafy_spectrum(), 550.0, 700),
                with_band(leafy_spectrum(), 550.0, 0),
            ],
        );
        assert!(!is_leaf(&cube, 0, 0, &cfg));
        assert!(!is_leaf(&cube, 1, 0, &cfg));
    }

    #[test]
    fn grid_flags_require_min_leaf_count() {
        // One 4x4 grid with exactly 10 leaf pixels, one with 9.
        let mut flags = vec![false; 8 * 4];
        for i in 0..10 {
            let (x, y) = (i % 4, i / 4);
            flags[y * 8 + x] = true;
        }
        for i in 0..9 {
            let (x, y) = (4 + i % 4, i / 4);
            flags[y * 8 + x] = true;
        }
        let mut mask = LeafMask::from_flags(8, 4, flags);
        mask.mark_connected_grids(4, 10);
        let left: usize = (0..4)
            .flat_map(|y| (0..4).map(move |x| (x, y)))
            .filter(|&(x, y)| mask.in_connected_grid(x, y))
            .count();
        let right: usize = (0..4)
            .flat_map(|y| (4..8).map(move |x| (x, y)))
            .filter(|&(x, y)| mask.in_connected_grid(x, y))
            .count();
        assert_eq!(left, 16); // all 16 pixels flagged, non-leaf ones included
        assert_eq!(right, 0);
    }

    #[test]
    fn zero_threshold_flags_every_grid() {
        let mut mask = LeafMask::from_flags(6, 6, vec![false; 36]);
        mask.mark_connected_grids(4, 0);
        assert!((0..6).all(|y| (0..6).all(|x| mask.in_connected_grid(x, y))));
    }

    #[test]
    fn border_grids_use_the_same_absolute_threshold() {
        // 6-wide image with k=4 leaves a 2x4 border grid (8 pixels): it can
        // never reach a 10-leaf threshold.
        let mut flags = vec![false; 6 * 4];
        for y in 0..4 {
            for x in 4..6 {
                flags[y * 6 + x] = true;
            }
        }
        let mut mask = LeafMask::from_flags(6, 4, flags);
        mask.mark_connected_grids(4, 10);
        assert!(!(0..6).any(|x| mask.in_connected_grid(x, 0)));
        // With threshold 8 the full border grid qualifies.
        mask.mark_connected_grids(4, 8);
        assert!(mask.in_connected_grid(4, 0) && mask.in_connected_grid(5, 0));
        assert!(!mask.in_connected_grid(0, 0));
    }

    fn blob_mask(blobs: &[&[(usize, usize)]], width: usize, height: usize) -> LeafMask {
        let mut flags = vec![false; width * height];
        for blob in blobs {
            for &(x, y) in *blob {
                flags[y * width + x] = true;
            }
        }
        let mut mask = LeafMask::from_flags(width, height, flags);
        // Flag connectivity directly from leaf flags for these fixtures.
        mask.mark_connected_grids(2, 1);
        mask
    }

    #[test]
    fn single_component_keeps_leaf_pixels_only() {
        let blob: Vec<(usize, usize)> = (0..50).map(|i| (i % 10, i / 10)).collect();
        let mask = blob_mask(&[&blob], 16, 16);
        let trees = extract_trees(&mask, 40);
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].id, 1);
        assert_eq!(trees[0].pixel_count(), 50);
        assert!(trees[0]
            .pixels
            .iter()
            .all(|&(x, y)| mask.is_leaf(x as usize, y as usize)));
    }

    #[test]
    fn undersized_component_is_dropped() {
        let blob: Vec<(usize, usize)> = (0..39).map(|i| (i % 10, i / 10)).collect();
        let mask = blob_mask(&[&blob], 16, 16);
        assert!(extract_trees(&mask, 40).is_empty());
    }

    #[test]
    fn discovery_order_numbers_upper_left_blob_first() {
        let upper: Vec<(usize, usize)> = (0..48).map(|i| (i % 8, i / 8)).collect();
        let lower: Vec<(usize, usize)> = (0..48).map(|i| (12 + i % 8, 14 + i / 8)).collect();
        // Deliberately pass the lower blob first; scan order must win.
        let mask = blob_mask(&[&lower, &upper], 24, 24);
        let trees = extract_trees(&mask, 40);
        assert_eq!(trees.len(), 2);
        let first: HashSet<_> = trees[0].pixels.iter().copied().collect();
        assert!(first.contains(&(0, 0)));
        assert_eq!(trees[0].id, 1);
        assert_eq!(trees[1].id, 2);
    }

    /// Flood-fill labeling oracle: independent BFS over an explicit adjacency
    /// check, returning the partition of retained leaf pixels.
    fn flood_fill_oracle(mask: &LeafMask, min_pixels: usize) -> Vec<HashSet<(u32, u32)>> {
        let (w, h) = (mask.width(), mask.height());
        let mut seen = vec![false; w * h];
        let mut components = Vec::new();
        for sy in 0..h {
            for sx in 0..w {
                if seen[sy * w + sx] || !mask.in_connected_grid(sx, sy) {
                    continue;
                }
                let mut queue = std::collections::VecDeque::from([(sx, sy)]);
                seen[sy * w + sx] = true;
                let mut members = HashSet::new();
                while let Some((x, y)) = queue.pop_front() {
                    if mask.is_leaf(x, y) {
                        members.insert((x as u32, y as u32));
                    }
                    for dy in -1i32..=1 {
                        for dx in -1i32..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                                continue;
                            }
                            let (nx, ny) = (nx as usize, ny as usize);
                            if !seen[ny * w + nx] && mask.in_connected_grid(nx, ny) {
                                seen[ny * w + nx] = true;
                                queue.push_back((nx, ny));
                            }
                        }
                    }
                }
                if members.len() >= min_pixels {
                    components.push(members);
                }
            }
        }
        components
    }

    proptest! {
        /// Components agree with the flood-fill oracle on random small masks,
        /// and tree pixel sets are pairwise disjoint leaf pixels.
        #[test]
        fn components_match_flood_fill_oracle(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (14usize, 11usize);
            let flags: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.4)).collect();
            let mut mask = LeafMask::from_flags(w, h, flags);
            mask.mark_connected_grids(3, rng.gen_range(1..=4));

            let trees = extract_trees(&mask, 1);
            let oracle = flood_fill_oracle(&mask, 1);
            prop_assert_eq!(trees.len(), oracle.len());

            let mut seen_pixels: HashMap<(u32, u32), u32> = HashMap::new();
            for tree in &trees {
                for p in &tree.pixels {
                    prop_assert!(mask.is_leaf(p.0 as usize, p.1 as usize));
                    prop_assert!(seen_pixels.insert(*p, tree.id).is_none(), "pixel sets overlap");
                }
                let set: HashSet<_> = tree.pixels.iter().copied().collect();
                prop_assert!(oracle.contains(&set), "component not found in oracle");
            }
        }

        /// Tightening any filter threshold never increases the leaf count.
        #[test]
        fn leaf_filter_is_monotone_in_thresholds(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let spectra: Vec<Vec<(f64, u16)>> = (0..12)
                .map(|_| {
                    filter_axis()
                        .iter()
                        .map(|nm| (*nm, rng.gen_range(0..=8000u16)))
                        .collect()
                })
                .collect();
            let cube = cube_with_spectra(4, 3, &spectra);
            let count = |cfg: &LeafFilterConfig| {
                LeafMask::classify(&cube, cfg).leaf_count()
            };
            let base = LeafFilterConfig::default();
            let baseline = count(&base);

            let mut tighter = base.clone();
            tighter.min_ari2 += 0.5;
            prop_assert!(count(&tighter) <= baseline);

            let mut tighter = base.clone();
            tighter.min_sipi += 0.05;
            prop_assert!(count(&tighter) <= baseline);

            let mut tighter = base.clone();
            tighter.min_p780 += 1000.0;
            prop_assert!(count(&tighter) <= baseline);

            let mut tighter = base.clone();
            tighter.max_p900 -= 1000.0;
            prop_assert!(count(&tighter) <= baseline);

            let mut tighter = base.clone();
            tighter.max_p660 -= 500.0;
            prop_assert!(count(&tighter) <= baseline);
        }
    }
}
