//! The 21-entry hyperspectral vegetation-index catalog.
//!
//! Every formula samples reflectance at named wavelengths, each resolved to
//! the closest available spectral channel. Broadband tokens (NIR, Red, Green,
//! Blue) map to configurable wavelengths. Arithmetic hazards (zero
//! denominators, negative radicands) yield a missing value instead of
//! propagating non-finite numbers.

use serde::{Deserialize, Serialize};

use crate::config::IndexConfig;
use crate::hypercube::Hypercube;
use crate::treex::TreeRegion;

pub const INDEX_COUNT: usize = 21;

/// Catalog entries in their fixed order; this order defines the layout of the
/// band vocabulary and of every per-index artifact column downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VegIndex {
    Ari1,
    Ari2,
    Arvi,
    Cri1,
    Cri2,
    Evi,
    Mcari,
    Mcari2,
    Mrenvi,
    Mresri,
    Ndvi,
    Pri,
    Psri,
    Rendvi,
    Sri,
    Sipi,
    Tcari,
    Vrei1,
    Vrei2,
    Vrei3,
    Wbi,
}

pub const ALL_INDICES: [VegIndex; INDEX_COUNT] = [
    VegIndex::Ari1,
    VegIndex::Ari2,
    VegIndex::Arvi,
    VegIndex::Cri1,
    VegIndex::Cri2,
    VegIndex::Evi,
    VegIndex::Mcari,
    VegIndex::Mcari2,
    VegIndex::Mrenvi,
    VegIndex::Mresri,
    VegIndex::Ndvi,
    VegIndex::Pri,
    VegIndex::Psri,
    VegIndex::Rendvi,
    VegIndex::Sri,
    VegIndex::Sipi,
    VegIndex::Tcari,
    VegIndex::Vrei1,
    VegIndex::Vrei2,
    VegIndex::Vrei3,
    VegIndex::Wbi,
];

impl VegIndex {
    pub fn name(self) -> &'static str {
        match self {
            VegIndex::Ari1 => "ARI1",
            VegIndex::Ari2 => "ARI2",
            VegIndex::Arvi => "ARVI",
            VegIndex::Cri1 => "CRI1",
            VegIndex::Cri2 => "CRI2",
            VegIndex::Evi => "EVI",
            VegIndex::Mcari => "MCARI",
            VegIndex::Mcari2 => "MCARI2",
            VegIndex::Mrenvi => "MRENVI",
            VegIndex::Mresri => "MRESRI",
            VegIndex::Ndvi => "NDVI",
            VegIndex::Pri => "PRI",
            VegIndex::Psri => "PSRI",
            VegIndex::Rendvi => "RENDVI",
            VegIndex::Sri => "SRI",
            VegIndex::Sipi => "SIPI",
            VegIndex::Tcari => "TCARI",
            VegIndex::Vrei1 => "VREI1",
            VegIndex::Vrei2 => "VREI2",
            VegIndex::Vrei3 => "VREI3",
            VegIndex::Wbi => "WBI",
        }
    }

    /// 0-based position in the catalog order.
    pub fn position(self) -> usize {
        ALL_INDICES.iter().position(|i| *i == self).expect("in catalog")
    }

    pub fn from_position(position: usize) -> Option<Self> {
        ALL_INDICES.get(position).copied()
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ALL_INDICES.iter().copied().find(|i| i.name() == name)
    }

    /// Wavelengths (nm) the formula samples, broadband tokens resolved.
    pub fn wavelengths(self, cfg: &IndexConfig) -> Vec<f64> {
        let bb = &cfg.broadband;
        match self {
            VegIndex::Ari1 => vec![550.0, 700.0],
            VegIndex::Ari2 => vec![550.0, 700.0, 800.0],
            VegIndex::Arvi => vec![bb.nir, bb.red, bb.blue],
            VegIndex::Cri1 => vec![510.0, 550.0],
            VegIndex::Cri2 => vec![510.0, 700.0],
            VegIndex::Evi => vec![bb.nir, bb.red, bb.blue],
            VegIndex::Mcari => vec![550.0, 670.0, 700.0],
            VegIndex::Mcari2 => vec![bb.nir, bb.red, bb.green],
            VegIndex::Mrenvi => vec![445.0, 700.0, 705.0, 750.0],
            VegIndex::Mresri => vec![445.0, 705.0, 750.0],
            VegIndex::Ndvi => vec![bb.nir, bb.red],
            VegIndex::Pri => vec![531.0, 570.0],
            VegIndex::Psri => vec![500.0, 680.0, 750.0],
            VegIndex::Rendvi => vec![705.0, 750.0],
            VegIndex::Sri => vec![bb.nir, bb.red],
            VegIndex::Sipi => vec![445.0, 680.0, 800.0],
            VegIndex::Tcari => vec![550.0, 670.0, 700.0],
            VegIndex::Vrei1 => vec![720.0, 740.0],
            VegIndex::Vrei2 => vec![715.0, 726.0, 734.0, 747.0],
            VegIndex::Vrei3 => vec![715.0, 720.0, 734.0, 747.0],
            VegIndex::Wbi => vec![900.0, 970.0],
        }
    }
}

/// 21 index values (or missing markers) for one tree pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelIndexRow {
    pub tree_id: u32,
    pub x: u32,
    pub y: u32,
    pub values: [Option<f64>; INDEX_COUNT],
}

/// Reflectance sampler for one pixel; resolves wavelengths through
/// [`Hypercube::nearest_channel`].
#[derive(Clone, Copy)]
pub struct PixelSpectrum<'a> {
    cube: &'a Hypercube,
    x: usize,
    y: usize,
}

impl<'a> PixelSpectrum<'a> {
    pub fn new(cube: &'a Hypercube, x: usize, y: usize) -> Self {
        assert!(cube.in_bounds(x, y));
        Self { cube, x, y }
    }

    /// Reflectance at the channel nearest to `nm`, as floating point.
    pub fn p(&self, nm: f64) -> f64 {
        self.cube.value(self.x, self.y, self.cube.nearest_channel(nm)) as f64
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

fn recip_diff(a: f64, b: f64) -> Option<f64> {
    if a == 0.0 || b == 0.0 {
        None
    } else {
        Some(1.0 / a - 1.0 / b)
    }
}

/// Evaluates one catalog entry at a pixel. Returns `None` on arithmetic
/// hazards.
pub fn compute_index(
    cube: &Hypercube,
    x: usize,
    y: usize,
    index: VegIndex,
    cfg: &IndexConfig,
) -> Option<f64> {
    let s = PixelSpectrum::new(cube, x, y);
    let bb = &cfg.broadband;
    let nir = || s.p(bb.nir);
    let red = || s.p(bb.red);
    let green = || s.p(bb.green);
    let blue = || s.p(bb.blue);
    match index {
        VegIndex::Ari1 => recip_diff(s.p(550.0), s.p(700.0)),
        VegIndex::Ari2 => recip_diff(s.p(550.0), s.p(700.0)).map(|d| s.p(800.0) * d),
        VegIndex::Arvi => {
            let rb = red() - cfg.gamma * (blue() - red());
            ratio(nir() - rb, nir() + rb)
        }
        VegIndex::Cri1 => recip_diff(s.p(510.0), s.p(550.0)),
        VegIndex::Cri2 => recip_diff(s.p(510.0), s.p(700.0)),
        VegIndex::Evi => ratio(nir() - red(), nir() + 6.0 * red() - 7.5 * blue() + 1.0),
        VegIndex::Mcari => {
            let r = ratio(s.p(700.0), s.p(670.0))?;
            Some(s.p(700.0) - s.p(670.0) - 0.2 * (s.p(700.0) - s.p(550.0)) * r)
        }
        VegIndex::Mcari2 => {
            let num = 1.5 * (2.5 * (nir() - red()) - 1.3 * (nir() - green()));
            let radicand = (2.0 * nir() + 1.0).powi(2) - (6.0 * nir() - 5.0 * red().sqrt()) - 0.5;
            if radicand < 0.0 {
                None
            } else {
                ratio(num, radicand.sqrt())
            }
        }
        VegIndex::Mrenvi => {
            let num = if cfg.literature_variants {
                s.p(750.0) - s.p(705.0)
            } else {
                s.p(700.0) - s.p(705.0)
            };
            ratio(num, s.p(750.0) + s.p(705.0) - 2.0 * s.p(445.0))
        }
        VegIndex::Mresri => ratio(s.p(750.0) - s.p(445.0), s.p(705.0) - s.p(445.0)),
        VegIndex::Ndvi => ratio(nir() - red(), nir() + red()),
        VegIndex::Pri => ratio(s.p(531.0) - s.p(570.0), s.p(531.0) + s.p(570.0)),
        VegIndex::Psri => ratio(s.p(680.0) - s.p(500.0), s.p(750.0)),
        VegIndex::Rendvi => ratio(s.p(750.0) - s.p(705.0), s.p(750.0) + s.p(705.0)),
        VegIndex::Sri => ratio(nir(), red()),
        VegIndex::Sipi => ratio(s.p(800.0) - s.p(445.0), s.p(800.0) + s.p(680.0)),
        VegIndex::Tcari => {
            let r = ratio(s.p(700.0), s.p(670.0))?;
            Some(3.0 * (s.p(700.0) - s.p(670.0) - 0.2 * (s.p(700.0) - s.p(550.0)) * r))
        }
        VegIndex::Vrei1 => ratio(s.p(740.0), s.p(720.0)),
        VegIndex::Vrei2 => {
            let den = if cfg.literature_variants {
                s.p(715.0) + s.p(726.0)
            } else {
                s.p(715.0) - s.p(726.0)
            };
            ratio(s.p(734.0) - s.p(747.0), den)
        }
        VegIndex::Vrei3 => ratio(s.p(734.0) - s.p(747.0), s.p(715.0) + s.p(720.0)),
        VegIndex::Wbi => ratio(s.p(970.0), s.p(900.0)),
    }
}

/// Evaluates the full catalog for every pixel of a tree region, in catalog
/// order.
pub fn compute_all(cube: &Hypercube, region: &TreeRegion, cfg: &IndexConfig) -> Vec<PixelIndexRow> {
    region
        .pixels
        .iter()
        .map(|&(x, y)| {
            let mut values = [None; INDEX_COUNT];
            for (slot, index) in values.iter_mut().zip(ALL_INDICES) {
                *slot = compute_index(cube, x as usize, y as usize, index, cfg);
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
