//! Hyperspectral cube storage and queries.
//!
//! A cube is a width x height x channels grid of scaled surface reflectance
//! (integers in 0..=10000) with a strictly ascending wavelength axis. On disk
//! it is a two-file pair: a text header and a raw little-endian band-sequential
//! payload.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Upper bound of the scaled-reflectance range.
pub const MAX_REFLECTANCE: u16 = 10_000;

const HEADER_EXT: &str = "hdr";
const PAYLOAD_EXT: &str = "raw";

#[derive(Debug, Clone, PartialEq)]
pub struct Hypercube {
    width: usize,
    height: usize,
    wavelengths: Vec<f64>,
    /// Band-major, row-major within band: `data[c*w*h + y*w + x]`.
    data: Vec<u16>,
}

impl Hypercube {
    /// Builds a cube from raw parts, enforcing the format invariants.
    pub fn new(width: usize, height: usize, wavelengths: Vec<f64>, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || wavelengths.is_empty() {
            return Err(Error::CubeFormat(
                "cube dimensions must all be nonzero".into(),
            ));
        }
        if !wavelengths.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::CubeFormat(
                "wavelengths must be strictly ascending".into(),
            ));
        }
        let expected = width * height * wavelengths.len();
        if data.len() != expected {
            return Err(Error::CubeFormat(format!(
                "payload holds {} values but {}x{}x{} requires {}",
                data.len(),
                width,
                height,
                wavelengths.len(),
                expected
            )));
        }
        if let Some(v) = data.iter().find(|v| **v > MAX_REFLECTANCE) {
            return Err(Error::CubeFormat(format!(
                "reflectance {v} exceeds the 0..={MAX_REFLECTANCE} range"
            )));
        }
        Ok(Self {
            width,
            height,
            wavelengths,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn in_bounds(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    /// Reflectance at an explicit (pixel, channel) address.
    ///
    /// Panics on out-of-range indices; use [`Hypercube::brightness`] for the
    /// checked wavelength-addressed variant.
    pub fn value(&self, x: usize, y: usize, channel: usize) -> u16 {
        assert!(self.in_bounds(x, y) && channel < self.channels());
        self.data[channel * self.width * self.height + y * self.width + x]
    }

    /// Index of the channel whose wavelength is closest to `target` nm.
    /// Ties resolve to the lower wavelength.
    pub fn nearest_channel(&self, target: f64) -> usize {
        let hi = self.wavelengths.partition_point(|w| *w < target);
        if hi == 0 {
            return 0;
        }
        if hi == self.wavelengths.len() {
            return hi - 1;
        }
        let lo = hi - 1;
        if (target - self.wavelengths[lo]) <= (self.wavelengths[hi] - target) {
            lo
        } else {
            hi
        }
    }

    /// Reflectance of pixel (x, y) at the channel nearest to `target` nm.
    pub fn brightness(&self, x: usize, y: usize, target: f64) -> Result<u16> {
        if !self.in_bounds(x, y) {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.value(x, y, self.nearest_channel(target)))
    }

    /// Loads a cube from its header path (or the pair's common stem).
    pub fn load(path: &Path) -> Result<Self> {
        let (header_path, payload_path) = pair_paths(path);
        let header_text =
            std::fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header = Header::parse(&header_text)?;
        let payload = std::fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
        let expected_bytes = header.samples * header.lines * header.bands * 2;
        if payload.len() != expected_bytes {
            return Err(Error::CubeFormat(format!(
                "payload {} holds {} bytes but the header requires {}",
                payload_path.display(),
                payload.len(),
                expected_bytes
            )));
        }
        let data = payload
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        Self::new(header.samples, header.lines, header.wavelengths, data)
    }

    /// Writes the header/payload pair next to `path` (extension is replaced).
    pub fn save(&self, path: &Path) -> Result<()> {
        let (header_path, payload_path) = pair_paths(path);
        let mut header = String::new();
        let _ = writeln!(header, "samples: {}", self.width);
        let _ = writeln!(header, "lines: {}", self.height);
        let _ = writeln!(header, "bands: {}", self.channels());
        let _ = writeln!(header, "data_type: u16");
        let _ = writeln!(header, "interleave: bsq");
        let wl = self
            .wavelengths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(header, "wavelengths: {wl}");
        std::fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))?;

        let mut payload = Vec::with_capacity(self.data.len() * 2);
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&payload_path, payload).map_err(|e| Error::io(&payload_path, e))
    }
}

/// Resolves the header/payload pair from either file of the pair or the stem.
fn pair_paths(path: &Path) -> (PathBuf, PathBuf) {
    (
        path.with_extension(HEADER_EXT),
        path.with_extension(PAYLOAD_EXT),
    )
}

struct Header {
    samples: usize,
    lines: usize,
    bands: usize,
    wavelengths: Vec<f64>,
}

impl Header {
    fn parse(text: &str) -> Result<Self> {
        let mut samples = None;
        let mut lines = None;
        let mut bands = None;
        let mut data_type = None;
        let mut interleave = None;
        let mut wavelengths: Option<Vec<f64>> = None;

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| {
                Error::CubeFormat(format!("header line {} is not `key: value`", lineno + 1))
            })?;
            let value = value.trim();
            match key.trim() {
                "samples" => samples = Some(parse_count(value, "samples")?),
                "lines" => lines = Some(parse_count(value, "lines")?),
                "bands" => bands = Some(parse_count(value, "bands")?),
                "data_type" => data_type = Some(value.to_string()),
                "interleave" => interleave = Some(value.to_string()),
                "wavelengths" => {
                    let parsed = value
                        .split(',')
                        .map(|s| {
                            s.trim().parse::<f64>().map_err(|_| {
                                Error::CubeFormat(format!("bad wavelength `{}`", s.trim()))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    wavelengths = Some(parsed);
                }
                _ => {} // tolerate unknown keys
            }
        }

        let samples = samples.ok_or_else(|| missing("samples"))?;
        let lines = lines.ok_or_else(|| missing("lines"))?;
        let bands = bands.ok_or_else(|| missing("bands"))?;
        let wavelengths = wavelengths.ok_or_else(|| missing("wavelengths"))?;
        match data_type.as_deref() {
            Some("u16") => {}
            Some(other) => {
                return Err(Error::CubeFormat(format!(
                    "unsupported data_type `{other}` (only u16)"
                )))
            }
            None => return Err(missing("data_type")),
        }
        match interleave.as_deref() {
            Some("bsq") => {}
            Some(other) => {
                return Err(Error::CubeFormat(format!(
                    "unsupported interleave `{other}` (only bsq)"
                )))
            }
            None => return Err(missing("interleave")),
        }
        if wavelengths.len() != bands {
            return Err(Error::CubeFormat(format!(
                "header lists {} wavelengths for {} bands",
                wavelengths.len(),
                bands
            )));
        }
        Ok(Header {
            samples,
            lines,
            bands,
            wavelengths,
        })
    }
}

fn parse_count(value: &str, key: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::CubeFormat(format!("bad {key} value `{value}`")))
}

fn missing(key: &str) -> Error {
    Error::CubeFormat(format!("header is missing `{key}`"))
}

/// Builder for in-memory cubes; test fixtures and the scene generator use it
/// to fill pixels by (x, y, channel) before sealing the invariants.
#[derive(Debug, Clone)]
pub struct CubeBuilder {
    width: usize,
    height: usize,
    wavelengths: Vec<f64>,
    data: Vec<u16>,
}

impl CubeBuilder {
    pub fn new(width: usize, height: usize, wavelengths: Vec<f64>) -> Self {
        let data = vec![0; width * height * wavelengths.len()];
        Self {
            width,
            height,
            wavelengths,
            data,
        }
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn set(&mut self, x: usize, y: usize, channel: usize, value: u16) {
        self.data[channel * self.width * self.height + y * self.width + x] = value;
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> u16 {
        self.data[channel * self.width * self.height + y * self.width + x]
    }

    /// Sets the full spectrum of one pixel.
    pub fn set_spectrum(&mut self, x: usize, y: usize, spectrum: &[u16]) {
        assert_eq!(spectrum.len(), self.wavelengths.len());
        for (c, v) in spectrum.iter().enumerate() {
            self.set(x, y, c, *v);
        }
    }

    pub fn build(self) -> Result<Hypercube> {
        Hypercube::new(self.width, self.height, self.wavelengths, self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cube() -> Hypercube {
        // 2x2, 3 channels
        let wavelengths = vec![445.0, 550.0, 800.0];
        let data = vec![
            10, 20, 30, 40, // channel 0
            50, 60, 70, 80, // channel 1
            90, 100, 110, 120, // channel 2
        ];
        Hypercube::new(2, 2, wavelengths, data).unwrap()
    }

    #[test]
    fn builds_minimal_cube() {
        let cube = small_cube();
        assert_eq!(cube.channels(), 3);
        assert_eq!(cube.value(1, 0, 0), 20);
        assert_eq!(cube.value(0, 1, 2), 110);
    }

    #[test]
    fn rejects_size_mismatch() {
        let err = Hypercube::new(2, 2, vec![445.0, 550.0, 800.0], vec![0; 11]).unwrap_err();
        assert!(matches!(err, Error::CubeFormat(_)), "got {err}");
    }

    #[test]
    fn rejects_unordered_wavelengths() {
        let err = Hypercube::new(2, 2, vec![550.0, 445.0, 800.0], vec![0; 12]).unwrap_err();
        assert!(matches!(err, Error::CubeFormat(_)), "got {err}");
    }

    #[test]
    fn rejects_out_of_range_reflectance() {
        let mut data = vec![0; 12];
        data[5] = 10_001;
        let err = Hypercube::new(2, 2, vec![445.0, 550.0, 800.0], data).unwrap_err();
        assert!(matches!(err, Error::CubeFormat(_)), "got {err}");
    }

    #[test]
    fn nearest_channel_prefers_closest_and_breaks_ties_low() {
        let cube = Hypercube::new(
            1,
            1,
            vec![445.0, 550.0, 680.47, 700.0, 799.94, 900.0],
            vec![0; 6],
        )
        .unwrap();
        assert_eq!(cube.nearest_channel(680.0), 2); // 680.47 is the closest
        assert_eq!(cube.nearest_channel(800.0), 4); // 799.94 instead of 800
        assert_eq!(cube.nearest_channel(550.0), 1); // exact match
        assert_eq!(cube.nearest_channel(100.0), 0); // below range clamps
        assert_eq!(cube.nearest_channel(2000.0), 5); // above range clamps

        // 625.235 is equidistant from 550.0 and 700.47; the tie would go low.
        let cube = Hypercube::new(1, 1, vec![400.0, 600.0], vec![0; 2]).unwrap();
        assert_eq!(cube.nearest_channel(500.0), 0);
    }

    #[test]
    fn brightness_resolves_wavelength_and_checks_bounds() {
        let cube = small_cube();
        assert_eq!(cube.brightness(0, 0, 780.0).unwrap(), 90); // nearest is 800
        assert_eq!(cube.brightness(0, 0, 560.0).unwrap(), 50); // closer to 550
        assert!(matches!(
            cube.brightness(2, 0, 550.0),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let cube = small_cube();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.hdr");
        cube.save(&path).unwrap();
        let reloaded = Hypercube::load(&path).unwrap();
        assert_eq!(cube, reloaded);
        // Loading via the stem works too.
        let reloaded = Hypercube::load(&dir.path().join("scene")).unwrap();
        assert_eq!(cube, reloaded);
    }

    #[test]
    fn load_rejects_truncated_payload() {
        let cube = small_cube();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.hdr");
        cube.save(&path).unwrap();
        let raw = dir.path().join("scene.raw");
        let bytes = std::fs::read(&raw).unwrap();
        std::fs::write(&raw, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            Hypercube::load(&path),
            Err(Error::CubeFormat(_))
        ));
    }

    #[test]
    fn load_rejects_garbled_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.hdr");
        std::fs::write(&path, "samples 2\n").unwrap();
        std::fs::write(dir.path().join("scene.raw"), [0u8; 4]).unwrap();
        assert!(matches!(
            Hypercube::load(&path),
            Err(Error::CubeFormat(_))
        ));
    }

    proptest! {
        #[test]
        fn nearest_channel_is_idempotent_on_exact_wavelengths(
            offsets in proptest::collection::vec(1.0f64..50.0, 1..20)
        ) {
            let mut wavelengths = Vec::with_capacity(offsets.len());
            let mut acc = 400.0;
            for step in &offsets {
                acc += step;
                wavelengths.push(acc);
            }
            let n = wavelengths.len();
            let cube = Hypercube::new(1, 1, wavelengths.clone(), vec![0; n]).unwrap();
            for (i, wl) in wavelengths.iter().enumerate() {
                prop_assert_eq!(cube.nearest_channel(*wl), i);
            }
        }

        #[test]
        fn nearest_channel_minimizes_distance(
            offsets in proptest::collection::vec(1.0f64..50.0, 1..20),
            target in 300.0f64..1500.0,
        ) {
            let mut wavelengths = Vec::with_capacity(offsets.len());
            let mut acc = 400.0;
            for step in &offsets {
                acc += step;
                wavelengths.push(acc);
            }
            let n = wavelengths.len();
            let cube = Hypercube::new(1, 1, wavelengths.clone(), vec![0; n]).unwrap();
            let chosen = cube.nearest_channel(target);
            let best = (wavelengths[chosen] - target).abs();
            for wl in &wavelengths {
                prop_assert!(best <= (wl - target).abs() + 1e-12);
            }
        }
    }
}
