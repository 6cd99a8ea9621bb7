//! Occupancy grid of the vessel lumen and its agent-radius erosion.
//!
//! Pixel `(i, j)` has its center at world coordinate `(i, j)`; origin is the
//! top-left corner, x grows rightward and y downward. Everything outside the
//! image counts as wall.

use std::path::Path;

use image::GrayImage;

use crate::error::{Error, Result};

/// Default lumen threshold for 8-bit maps.
pub const DEFAULT_THRESHOLD: u8 = 128;

const CACHE_MAGIC: &[u8; 7] = b"MVGRID1";

/// Binary navigability mask plus the variant eroded by the agent radius.
///
/// A cell is inflated-navigable when every pixel within `agent_radius` of its
/// center is navigable, so an agent disc centred there never touches a wall.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    navigable: Vec<bool>,
    inflated: Vec<bool>,
    free: Vec<u32>,
}

impl OccupancyGrid {
    /// Builds a grid from a row-major navigability mask, eroding it by
    /// `agent_radius` pixels.
    pub fn from_mask(
        width: usize,
        height: usize,
        navigable: Vec<bool>,
        agent_radius: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if navigable.len() != width * height {
            return Err(Error::Shape(format!(
                "mask has {} cells, expected {}x{}",
                navigable.len(),
                width,
                height
            )));
        }
        if !(agent_radius > 0.0) {
            return Err(Error::Config("agent_radius must be positive".into()));
        }
        let inflated = erode(width, height, &navigable, agent_radius);
        Self::from_parts(width, height, navigable, inflated)
    }

    fn from_parts(
        width: usize,
        height: usize,
        navigable: Vec<bool>,
        inflated: Vec<bool>,
    ) -> Result<Self> {
        if !inflated.iter().any(|&c| c) {
            return Err(Error::NoNavigableRegion);
        }
        if inflated.iter().zip(&navigable).any(|(&i, &n)| i && !n) {
            return Err(Error::InvalidMap(
                "inflated mask is not a subset of the navigable mask".into(),
            ));
        }
        let free = inflated
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i as u32)
            .collect();
        Ok(Self {
            width,
            height,
            navigable,
            inflated,
            free,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn navigable_mask(&self) -> &[bool] {
        &self.navigable
    }

    pub fn inflated_mask(&self) -> &[bool] {
        &self.inflated
    }

    #[inline]
    fn index(&self, x: i64, y: i64) -> Option<usize> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(y as usize * self.width + x as usize)
        }
    }

    pub fn is_navigable_cell(&self, x: i64, y: i64) -> bool {
        self.index(x, y).is_some_and(|i| self.navigable[i])
    }

    pub fn is_inflated_cell(&self, x: i64, y: i64) -> bool {
        self.index(x, y).is_some_and(|i| self.inflated[i])
    }

    /// Whether an agent centred at the real-valued point fits in the lumen.
    #[inline]
    pub fn is_free(&self, x: f64, y: f64) -> bool {
        if !x.is_finite() || !y.is_finite() {
            return false;
        }
        self.is_inflated_cell(x.round() as i64, y.round() as i64)
    }

    /// Whether the straight segment between two points stays free, sampled at
    /// sub-pixel spacing.
    pub fn is_segment_free(&self, from: (f64, f64), to: (f64, f64)) -> bool {
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        let n = ((dx.abs().max(dy.abs())) * 2.0).ceil().max(1.0) as usize;
        (1..=n).all(|k| {
            let s = k as f64 / n as f64;
            self.is_free(from.0 + s * dx, from.1 + s * dy)
        })
    }

    /// Coordinates of every inflated-navigable cell, row-major.
    pub fn free_cells(&self) -> Vec<(u32, u32)> {
        (0..self.free.len()).map(|k| self.free_cell(k)).collect()
    }

    /// Number of inflated-navigable cells.
    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    /// The `k`-th inflated-navigable cell in row-major order.
    pub fn free_cell(&self, k: usize) -> (u32, u32) {
        let i = self.free[k] as usize;
        ((i % self.width) as u32, (i / self.width) as u32)
    }

    /// Renders the navigable mask as an 8-bit image (lumen white).
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            image::Luma([if self.navigable[i] { 255 } else { 0 }])
        })
    }

    /// Encodes to the `MVGRID1` cache layout: magic, little-endian u32 width
    /// and height, then the navigable and inflated masks, each bit-packed
    /// row-major LSB-first and padded to a whole byte.
    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(15 + 2 * self.navigable.len().div_ceil(8));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        pack_bits(&self.navigable, &mut out);
        pack_bits(&self.inflated, &mut out);
        out
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 15 || &bytes[..7] != CACHE_MAGIC {
            return Err(Error::InvalidMap("missing MVGRID1 header".into()));
        }
        let width = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        let cells = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidMap("dimensions overflow".into()))?;
        let packed = cells.div_ceil(8);
        if bytes.len() != 15 + 2 * packed {
            return Err(Error::InvalidMap(format!(
                "expected {} bytes, found {}",
                15 + 2 * packed,
                bytes.len()
            )));
        }
        let navigable = unpack_bits(&bytes[15..15 + packed], cells);
        let inflated = unpack_bits(&bytes[15 + packed..], cells);
        Self::from_parts(width, height, navigable, inflated)
    }

    pub fn is_cache_bytes(bytes: &[u8]) -> bool {
        bytes.starts_with(CACHE_MAGIC)
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_cache_bytes())
    }

    /// Loads a grid cache or a grayscale PNG (thresholded at the default and
    /// eroded by `agent_radius`), sniffing the format from the file contents.
    pub fn load(path: &Path, agent_radius: f64) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if Self::is_cache_bytes(&bytes) {
            Self::from_cache_bytes(&bytes)
        } else {
            let img = image::load_from_memory(&bytes)?.to_luma8();
            ingest_map(&img, DEFAULT_THRESHOLD, agent_radius)
        }
    }
}

fn pack_bits(bits: &[bool], out: &mut Vec<u8>) {
    for chunk in bits.chunks(8) {
        let byte = chunk
            .iter()
            .enumerate()
            .fold(0u8, |acc, (k, &b)| acc | ((b as u8) << k));
        out.push(byte);
    }
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// Thresholds a grayscale bitmap (`pixel >= threshold` is lumen) and erodes
/// it by the agent radius.
pub fn ingest_map(bitmap: &GrayImage, threshold: u8, agent_radius: f64) -> Result<OccupancyGrid> {
    let (w, h) = bitmap.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let navigable = bitmap.pixels().map(|p| p.0[0] >= threshold).collect();
    OccupancyGrid::from_mask(w as usize, h as usize, navigable, agent_radius)
}

/// Loads and ingests a PNG map.
pub fn load_png(path: &Path, threshold: u8, agent_radius: f64) -> Result<OccupancyGrid> {
    let img = image::open(path)?.to_luma8();
    ingest_map(&img, threshold, agent_radius)
}

/// Erodes `navigable` by a disc of `radius`: a cell survives when its exact
/// Euclidean distance to the nearest wall pixel (out-of-bounds included)
/// exceeds `radius`.
fn erode(width: usize, height: usize, navigable: &[bool], radius: f64) -> Vec<bool> {
    // One-pixel wall border stands in for everything outside the image.
    let (pw, ph) = (width + 2, height + 2);
    let mut field = vec![0.0f64; pw * ph];
    for y in 0..height {
        for x in 0..width {
            if navigable[y * width + x] {
                field[(y + 1) * pw + x + 1] = f64::INFINITY;
            }
        }
    }
    squared_edt(&mut field, pw, ph);
    let r2 = radius * radius;
    let mut out = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = field[(y + 1) * pw + x + 1] > r2;
        }
    }
    out
}

/// In-place squared Euclidean distance transform (Felzenszwalb–Huttenlocher
/// lower envelope of parabolas), separable over columns then rows.
fn squared_edt(field: &mut [f64], width: usize, height: usize) {
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..width {
        for y in 0..height {
            f[y] = field[y * width + x];
        }
        edt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            field[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        let row = &mut field[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        edt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    // Skip leading infinite samples; they never form part of the envelope.
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        d.fill(f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        let parabola_cross = |p: usize| {
            let pf = p as f64;
            ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
        };
        let mut s = parabola_cross(v[k]);
        // z[0] is -inf, so this never walks below the first parabola.
        while s <= z[k] {
            k -= 1;
            s = parabola_cross(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k];
        let dq = qf - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Vessel centreline segments of the built-in bifurcation map, in units of a
/// 200-pixel world.
const BIFURCATION: &[((f64, f64), (f64, f64))] = &[
    ((14.0, 100.0), (100.0, 100.0)),
    ((100.0, 100.0), (186.0, 40.0)),
    ((100.0, 100.0), (186.0, 160.0)),
];
const BIFURCATION_HALF_WIDTH: f64 = 18.0;

/// Rasterizes the built-in bifurcating-vessel map at `side` pixels.
pub fn bifurcation_mask(side: usize) -> Vec<bool> {
    let s = side as f64 / 200.0;
    let hw = BIFURCATION_HALF_WIDTH * s;
    let mut mask = vec![false; side * side];
    for y in 0..side {
        for x in 0..side {
            let p = (x as f64, y as f64);
            mask[y * side + x] = BIFURCATION.iter().any(|&(a, b)| {
                let a = (a.0 * s, a.1 * s);
                let b = (b.0 * s, b.1 * s);
                segment_distance(p, a, b) <= hw
            });
        }
    }
    mask
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * abx, a.1 + t * aby);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// The 200×200 desk-scale benchmark map (agent radius 6).
pub fn corridor_benchmark() -> OccupancyGrid {
    OccupancyGrid::from_mask(200, 200, bifurcation_mask(200), 6.0)
        .expect("built-in map has a navigable region")
}

/// The same vessel at the full 1800×1800 reference scale (agent radius 50).
pub fn reference_world() -> OccupancyGrid {
    OccupancyGrid::from_mask(1800, 1800, bifurcation_mask(1800), 50.0)
        .expect("built-in map has a navigable region")
}

/// Writes the grid as a PNG.
pub fn save_png(grid: &OccupancyGrid, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    grid.to_image()
        .write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)?;
    crate::io::write_atomic(path, &buf)
}
