//! Parameter-plane scans: 32x32 tiles classified on a rayon pool and merged
//! in tile order, binary checkpoints, density curves and PPM rendering.
//!
//! Checkpoint layout (little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `SPLB` |
//! | 4 | version `u32`, currently 1 |
//! | 32 | SHA-256 of the canonical JSON of [`ScanMeta`] |
//! | 4 | width `u32` |
//! | 4 | height `u32` |
//! | 4 | tile count `u32` |
//! | ceil(tiles / 8) | completed-tile bitmap, tile `t` at bit `t % 8` of byte `t / 8` |
//! | width * height | label bytes, row-major from the top row |

use crate::classify::{classify, ClassifyOptions, Verdict};
use crate::family::FamilySpec;
use crate::numerics::{wilson_interval, Rect, C64, Z95};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const TILE: usize = 32;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPLB";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("checkpoint belongs to a different scan")]
    MetaMismatch,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Everything that determines the labels of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMeta {
    pub family: FamilySpec,
    pub base_param: C64,
    pub region: Rect,
    pub width: u32,
    pub height: u32,
    pub options: ClassifyOptions,
    pub tool_version: String,
}

impl ScanMeta {
    pub fn new(
        family: FamilySpec,
        base_param: C64,
        region: Rect,
        width: u32,
        height: u32,
        options: ClassifyOptions,
    ) -> Self {
        Self {
            family,
            base_param,
            region,
            width,
            height,
            options,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn hash(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("meta serializes");
        Sha256::digest(&bytes).into()
    }

    pub fn cells(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn tiles_x(&self) -> usize {
        (self.width as usize).div_ceil(TILE)
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x() * (self.height as usize).div_ceil(TILE)
    }

    /// Parameter at the center of cell `(x, y)`, `y = 0` being the top row.
    pub fn cell_param(&self, x: usize, y: usize) -> C64 {
        self.region.at(
            (x as f64 + 0.5) / self.width as f64,
            1.0 - (y as f64 + 0.5) / self.height as f64,
        )
    }

    fn tile_cells(&self, t: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (t % self.tiles_x(), t / self.tiles_x());
        let (w, h) = (self.width as usize, self.height as usize);
        let xs = tx * TILE..((tx + 1) * TILE).min(w);
        let ys = ty * TILE..((ty + 1) * TILE).min(h);
        ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub meta: ScanMeta,
    /// Verdict bytes, row-major from the top row.
    pub labels: Vec<u8>,
    /// Byte offsets into the evidence sidecar; empty when none was collected.
    #[serde(default)]
    pub evidence_refs: Vec<u64>,
}

impl ScanGrid {
    pub fn label(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.meta.width as usize + x]
    }

    pub fn count(&self, v: Verdict) -> usize {
        self.labels.iter().filter(|&&b| b == v.to_byte()).count()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScanOptions {
    /// Zero uses the rayon default.
    pub workers: usize,
    /// Stop (after checkpointing) once this many tiles are complete.
    pub stop_after_tiles: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ScanStatus {
    Complete(ScanGrid),
    Interrupted {
        completed_tiles: usize,
        total_tiles: usize,
    },
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, ScanError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ScanError::Pool(e.to_string()))
}

/// Cell coordinates and verdict bytes for one tile.
type TileCells = Vec<((usize, usize), u8)>;

fn classify_tile(fam: &FamilySpec, meta: &ScanMeta, t: usize) -> TileCells {
    meta.tile_cells(t)
        .map(|(x, y)| {
            (
                (x, y),
                classify(fam, meta.cell_param(x, y), &meta.options)
                    .verdict
                    .to_byte(),
            )
        })
        .collect()
}

fn validate(meta: &ScanMeta) -> Result<(), ScanError> {
    if meta.cells() == 0 {
        return Err(ScanError::InvalidArgument(
            "scan needs width * height >= 1".into(),
        ));
    }
    meta.family
        .validate()
        .map_err(|e| ScanError::InvalidArgument(e.to_string()))
}

/// Classify every cell; the result does not depend on `workers`.
pub fn scan(meta: &ScanMeta, workers: usize) -> Result<ScanGrid, ScanError> {
    match run(
        meta,
        &ScanOptions {
            workers,
            stop_after_tiles: None,
        },
        None,
    )? {
        ScanStatus::Complete(g) => Ok(g),
        ScanStatus::Interrupted { .. } => unreachable!("no stop requested"),
    }
}

/// Like [`scan`], also writing one JSON line of classification evidence per
/// cell. `evidence_refs[i]` is the byte offset of cell `i`'s line.
pub fn scan_with_evidence(
    meta: &ScanMeta,
    workers: usize,
) -> Result<(ScanGrid, Vec<u8>), ScanError> {
    validate(meta)?;
    let fam = &meta.family;
    let w = meta.width as usize;
    let per_tile: Vec<Vec<(usize, u8, String)>> = pool(workers)?.install(|| {
        (0..meta.tile_count())
            .into_par_iter()
            .map(|t| {
                meta.tile_cells(t)
                    .map(|(x, y)| {
                        let rep = classify(fam, meta.cell_param(x, y), &meta.options);
                        let line = serde_json::to_string(&rep).expect("report serializes");
                        (y * w + x, rep.verdict.to_byte(), line)
                    })
                    .collect()
            })
            .collect()
    });
    let mut labels = vec![0u8; meta.cells()];
    let mut lines = vec![String::new(); meta.cells()];
    for (i, b, line) in per_tile.into_iter().flatten() {
        labels[i] = b;
        lines[i] = line;
    }
    let mut sidecar = Vec::new();
    let mut refs = Vec::with_capacity(lines.len());
    for line in lines {
        refs.push(sidecar.len() as u64);
        sidecar.extend_from_slice(line.as_bytes());
        sidecar.push(b'\n');
    }
    Ok((
        ScanGrid {
            meta: meta.clone(),
            labels,
            evidence_refs: refs,
        },
        sidecar,
    ))
}

/// Scan with an optional checkpoint file. An existing checkpoint is resumed
/// (after checking its meta hash); progress is saved after every batch.
pub fn run(
    meta: &ScanMeta,
    opts: &ScanOptions,
    checkpoint: Option<&Path>,
) -> Result<ScanStatus, ScanError> {
    validate(meta)?;
    let total = meta.tile_count();
    let mut state = match checkpoint {
        Some(p) if p.exists() => {
            let c = Checkpoint::load(p)?;
            if c.meta_hash != meta.hash() || c.width != meta.width || c.height != meta.height {
                return Err(ScanError::MetaMismatch);
            }
            c
        }
        _ => Checkpoint::empty(meta),
    };
    let pool = pool(opts.workers)?;
    let batch = pool.current_num_threads().max(1) * 2;
    let w = meta.width as usize;
    loop {
        let done = state.completed_count();
        if done == total {
            break;
        }
        if let Some(stop) = opts.stop_after_tiles {
            if done >= stop {
                if let Some(p) = checkpoint {
                    state.save(p)?;
                }
                return Ok(ScanStatus::Interrupted {
                    completed_tiles: done,
                    total_tiles: total,
                });
            }
        }
        let mut todo: Vec<usize> = (0..total)
            .filter(|&t| !state.is_done(t))
            .take(batch)
            .collect();
        if let Some(stop) = opts.stop_after_tiles {
            todo.truncate(stop.saturating_sub(done).max(1));
        }
        let results: Vec<(usize, TileCells)> = pool.install(|| {
            todo.par_iter()
                .map(|&t| (t, classify_tile(&meta.family, meta, t)))
                .collect()
        });
        for (t, cells) in results {
            for ((x, y), b) in cells {
                state.labels[y * w + x] = b;
            }
            state.mark_done(t);
        }
        if let Some(p) = checkpoint {
            state.save(p)?;
        }
    }
    Ok(ScanStatus::Complete(ScanGrid {
        meta: meta.clone(),
        labels: state.labels,
        evidence_refs: Vec::new(),
    }))
}

/// In-progress scan state as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub meta_hash: [u8; 32],
    pub width: u32,
    pub height: u32,
    pub tile_count: u32,
    pub bitmap: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Checkpoint {
    pub fn empty(meta: &ScanMeta) -> Self {
        let tiles = meta.tile_count();
        Self {
            version: CHECKPOINT_VERSION,
            meta_hash: meta.hash(),
            width: meta.width,
            height: meta.height,
            tile_count: tiles as u32,
            bitmap: vec![0; tiles.div_ceil(8)],
            labels: vec![0; meta.cells()],
        }
    }

    pub fn is_done(&self, t: usize) -> bool {
        self.bitmap[t / 8] & (1 << (t % 8)) != 0
    }

    pub fn mark_done(&mut self, t: usize) {
        self.bitmap[t / 8] |= 1 << (t % 8);
    }

    pub fn completed_count(&self) -> usize {
        (0..self.tile_count as usize)
            .filter(|&t| self.is_done(t))
            .count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(52 + self.bitmap.len() + self.labels.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.meta_hash);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.tile_count.to_le_bytes());
        out.extend_from_slice(&self.bitmap);
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, ScanError> {
        let take = |range: std::ops::Range<usize>| b.get(range).ok_or(ScanError::Truncated);
        let u32_at = |at: usize| -> Result<u32, ScanError> {
            Ok(u32::from_le_bytes(take(at..at + 4)?.try_into().unwrap()))
        };
        if take(0..4)? != CHECKPOINT_MAGIC {
            return Err(ScanError::BadMagic);
        }
        let version = u32_at(4)?;
        if version != CHECKPOINT_VERSION {
            return Err(ScanError::UnsupportedVersion(version));
        }
        let meta_hash: [u8; 32] = take(8..40)?.try_into().unwrap();
        let (width, height, tile_count) = (u32_at(40)?, u32_at(44)?, u32_at(48)?);
        let nb = (tile_count as usize).div_ceil(8);
        let bitmap = take(52..52 + nb)?.to_vec();
        let cells = width as usize * height as usize;
        let labels = take(52 + nb..52 + nb + cells)?.to_vec();
        if b.len() != 52 + nb + cells {
            return Err(ScanError::Truncated);
        }
        Ok(Self {
            version,
            meta_hash,
            width,
            height,
            tile_count,
            bitmap,
            labels,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScanError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Write to a sibling temporary file, then rename over `path`.
    pub fn save(&self, path: &Path) -> Result<(), ScanError> {
        write_atomic(path, &self.to_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ScanError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Hyperbolic share among the determined cells wholly inside one disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub radius: f64,
    pub inside: usize,
    pub hyperbolic: usize,
    pub undetermined: usize,
    pub fraction: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub center: C64,
    pub cells_per_side: u32,
    pub points: Vec<DensityPoint>,
}

impl DensityCurve {
    pub fn radii(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.radius).collect()
    }

    pub fn hyperbolic_fraction(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.fraction).collect()
    }

    /// Whether every fraction is positive and each later (smaller) radius
    /// is no lower than the previous one, allowing for overlap of the 95%
    /// intervals.
    pub fn positive_and_nondecreasing(&self) -> bool {
        self.points.iter().all(|p| p.fraction > 0.0)
            && self.points.windows(2).all(|w| w[1].ci.1 >= w[0].ci.0)
    }
}

/// Density over the cells of `grid` lying wholly inside `D(center, radius)`.
pub fn density_from_grid(grid: &ScanGrid, center: C64, radius: f64) -> DensityPoint {
    let m = &grid.meta;
    let (w, h) = (m.width as usize, m.height as usize);
    let (dx, dy) = (m.region.width() / w as f64, m.region.height() / h as f64);
    let (mut inside, mut hyp, mut und) = (0usize, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let c = m.cell_param(x, y);
            let far = C64::new(
                (c.re - center.re).abs() + dx / 2.0,
                (c.im - center.im).abs() + dy / 2.0,
            );
            if far.norm() > radius {
                continue;
            }
            inside += 1;
            match grid.label(x, y) {
                b if b == Verdict::Hyperbolic.to_byte() => hyp += 1,
                b if b == Verdict::Undetermined.to_byte() => und += 1,
                _ => {}
            }
        }
    }
    let determined = (inside - und) as u64;
    let fraction = if determined == 0 {
        0.0
    } else {
        hyp as f64 / determined as f64
    };
    DensityPoint {
        radius,
        inside,
        hyperbolic: hyp,
        undetermined: und,
        fraction,
        ci: wilson_interval(hyp as u64, determined, Z95),
    }
}

/// One square scan per radius, each `cells_per_side` wide.
pub fn density_curve(
    fam: &FamilySpec,
    center: C64,
    radii: &[f64],
    cells_per_side: u32,
    opts: &ClassifyOptions,
    workers: usize,
) -> Result<DensityCurve, ScanError> {
    if radii.windows(2).any(|w| !(w[1] < w[0])) || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(ScanError::InvalidArgument(
            "radii must be positive and strictly decreasing".into(),
        ));
    }
    let mut points = Vec::with_capacity(radii.len());
    for &r in radii {
        let meta = ScanMeta::new(
            fam.clone(),
            center,
            Rect::centered(center, r),
            cells_per_side,
            cells_per_side,
            *opts,
        );
        let grid = scan(&meta, workers)?;
        points.push(density_from_grid(&grid, center, r));
    }
    Ok(DensityCurve {
        center,
        cells_per_side,
        points,
    })
}

/// Colors for label bytes 0 through 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: [[u8; 3]; 5],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            colors: [
                [128, 128, 128], // undetermined
                [40, 90, 200],   // hyperbolic
                [230, 60, 40],   // misiurewicz
                [250, 220, 40],  // misiurewicz-thurston
                [15, 15, 15],    // escaping
            ],
        }
    }
}

impl Palette {
    pub fn color(&self, label: u8) -> [u8; 3] {
        self.colors
            .get(label as usize)
            .copied()
            .unwrap_or([255, 0, 255])
    }

    pub fn label_of(&self, rgb: [u8; 3]) -> Option<u8> {
        self.colors.iter().position(|&c| c == rgb).map(|i| i as u8)
    }
}

/// Binary P6 image with one pixel per label.
pub fn render_ppm(
    labels: &[u8],
    width: usize,
    height: usize,
    palette: &Palette,
) -> Result<Vec<u8>, ScanError> {
    if width * height == 0 || labels.len() != width * height {
        return Err(ScanError::InvalidArgument(format!(
            "{} labels for a {width}x{height} image",
            labels.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &l in labels {
        out.extend_from_slice(&palette.color(l));
    }
    Ok(out)
}

pub fn write_ppm(
    path: &Path,
    labels: &[u8],
    width: usize,
    height: usize,
    palette: &Palette,
) -> Result<(), ScanError> {
    write_atomic(path, &render_ppm(labels, width, height, palette)?)
}

/// Pixels of a P6 image produced by [`render_ppm`].
pub fn read_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<[u8; 3]>), ScanError> {
    let bad = || ScanError::InvalidArgument("not a P6 image".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| bad())?
                .to_string(),
        );
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let body = bytes.get(pos + 1..).ok_or_else(bad)?;
    if body.len() != 3 * w * h {
        return Err(bad());
    }
    Ok((w, h, body.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(w: u32, h: u32) -> ScanMeta {
        let f = FamilySpec::exp_lambda();
        ScanMeta::new(
            f,
            C64::new(0.2, 0.0),
            Rect::new(-0.5, 0.5, -0.5, 0.5),
            w,
            h,
            ClassifyOptions {
                budget: 200,
                ..Default::default()
            },
        )
    }

    #[test]
    fn tiles_cover_every_cell_once() {
        let m = meta(70, 33);
        let mut seen = vec![0u8; m.cells()];
        for t in 0..m.tile_count() {
            for (x, y) in m.tile_cells(t) {
                seen[y * 70 + x] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        assert_eq!(m.tile_count(), 3 * 2);
    }

    #[test]
    fn checkpoint_bytes_round_trip() {
        let m = meta(40, 40);
        let mut c = Checkpoint::empty(&m);
        c.mark_done(2);
        c.labels[5] = 3;
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"SPLB");
        assert_eq!(Checkpoint::from_bytes(&b).unwrap(), c);
        let mut future = b.clone();
        future[4] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&future),
            Err(ScanError::UnsupportedVersion(2))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&b[..b.len() - 1]),
            Err(ScanError::Truncated)
        ));
    }

    #[test]
    fn hash_tracks_tolerance() {
        let a = meta(4, 4);
        let mut b = a.clone();
        b.options.cycle_tol *= 2.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }

    #[test]
    fn palette_round_trip_and_ppm() {
        let p = Palette::default();
        for l in 0..5u8 {
            assert_eq!(p.label_of(p.color(l)), Some(l));
        }
        let img = render_ppm(&[1, 1, 1, 1], 2, 2, &p).unwrap();
        let (w, h, px) = read_ppm(&img).unwrap();
        assert_eq!((w, h), (2, 2));
        assert!(px.iter().all(|&c| c == p.color(1)));
    }

    #[test]
    fn degenerate_region_line_scan() {
        let mut m = meta(1, 5);
        m.region = Rect::new(0.1, 0.1, -0.1, 0.1);
        let g = scan(&m, 1).unwrap();
        assert_eq!(g.labels.len(), 5);
    }
}
