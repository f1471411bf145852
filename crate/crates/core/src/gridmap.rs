//! Occupancy grids: storage, PGM + metadata I/O, coordinate mapping, the
//! resolution pyramid and the windowed beam search of the observation model.

use std::fs;
use std::ops::ControlFlow;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Transform2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

/// Row-major occupancy raster. Row 0 is the row at the map origin, so rows
/// grow along the origin's +y axis.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Transform2D,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Transform2D, cells: Vec<Cell>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("width/height", "grid must be at least 1x1"));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::param("resolution", "must be positive and finite"));
        }
        if cells.len() != width * height {
            return Err(Error::param(
                "cells",
                format!("expected {} cells, got {}", width * height, cells.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn filled(width: usize, height: usize, resolution: f64, origin: Transform2D, cell: Cell) -> Result<Self> {
        Self::new(width, height, resolution, origin, vec![cell; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Transform2D {
        self.origin
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn get(&self, col: usize, row: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, cell: Cell) {
        self.cells[row * self.width + col] = cell;
    }

    /// Cell lookup with signed indices; anything outside the grid is `Unknown`.
    pub fn get_signed(&self, col: i64, row: i64) -> Cell {
        if col < 0 || row < 0 || col as usize >= self.width || row as usize >= self.height {
            Cell::Unknown
        } else {
            self.get(col as usize, row as usize)
        }
    }

    pub fn is_occupied(&self, col: i64, row: i64) -> bool {
        self.get_signed(col, row) == Cell::Occupied
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }

    /// Map-frame point expressed in the grid frame (origin at the corner of
    /// cell (0, 0), axes along columns and rows).
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.origin.yaw.sin_cos();
        let (dx, dy) = (x - self.origin.x, y - self.origin.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (col, row) = self.world_to_cell_signed(x, y);
        if col < 0 || row < 0 || col as usize >= self.width || row as usize >= self.height {
            None
        } else {
            Some((col as usize, row as usize))
        }
    }

    pub fn world_to_cell_signed(&self, x: f64, y: f64) -> (i64, i64) {
        let (lx, ly) = self.to_local(x, y);
        (
            (lx / self.resolution).floor() as i64,
            (ly / self.resolution).floor() as i64,
        )
    }

    /// Map-frame coordinates of a cell center.
    pub fn cell_to_world(&self, col: usize, row: usize) -> (f64, f64) {
        self.origin.transform_point(
            (col as f64 + 0.5) * self.resolution,
            (row as f64 + 0.5) * self.resolution,
        )
    }

    /// One coarser level: each cell aggregates its (up to) 2×2 children with
    /// Occupied > Unknown > Free precedence.
    pub fn coarsen(&self) -> OccupancyGrid {
        let width = self.width.div_ceil(2);
        let height = self.height.div_ceil(2);
        let mut cells = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                let mut any_unknown = false;
                let mut any_occupied = false;
                for (dc, dr) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let (c, r) = (2 * col + dc, 2 * row + dr);
                    if c < self.width && r < self.height {
                        match self.get(c, r) {
                            Cell::Occupied => any_occupied = true,
                            Cell::Unknown => any_unknown = true,
                            Cell::Free => {}
                        }
                    }
                }
                cells.push(if any_occupied {
                    Cell::Occupied
                } else if any_unknown {
                    Cell::Unknown
                } else {
                    Cell::Free
                });
            }
        }
        OccupancyGrid {
            width,
            height,
            resolution: self.resolution * 2.0,
            origin: self.origin,
            cells,
        }
    }

    /// Walks every cell pierced by the ray `p(t) = start + t * dir` for
    /// `t ∈ [t_min, t_max]`, in order, calling `visit(col, row, t_enter,
    /// t_exit)`. Coordinates are in the grid frame; `dir` must be a unit
    /// vector.
    pub fn traverse<F>(&self, start: (f64, f64), dir: (f64, f64), t_min: f64, t_max: f64, mut visit: F)
    where
        F: FnMut(i64, i64, f64, f64) -> ControlFlow<()>,
    {
        if t_max < t_min {
            return;
        }
        let res = self.resolution;
        let px = start.0 + t_min * dir.0;
        let py = start.1 + t_min * dir.1;
        let mut col = (px / res).floor() as i64;
        let mut row = (py / res).floor() as i64;

        let axis = |p: f64, d: f64, cell: i64| -> (i64, f64, f64) {
            if d > 0.0 {
                let boundary = (cell + 1) as f64 * res;
                (1, t_min + (boundary - p) / d, res / d)
            } else if d < 0.0 {
                let boundary = cell as f64 * res;
                (-1, t_min + (boundary - p) / d, -res / d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (step_c, mut next_c, delta_c) = axis(px, dir.0, col);
        let (step_r, mut next_r, delta_r) = axis(py, dir.1, row);

        let mut t_enter = t_min;
        loop {
            let t_exit = next_c.min(next_r).min(t_max).max(t_enter);
            if visit(col, row, t_enter, t_exit).is_break() || t_exit >= t_max {
                return;
            }
            if next_c < next_r {
                col += step_c;
                next_c += delta_c;
            } else {
                row += step_r;
                next_r += delta_r;
            }
            t_enter = t_exit;
        }
    }

    /// Observation-model error for one beam: the smallest `|measured - d|`
    /// over points `d` of Occupied cells along the beam inside the window
    /// `[measured - 3σ, measured + 3σ]` (clamped at 0). Returns `3σ` when the
    /// window holds no occupied cell. Unknown cells count as not occupied.
    ///
    /// `beam_origin` is the laser pose in the map frame and `angle` the beam
    /// angle relative to it.
    pub fn beam_error(&self, beam_origin: &Transform2D, angle: f64, measured: f64, sigma: f64) -> f64 {
        let cap = 3.0 * sigma;
        let lo = (measured - cap).max(0.0);
        let hi = measured + cap;
        let start = self.to_local(beam_origin.x, beam_origin.y);
        let heading = beam_origin.yaw + angle - self.origin.yaw;
        let (s, c) = heading.sin_cos();

        let mut best = cap;
        self.traverse(start, (c, s), lo, hi, |col, row, t_enter, t_exit| {
            if self.is_occupied(col, row) {
                let err = if measured < t_enter {
                    t_enter - measured
                } else if measured > t_exit {
                    measured - t_exit
                } else {
                    0.0
                };
                best = best.min(err);
                // cells further along only move away from the measured range
                if t_enter >= measured {
                    return ControlFlow::Break(());
                }
            } else if t_enter > measured + best {
                return ControlFlow::Break(());
            }
            ControlFlow::Continue(())
        });
        best
    }

    /// Distance along a ray to the first Occupied cell, or `None` when nothing
    /// is hit within `max_range`.
    pub fn cast_ray(&self, from: &Transform2D, angle: f64, max_range: f64) -> Option<f64> {
        let start = self.to_local(from.x, from.y);
        let heading = from.yaw + angle - self.origin.yaw;
        let (s, c) = heading.sin_cos();
        let mut hit = None;
        self.traverse(start, (c, s), 0.0, max_range, |col, row, t_enter, _| {
            if self.is_occupied(col, row) {
                hit = Some(t_enter);
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        hit
    }
}

/// Grid plus its successively coarsened copies. Level 0 is the original map.
#[derive(Debug, Clone)]
pub struct GridPyramid {
    levels: Vec<OccupancyGrid>,
    // per level: does the cell contain at least one level-0 Free cell
    free_any: Vec<Vec<bool>>,
    // summed-area table of level-0 Occupied cells, (width + 1) × (height + 1)
    occupied_sums: Vec<u32>,
}

impl GridPyramid {
    pub fn build(grid: OccupancyGrid, levels: usize) -> Self {
        let levels = levels.max(1);
        let (w, h) = (grid.width, grid.height);
        let mut occupied_sums = vec![0u32; (w + 1) * (h + 1)];
        for row in 0..h {
            let mut run = 0;
            for col in 0..w {
                run += u32::from(grid.get(col, row) == Cell::Occupied);
                occupied_sums[(row + 1) * (w + 1) + col + 1] = occupied_sums[row * (w + 1) + col + 1] + run;
            }
        }
        let mut free_any = vec![grid.cells.iter().map(|&c| c == Cell::Free).collect::<Vec<_>>()];
        let mut grids = vec![grid];
        for _ in 1..levels {
            let finer = grids.last().unwrap();
            let coarse = finer.coarsen();
            let finer_free = free_any.last().unwrap();
            let mut mask = vec![false; coarse.width * coarse.height];
            for row in 0..finer.height {
                for col in 0..finer.width {
                    if finer_free[row * finer.width + col] {
                        mask[(row / 2) * coarse.width + col / 2] = true;
                    }
                }
            }
            free_any.push(mask);
            grids.push(coarse);
        }
        Self {
            levels: grids,
            free_any,
            occupied_sums,
        }
    }

    /// Whether any level-0 cell in the inclusive index box is Occupied.
    /// The box is clipped to the grid.
    pub fn any_occupied(&self, col0: i64, row0: i64, col1: i64, row1: i64) -> bool {
        let base = &self.levels[0];
        let (w, h) = (base.width as i64, base.height as i64);
        let (c0, r0) = (col0.max(0), row0.max(0));
        let (c1, r1) = (col1.min(w - 1), row1.min(h - 1));
        if c0 > c1 || r0 > r1 {
            return false;
        }
        let stride = base.width + 1;
        let at = |c: i64, r: i64| self.occupied_sums[r as usize * stride + c as usize] as i64;
        at(c1 + 1, r1 + 1) - at(c0, r1 + 1) - at(c1 + 1, r0) + at(c0, r0) > 0
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &OccupancyGrid {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[OccupancyGrid] {
        &self.levels
    }

    /// Whether the cell at `level` covers at least one Free cell of level 0.
    pub fn covers_free(&self, level: usize, col: usize, row: usize) -> bool {
        self.free_any[level][row * self.levels[level].width + col]
    }
}

/// Thresholds and geometry read from a map metadata file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapMetadata {
    pub resolution: f64,
    pub origin: Transform2D,
    pub occupied_thresh: f64,
    pub free_thresh: f64,
}

impl MapMetadata {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut resolution = None;
        let mut origin = None;
        let mut occupied = None;
        let mut free = None;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            let Some((key, value)) = line.split_once(':') else {
                continue;
            };
            let value = value.trim();
            let number = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| Error::format(path, format!("`{}` is not a number: {v:?}", key.trim())))
            };
            match key.trim() {
                "resolution" => resolution = Some(number(value)?),
                "occupied_thresh" => occupied = Some(number(value)?),
                "free_thresh" => free = Some(number(value)?),
                "origin" => {
                    let parts = value
                        .trim_matches(|c| c == '[' || c == ']')
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(number)
                        .collect::<Result<Vec<_>>>()?;
                    if parts.len() != 3 {
                        return Err(Error::format(path, "origin needs three values: x y yaw"));
                    }
                    origin = Some(Transform2D::new(parts[0], parts[1], parts[2]));
                }
                _ => {}
            }
        }
        let missing = |k: &str| Error::format(path, format!("missing key `{k}`"));
        let meta = MapMetadata {
            resolution: resolution.ok_or_else(|| missing("resolution"))?,
            origin: origin.ok_or_else(|| missing("origin"))?,
            occupied_thresh: occupied.ok_or_else(|| missing("occupied_thresh"))?,
            free_thresh: free.ok_or_else(|| missing("free_thresh"))?,
        };
        if !(meta.resolution > 0.0) {
            return Err(Error::format(path, "resolution must be positive"));
        }
        if !(0.0..=1.0).contains(&meta.occupied_thresh) || !(0.0..=1.0).contains(&meta.free_thresh) {
            return Err(Error::format(path, "thresholds must lie in [0, 1]"));
        }
        if meta.occupied_thresh >= meta.free_thresh {
            return Err(Error::format(path, "occupied_thresh must be below free_thresh"));
        }
        Ok(meta)
    }

    pub fn classify(&self, pixel: u8) -> Cell {
        let v = pixel as f64;
        if v <= 255.0 * self.occupied_thresh {
            Cell::Occupied
        } else if v >= 255.0 * self.free_thresh {
            Cell::Free
        } else {
            Cell::Unknown
        }
    }
}

/// Parses a binary 8-bit PGM (P5). Returns `(width, height, pixels)` with
/// pixels in file order (top row first).
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |reason: &str| Error::format(path, reason.to_string());
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a binary PGM (expected magic P5)"));
    }
    let mut dim =
        |name: &str| -> Result<usize> { token()?.parse::<usize>().map_err(|_| bad(&format!("invalid {name}"))) };
    let width = dim("width")?;
    let height = dim("height")?;
    let maxval = dim("maxval")?;
    if width == 0 || height == 0 {
        return Err(bad("image has zero size"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data_start = pos + 1;
    let data = bytes
        .get(data_start..data_start + width * height)
        .ok_or_else(|| bad("raster shorter than width*height"))?;
    Ok((width, height, data.to_vec()))
}

pub fn load_map(image_path: impl AsRef<Path>, metadata_path: impl AsRef<Path>) -> Result<OccupancyGrid> {
    let image_path = image_path.as_ref();
    let metadata_path = metadata_path.as_ref();
    let text = fs::read_to_string(metadata_path).map_err(|e| Error::io(metadata_path, e))?;
    let meta = MapMetadata::parse(&text, metadata_path)?;
    let bytes = fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let (width, height, pixels) = parse_pgm(&bytes, image_path)?;
    let mut cells = vec![Cell::Unknown; width * height];
    for (i, &px) in pixels.iter().enumerate() {
        let (img_row, col) = (i / width, i % width);
        // image rows run top-down, grid rows bottom-up
        cells[(height - 1 - img_row) * width + col] = meta.classify(px);
    }
    OccupancyGrid::new(width, height, meta.resolution, meta.origin, cells)
}

/// Writes the grid as PGM + metadata readable by [`load_map`]. Occupied,
/// Unknown and Free are written as 0, 128 and 255 with thresholds 0.35/0.65.
pub fn save_map(grid: &OccupancyGrid, image_path: impl AsRef<Path>, metadata_path: impl AsRef<Path>) -> Result<()> {
    let image_path = image_path.as_ref();
    let metadata_path = metadata_path.as_ref();
    let mut bytes = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    for img_row in 0..grid.height {
        let row = grid.height - 1 - img_row;
        for col in 0..grid.width {
            bytes.push(match grid.get(col, row) {
                Cell::Occupied => 0,
                Cell::Unknown => 128,
                Cell::Free => 255,
            });
        }
    }
    fs::write(image_path, bytes).map_err(|e| Error::io(image_path, e))?;
    let image_name = image_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let o = grid.origin;
    let meta = format!(
        "image: {image_name}\nresolution: {}\norigin: [{}, {}, {}]\noccupied_thresh: 0.35\nfree_thresh: 0.65\n",
        grid.resolution, o.x, o.y, o.yaw
    );
    fs::write(metadata_path, meta).map_err(|e| Error::io(metadata_path, e))
}
