//! Frame volumes and the spatio-temporal cube grid.
//!
//! Cube rasterization order is `t * (w * h) + row * w + col`. The order is
//! recorded in model files as [`RASTER_ORDER_TAG`] so a model trained with a
//! different layout is rejected instead of silently misread.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::pgm;
use crate::{Error, Result};

pub const RASTER_ORDER_TAG: &str = "t-row-col";

/// An ordered stack of equally sized 8-bit grayscale frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameVolume {
    width: usize,
    height: usize,
    frames: Vec<Vec<u8>>,
}

impl FrameVolume {
    pub fn new(width: usize, height: usize, frames: Vec<Vec<u8>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("frame dimensions must be positive"));
        }
        if frames.is_empty() {
            return Err(Error::param("a frame volume needs at least one frame"));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.len() != width * height {
                return Err(Error::dims(format!(
                    "frame {i} holds {} pixels, expected {}",
                    f.len(),
                    width * height
                )));
            }
        }
        Ok(Self {
            width,
            height,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<u8>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Vec<u8>> {
        self.frames
    }

    #[inline]
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> u8 {
        self.frames[t][y * self.width + x]
    }

    /// Copies the block of `dims` whose top-left-first corner is `origin`.
    pub fn cube_at(&self, origin: CubeOrigin, dims: CubeDims) -> Result<Cube> {
        if origin.x + dims.w > self.width
            || origin.y + dims.h > self.height
            || origin.t + dims.t > self.len()
        {
            return Err(Error::dims(format!(
                "cube {dims} at {origin:?} exceeds {}x{}x{}",
                self.width,
                self.height,
                self.len()
            )));
        }
        let refs: Vec<&[u8]> = self.frames[origin.t..origin.t + dims.t]
            .iter()
            .map(Vec::as_slice)
            .collect();
        Ok(cut_cube(&refs, self.width, origin, dims))
    }
}

/// Cube extent in pixels (`w`, `h`) and frames (`t`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CubeDims {
    pub w: usize,
    pub h: usize,
    pub t: usize,
}

impl CubeDims {
    pub const fn new(w: usize, h: usize, t: usize) -> Self {
        Self { w, h, t }
    }

    pub const fn volume(&self) -> usize {
        self.w * self.h * self.t
    }

    pub const fn area(&self) -> usize {
        self.w * self.h
    }
}

impl std::fmt::Display for CubeDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.w, self.h, self.t)
    }
}

/// Position of a cube's first voxel in volume coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CubeOrigin {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

/// A `w x h x t` block of intensities stored in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cube {
    dims: CubeDims,
    origin: CubeOrigin,
    data: Vec<u8>,
}

impl Cube {
    pub fn new(dims: CubeDims, origin: CubeOrigin, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.volume() {
            return Err(Error::dims(format!(
                "cube {dims} needs {} samples, got {}",
                dims.volume(),
                data.len()
            )));
        }
        Ok(Self { dims, origin, data })
    }

    pub fn dims(&self) -> CubeDims {
        self.dims
    }

    pub fn origin(&self) -> CubeOrigin {
        self.origin
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// One frame of the cube, `w * h` samples row-major.
    pub fn frame(&self, k: usize) -> &[u8] {
        let a = self.dims.area();
        &self.data[k * a..(k + 1) * a]
    }

    #[inline]
    pub fn at(&self, t: usize, row: usize, col: usize) -> u8 {
        self.data[t * self.dims.area() + row * self.dims.w + col]
    }

    /// Flattens the cube into a vector of length `w * h * t`.
    pub fn rasterize(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Inverse of [`Cube::rasterize`]. Values are rounded and clamped to
    /// 0..=255.
    pub fn from_raster(dims: CubeDims, origin: CubeOrigin, v: &[f64]) -> Result<Self> {
        let data = v.iter().map(|x| x.round().clamp(0.0, 255.0) as u8).collect();
        Self::new(dims, origin, data)
    }

    /// Splits the cube into non-overlapping `sub_w x sub_h` sub-cubes that
    /// share the parent's temporal extent, in row-major spatial order.
    pub fn subdivide(&self, sub_w: usize, sub_h: usize) -> Result<Vec<Cube>> {
        let d = self.dims;
        if sub_w == 0 || sub_h == 0 || !d.w.is_multiple_of(sub_w) || !d.h.is_multiple_of(sub_h) {
            return Err(Error::dims(format!(
                "cube {d} does not divide into {sub_w}x{sub_h} sub-cubes"
            )));
        }
        let sub = CubeDims::new(sub_w, sub_h, d.t);
        let mut out = Vec::with_capacity((d.w / sub_w) * (d.h / sub_h));
        for by in 0..d.h / sub_h {
            for bx in 0..d.w / sub_w {
                let mut data = Vec::with_capacity(sub.volume());
                for t in 0..d.t {
                    for r in 0..sub_h {
                        let start = t * d.area() + (by * sub_h + r) * d.w + bx * sub_w;
                        data.extend_from_slice(&self.data[start..start + sub_w]);
                    }
                }
                let origin = CubeOrigin {
                    x: self.origin.x + bx * sub_w,
                    y: self.origin.y + by * sub_h,
                    t: self.origin.t,
                };
                out.push(Cube {
                    dims: sub,
                    origin,
                    data,
                });
            }
        }
        Ok(out)
    }
}

fn cut_cube(frames: &[&[u8]], width: usize, origin: CubeOrigin, dims: CubeDims) -> Cube {
    let mut data = Vec::with_capacity(dims.volume());
    for f in frames {
        for r in 0..dims.h {
            let start = (origin.y + r) * width + origin.x;
            data.extend_from_slice(&f[start..start + dims.w]);
        }
    }
    Cube { dims, origin, data }
}

/// Cuts one temporal slab (exactly `dims.t` frames starting at `t0`) into a
/// row-major list of `rows * cols` cubes.
pub fn slab_cubes(
    frames: &[&[u8]],
    width: usize,
    height: usize,
    dims: CubeDims,
    t0: usize,
) -> Result<Vec<Cube>> {
    if frames.len() != dims.t {
        return Err(Error::dims(format!(
            "slab needs {} frames, got {}",
            dims.t,
            frames.len()
        )));
    }
    if dims.w == 0 || dims.h == 0 || dims.w > width || dims.h > height {
        return Err(Error::dims(format!(
            "cube {dims} does not fit a {width}x{height} frame"
        )));
    }
    let rows = height / dims.h;
    let cols = width / dims.w;
    let mut out = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let origin = CubeOrigin {
                x: col * dims.w,
                y: row * dims.h,
                t: t0,
            };
            out.push(cut_cube(frames, width, origin, dims));
        }
    }
    Ok(out)
}

/// Partition of a volume into non-overlapping cubes indexed by
/// `(row, col, slab)`. Right, bottom and tail remainders are cropped.
#[derive(Debug, Clone)]
pub struct CubeGrid {
    dims: CubeDims,
    rows: usize,
    cols: usize,
    slabs: usize,
    cropped: bool,
    cubes: Vec<Cube>,
}

impl CubeGrid {
    pub fn dims(&self) -> CubeDims {
        self.dims
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn slabs(&self) -> usize {
        self.slabs
    }

    /// True when part of the volume fell outside the grid.
    pub fn cropped(&self) -> bool {
        self.cropped
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn get(&self, row: usize, col: usize, slab: usize) -> Option<&Cube> {
        if row >= self.rows || col >= self.cols || slab >= self.slabs {
            return None;
        }
        self.cubes
            .get((slab * self.rows + row) * self.cols + col)
    }

    /// Cubes of one slab, row-major.
    pub fn slab(&self, slab: usize) -> &[Cube] {
        let n = self.rows * self.cols;
        &self.cubes[slab * n..(slab + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize, usize), &Cube)> {
        let (rows, cols) = (self.rows, self.cols);
        self.cubes.iter().enumerate().map(move |(i, c)| {
            let slab = i / (rows * cols);
            let rem = i % (rows * cols);
            ((rem / cols, rem % cols, slab), c)
        })
    }

}

pub fn build_grid(v: &FrameVolume, dims: CubeDims) -> Result<CubeGrid> {
    if dims.w == 0 || dims.h == 0 || dims.t == 0 {
        return Err(Error::param(format!("cube dimensions must be >= 1, got {dims}")));
    }
    if dims.w > v.width() || dims.h > v.height() || dims.t > v.len() {
        return Err(Error::dims(format!(
            "cube {dims} exceeds volume {}x{}x{}",
            v.width(),
            v.height(),
            v.len()
        )));
    }
    let rows = v.height() / dims.h;
    let cols = v.width() / dims.w;
    let slabs = v.len() / dims.t;
    let cropped =
        rows * dims.h != v.height() || cols * dims.w != v.width() || slabs * dims.t != v.len();
    if cropped {
        warn!(
            "cropping {}x{}x{} volume to {}x{}x{} for {dims} cubes",
            v.width(),
            v.height(),
            v.len(),
            cols * dims.w,
            rows * dims.h,
            slabs * dims.t
        );
    }
    let mut cubes = Vec::with_capacity(rows * cols * slabs);
    for s in 0..slabs {
        let t0 = s * dims.t;
        let refs: Vec<&[u8]> = v.frames[t0..t0 + dims.t].iter().map(Vec::as_slice).collect();
        cubes.extend(slab_cubes(&refs, v.width(), v.height(), dims, t0)?);
    }
    Ok(CubeGrid {
        dims,
        rows,
        cols,
        slabs,
        cropped,
        cubes,
    })
}

/// Matches `name` against a glob with `*` and `?` wildcards.
fn glob_match(pattern: &[u8], name: &[u8]) -> bool {
    let (mut p, mut n) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while n < name.len() {
        if p < pattern.len() && (pattern[p] == b'?' || pattern[p] == name[n]) {
            p += 1;
            n += 1;
        } else if p < pattern.len() && pattern[p] == b'*' {
            star = Some((p, n));
            p += 1;
        } else if let Some((sp, sn)) = star {
            p = sp + 1;
            n = sn + 1;
            star = Some((sp, sn + 1));
        } else {
            return false;
        }
    }
    pattern[p..].iter().all(|&c| c == b'*')
}

/// Loads every file in `dir` whose name matches `pattern`, in lexicographic
/// filename order.
pub fn load_frame_sequence(dir: &Path, pattern: &str) -> Result<FrameVolume> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name())
        .filter(|n| glob_match(pattern.as_bytes(), n.as_encoded_bytes()))
        .collect();
    if names.is_empty() {
        return Err(Error::NoMatchingFiles {
            dir: dir.to_path_buf(),
            pattern: pattern.to_string(),
        });
    }
    names.sort();
    let mut frames = Vec::with_capacity(names.len());
    let (mut width, mut height) = (0, 0);
    for (i, name) in names.iter().enumerate() {
        let img = pgm::read(&dir.join(name))?;
        if i == 0 {
            width = img.width;
            height = img.height;
        } else if img.width != width || img.height != height {
            return Err(Error::FrameSizeMismatch {
                index: i,
                want_w: width,
                want_h: height,
                got_w: img.width,
                got_h: img.height,
            });
        }
        frames.push(img.data);
    }
    FrameVolume::new(width, height, frames)
}

/// Writes frames as `prefix%05d.pgm` into `dir`, creating it if needed.
pub fn save_frame_sequence(dir: &Path, prefix: &str, v: &FrameVolume) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in v.frames().iter().enumerate() {
        pgm::write(&dir.join(format!("{prefix}{i:05}.pgm")), v.width(), v.height(), f)?;
    }
    Ok(())
}
