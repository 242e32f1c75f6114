//! Local view descriptor of a cube.
//!
//! Layout (frozen; classifier files record [`LOCAL_LAYOUT_TAG`]):
//!
//! ```text
//! [0..8)   SSIM to the 8 spatial neighbours in the same slab, clockwise
//!          from top-left: NW, N, NE, E, SE, S, SW, W
//! [8]      SSIM to the co-located cube of the previous slab (self on slab 0)
//! [9..)    SSIM of frame k with frame k+1 inside the cube, k = 0..t-2
//! ```
//!
//! Neighbours outside the grid are replaced by the nearest in-bounds cube.

use crate::ssim::{ssim_cube, ssim_frame, SsimParams};
use crate::videoio::{Cube, CubeGrid};
use crate::{Error, Result};

pub const LOCAL_LAYOUT_TAG: &str = "nw-n-ne-e-se-s-sw-w-prev-intra";

/// Spatial neighbour offsets `(drow, dcol)`, clockwise from top-left.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

pub const fn descriptor_len(cube_t: usize) -> usize {
    9 + cube_t - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptor(Vec<f64>);

impl LocalDescriptor {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn neighbors(&self) -> &[f64] {
        &self.0[..9]
    }

    pub fn intra(&self) -> &[f64] {
        &self.0[9..]
    }
}

/// One slab of a cube grid plus the slab before it, which is all the local
/// view needs. Streaming detection builds these without a full grid.
#[derive(Debug, Clone, Copy)]
pub struct SlabView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub current: &'a [Cube],
    pub previous: Option<&'a [Cube]>,
}

impl<'a> SlabView<'a> {
    pub fn from_grid(g: &'a CubeGrid, slab: usize) -> Result<Self> {
        if slab >= g.slabs() {
            return Err(Error::dims(format!(
                "slab {slab} out of range (grid has {})",
                g.slabs()
            )));
        }
        Ok(Self {
            rows: g.rows(),
            cols: g.cols(),
            current: g.slab(slab),
            previous: (slab > 0).then(|| g.slab(slab - 1)),
        })
    }

    fn cube(&self, row: usize, col: usize) -> &'a Cube {
        &self.current[row * self.cols + col]
    }

    fn check(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::dims(format!(
                "cube ({row}, {col}) outside {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

fn clamp_offset(v: usize, d: isize, n: usize) -> usize {
    (v as isize + d).clamp(0, n as isize - 1) as usize
}

pub fn neighbor_similarities_in(
    view: &SlabView<'_>,
    row: usize,
    col: usize,
    p: &SsimParams,
) -> Result<[f64; 9]> {
    view.check(row, col)?;
    let me = view.cube(row, col);
    let mut out = [0.0; 9];
    for (slot, &(dr, dc)) in out.iter_mut().zip(NEIGHBOR_OFFSETS.iter()) {
        let r = clamp_offset(row, dr, view.rows);
        let c = clamp_offset(col, dc, view.cols);
        *slot = ssim_cube(me, view.cube(r, c), p)?;
    }
    let behind = match view.previous {
        Some(prev) => &prev[row * view.cols + col],
        None => me,
    };
    out[8] = ssim_cube(me, behind, p)?;
    Ok(out)
}

/// Similarities of the cube at `(row, col, slab)` to its 8 spatial
/// neighbours and its temporal predecessor.
pub fn neighbor_similarities(
    g: &CubeGrid,
    (row, col, slab): (usize, usize, usize),
    p: &SsimParams,
) -> Result<[f64; 9]> {
    neighbor_similarities_in(&SlabView::from_grid(g, slab)?, row, col, p)
}

/// SSIM of each frame of the cube with the next one.
pub fn intra_similarities(c: &Cube, p: &SsimParams) -> Result<Vec<f64>> {
    let d = c.dims();
    if d.t < 2 {
        return Err(Error::dims(format!(
            "intra-cube similarity needs at least 2 frames, cube has {}",
            d.t
        )));
    }
    (0..d.t - 1)
        .map(|k| ssim_frame(c.frame(k), c.frame(k + 1), d.w, p))
        .collect()
}

pub fn local_descriptor_in(
    view: &SlabView<'_>,
    row: usize,
    col: usize,
    p: &SsimParams,
) -> Result<LocalDescriptor> {
    let nb = neighbor_similarities_in(view, row, col, p)?;
    let intra = intra_similarities(view.cube(row, col), p)?;
    let mut v = Vec::with_capacity(9 + intra.len());
    v.extend_from_slice(&nb);
    v.extend(intra);
    Ok(LocalDescriptor(v))
}

pub fn local_descriptor(
    g: &CubeGrid,
    (row, col, slab): (usize, usize, usize),
    p: &SsimParams,
) -> Result<LocalDescriptor> {
    local_descriptor_in(&SlabView::from_grid(g, slab)?, row, col, p)
}

/// Descriptors for every cube of a slab, row-major.
pub fn slab_descriptors(view: &SlabView<'_>, p: &SsimParams) -> Result<Vec<LocalDescriptor>> {
    let cells: Vec<(usize, usize)> = (0..view.rows)
        .flat_map(|r| (0..view.cols).map(move |c| (r, c)))
        .collect();
    crate::par::map(&cells, |&(r, c)| local_descriptor_in(view, r, c, p))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videoio::{build_grid, CubeDims, FrameVolume};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_volume(w: usize, h: usize, n: usize, seed: u64) -> FrameVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..n)
            .map(|_| (0..w * h).map(|_| rng.random::<u8>()).collect())
            .collect();
        FrameVolume::new(w, h, frames).unwrap()
    }

    // brute-force per-frame SSIM from raw volume pixels
    fn oracle_cube_ssim(v: &FrameVolume, a: (usize, usize), b: (usize, usize), t0: usize, d: CubeDims) -> f64 {
        let p = SsimParams::default();
        let mut total = 0.0;
        for k in 0..d.t {
            let mut fa = vec![];
            let mut fb = vec![];
            for r in 0..d.h {
                for c in 0..d.w {
                    fa.push(v.pixel(t0 + k, a.0 * d.h + r, a.1 * d.w + c));
                    fb.push(v.pixel(t0 + k, b.0 * d.h + r, b.1 * d.w + c));
                }
            }
            total += ssim_frame(&fa, &fb, d.w, &p).unwrap();
        }
        total / d.t as f64
    }

    #[test]
    fn constant_video_gives_all_ones() {
        let v = FrameVolume::new(40, 30, vec![vec![90; 1200]; 10]).unwrap();
        let g = build_grid(&v, CubeDims::new(10, 10, 5)).unwrap();
        let p = SsimParams::default();
        for ((r, c, s), _) in g.iter() {
            let d = local_descriptor(&g, (r, c, s), &p).unwrap();
            assert_eq!(d.as_slice().len(), 13);
            assert!(d.as_slice().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn center_cube_matches_oracle() {
        let v = noise_volume(24, 24, 10, 3);
        let d = CubeDims::new(8, 8, 5);
        let g = build_grid(&v, d).unwrap();
        let p = SsimParams::default();
        let nb = neighbor_similarities(&g, (1, 1, 1), &p).unwrap();
        for (i, &(dr, dc)) in NEIGHBOR_OFFSETS.iter().enumerate() {
            let other = ((1 + dr) as usize, (1 + dc) as usize);
            let want = oracle_cube_ssim(&v, (1, 1), other, 5, d);
            assert!((nb[i] - want).abs() < 1e-12);
        }
        // predecessor: same cell, previous slab
        let mut total = 0.0;
        for k in 0..5 {
            let mut fa = vec![];
            let mut fb = vec![];
            for r in 0..8 {
                for c in 0..8 {
                    fa.push(v.pixel(5 + k, 8 + r, 8 + c));
                    fb.push(v.pixel(k, 8 + r, 8 + c));
                }
            }
            total += ssim_frame(&fa, &fb, 8, &p).unwrap();
        }
        assert!((nb[8] - total / 5.0).abs() < 1e-12);
    }

    #[test]
    fn corner_uses_replicate_padding() {
        let v = noise_volume(24, 24, 10, 4);
        let g = build_grid(&v, CubeDims::new(8, 8, 5)).unwrap();
        let p = SsimParams::default();
        let nb = neighbor_similarities(&g, (0, 0, 1), &p).unwrap();
        let me = g.get(0, 0, 1).unwrap();
        let east = ssim_cube(me, g.get(0, 1, 1).unwrap(), &p).unwrap();
        let south = ssim_cube(me, g.get(1, 0, 1).unwrap(), &p).unwrap();
        // NW, N, W clamp onto the cube itself; NE clamps onto E; SW onto S
        assert_eq!(nb[0], 1.0);
        assert_eq!(nb[1], 1.0);
        assert_eq!(nb[7], 1.0);
        assert_eq!(nb[2], east);
        assert_eq!(nb[3], east);
        assert_eq!(nb[6], south);
        assert_eq!(nb[5], south);
    }

    #[test]
    fn first_slab_predecessor_is_self() {
        let v = noise_volume(16, 16, 5, 5);
        let g = build_grid(&v, CubeDims::new(8, 8, 5)).unwrap();
        let nb = neighbor_similarities(&g, (1, 0, 0), &SsimParams::default()).unwrap();
        assert_eq!(nb[8], 1.0);
    }

    #[test]
    fn out_of_range_index_rejected() {
        let v = noise_volume(16, 16, 5, 5);
        let g = build_grid(&v, CubeDims::new(8, 8, 5)).unwrap();
        let p = SsimParams::default();
        assert!(neighbor_similarities(&g, (2, 0, 0), &p).is_err());
        assert!(neighbor_similarities(&g, (0, 0, 1), &p).is_err());
    }

    #[test]
    fn intra_static_and_abrupt_change() {
        let p = SsimParams::default();
        let d = CubeDims::new(10, 10, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base: Vec<u8> = (0..100).map(|_| rng.random_range(60..200)).collect();
        let mut data: Vec<u8> = base.iter().cycle().take(500).copied().collect();
        let c = Cube::new(d, Default::default(), data.clone()).unwrap();
        assert_eq!(intra_similarities(&c, &p).unwrap(), vec![1.0; 4]);

        // small jitter everywhere, a brand new pattern from frame 3 on
        for (i, v) in data.iter_mut().enumerate() {
            let k = i / 100;
            if k >= 3 {
                *v = base[(i * 7 + 3) % 100];
            } else {
                *v = v.saturating_add((k as u8) * 2);
            }
        }
        let c = Cube::new(d, Default::default(), data).unwrap();
        let intra = intra_similarities(&c, &p).unwrap();
        assert_eq!(intra.len(), 4);
        let argmin = (0..4).min_by(|&a, &b| intra[a].total_cmp(&intra[b])).unwrap();
        assert_eq!(argmin, 2, "{intra:?}");
    }

    #[test]
    fn single_frame_cube_rejected() {
        let c = Cube::new(CubeDims::new(2, 2, 1), Default::default(), vec![0; 4]).unwrap();
        assert!(intra_similarities(&c, &SsimParams::default()).is_err());
    }

    #[test]
    fn descriptor_is_deterministic_and_fixed_length() {
        let v = noise_volume(40, 24, 15, 6);
        let g = build_grid(&v, CubeDims::new(8, 8, 5)).unwrap();
        let p = SsimParams::default();
        for ((r, c, s), _) in g.iter() {
            let a = local_descriptor(&g, (r, c, s), &p).unwrap();
            let b = local_descriptor(&g, (r, c, s), &p).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.as_slice().len(), descriptor_len(5));
            assert!(a.as_slice().iter().all(|x| (-1.0..=1.0).contains(x)));
        }
        let view = SlabView::from_grid(&g, 2).unwrap();
        let all = slab_descriptors(&view, &p).unwrap();
        assert_eq!(all[7], local_descriptor(&g, (1, 2, 2), &p).unwrap());
    }
}
