//! Regular cell-centered grids, scalar images and image stacks.
//!
//! Values are stored row-major with the last axis varying fastest. For a
//! 2D image `dims = [rows, cols]`, so axis 0 is the vertical (`y`) axis and
//! axis 1 the horizontal (`x`) axis. Sample `i` along an axis sits at
//! `origin + (i + 0.5) * spacing`.
//!
//! Grids accept axes of a single cell (the top of a pyramid can end there);
//! operations that need neighbors along an axis document their minimum.

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
}

impl Grid {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        let d = dims.len();
        if !(2..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidGrid(format!(
                "spatial dimension {d} not in 2..={MAX_DIM}"
            )));
        }
        if spacing.len() != d || origin.len() != d {
            return Err(Error::InvalidGrid(
                "dims, spacing and origin must have the same length".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidGrid("empty axis".into()));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Unit spacing, zero origin.
    pub fn with_dims(dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), vec![1.0; dims.len()], vec![0.0; dims.len()])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one cell, the quadrature weight of every node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Row-major strides (last axis has stride 1).
    pub fn strides(&self) -> Vec<usize> {
        let d = self.ndim();
        let mut strides = vec![1; d];
        for k in (0..d - 1).rev() {
            strides[k] = strides[k + 1] * self.dims[k + 1];
        }
        strides
    }

    /// Multi-index of a linear node index.
    pub fn unravel(&self, mut index: usize, out: &mut [usize]) {
        for k in (0..self.ndim()).rev() {
            out[k] = index % self.dims[k];
            index /= self.dims[k];
        }
    }

    /// Physical position of a node.
    pub fn node_position(&self, index: usize, out: &mut [f64]) {
        let mut idx = [0usize; MAX_DIM];
        self.unravel(index, &mut idx);
        for k in 0..self.ndim() {
            out[k] = self.origin[k] + (idx[k] as f64 + 0.5) * self.spacing[k];
        }
    }

    /// Grid of the next coarser level: `ceil(m / 2)` cells of twice the width.
    pub fn coarsened(&self) -> Grid {
        Grid {
            dims: self.dims.iter().map(|m| m.div_ceil(2)).collect(),
            spacing: self.spacing.iter().map(|h| 2.0 * h).collect(),
            origin: self.origin.clone(),
        }
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

/// Scalar image on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: Grid,
    values: Vec<f64>,
}

impl Image {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidImage(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Image whose value at each node is `f(position)`.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let mut pos = [0.0; MAX_DIM];
        let d = grid.ndim();
        let values = (0..grid.len())
            .map(|i| {
                grid.node_position(i, &mut pos);
                f(&pos[..d])
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Average of the `2^d` fine cells below each coarse cell. Boundary
    /// cells of odd-sized axes average the children that exist.
    pub fn restrict(&self) -> Image {
        let fine = &self.grid;
        let coarse = fine.coarsened();
        let d = fine.ndim();
        let mut sums = vec![0.0; coarse.len()];
        let mut counts = vec![0u32; coarse.len()];
        let cstrides = coarse.strides();
        let mut idx = [0usize; MAX_DIM];
        for (i, &v) in self.values.iter().enumerate() {
            fine.unravel(i, &mut idx);
            let c: usize = (0..d).map(|k| (idx[k] / 2) * cstrides[k]).sum();
            sums[c] += v;
            counts[c] += 1;
        }
        let values = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| s / f64::from(n))
            .collect();
        Image {
            grid: coarse,
            values,
        }
    }

    /// Separable Gaussian filter with standard deviation `sigma` in grid
    /// cells, replicate padding. The kernel reaches `12 sigma` so the tails
    /// decay smoothly instead of ending in a step.
    pub fn smoothed(&self, sigma: f64) -> Result<Image> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be >= 0, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let radius = (12.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = kernel.iter().sum();
        let dims = self.grid.dims();
        let strides = self.grid.strides();
        let mut values = self.values.clone();
        let mut idx = [0usize; MAX_DIM];
        for axis in 0..self.grid.ndim() {
            let m = dims[axis] as isize;
            let src = values.clone();
            for (i, out) in values.iter_mut().enumerate() {
                self.grid.unravel(i, &mut idx);
                let base = i - idx[axis] * strides[axis];
                let pos = idx[axis] as isize;
                let acc: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, w)| {
                        let at = (pos + j as isize - radius).clamp(0, m - 1) as usize;
                        w * src[base + at * strides[axis]]
                    })
                    .sum();
                *out = acc / total;
            }
        }
        Ok(Image {
            grid: self.grid.clone(),
            values,
        })
    }
}

/// Ordered sequence of `T >= 2` images on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    frames: Vec<Image>,
}

impl ImageStack {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidImage(format!(
                "a stack needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let grid = frames[0].grid();
        for (t, f) in frames.iter().enumerate().skip(1) {
            grid.ensure_same(f.grid(), &format!("frame {t}"))?;
        }
        Ok(Self { frames })
    }

    pub fn grid(&self) -> &Grid {
        self.frames[0].grid()
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn restrict(&self) -> ImageStack {
        ImageStack {
            frames: self.frames.iter().map(Image::restrict).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    /// 0 is the finest level.
    pub level: usize,
    pub stack: ImageStack,
}

/// Coarsening pyramid, finest level first. Stops before any axis would drop
/// below `min_dim`; the input itself is always returned as level 0.
pub fn build_pyramid(stack: &ImageStack, min_dim: usize) -> Result<Vec<PyramidLevel>> {
    if min_dim < 4 {
        return Err(Error::InvalidParameter(format!(
            "min_dim must be at least 4, got {min_dim}"
        )));
    }
    let mut levels = vec![PyramidLevel {
        level: 0,
        stack: stack.clone(),
    }];
    loop {
        let last = &levels[levels.len() - 1];
        let next_dims = last.stack.grid().coarsened();
        if next_dims.dims().iter().any(|&m| m < min_dim) {
            break;
        }
        let next = PyramidLevel {
            level: last.level + 1,
            stack: last.stack.restrict(),
        };
        levels.push(next);
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(dims: &[usize], values: Vec<f64>) -> Image {
        Image::new(Grid::with_dims(dims).unwrap(), values).unwrap()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::with_dims(&[0, 4]).is_err());
        assert!(Grid::with_dims(&[4]).is_err());
        assert!(Grid::new(vec![4, 4], vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(Image::new(Grid::with_dims(&[2, 2]).unwrap(), vec![0.0; 3]).is_err());
        assert!(Image::new(
            Grid::with_dims(&[2, 2]).unwrap(),
            vec![0.0, 1.0, f64::NAN, 0.0]
        )
        .is_err());
    }

    #[test]
    fn node_positions_are_cell_centered() {
        let g = Grid::new(vec![3, 4], vec![2.0, 0.5], vec![1.0, -1.0]).unwrap();
        let mut p = [0.0; 2];
        g.node_position(0, &mut p);
        assert_eq!(p, [2.0, -0.75]);
        g.node_position(4 + 3, &mut p);
        assert_eq!(p, [4.0, 0.75]);
    }

    #[test]
    fn restrict_constant_and_mean() {
        let c = image(&[2, 2], vec![7.5; 4]).restrict();
        assert_eq!(c.grid().dims(), &[1, 1]);
        assert_eq!(c.values(), &[7.5]);
        assert_eq!(c.grid().spacing(), &[2.0, 2.0]);

        let m = image(&[2, 2], vec![0.0, 2.0, 4.0, 6.0]).restrict();
        assert_eq!(m.values(), &[3.0]);

        let ones = image(&[3, 3], vec![1.0; 9]).restrict();
        assert_eq!(ones.grid().dims(), &[2, 2]);
        assert_eq!(ones.values(), &[1.0; 4]);
    }

    #[test]
    fn restrict_preserves_mean_for_even_dims() {
        let vals: Vec<f64> = (0..48).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let img = image(&[6, 8], vals);
        assert!((img.restrict().mean() - img.mean()).abs() < 1e-12);
    }

    fn stack(dims: &[usize]) -> ImageStack {
        let g = Grid::with_dims(dims).unwrap();
        ImageStack::new(vec![Image::zeros(g.clone()), Image::zeros(g)]).unwrap()
    }

    fn pyramid_dims(dims: &[usize], min_dim: usize) -> Vec<Vec<usize>> {
        build_pyramid(&stack(dims), min_dim)
            .unwrap()
            .iter()
            .map(|l| l.stack.grid().dims().to_vec())
            .collect()
    }

    #[test]
    fn pyramid_levels() {
        assert_eq!(
            pyramid_dims(&[64, 64], 16),
            vec![vec![64, 64], vec![32, 32], vec![16, 16]]
        );
        assert_eq!(pyramid_dims(&[16, 16], 16), vec![vec![16, 16]]);
        assert_eq!(
            pyramid_dims(&[48, 32], 8),
            vec![vec![48, 32], vec![24, 16], vec![12, 8]]
        );
        assert!(build_pyramid(&stack(&[8, 8]), 3).is_err());
    }

    #[test]
    fn stack_requires_matching_grids() {
        let a = Image::zeros(Grid::with_dims(&[4, 4]).unwrap());
        let b = Image::zeros(Grid::with_dims(&[4, 5]).unwrap());
        assert!(ImageStack::new(vec![a.clone()]).is_err());
        assert!(ImageStack::new(vec![a, b]).is_err());
    }

    #[test]
    fn smoothing_keeps_constants_and_spreads_a_spike() {
        let flat = image(&[6, 7], vec![3.5; 42]);
        assert!(flat
            .smoothed(1.0)
            .unwrap()
            .values()
            .iter()
            .all(|v| (v - 3.5).abs() < 1e-12));
        assert_eq!(flat.smoothed(0.0).unwrap(), flat);
        assert!(flat.smoothed(-1.0).is_err());

        let mut spike = vec![0.0; 21 * 21];
        spike[10 * 21 + 10] = 1.0;
        let s = image(&[21, 21], spike).smoothed(1.0).unwrap();
        let total: f64 = s.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(s.values()[10 * 21 + 9], s.values()[10 * 21 + 11]);
        assert_eq!(s.values()[9 * 21 + 10], s.values()[10 * 21 + 9]);
        // far tail still positive, so smoothed edges have no hard border
        assert!(s.values()[0] > 0.0);
    }
}
