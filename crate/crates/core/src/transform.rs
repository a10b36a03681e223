//! Multilinear interpolation with analytic derivatives, displacement fields
//! and warping.
//!
//! A transformation is stored as a displacement `u` on the image nodes,
//! `y(x) = x + u(x)`, so the zero field is the identity.
//!
//! # DFIELD files
//!
//! ```text
//! DFIELD <d> <m1> ... <md>\n
//! <n*d little-endian f64>
//! ```
//!
//! The header is one ASCII line with single spaces. The payload is
//! node-major: for every node in row-major order (last axis fastest) the
//! `d` displacement components follow in axis order, in physical units.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, MAX_DIM};

/// Per-node displacement vectors on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    grid: Grid,
    values: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len() * grid.ndim();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    /// `values` is node-major, `grid.len() * grid.ndim()` long.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * grid.ndim() {
            return Err(Error::InvalidParameter(format!(
                "displacement field needs {} values, got {}",
                grid.len() * grid.ndim(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement field".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, shift: &[f64]) -> Result<Self> {
        if shift.len() != grid.ndim() {
            return Err(Error::InvalidParameter(format!(
                "shift has {} components on a {}D grid",
                shift.len(),
                grid.ndim()
            )));
        }
        let values = shift.repeat(grid.len());
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, index: usize) -> &[f64] {
        let d = self.grid.ndim();
        &self.values[index * d..(index + 1) * d]
    }

    /// Component `k` of every node, as an image-shaped vector.
    pub fn component(&self, k: usize) -> Vec<f64> {
        let d = self.grid.ndim();
        self.values.iter().skip(k).step_by(d).copied().collect()
    }

    pub fn from_components(grid: Grid, components: &[Vec<f64>]) -> Result<Self> {
        let d = grid.ndim();
        let n = grid.len();
        if components.len() != d || components.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidParameter("component shape mismatch".into()));
        }
        let mut values = vec![0.0; n * d];
        for (k, c) in components.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                values[i * d + k] = v;
            }
        }
        Self::new(grid, values)
    }

    /// Mean displacement vector over all nodes.
    pub fn mean_displacement(&self) -> Vec<f64> {
        let d = self.grid.ndim();
        let n = self.grid.len() as f64;
        (0..d)
            .map(|k| self.values.iter().skip(k).step_by(d).sum::<f64>() / n)
            .collect()
    }
}

/// Rigid shift in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationParams {
    pub shift: Vec<f64>,
}

impl TranslationParams {
    pub fn new(shift: Vec<f64>) -> Result<Self> {
        if shift.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("translation".into()));
        }
        Ok(Self { shift })
    }

    pub fn compose(&self, other: &TranslationParams) -> TranslationParams {
        TranslationParams {
            shift: self
                .shift
                .iter()
                .zip(&other.shift)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

pub fn translation_to_field(t: &TranslationParams, grid: &Grid) -> Result<DisplacementField> {
    DisplacementField::constant(grid.clone(), &t.shift)
}

/// Interpolation stencil along one axis: up to two sample indices with
/// weights and weight derivatives (per index unit).
#[derive(Clone, Copy)]
struct AxisStencil {
    index: [usize; 2],
    weight: [f64; 2],
    dweight: [f64; 2],
    count: usize,
}

/// `s` is the continuous sample index. Inside `[0, m-1]` this is the linear
/// hat basis; in the half-cell margins the edge sample fades linearly to 0
/// at the domain boundary; beyond that there is no support.
#[inline]
fn fade_stencil(s: f64, m: usize) -> Option<AxisStencil> {
    let last = (m - 1) as f64;
    if !(-0.5..=last + 0.5).contains(&s) {
        None
    } else if s < 0.0 {
        Some(AxisStencil {
            index: [0, 0],
            weight: [1.0 + 2.0 * s, 0.0],
            dweight: [2.0, 0.0],
            count: 1,
        })
    } else if s > last {
        Some(AxisStencil {
            index: [m - 1, 0],
            weight: [1.0 - 2.0 * (s - last), 0.0],
            dweight: [-2.0, 0.0],
            count: 1,
        })
    } else {
        Some(linear_stencil(s, m))
    }
}

#[inline]
fn linear_stencil(s: f64, m: usize) -> AxisStencil {
    if m == 1 {
        return AxisStencil {
            index: [0, 0],
            weight: [1.0, 0.0],
            dweight: [0.0, 0.0],
            count: 1,
        };
    }
    let i0 = (s.floor() as usize).min(m - 2);
    let f = s - i0 as f64;
    AxisStencil {
        index: [i0, i0 + 1],
        weight: [1.0 - f, f],
        dweight: [-1.0, 1.0],
        count: 2,
    }
}

/// Value and gradient of the tensor-product stencil at one point.
fn evaluate_stencils(
    values: &[f64],
    strides: &[usize],
    spacing: &[f64],
    stencils: &[AxisStencil],
    jac: &mut [f64],
) -> f64 {
    let d = stencils.len();
    let corners: usize = stencils.iter().map(|s| s.count).product();
    let mut value = 0.0;
    jac[..d].fill(0.0);
    for c in 0..corners {
        let mut rem = c;
        let mut offset = 0;
        let mut pick = [0usize; MAX_DIM];
        for k in (0..d).rev() {
            pick[k] = rem % stencils[k].count;
            rem /= stencils[k].count;
            offset += stencils[k].index[pick[k]] * strides[k];
        }
        let v = values[offset];
        let mut w = 1.0;
        for k in 0..d {
            w *= stencils[k].weight[pick[k]];
        }
        value += w * v;
        for k in 0..d {
            let mut wk = stencils[k].dweight[pick[k]] / spacing[k];
            for (j, st) in stencils.iter().enumerate() {
                if j != k {
                    wk *= st.weight[pick[j]];
                }
            }
            jac[k] += wk * v;
        }
    }
    value
}

/// Continuous sample index of a physical coordinate along axis `k`.
#[inline]
fn sample_index(grid: &Grid, k: usize, x: f64) -> f64 {
    (x - grid.origin()[k]) / grid.spacing()[k] - 0.5
}

/// `s` holds continuous sample indices, one per axis.
fn interp_at_index(image: &Image, strides: &[usize], s: &[f64], jac: &mut [f64]) -> f64 {
    let grid = image.grid();
    let d = grid.ndim();
    let mut stencils = [AxisStencil {
        index: [0; 2],
        weight: [0.0; 2],
        dweight: [0.0; 2],
        count: 0,
    }; MAX_DIM];
    for k in 0..d {
        match fade_stencil(s[k], grid.dims()[k]) {
            Some(st) => stencils[k] = st,
            None => {
                jac[..d].fill(0.0);
                return 0.0;
            }
        }
    }
    evaluate_stencils(image.values(), strides, grid.spacing(), &stencils[..d], jac)
}

/// Interpolated values and spatial jacobians (`d` per point, flattened) at
/// `points` (`d` coordinates per point, flattened).
pub fn interp(image: &Image, points: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = image.grid().ndim();
    if points.len() % d != 0 {
        return Err(Error::InvalidParameter(format!(
            "point buffer length {} is not a multiple of {d}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("interpolation point".into()));
    }
    let strides = image.grid().strides();
    let n = points.len() / d;
    let mut values = vec![0.0; n];
    let mut jacobians = vec![0.0; n * d];
    values
        .par_iter_mut()
        .zip(jacobians.par_chunks_mut(d))
        .zip(points.par_chunks(d))
        .for_each(|((v, j), p)| {
            let grid = image.grid();
            let mut s = [0.0; MAX_DIM];
            for k in 0..d {
                s[k] = sample_index(grid, k, p[k]);
            }
            *v = interp_at_index(image, &strides, &s[..d], j)
        });
    Ok((values, jacobians))
}

/// A frame resampled on its own grid under a displacement field.
#[derive(Debug, Clone)]
pub struct Warped {
    pub values: Vec<f64>,
    /// `d` entries per node: derivative of the value w.r.t. the node's
    /// displacement.
    pub jacobians: Vec<f64>,
}

/// `warped(x) = image(x + u(x))` on every node.
pub fn warp(image: &Image, field: &DisplacementField) -> Result<Warped> {
    let grid = image.grid();
    grid.ensure_same(field.grid(), "warp")?;
    let d = grid.ndim();
    let n = grid.len();
    let strides = grid.strides();
    let mut values = vec![0.0; n];
    let mut jacobians = vec![0.0; n * d];
    values
        .par_iter_mut()
        .zip(jacobians.par_chunks_mut(d))
        .enumerate()
        .for_each(|(i, (v, jac))| {
            // Sample indices straight from the node index keep the zero
            // field an exact identity.
            let mut idx = [0usize; MAX_DIM];
            grid.unravel(i, &mut idx);
            let u = field.node(i);
            let mut s = [0.0; MAX_DIM];
            for k in 0..d {
                s[k] = idx[k] as f64 + u[k] / grid.spacing()[k];
            }
            *v = interp_at_index(image, &strides, &s[..d], jac);
        });
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("warped image".into()));
    }
    Ok(Warped { values, jacobians })
}

/// Warped frame as an image on the original grid.
pub fn warp_image(image: &Image, field: &DisplacementField) -> Result<Image> {
    let w = warp(image, field)?;
    Image::new(image.grid().clone(), w.values)
}

/// Multilinear interpolation with constant extrapolation beyond the outer
/// nodes, so constants are reproduced everywhere.
fn interp_clamped(values: &[f64], grid: &Grid, strides: &[usize], point: &[f64]) -> f64 {
    let d = grid.ndim();
    let mut stencils = [AxisStencil {
        index: [0; 2],
        weight: [0.0; 2],
        dweight: [0.0; 2],
        count: 0,
    }; MAX_DIM];
    for k in 0..d {
        let m = grid.dims()[k];
        let s = sample_index(grid, k, point[k]).clamp(0.0, (m - 1) as f64);
        stencils[k] = linear_stencil(s, m);
    }
    let mut jac = [0.0; MAX_DIM];
    evaluate_stencils(
        values,
        strides,
        grid.spacing(),
        &stencils[..d],
        &mut jac[..d],
    )
}

/// Transfers a coarse-level field to the next finer grid by componentwise
/// multilinear interpolation. Displacements stay in physical units.
pub fn prolong(field: &DisplacementField, fine_grid: &Grid) -> Result<DisplacementField> {
    let coarse = field.grid();
    let expected = fine_grid.coarsened();
    if expected.dims() != coarse.dims() || fine_grid.ndim() != coarse.ndim() {
        return Err(Error::GridMismatch(format!(
            "cannot prolong {:?} onto {:?}",
            coarse.dims(),
            fine_grid.dims()
        )));
    }
    let d = fine_grid.ndim();
    let strides = coarse.strides();
    let components: Vec<Vec<f64>> = (0..d).map(|k| field.component(k)).collect();
    let mut values = vec![0.0; fine_grid.len() * d];
    values.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        let mut p = [0.0; MAX_DIM];
        fine_grid.node_position(i, &mut p);
        for (k, comp) in components.iter().enumerate() {
            out[k] = interp_clamped(comp, coarse, &strides, &p[..d]);
        }
    });
    DisplacementField::new(fine_grid.clone(), values)
}

/// Componentwise restriction (cell averaging), the adjoint-like companion
/// of [`prolong`].
pub fn restrict_field(field: &DisplacementField) -> Result<DisplacementField> {
    let grid = field.grid();
    let comps = (0..grid.ndim())
        .map(|k| Image::new(grid.clone(), field.component(k)).map(|img| img.restrict()))
        .collect::<Result<Vec<_>>>()?;
    let coarse = comps[0].grid().clone();
    let comps: Vec<Vec<f64>> = comps.into_iter().map(Image::into_values).collect();
    DisplacementField::from_components(coarse, &comps)
}

pub fn encode_dfield(field: &DisplacementField) -> Vec<u8> {
    let dims = field.grid().dims();
    let mut header = format!("DFIELD {}", dims.len());
    for m in dims {
        header.push_str(&format!(" {m}"));
    }
    header.push('\n');
    let mut out = header.into_bytes();
    out.reserve(field.values().len() * 8);
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a DFIELD buffer onto a grid with the file's dims and the given
/// spacing (unit spacing when `None`).
pub fn decode_dfield(bytes: &[u8], spacing: Option<&[f64]>) -> Result<DisplacementField> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("DFIELD header has no newline".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::MalformedHeader("DFIELD header is not ASCII".into()))?;
    let mut tokens = header.split(' ');
    if tokens.next() != Some("DFIELD") {
        return Err(Error::UnsupportedFormat("missing DFIELD magic".into()));
    }
    let numbers = tokens
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::MalformedHeader(format!("DFIELD header: {e}")))?;
    let (&d, dims) = numbers
        .split_first()
        .ok_or_else(|| Error::MalformedHeader("DFIELD header lacks dimension".into()))?;
    if dims.len() != d {
        return Err(Error::MalformedHeader(format!(
            "DFIELD declares d={d} but lists {} dims",
            dims.len()
        )));
    }
    let grid = match spacing {
        Some(h) => Grid::new(dims.to_vec(), h.to_vec(), vec![0.0; d])?,
        None => Grid::with_dims(dims)?,
    };
    let payload = &bytes[nl + 1..];
    let expected = grid.len() * d * 8;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    DisplacementField::new(grid, values)
}

pub fn save_dfield(field: &DisplacementField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dfield(field)).map_err(|e| Error::io(path, e))
}

pub fn load_dfield(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dfield(&bytes, None)
}
