//! Error projections, drift statistics and energy landscapes.

use sqn_core::grid::{Image, ImageStack};
use sqn_core::measures::{pair_value, MeasureConfig};
use sqn_core::transform::DisplacementField;
use sqn_core::{Error, Result};

/// Per-node `sum_{i<j} |I_j - I_i|` over all frame pairs.
pub fn mip_error(stack: &ImageStack) -> Image {
    let frames = stack.frames();
    let n = stack.grid().len();
    let mut values = vec![0.0; n];
    let mut column = Vec::with_capacity(frames.len());
    for (x, out) in values.iter_mut().enumerate() {
        column.clear();
        column.extend(frames.iter().map(|f| f.values()[x]));
        // sorted values make the sum independent of frame order
        column.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        for j in 1..column.len() {
            for i in 0..j {
                acc += column[j] - column[i];
            }
        }
        *out = acc;
    }
    Image::new(stack.grid().clone(), values).expect("finite differences of finite frames")
}

/// Linear rescale to `[0, 255]`; returns the image and the factor applied.
pub fn rescale_for_display(image: &Image) -> (Image, f64) {
    let max = image.values().iter().cloned().fold(0.0, f64::max);
    let factor = if max > 0.0 { 255.0 / max } else { 1.0 };
    let values = image.values().iter().map(|v| v * factor).collect();
    (
        Image::new(image.grid().clone(), values).expect("finite"),
        factor,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    /// Norm of the mean of the per-frame mean displacements.
    pub drift: f64,
    /// Largest per-frame mean displacement norm.
    pub max_frame: f64,
    pub per_frame: Vec<Vec<f64>>,
}

pub fn drift_metric(fields: &[DisplacementField]) -> Result<Drift> {
    if fields.len() < 2 {
        return Err(Error::InvalidParameter(
            "drift needs at least 2 fields".into(),
        ));
    }
    let per_frame: Vec<Vec<f64>> = fields.iter().map(|f| f.mean_displacement()).collect();
    let d = per_frame[0].len();
    let t = per_frame.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|k| per_frame.iter().map(|m| m[k]).sum::<f64>() / t)
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(Drift {
        drift: norm(&mean),
        max_frame: per_frame.iter().map(|m| norm(m)).fold(0.0, f64::max),
        per_frame,
    })
}

impl Drift {
    /// One row per frame with the mean displacement components (axis order)
    /// and its norm.
    pub fn csv(&self) -> String {
        let d = self.per_frame.first().map_or(0, Vec::len);
        let mut out = String::from("frame");
        for k in 0..d {
            out.push_str(&format!(",mean_u{k}"));
        }
        out.push_str(",norm\n");
        for (t, m) in self.per_frame.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in m {
                out.push_str(&format!(",{v:.17e}"));
            }
            let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.push_str(&format!(",{n:.17e}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeSpec {
    /// Shifts run over `-range..=range` in steps of `step` on both axes.
    pub range: i64,
    pub step: i64,
    pub measures: Vec<MeasureConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeRow {
    pub dx: f64,
    pub dy: f64,
    pub measure: String,
    pub value: f64,
}

pub const LANDSCAPE_HEADER: &str = "dx,dy,measure,value";

/// Evaluate every measure of `(reference, template translated by shift)`.
pub fn landscape(
    reference: &Image,
    template: &Image,
    spec: &LandscapeSpec,
) -> Result<Vec<LandscapeRow>> {
    if spec.range < 0 || spec.step < 1 {
        return Err(Error::InvalidParameter(
            "range must be >= 0 and step >= 1".into(),
        ));
    }
    let grid = reference.grid();
    if grid.ndim() != 2 {
        return Err(Error::InvalidGrid("landscapes are 2D only".into()));
    }
    let h = grid.spacing();
    let shifts: Vec<i64> = (-spec.range..=spec.range)
        .filter(|s| s % spec.step == 0)
        .collect();
    let mut rows = Vec::new();
    for &dy in &shifts {
        for &dx in &shifts {
            let field =
                DisplacementField::constant(grid.clone(), &[dy as f64 * h[0], dx as f64 * h[1]])?;
            for m in &spec.measures {
                rows.push(LandscapeRow {
                    dx: dx as f64,
                    dy: dy as f64,
                    measure: m.label(),
                    value: pair_value(m, reference, template, &field)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn landscape_csv(rows: &[LandscapeRow]) -> String {
    let mut out = String::from(LANDSCAPE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.17e}\n",
            r.dx, r.dy, r.measure, r.value
        ));
    }
    out
}

/// Shift with the smallest value of a measure, ties resolved by first occurrence.
pub fn landscape_argmin(rows: &[LandscapeRow], measure: &str) -> Option<(f64, f64)> {
    rows.iter()
        .filter(|r| r.measure == measure)
        .fold(None::<&LandscapeRow>, |best, r| match best {
            Some(b) if b.value <= r.value => Some(b),
            _ => Some(r),
        })
        .map(|r| (r.dx, r.dy))
}
