//! Curvature energy against a dense operator built independently.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sqn_core::grid::Grid;
use sqn_core::regularizer::{curvature, curvature_apply, curvature_value};
use sqn_core::transform::DisplacementField;

/// Second difference on `m` nodes with the end values replicated.
fn second_difference(m: usize, h: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        let lo = if i > 0 { i - 1 } else { i };
        let hi = if i + 1 < m { i + 1 } else { i };
        a[(i, lo)] += 1.0;
        a[(i, hi)] += 1.0;
        a[(i, i)] -= 2.0;
    }
    a / (h * h)
}

/// Row-major 2-D Laplacian: rows index y (slow), cols index x (fast).
fn dense_laplacian(grid: &Grid) -> DMatrix<f64> {
    let (rows, cols) = (grid.dims()[0], grid.dims()[1]);
    let (hy, hx) = (grid.spacing()[0], grid.spacing()[1]);
    second_difference(rows, hy).kronecker(&DMatrix::identity(cols, cols))
        + DMatrix::identity(rows, rows).kronecker(&second_difference(cols, hx))
}

fn dense_energy(grid: &Grid, field: &DisplacementField) -> f64 {
    let l = dense_laplacian(grid);
    (0..2)
        .map(|k| {
            let lu = &l * DVector::from_vec(field.component(k));
            0.5 * grid.cell_volume() * lu.norm_squared()
        })
        .sum()
}

fn field_from(grid: &Grid, f: impl Fn(f64, f64) -> [f64; 2]) -> DisplacementField {
    let (rows, cols) = (grid.dims()[0], grid.dims()[1]);
    let (hy, hx) = (grid.spacing()[0], grid.spacing()[1]);
    let mut values = Vec::with_capacity(rows * cols * 2);
    for r in 0..rows {
        for c in 0..cols {
            values.extend(f((r as f64 + 0.5) * hy, (c as f64 + 0.5) * hx));
        }
    }
    DisplacementField::new(grid.clone(), values).unwrap()
}

#[test]
fn matches_dense_operator() {
    let grid = Grid::new(vec![7, 9], vec![0.8, 1.3], vec![0.0, 0.0]).unwrap();
    let field = field_from(&grid, |y, x| [(0.7 * x).sin() * y, x * x - 0.3 * y * y * y]);
    let (value, gradient) = curvature(&field).unwrap();
    let want = dense_energy(&grid, &field);
    assert!((value - want).abs() < 1e-10 * want, "{value} vs {want}");

    let l = dense_laplacian(&grid);
    let lt_l = l.transpose() * &l * grid.cell_volume();
    for k in 0..2 {
        let g = &lt_l * DVector::from_vec(field.component(k));
        for (i, gi) in g.iter().enumerate() {
            assert!((gradient[i * 2 + k] - gi).abs() < 1e-9 * gi.abs().max(1.0));
        }
    }
}

#[test]
fn quadratic_in_x_has_constant_interior_laplacian() {
    // u_1 = x^2 has Laplacian 2 away from the ends of each row
    let grid = Grid::with_dims(&[5, 8]).unwrap();
    let field = field_from(&grid, |_, x| [x * x, 0.0]);
    let l = dense_laplacian(&grid);
    let lu = &l * DVector::from_vec(field.component(0));
    for r in 0..5 {
        for c in 1..7 {
            assert!((lu[r * 8 + c] - 2.0).abs() < 1e-12);
        }
    }
    let want = dense_energy(&grid, &field);
    assert!((curvature_value(&field).unwrap() - want).abs() < 1e-10 * want);
}

#[test]
fn constants_are_the_only_free_fields() {
    let grid = Grid::new(vec![6, 6], vec![1.0, 0.5], vec![0.0, 0.0]).unwrap();
    let constant = DisplacementField::constant(grid.clone(), &[3.0, -1.25]).unwrap();
    let (v, g) = curvature(&constant).unwrap();
    assert_eq!(v, 0.0);
    assert!(g.iter().all(|&x| x == 0.0));
    // replicate padding bends a ramp at the border
    let ramp = field_from(&grid, |y, x| [x, y]);
    assert!(curvature_value(&ramp).unwrap() > 0.0);
}

proptest! {
    #[test]
    fn operator_is_linear(
        a in prop::collection::vec(-5.0f64..5.0, 2 * 20),
        b in prop::collection::vec(-5.0f64..5.0, 2 * 20),
        s in -3.0f64..3.0,
    ) {
        let grid = Grid::new(vec![4, 5], vec![1.0, 0.7], vec![0.0, 0.0]).unwrap();
        let combined: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let (la, lb, lc) = (curvature_apply(&grid, &a), curvature_apply(&grid, &b), curvature_apply(&grid, &combined));
        let scale = lc.iter().chain(&la).fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..lc.len() {
            prop_assert!((lc[i] - la[i] - s * lb[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn value_is_half_inner_product_with_gradient(values in prop::collection::vec(-5.0f64..5.0, 2 * 30)) {
        let grid = Grid::new(vec![5, 6], vec![0.5, 1.5], vec![0.0, 0.0]).unwrap();
        let field = DisplacementField::new(grid, values.clone()).unwrap();
        let (value, gradient) = curvature(&field).unwrap();
        let half_inner: f64 = 0.5 * values.iter().zip(&gradient).map(|(u, g)| u * g).sum::<f64>();
        prop_assert!(value >= 0.0);
        prop_assert!((value - half_inner).abs() <= 1e-10 * value.max(1.0));
    }
}
