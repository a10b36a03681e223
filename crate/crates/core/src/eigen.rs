//! Closed-form eigen-solvers for small symmetric matrices.

use std::f64::consts::PI;

/// Eigenvalues (descending) of `[[a, b], [b, c]]` given its determinant.
///
/// Passing the determinant separately lets callers supply an accurately
/// computed one; the small eigenvalue is then `det / lambda_1`, which keeps
/// full relative accuracy for nearly singular matrices.
pub fn sym2_eigenvalues(a: f64, b: f64, c: f64, det: f64) -> [f64; 2] {
    let half_tr = 0.5 * (a + c);
    let disc = (0.5 * (a - c)).hypot(b);
    let l1 = half_tr + disc;
    let l2 = if l1 > 0.0 { det / l1 } else { half_tr - disc };
    [l1, l2]
}

/// Unit eigenvector of the larger eigenvalue of `[[a, b], [b, c]]`; the
/// other one is its rotation by +90 degrees.
pub fn sym2_major_axis(a: f64, b: f64, c: f64) -> [f64; 2] {
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    [theta.cos(), theta.sin()]
}

/// Eigenvalues of a symmetric 3x3 matrix (row-major), descending, by the
/// trigonometric method.
pub fn sym3_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    if p1 == 0.0 {
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(|x, y| y.total_cmp(x));
        return d;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *m;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (0.5 * det_b).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;
    [l1, l2, l3]
}

/// Full eigendecomposition of a symmetric 3x3 matrix by cyclic Jacobi
/// rotations. Returns descending eigenvalues and the matching unit
/// eigenvectors as columns (`vectors[row][col]`).
pub fn sym3_eigen(m: &[[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off == 0.0 || off <= f64::EPSILON * 1e-3 * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = [
        a[order[0]][order[0]],
        a[order[1]][order[1]],
        a[order[2]][order[2]],
    ];
    let mut vectors = [[0.0; 3]; 3];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..3 {
            vectors[row][col] = v[row][src];
        }
    }
    (values, vectors)
}
