//! Dedicated 3×3 singular value decomposition.
//!
//! One-sided (Hestenes) Jacobi: plane rotations are applied to the columns of
//! `A` until they are mutually orthogonal, accumulating the rotations into `V`.
//! The column norms of `A·V` are then the singular values and the normalised
//! columns are the left singular vectors. This keeps small singular values
//! accurate relative to their own size, which matters for the truncation
//! decisions made per pixel.

use crate::linalg::{cross, dot, norm2, scale, Mat3, Vec3, IDENTITY, ZERO3};

const MAX_SWEEPS: usize = 40;

/// `A = U·diag(sigma)·Vᵀ`. Singular vectors are the *columns* of `u` and `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd3 {
    pub u: Mat3,
    pub sigma: Vec3,
    pub v: Mat3,
}

impl Svd3 {
    /// Column `i` of `u`.
    pub fn left(&self, i: usize) -> Vec3 {
        [self.u[0][i], self.u[1][i], self.u[2][i]]
    }

    /// Column `i` of `v`.
    pub fn right(&self, i: usize) -> Vec3 {
        [self.v[0][i], self.v[1][i], self.v[2][i]]
    }

    /// `U·Σ·Vᵀ`
    pub fn reconstruct(&self) -> Mat3 {
        let mut out = ZERO3;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += self.u[i][k] * self.sigma[k] * self.v[j][k];
                }
                out[i][j] = acc;
            }
        }
        out
    }
}

fn column(m: &Mat3, j: usize) -> Vec3 {
    [m[0][j], m[1][j], m[2][j]]
}

fn set_column(m: &mut Mat3, j: usize, c: &Vec3) {
    for i in 0..3 {
        m[i][j] = c[i];
    }
}

/// Any unit vector orthogonal to the unit vector `a`.
fn orthogonal_unit(a: &Vec3) -> Vec3 {
    // cross with the basis axis least aligned with `a`
    let axis = (0..3)
        .min_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs()))
        .unwrap_or(0);
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let c = cross(a, &e);
    scale(&c, 1.0 / norm2(&c))
}

pub fn svd3(a: &Mat3) -> Svd3 {
    let mut cols = [column(a, 0), column(a, 1), column(a, 2)];
    let mut v = IDENTITY;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let alpha = dot(&cols[p], &cols[p]);
            let beta = dot(&cols[q], &cols[q]);
            let gamma = dot(&cols[p], &cols[q]);
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for i in 0..3 {
                let bp = cols[p][i];
                let bq = cols[q][i];
                cols[p][i] = c * bp - s * bq;
                cols[q][i] = s * bp + c * bq;
                let vp = v[i][p];
                let vq = v[i][q];
                v[i][p] = c * vp - s * vq;
                v[i][q] = s * vp + c * vq;
            }
        }
        if !rotated {
            break;
        }
    }

    let norms = [norm2(&cols[0]), norm2(&cols[1]), norm2(&cols[2])];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut sigma = [0.0; 3];
    let mut u = ZERO3;
    let mut v_sorted = ZERO3;
    let mut have_left = [false; 3];
    for (k, &src) in order.iter().enumerate() {
        sigma[k] = norms[src];
        set_column(&mut v_sorted, k, &column(&v, src));
        if sigma[k] > 0.0 && sigma[k].is_normal() {
            set_column(&mut u, k, &scale(&cols[src], 1.0 / sigma[k]));
            have_left[k] = true;
        }
    }

    // Complete U where a column vanished. Zeros sort last, so any missing
    // columns form a suffix.
    match have_left {
        [true, true, true] => {}
        [true, true, false] => {
            let c = cross(&column(&u, 0), &column(&u, 1));
            set_column(&mut u, 2, &scale(&c, 1.0 / norm2(&c)));
        }
        [true, false, _] => {
            let u0 = column(&u, 0);
            let u1 = orthogonal_unit(&u0);
            set_column(&mut u, 1, &u1);
            set_column(&mut u, 2, &cross(&u0, &u1));
        }
        _ => u = IDENTITY,
    }

    Svd3 {
        u,
        sigma,
        v: v_sorted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gram, mat_sub, max_abs};
    use proptest::prelude::*;

    fn check_contract(a: &Mat3) {
        let d = svd3(a);
        assert!(d.sigma[0] >= d.sigma[1] && d.sigma[1] >= d.sigma[2] && d.sigma[2] >= 0.0);
        assert!(max_abs(&mat_sub(&gram(&d.u), &IDENTITY)) <= 1e-10, "U not orthogonal: {d:?}");
        assert!(max_abs(&mat_sub(&gram(&d.v), &IDENTITY)) <= 1e-10, "V not orthogonal: {d:?}");
        let err = max_abs(&mat_sub(&d.reconstruct(), a));
        assert!(err <= 1e-10 * d.sigma[0].max(1.0), "reconstruction error {err}");
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let d = svd3(&IDENTITY);
        assert_eq!(d.sigma, [1.0, 1.0, 1.0]);
        check_contract(&IDENTITY);
    }

    #[test]
    fn diagonal_is_sorted() {
        let a = [[2.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 3.0]];
        let d = svd3(&a);
        assert_eq!(d.sigma, [3.0, 2.0, 0.0]);
        check_contract(&a);
        let b = [[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(svd3(&b).sigma, [3.0, 2.0, 0.0]);
    }

    #[test]
    fn zero_matrix() {
        let d = svd3(&ZERO3);
        assert_eq!(d.sigma, [0.0; 3]);
        check_contract(&ZERO3);
    }

    #[test]
    fn rank_one_and_zero_columns() {
        let a = [[1.0, 0.0, 2.0], [2.0, 0.0, 4.0], [-1.0, 0.0, -2.0]];
        check_contract(&a);
        let d = svd3(&a);
        assert!(d.sigma[1] < 1e-14);
        let zero_col = [[0.3, 0.0, 0.1], [0.2, 0.0, 0.5], [0.7, 0.0, -0.4]];
        let d = svd3(&zero_col);
        assert_eq!(d.sigma[2], 0.0);
        check_contract(&zero_col);
    }

    #[test]
    fn tiny_singular_value_keeps_relative_accuracy() {
        // a = Q·diag(1, 1e-6, 1e-12) with an exact permutation-sign Q
        let a = [[0.0, 1e-6, 0.0], [0.0, 0.0, -1e-12], [1.0, 0.0, 0.0]];
        let d = svd3(&a);
        assert_eq!(d.sigma, [1.0, 1e-6, 1e-12]);
        check_contract(&a);
    }

    proptest! {
        #[test]
        fn random_matrices_satisfy_contract(entries in proptest::collection::vec(-10.0f64..10.0, 9)) {
            let a = [
                [entries[0], entries[1], entries[2]],
                [entries[3], entries[4], entries[5]],
                [entries[6], entries[7], entries[8]],
            ];
            check_contract(&a);
        }

        #[test]
        fn scaled_rows_satisfy_contract(
            entries in proptest::collection::vec(-1.0f64..1.0, 9),
            exps in proptest::collection::vec(-9i32..2, 3),
        ) {
            let mut a = ZERO3;
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] = entries[3 * i + j] * 10f64.powi(exps[i]);
                }
            }
            check_contract(&a);
        }
    }
}
