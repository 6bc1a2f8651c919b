//! Small geometric helpers shared across modules.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Skew-symmetric matrix with `hat(x) * y == x.cross(&y)`.
pub fn hat(x: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -x.z, x.y, x.z, 0.0, -x.x, -x.y, x.x, 0.0)
}

/// Rotation by `angle` about the unit `axis` (Rodrigues).
pub fn rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = hat(axis);
    let (s, c) = angle.sin_cos();
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

pub fn vec3(v: &DVector<f64>, offset: usize) -> Vector3<f64> {
    Vector3::new(v[offset], v[offset + 1], v[offset + 2])
}

/// `n` nearly uniform points on the unit sphere (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Uniform sample on the unit sphere in R^dim.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniform sample in the closed ball of `radius` in R^dim.
pub fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    let u: f64 = rng.random();
    random_unit(rng, dim) * (radius * u.powf(1.0 / dim as f64))
}

/// i-th element of the van der Corput sequence in `base`.
pub fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

pub const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Orthonormal basis of the plane orthogonal to the unit vector `z`.
pub fn tangent_basis(z: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let seed = if z.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let t1 = (seed - z * z.dot(&seed)).normalize();
    let t2 = z.cross(&t1);
    (t1, t2)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.max()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hat_matches_cross_product() {
        let a = Vector3::new(0.3, -1.2, 2.0);
        let b = Vector3::new(-0.7, 0.1, 0.4);
        assert!((hat(&a) * b - a.cross(&b)).norm() < 1e-15);
    }

    #[test]
    fn rotation_is_orthogonal_and_fixes_axis() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let r = rotation(&axis, 0.83);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-14);
        assert!((r * axis - axis).norm() < 1e-15);
        assert!((r.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn fibonacci_points_are_unit() {
        for p in fibonacci_sphere(257) {
            assert!((p.norm() - 1.0).abs() < 1e-14);
        }
    }
}
