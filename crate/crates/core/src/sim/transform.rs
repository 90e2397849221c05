//! Pose labels and homogeneous transforms.
//!
//! Rotations compose about the moving axes as R = Rx(tx) * Ry(ty) * Rz(tz),
//! applied about a rotation center shifted along z so rotations do not drag
//! the marker out of view. Angles are degrees, translations millimetres.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

impl Pose {
    pub const ZERO: Pose = Pose {
        tx: 0.0,
        ty: 0.0,
        tz: 0.0,
        theta_x: 0.0,
        theta_y: 0.0,
        theta_z: 0.0,
    };

    pub fn to_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.theta_x, self.theta_y, self.theta_z]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Pose {
            tx: a[0],
            ty: a[1],
            tz: a[2],
            theta_x: a[3],
            theta_y: a[4],
            theta_z: a[5],
        }
    }
}

/// Per-component uniform sampling ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRanges {
    pub tx: [f64; 2],
    pub ty: [f64; 2],
    pub tz: [f64; 2],
    pub theta: [f64; 2],
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            tx: [-5.0, 5.0],
            ty: [-5.0, 5.0],
            tz: [-1.2, 1.2],
            theta: [-10.0, 10.0],
        }
    }
}

impl PoseRanges {
    pub fn contains(&self, p: &Pose) -> bool {
        let within = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        within(p.tx, self.tx)
            && within(p.ty, self.ty)
            && within(p.tz, self.tz)
            && within(p.theta_x, self.theta)
            && within(p.theta_y, self.theta)
            && within(p.theta_z, self.theta)
    }
}

pub fn sample_pose<R: rand::Rng>(rng: &mut R, ranges: &PoseRanges) -> Pose {
    let u = |rng: &mut R, r: [f64; 2]| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.gen_range(r[0]..r[1])
        }
    };
    Pose {
        tx: u(rng, ranges.tx),
        ty: u(rng, ranges.ty),
        tz: u(rng, ranges.tz),
        theta_x: u(rng, ranges.theta),
        theta_y: u(rng, ranges.theta),
        theta_z: u(rng, ranges.theta),
    }
}

/// Rigid 4x4 homogeneous transform, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformMatrix(pub [[f64; 4]; 4]);

impl TransformMatrix {
    pub const IDENTITY: TransformMatrix = TransformMatrix([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.0[0][3], self.0[1][3], self.0[2][3]]
    }

    pub fn mul(&self, other: &TransformMatrix) -> TransformMatrix {
        let (a, b) = (&self.0, &other.0);
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        TransformMatrix(out)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }

    /// Rigid inverse: transpose the rotation, counter-rotate the translation.
    pub fn inverse(&self) -> TransformMatrix {
        let r = self.rotation();
        let t = self.translation();
        let mut out = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = r[j][i];
            }
            out[i][3] = -(r[0][i] * t[0] + r[1][i] * t[1] + r[2][i] * t[2]);
        }
        out[3][3] = 1.0;
        TransformMatrix(out)
    }

    /// Orthonormality / properness / affine-row checks at tolerance `tol`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = self.rotation();
        // R^T R = I
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > tol {
                    return false;
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > tol {
            return false;
        }
        let last = self.0[3];
        last == [0.0, 0.0, 0.0, 1.0]
    }
}

fn rot_x(deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = deg.to_radians().sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn mat3_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// World point of a marker-frame point `m`: R (m - c) + c + t, with the
/// rotation center c = (0, 0, center_z).
pub fn pose_to_matrix(p: &Pose, center_z: f64) -> Result<TransformMatrix> {
    for v in p.to_array() {
        if !v.is_finite() {
            return Err(CoreError::InvalidArg {
                ctx: "pose_to_matrix",
                msg: format!("non-finite pose component in {:?}", p),
            });
        }
    }
    let r = mat3_mul(mat3_mul(rot_x(p.theta_x), rot_y(p.theta_y)), rot_z(p.theta_z));
    let c = [0.0, 0.0, center_z];
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        let rc: f64 = (0..3).map(|k| r[i][k] * c[k]).sum();
        m[i][3] = c[i] - rc + [p.tx, p.ty, p.tz][i];
    }
    m[3][3] = 1.0;
    Ok(TransformMatrix(m))
}

/// Inverse Euler extraction, valid while |theta_y| < 90 deg; the configured
/// ranges keep angles within 10 deg so the singular case never occurs.
pub fn matrix_to_pose(m: &TransformMatrix, center_z: f64) -> Pose {
    let r = m.rotation();
    let theta_y = r[0][2].asin();
    let theta_x = (-r[1][2]).atan2(r[2][2]);
    let theta_z = (-r[0][1]).atan2(r[0][0]);
    let c = [0.0, 0.0, center_z];
    let t = m.translation();
    let mut tr = [0.0; 3];
    for i in 0..3 {
        let rc: f64 = (0..3).map(|k| r[i][k] * c[k]).sum();
        tr[i] = t[i] - c[i] + rc;
    }
    Pose {
        tx: tr[0],
        ty: tr[1],
        tz: tr[2],
        theta_x: theta_x.to_degrees(),
        theta_y: theta_y.to_degrees(),
        theta_z: theta_z.to_degrees(),
    }
}

/// The transform taking pose 1 onto pose 2: T_rel * T1 = T2.
pub fn relative_transform(t1: &TransformMatrix, t2: &TransformMatrix) -> TransformMatrix {
    t2.mul(&t1.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_abs(m: &TransformMatrix, n: &TransformMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((m.0[i][j] - n.0[i][j]).abs());
            }
        }
        worst
    }

    #[test]
    fn zero_pose_is_identity() {
        let m = pose_to_matrix(&Pose::ZERO, 1.33).unwrap();
        assert!(max_abs(&m, &TransformMatrix::IDENTITY) < 1e-12);
    }

    #[test]
    fn ninety_degrees_about_x_maps_y_to_z() {
        let p = Pose { theta_x: 90.0, ..Pose::ZERO };
        let m = pose_to_matrix(&p, 0.0).unwrap();
        let v = m.apply([0.0, 1.0, 0.0]);
        assert!((v[0]).abs() < 1e-12);
        assert!((v[1]).abs() < 1e-12);
        assert!((v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_respects_ranges_and_degenerate_range_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ranges = PoseRanges::default();
        for _ in 0..10_000 {
            let p = sample_pose(&mut rng, &ranges);
            assert!(ranges.contains(&p));
        }
        let fixed = PoseRanges {
            tx: [0.7, 0.7],
            ty: [0.0, 0.0],
            tz: [0.0, 0.0],
            theta: [0.0, 0.0],
        };
        for _ in 0..100 {
            let p = sample_pose(&mut rng, &fixed);
            assert_eq!(p.tx, 0.7);
            assert_eq!(p.theta_z, 0.0);
        }
    }

    #[test]
    fn tx_samples_pass_coarse_uniformity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ranges = PoseRanges::default();
        let mut deciles = [0usize; 10];
        let n = 10_000;
        for _ in 0..n {
            let p = sample_pose(&mut rng, &ranges);
            let u = (p.tx - ranges.tx[0]) / (ranges.tx[1] - ranges.tx[0]);
            deciles[((u * 10.0) as usize).min(9)] += 1;
        }
        for d in deciles {
            let frac = d as f64 / n as f64;
            assert!((frac - 0.1).abs() < 0.03, "decile fraction {}", frac);
        }
    }

    #[test]
    fn matrix_matches_quaternion_oracle() {
        // independent construction through unit quaternions
        fn quat_axis(angle_deg: f64, axis: usize) -> [f64; 4] {
            let h = angle_deg.to_radians() / 2.0;
            let mut q = [h.cos(), 0.0, 0.0, 0.0];
            q[1 + axis] = h.sin();
            q
        }
        fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
            [
                a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
            ]
        }
        fn quat_to_rot(q: [f64; 4]) -> [[f64; 3]; 3] {
            let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
            [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ]
        }

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ranges = PoseRanges::default();
        for _ in 0..200 {
            let p = sample_pose(&mut rng, &ranges);
            let m = pose_to_matrix(&p, 0.0).unwrap();
            let q = quat_mul(
                quat_mul(quat_axis(p.theta_x, 0), quat_axis(p.theta_y, 1)),
                quat_axis(p.theta_z, 2),
            );
            let r = quat_to_rot(q);
            let rm = m.rotation();
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        (r[i][j] - rm[i][j]).abs() < 1e-9,
                        "rotation mismatch at ({}, {})",
                        i,
                        j
                    );
                }
            }
            assert!((m.0[0][3] - p.tx).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_and_rigidity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ranges = PoseRanges::default();
        for _ in 0..1000 {
            let p = sample_pose(&mut rng, &ranges);
            let m = pose_to_matrix(&p, 1.33).unwrap();
            assert!(m.is_rigid(1e-9));
            let back = matrix_to_pose(&m, 1.33);
            for (a, b) in p.to_array().iter().zip(back.to_array()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relative_transform_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ranges = PoseRanges::default();
        let p1 = sample_pose(&mut rng, &ranges);
        let p2 = sample_pose(&mut rng, &ranges);
        let t1 = pose_to_matrix(&p1, 1.33).unwrap();
        let t2 = pose_to_matrix(&p2, 1.33).unwrap();

        // T1 == T2 -> identity
        let id = relative_transform(&t1, &t1);
        assert!(max_abs(&id, &TransformMatrix::IDENTITY) < 1e-9);

        // T1 = I -> T_rel = T2
        let rel = relative_transform(&TransformMatrix::IDENTITY, &t2);
        assert!(max_abs(&rel, &t2) < 1e-12);

        // defining property
        let rel = relative_transform(&t1, &t2);
        assert!(max_abs(&rel.mul(&t1), &t2) < 1e-9);

        // chain consistency: rel(T1,T3) = rel(T2,T3) * rel(T1,T2)
        let p3 = sample_pose(&mut rng, &ranges);
        let t3 = pose_to_matrix(&p3, 1.33).unwrap();
        let lhs = relative_transform(&t1, &t3);
        let rhs = relative_transform(&t2, &t3).mul(&relative_transform(&t1, &t2));
        assert!(max_abs(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn non_finite_pose_rejected() {
        let p = Pose { tx: f64::NAN, ..Pose::ZERO };
        assert!(pose_to_matrix(&p, 0.0).is_err());
    }
}
