use nalgebra::{Matrix3, Vector3};

use super::GeometryError;
use crate::structure::{Atom, ProteinBackbone, Residue, Vec3};

/// Residue-local coordinate system. `basis` rows are the local x, y, z axes
/// expressed in global coordinates, so `basis * (p - origin)` gives local
/// coordinates of a global point `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: Vec3,
    pub basis: Matrix3<f64>,
}

const COLLINEAR_TOL: f64 = 1e-9;

/// Gram–Schmidt on (CA->C, CA->N); z = x cross y.
pub(crate) fn frame_of(r: &Residue, index: usize) -> Result<LocalFrame, GeometryError> {
    let to_c = r.c - r.ca;
    let to_n = r.n - r.ca;
    let (lc, ln) = (to_c.norm(), to_n.norm());
    if lc < COLLINEAR_TOL
        || ln < COLLINEAR_TOL
        || to_c.cross(&to_n).norm() / (lc * ln) < COLLINEAR_TOL
    {
        return Err(GeometryError::DegenerateFrame(index));
    }
    let x = to_c / lc;
    let y_raw = to_n - x * x.dot(&to_n);
    let y = y_raw / y_raw.norm();
    let z = x.cross(&y);
    Ok(LocalFrame {
        origin: r.ca,
        basis: Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]),
    })
}

pub fn local_frames(b: &ProteinBackbone) -> Result<Vec<LocalFrame>, GeometryError> {
    if b.is_empty() {
        return Err(GeometryError::GraphTooSmall(0));
    }
    b.residues
        .iter()
        .enumerate()
        .map(|(i, r)| frame_of(r, i))
        .collect()
}

/// Frames for featurization: residues whose N or C was imputed get `None`.
pub(crate) fn masked_frames(b: &ProteinBackbone) -> Result<Vec<Option<LocalFrame>>, GeometryError> {
    b.residues
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.is_imputed(Atom::N) || r.is_imputed(Atom::C) {
                Ok(None)
            } else {
                frame_of(r, i).map(Some)
            }
        })
        .collect()
}

/// Unit quaternion `(w, x, y, z)` of the rotation taking frame j's axes into
/// frame i's coordinates, `basis_i * basis_j^T`, with `w >= 0`.
pub fn relative_orientation(fi: &LocalFrame, fj: &LocalFrame) -> [f64; 4] {
    rotation_to_quaternion(&(fi.basis * fj.basis.transpose()))
}

/// Shepperd's method with the largest-diagonal branch.
pub fn rotation_to_quaternion(m: &Matrix3<f64>) -> [f64; 4] {
    let tr = m.trace();
    let mut q = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
        let s = (1.0 + tr).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    for v in &mut q {
        *v *= sign / norm;
    }
    q
}

/// Local-frame coordinates of a global point.
pub fn to_local(f: &LocalFrame, p: &Vec3) -> Vector3<f64> {
    f.basis * (p - f.origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use crate::structure::{apply_rigid_transform, random_rotation, synthetic};

    #[test]
    fn frames_are_orthonormal_and_right_handed() {
        let mut rng = CounterRng::new(1);
        let b = synthetic::random_backbone(25, &mut rng);
        for f in local_frames(&b).unwrap() {
            let err = (f.basis.transpose() * f.basis - Matrix3::identity()).amax();
            assert!(err < 1e-8);
            assert!((f.basis.determinant() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn frames_rotate_with_the_backbone() {
        let mut rng = CounterRng::new(2);
        let b = synthetic::random_backbone(10, &mut rng);
        let r = random_rotation(&mut rng);
        let moved = apply_rigid_transform(&b, &r, &Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let f0 = local_frames(&b).unwrap();
        let f1 = local_frames(&moved).unwrap();
        for (a, b) in f0.iter().zip(&f1) {
            assert!((a.basis * r.transpose() - b.basis).amax() < 1e-12);
        }
        for i in 0..f0.len() {
            for j in 0..f0.len() {
                let q0 = relative_orientation(&f0[i], &f0[j]);
                let q1 = relative_orientation(&f1[i], &f1[j]);
                for k in 0..4 {
                    assert!((q0[k] - q1[k]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn collinear_residue_is_degenerate() {
        let mut b = synthetic::ideal_helix(3);
        let r = &mut b.residues[1];
        r.n = r.ca - (r.c - r.ca) * 0.7;
        assert!(matches!(
            local_frames(&b),
            Err(GeometryError::DegenerateFrame(1))
        ));
    }

    #[test]
    fn identical_frames_give_identity_quaternion() {
        let b = synthetic::ideal_helix(2);
        let f = local_frames(&b).unwrap();
        let q = relative_orientation(&f[0], &f[0]);
        assert!((q[0] - 1.0).abs() < 1e-12);
        assert!(q[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn quarter_turn_about_local_z() {
        let b = synthetic::ideal_helix(1);
        let fi = local_frames(&b).unwrap()[0];
        // Rotate fi's axes by +90 degrees about its own z-axis.
        let rz = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let basis_j = rz.transpose() * fi.basis;
        let fj = LocalFrame {
            origin: fi.origin,
            basis: basis_j,
        };
        let q = relative_orientation(&fi, &fj);
        // Independent axis-angle evaluation: (cos 45deg, 0, 0, sin 45deg).
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [h, 0.0, 0.0, h];
        for k in 0..4 {
            assert!((q[k] - expect[k]).abs() < 1e-9, "{q:?}");
        }
        let back = relative_orientation(&fj, &fi);
        assert!((back[0] - q[0]).abs() < 1e-12);
        for k in 1..4 {
            assert!((back[k] + q[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn quaternions_are_unit_for_random_rotations() {
        let mut rng = CounterRng::new(4);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let q = rotation_to_quaternion(&r);
            let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
            assert!(q[0] >= 0.0);
            let back = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                q[0], q[1], q[2], q[3],
            ))
            .to_rotation_matrix()
            .into_inner();
            assert!((back - r).amax() < 1e-9);
        }
    }
}
