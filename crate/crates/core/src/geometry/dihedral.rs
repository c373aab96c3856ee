use crate::structure::{Atom, ProteinBackbone, Vec3};

/// Signed torsion angle of four points in radians, in (-pi, pi].
pub fn dihedral(p0: &Vec3, p1: &Vec3, p2: &Vec3, p3: &Vec3) -> f64 {
    let b0 = p0 - p1;
    let b1 = (p2 - p1).normalize();
    let b2 = p3 - p2;
    let v = b0 - b1 * b0.dot(&b1);
    let w = b2 - b1 * b2.dot(&b1);
    let x = v.dot(&w);
    let y = b1.cross(&v).dot(&w);
    y.atan2(x)
}

/// Backbone torsions of one residue; `None` where undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dihedrals {
    /// C(i-1), N, CA, C
    pub phi: Option<f64>,
    /// N, CA, C, N(i+1)
    pub psi: Option<f64>,
    /// CA, C, N(i+1), CA(i+1)
    pub omega: Option<f64>,
}

impl Dihedrals {
    /// `[sin phi, cos phi, sin psi, cos psi, sin omega, cos omega, m_phi, m_psi, m_omega]`
    /// with masked angles contributing zeros.
    pub fn encode(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (k, a) in [self.phi, self.psi, self.omega].into_iter().enumerate() {
            if let Some(a) = a {
                out[2 * k] = a.sin();
                out[2 * k + 1] = a.cos();
                out[6 + k] = 1.0;
            }
        }
        out
    }
}

/// Per-residue phi, psi, omega. Angles at chain termini, or touching an
/// imputed atom, are masked.
pub fn dihedral_angles(b: &ProteinBackbone) -> Vec<Dihedrals> {
    let rs = &b.residues;
    let n = rs.len();
    (0..n)
        .map(|i| {
            let r = &rs[i];
            let own_ok = !r.is_imputed(Atom::N) && !r.is_imputed(Atom::C);
            let phi = (i > 0 && own_ok && !rs[i - 1].is_imputed(Atom::C))
                .then(|| dihedral(&rs[i - 1].c, &r.n, &r.ca, &r.c));
            let next_ok = i + 1 < n && !rs[i + 1].is_imputed(Atom::N);
            let psi = (own_ok && next_ok).then(|| dihedral(&r.n, &r.ca, &r.c, &rs[i + 1].n));
            let omega = (next_ok && !r.is_imputed(Atom::C))
                .then(|| dihedral(&r.ca, &r.c, &rs[i + 1].n, &rs[i + 1].ca));
            Dihedrals { phi, psi, omega }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::synthetic;
    use std::f64::consts::PI;

    /// Independent torsion evaluation: angle between the two plane normals via
    /// acos, sign from the triple product.
    fn torsion_acos(p0: &Vec3, p1: &Vec3, p2: &Vec3, p3: &Vec3) -> f64 {
        let n1 = (p1 - p0).cross(&(p2 - p1));
        let n2 = (p2 - p1).cross(&(p3 - p2));
        let cos = (n1.dot(&n2) / (n1.norm() * n2.norm())).clamp(-1.0, 1.0);
        let angle = cos.acos();
        if n1.cross(&n2).dot(&(p2 - p1)) < 0.0 {
            -angle
        } else {
            angle
        }
    }

    #[test]
    fn trans_peptide_omega_is_pi() {
        let b = synthetic::ideal_helix(4);
        let d = dihedral_angles(&b);
        for r in &d[..3] {
            let w = r.omega.unwrap();
            assert!((w.abs() - PI).abs() < 1e-6, "omega {w}");
        }
    }

    #[test]
    fn ideal_helix_phi_psi() {
        let b = synthetic::ideal_helix(10);
        let rs = &b.residues;
        for i in 1..9 {
            let phi = torsion_acos(&rs[i - 1].c, &rs[i].n, &rs[i].ca, &rs[i].c).to_degrees();
            let psi = torsion_acos(&rs[i].n, &rs[i].ca, &rs[i].c, &rs[i + 1].n).to_degrees();
            assert!((phi + 57.0).abs() < 2.0, "phi {phi}");
            assert!((psi + 47.0).abs() < 2.0, "psi {psi}");
        }
        let d = dihedral_angles(&b);
        for i in 1..9 {
            let phi_ref = torsion_acos(&rs[i - 1].c, &rs[i].n, &rs[i].ca, &rs[i].c);
            assert!((d[i].phi.unwrap() - phi_ref).abs() < 1e-9);
        }
    }

    #[test]
    fn termini_are_masked() {
        let b = synthetic::ideal_helix(3);
        let d = dihedral_angles(&b);
        assert!(d[0].phi.is_none());
        assert!(d[0].psi.is_some());
        assert!(d[2].psi.is_none() && d[2].omega.is_none());
        let enc = d[0].encode();
        assert_eq!(&enc[0..2], &[0.0, 0.0]);
        assert_eq!(enc[6], 0.0);
        assert_eq!(enc[7], 1.0);
    }

    #[test]
    fn matches_independent_formula_on_random_points() {
        let mut rng = crate::rng::CounterRng::new(3);
        for _ in 0..500 {
            let mut p = || Vec3::new(rng.normal(), rng.normal(), rng.normal());
            let (a, b, c, d) = (p(), p(), p(), p());
            assert!((dihedral(&a, &b, &c, &d) - torsion_acos(&a, &b, &c, &d)).abs() < 1e-6);
        }
    }
}
