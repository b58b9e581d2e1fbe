//! Coarse-graining subspaces: rotation-translation blocks, low-frequency
//! modal bases, and the orthonormal complement completing the partition.

use nalgebra::{DMatrix, DVector, Vector3};
use std::path::Path;

use crate::error::{GleError, Result};
use crate::matops;
use crate::model::FullModel;

/// Orthonormal partition `x = Φ q + Ψ ξ` with `ΦᵀΦ = I`, `ΨᵀΨ = I`, `ΦᵀΨ = 0`.
#[derive(Debug, Clone)]
pub struct PartitionBasis {
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl PartitionBasis {
    /// Builds the partition from a coarse subspace, deriving the complement.
    pub fn from_phi(phi: DMatrix<f64>) -> Result<Self> {
        let psi = complement_basis(&phi)?;
        let basis = Self { phi, psi };
        basis.check(1e-10)?;
        Ok(basis)
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn m(&self) -> usize {
        self.phi.ncols()
    }

    /// Verifies the partition identities to the given tolerance.
    pub fn check(&self, tol: f64) -> Result<()> {
        let m = self.m();
        let k = self.psi.ncols();
        let n = self.n();
        if m + k != n {
            return Err(GleError::InvalidBasis(format!(
                "Φ has {m} columns, Ψ has {k}, n = {n}"
            )));
        }
        let e1 = (self.phi.transpose() * &self.phi - DMatrix::identity(m, m)).norm();
        let e2 = (self.psi.transpose() * &self.psi - DMatrix::identity(k, k)).norm();
        let e3 = (self.phi.transpose() * &self.psi).norm();
        if e1 > tol || e2 > tol || e3 > tol {
            return Err(GleError::InvalidBasis(format!(
                "partition defects: ΦᵀΦ−I {e1:.3e}, ΨᵀΨ−I {e2:.3e}, ΦᵀΨ {e3:.3e}"
            )));
        }
        Ok(())
    }
}

/// Per-coordinate group labels plus per-atom reference positions for the
/// rotational modes. Coordinates come in contiguous (x,y,z) triplets.
#[derive(Debug, Clone)]
pub struct BlockAssignment {
    /// group id per coordinate, length 3·(number of atoms)
    pub group_of_coord: Vec<usize>,
    /// reference position per atom
    pub positions: Vec<Vector3<f64>>,
}

impl BlockAssignment {
    pub fn new(group_of_coord: Vec<usize>, positions: Vec<Vector3<f64>>) -> Result<Self> {
        if group_of_coord.len() != 3 * positions.len() {
            return Err(GleError::DimensionMismatch(format!(
                "{} coordinates vs {} atoms",
                group_of_coord.len(),
                positions.len()
            )));
        }
        for a in 0..positions.len() {
            let g = group_of_coord[3 * a];
            if group_of_coord[3 * a + 1] != g || group_of_coord[3 * a + 2] != g {
                return Err(GleError::InvalidBasis(format!(
                    "atom {a} has coordinates split across groups"
                )));
            }
        }
        Ok(Self {
            group_of_coord,
            positions,
        })
    }

    pub fn n(&self) -> usize {
        self.group_of_coord.len()
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        // atoms per group id, preserving first-appearance order of ids
        let mut order: Vec<usize> = Vec::new();
        let mut members: std::collections::HashMap<usize, Vec<usize>> =
            std::collections::HashMap::new();
        for a in 0..self.positions.len() {
            let g = self.group_of_coord[3 * a];
            members.entry(g).or_insert_with(|| {
                order.push(g);
                Vec::new()
            });
            members.get_mut(&g).unwrap().push(a);
        }
        order.into_iter().map(|g| members.remove(&g).unwrap()).collect()
    }

    /// Loads the (coordinate_index, group_id) CSV plus a per-atom x,y,z CSV.
    pub fn load(assignment_csv: &Path, positions_csv: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(assignment_csv)?;
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(GleError::Config("assignment rows need 2 columns".into()));
            }
            let first = rec[0].trim();
            if first.parse::<usize>().is_err() && pairs.is_empty() {
                continue; // header
            }
            let idx: usize = first
                .parse()
                .map_err(|e| GleError::Config(format!("bad coordinate index: {e}")))?;
            let grp: usize = rec[1]
                .trim()
                .parse()
                .map_err(|e| GleError::Config(format!("bad group id: {e}")))?;
            pairs.push((idx, grp));
        }
        pairs.sort_by_key(|p| p.0);
        for (want, (got, _)) in pairs.iter().enumerate() {
            if *got != want {
                return Err(GleError::Config(format!(
                    "assignment must cover coordinates 0..n contiguously, missing {want}"
                )));
            }
        }
        let group_of_coord: Vec<usize> = pairs.into_iter().map(|p| p.1).collect();

        let pos_mat = crate::model::read_matrix_csv(positions_csv)?;
        if pos_mat.ncols() != 3 {
            return Err(GleError::Config("positions CSV needs 3 columns".into()));
        }
        let positions: Vec<Vector3<f64>> = (0..pos_mat.nrows())
            .map(|i| Vector3::new(pos_mat[(i, 0)], pos_mat[(i, 1)], pos_mat[(i, 2)]))
            .collect();
        Self::new(group_of_coord, positions)
    }
}

/// Result of the RTB construction: the basis plus per-group mode counts
/// (fewer than six signals a degenerate group geometry).
#[derive(Debug, Clone)]
pub struct RtbBasis {
    pub phi: DMatrix<f64>,
    pub modes_per_group: Vec<usize>,
    pub degenerate_groups: Vec<usize>,
}

/// Builds rigid-body (3 translation + 3 rotation) modes per group,
/// orthonormalized group-locally. Rotations use the unweighted centroid as
/// the center; groups with collinear geometry lose the degenerate rotation
/// and are reported rather than rejected.
pub fn build_rtb_basis(assign: &BlockAssignment) -> Result<RtbBasis> {
    let n = assign.n();
    let groups = assign.groups();
    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut modes_per_group = Vec::with_capacity(groups.len());
    let mut degenerate_groups = Vec::new();

    for (gi, atoms) in groups.iter().enumerate() {
        let mut raw: Vec<DVector<f64>> = Vec::with_capacity(6);
        // translations
        for k in 0..3 {
            let mut v = DVector::<f64>::zeros(n);
            for &a in atoms {
                v[3 * a + k] = 1.0;
            }
            raw.push(v);
        }
        // rotations about the centroid
        let centroid: Vector3<f64> =
            atoms.iter().map(|&a| assign.positions[a]).sum::<Vector3<f64>>() / atoms.len() as f64;
        for k in 0..3 {
            let mut axis = Vector3::zeros();
            axis[k] = 1.0;
            let mut v = DVector::<f64>::zeros(n);
            for &a in atoms {
                let r = assign.positions[a] - centroid;
                let disp = axis.cross(&r);
                v[3 * a] = disp[0];
                v[3 * a + 1] = disp[1];
                v[3 * a + 2] = disp[2];
            }
            raw.push(v);
        }
        // group-local orthonormalization, dropping degenerate directions
        let mut kept = 0usize;
        let start = columns.len();
        for mut v in raw {
            let scale = v.norm().max(1.0);
            for q in &columns[start..] {
                let c = q.dot(&v);
                v -= q * c;
            }
            for q in &columns[start..] {
                let c = q.dot(&v);
                v -= q * c;
            }
            if v.norm() > 1e-8 * scale {
                v /= v.norm();
                columns.push(v);
                kept += 1;
            }
        }
        modes_per_group.push(kept);
        if kept < 6 {
            degenerate_groups.push(gi);
        }
    }

    let m = columns.len();
    if m == 0 || m >= n {
        return Err(GleError::InvalidBasis(format!(
            "RTB produced {m} modes for dimension {n}"
        )));
    }
    let mut phi = DMatrix::<f64>::zeros(n, m);
    for (j, c) in columns.iter().enumerate() {
        phi.set_column(j, c);
    }
    apply_sign_convention(&mut phi);
    Ok(RtbBasis {
        phi,
        modes_per_group,
        degenerate_groups,
    })
}

/// The `m` eigenvectors of `A` with smallest eigenvalues, orthonormal, in
/// ascending eigenvalue order.
pub fn build_modal_basis(model: &FullModel, m: usize) -> Result<DMatrix<f64>> {
    let n = model.n;
    if m == 0 || m >= n {
        return Err(GleError::InvalidBasis(format!(
            "modal basis needs 0 < m < n, got m={m}, n={n}"
        )));
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(matops::symmetrize(&model.stiffness));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut phi = DMatrix::<f64>::zeros(n, m);
    for (j, &idx) in order.iter().take(m).enumerate() {
        phi.set_column(j, &eig.eigenvectors.column(idx));
    }
    apply_sign_convention(&mut phi);
    Ok(phi)
}

/// Deterministic orthonormal complement of `Φ` by twice-iterated
/// Gram–Schmidt over the standard basis, with a fixed sign convention
/// (first entry of significant magnitude made positive).
pub fn complement_basis(phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = phi.nrows();
    let m = phi.ncols();
    if m >= n {
        return Err(GleError::InvalidBasis(format!(
            "Φ has {m} columns in dimension {n}; no complement"
        )));
    }
    let gram = phi.transpose() * phi;
    if (gram - DMatrix::<f64>::identity(m, m)).norm() > 1e-8 {
        return Err(GleError::InvalidBasis(
            "Φ is not orthonormal; cannot complete the partition".into(),
        ));
    }

    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(n - m);
    for i in 0..n {
        if columns.len() == n - m {
            break;
        }
        let mut v = DVector::<f64>::zeros(n);
        v[i] = 1.0;
        for _ in 0..2 {
            let coeff = phi.transpose() * &v;
            v -= phi * coeff;
            for q in &columns {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        if v.norm() > 1e-7 {
            v /= v.norm();
            columns.push(v);
        }
    }
    if columns.len() != n - m {
        return Err(GleError::InvalidBasis(format!(
            "complement construction found {} of {} directions (Φ rank-deficient?)",
            columns.len(),
            n - m
        )));
    }
    let mut psi = DMatrix::<f64>::zeros(n, n - m);
    for (j, c) in columns.iter().enumerate() {
        psi.set_column(j, c);
    }
    apply_sign_convention(&mut psi);
    Ok(psi)
}

/// Flips column signs so the first entry with magnitude above a relative
/// threshold is positive, making constructions reproducible across runs.
fn apply_sign_convention(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let col = m.column(j);
        let amax = col.amax();
        if amax == 0.0 {
            continue;
        }
        let lead = col.iter().find(|x| x.abs() > 1e-8 * amax);
        if let Some(&v) = lead {
            if v < 0.0 {
                m.column_mut(j).neg_mut();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_orthonormal(rng: &mut impl Rng, n: usize, m: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let qr = a.qr();
        let mut q = qr.q();
        apply_sign_convention(&mut q);
        q
    }

    #[test]
    fn rtb_two_collinear_atoms_drop_one_rotation() {
        let assign = BlockAssignment::new(
            vec![0; 6],
            vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)],
        )
        .unwrap();
        let rtb = build_rtb_basis(&assign);
        // n = 6 coordinates and 5 modes would leave no complement room only
        // if m >= n; here m = 5 < 6 so it succeeds
        let rtb = rtb.unwrap();
        assert_eq!(rtb.phi.ncols(), 5);
        assert_eq!(rtb.modes_per_group, vec![5]);
        assert_eq!(rtb.degenerate_groups, vec![0]);
        let gram = rtb.phi.transpose() * &rtb.phi;
        assert_relative_eq!(gram, DMatrix::identity(5, 5), epsilon = 1e-12);
    }

    #[test]
    fn rtb_translations_orthonormal_by_construction() {
        let assign = BlockAssignment::new(
            vec![0; 9],
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.2, -0.3),
                Vector3::new(0.4, 1.1, 0.9),
            ],
        )
        .unwrap();
        let rtb = build_rtb_basis(&assign).unwrap();
        assert_eq!(rtb.modes_per_group, vec![6]);
        for k in 0..3 {
            assert_relative_eq!(rtb.phi.column(k).norm(), 1.0, epsilon = 1e-14);
            for l in 0..k {
                assert!(rtb.phi.column(k).dot(&rtb.phi.column(l)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rtb_disjoint_groups_are_exactly_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let positions: Vec<Vector3<f64>> = (0..8)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let mut groups = vec![0usize; 12];
        groups.extend(vec![1usize; 12]);
        let assign = BlockAssignment::new(groups, positions).unwrap();
        let rtb = build_rtb_basis(&assign).unwrap();
        assert_eq!(rtb.modes_per_group.len(), 2);
        let m0 = rtb.modes_per_group[0];
        // cross-group columns have disjoint support: inner products exactly 0
        for i in 0..m0 {
            for j in m0..rtb.phi.ncols() {
                assert_eq!(rtb.phi.column(i).dot(&rtb.phi.column(j)), 0.0);
            }
        }
    }

    #[test]
    fn modal_basis_picks_softest_mode() {
        let model = FullModel::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])),
            DMatrix::identity(3, 3),
            1.0,
        )
        .unwrap();
        let phi = build_modal_basis(&model, 1).unwrap();
        assert_relative_eq!(phi[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        assert!(phi[(1, 0)].abs() < 1e-12 && phi[(2, 0)].abs() < 1e-12);
    }

    #[test]
    fn modal_basis_degenerate_spectrum_still_orthonormal() {
        let model =
            FullModel::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3), 1.0).unwrap();
        let phi = build_modal_basis(&model, 2).unwrap();
        let basis = PartitionBasis::from_phi(phi).unwrap();
        basis.check(1e-10).unwrap();
    }

    #[test]
    fn modal_basis_eigen_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let a = &w * w.transpose() + DMatrix::identity(6, 6);
        let model = FullModel::new(a.clone(), DMatrix::identity(6, 6), 1.0).unwrap();
        let phi = build_modal_basis(&model, 3).unwrap();
        // each column is an eigenvector: A φ = λ φ with λ = φᵀAφ
        for j in 0..3 {
            let col = phi.column(j).into_owned();
            let lambda = col.dot(&(&a * &col));
            let resid = (&a * &col - col * lambda).norm();
            assert!(resid < 1e-10, "eigen residual {resid:.3e}");
        }
    }

    #[test]
    fn complement_of_e1_is_e2() {
        let phi = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let psi = complement_basis(&phi).unwrap();
        assert_relative_eq!(psi[(1, 0)], 1.0, epsilon = 1e-14);
        assert!(psi[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn complement_orthogonality_and_completeness() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (n, m) in [(5usize, 2usize), (12, 4), (30, 6)] {
            let phi = random_orthonormal(&mut rng, n, m);
            let psi = complement_basis(&phi).unwrap();
            assert!((phi.transpose() * &psi).norm() <= 1e-12);
            let completeness = &phi * phi.transpose() + &psi * psi.transpose();
            assert!((completeness - DMatrix::<f64>::identity(n, n)).norm() <= 1e-10);
        }
    }

    #[test]
    fn complement_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let phi = random_orthonormal(&mut rng, 9, 3);
        let a = complement_basis(&phi).unwrap();
        let b = complement_basis(&phi).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn complement_rejects_rank_deficient_phi() {
        let mut phi = DMatrix::<f64>::zeros(4, 2);
        phi[(0, 0)] = 1.0;
        phi[(0, 1)] = 1.0; // duplicate direction, not orthonormal
        assert!(complement_basis(&phi).is_err());
    }

    #[test]
    fn assignment_loads_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let assign_path = dir.path().join("assign.csv");
        let pos_path = dir.path().join("pos.csv");
        std::fs::write(
            &assign_path,
            "0,0\n1,0\n2,0\n3,0\n4,0\n5,0\n6,1\n7,1\n8,1\n9,1\n10,1\n11,1\n",
        )
        .unwrap();
        std::fs::write(
            &pos_path,
            "0.0,0.0,0.0\n1.0,0.0,0.0\n0.0,1.0,0.0\n0.0,0.0,1.0\n",
        )
        .unwrap();
        let assign = BlockAssignment::load(&assign_path, &pos_path).unwrap();
        assert_eq!(assign.n(), 12);
        assert_eq!(assign.positions.len(), 4);
    }
}
