//! Projection of the unit-mass model onto the partition: the eight blocks,
//! the matrix `G = [[0, −I], [A22, Γ22]]`, the exact memory kernel
//! `θ(t) = [A12, Γ12] e^{−Gt} diag(A22⁻¹, −I) [A21; Γ21]`, and its moments.

use nalgebra::DMatrix;

use crate::basis::PartitionBasis;
use crate::error::{GleError, Result};
use crate::matops;
use crate::model::FullModel;

/// Projected blocks of the stiffness and damping, the complement drift `G`,
/// and the effective stiffness on the coarse subspace.
#[derive(Debug, Clone)]
pub struct ProjectedBlocks {
    pub m: usize,
    /// complement dimension n − m
    pub k: usize,
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    pub a22: DMatrix<f64>,
    pub gamma11: DMatrix<f64>,
    pub gamma12: DMatrix<f64>,
    pub gamma21: DMatrix<f64>,
    pub gamma22: DMatrix<f64>,
    /// `[[0, −I], [A22, Γ22]]`, size 2k
    pub gmat: DMatrix<f64>,
    /// `A11 − A12 A22⁻¹ A21`
    pub a_eff: DMatrix<f64>,
    pub kbt: f64,
}

/// Kernel derivatives at zero (`moments[ℓ] = θ^{(ℓ)}(0)`, no factorial)
/// plus the total integral `M∞`.
///
/// With this convention the Laplace expansion reads
/// `Θ(λ) = Σ_ℓ moments[ℓ] λ^{ℓ+1}`, which is what the moment-matching
/// equations of the rational fits consume.
#[derive(Debug, Clone)]
pub struct KernelMoments {
    pub moments: Vec<DMatrix<f64>>,
    pub minf: DMatrix<f64>,
    pub m: usize,
}

impl KernelMoments {
    pub fn order(&self) -> usize {
        self.moments.len().saturating_sub(1)
    }
}

/// Forms all projected blocks. The model must be unit-mass and is
/// symmetrized before projection; `A22` must be invertible.
pub fn compute_blocks(model: &FullModel, basis: &PartitionBasis) -> Result<ProjectedBlocks> {
    if !model.is_unit_mass() {
        return Err(GleError::Validation(
            "compute_blocks expects a unit-mass model; apply mass_scale first".into(),
        ));
    }
    if basis.n() != model.n {
        return Err(GleError::DimensionMismatch(format!(
            "basis dimension {} vs model dimension {}",
            basis.n(),
            model.n
        )));
    }
    basis.check(1e-10)?;
    let phi = &basis.phi;
    let psi = &basis.psi;
    let a = matops::symmetrize(&model.stiffness);
    let g = matops::symmetrize(&model.damping);

    let a11 = phi.transpose() * &a * phi;
    let a12 = phi.transpose() * &a * psi;
    let a21 = psi.transpose() * &a * phi;
    let a22 = psi.transpose() * &a * psi;
    let gamma11 = phi.transpose() * &g * phi;
    let gamma12 = phi.transpose() * &g * psi;
    let gamma21 = psi.transpose() * &g * phi;
    let gamma22 = psi.transpose() * &g * psi;

    let m = basis.m();
    let k = basis.n() - m;

    let tol = 1e-10;
    let scale = a.norm().max(g.norm()).max(1e-300);
    if (&a12 - a21.transpose()).norm() > tol * scale
        || (&gamma12 - gamma21.transpose()).norm() > tol * scale
    {
        return Err(GleError::Validation(
            "projected blocks violate A12 = A21ᵀ / Γ12 = Γ21ᵀ".into(),
        ));
    }

    let chol = nalgebra::linalg::Cholesky::new(a22.clone())
        .ok_or_else(|| GleError::Validation("A22 is not positive definite".into()))?;
    let a22_inv_a21 = chol.solve(&a21);
    let a_eff = matops::symmetrize(&(&a11 - &a12 * &a22_inv_a21));

    let mut gmat = DMatrix::<f64>::zeros(2 * k, 2 * k);
    gmat.view_mut((0, k), (k, k))
        .copy_from(&(-DMatrix::<f64>::identity(k, k)));
    gmat.view_mut((k, 0), (k, k)).copy_from(&a22);
    gmat.view_mut((k, k), (k, k)).copy_from(&gamma22);

    Ok(ProjectedBlocks {
        m,
        k,
        a11,
        a12,
        a21,
        a22,
        gamma11,
        gamma12,
        gamma21,
        gamma22,
        gmat,
        a_eff,
        kbt: model.kbt,
    })
}

impl ProjectedBlocks {
    /// `[A12, Γ12]`, the m×2k row coupling of the kernel.
    pub fn coupling_row(&self) -> DMatrix<f64> {
        let mut p = DMatrix::<f64>::zeros(self.m, 2 * self.k);
        p.view_mut((0, 0), (self.m, self.k)).copy_from(&self.a12);
        p.view_mut((0, self.k), (self.m, self.k))
            .copy_from(&self.gamma12);
        p
    }

    /// `diag(A22⁻¹, −I) [A21; Γ21]`, the 2k×m column coupling.
    pub fn coupling_col(&self) -> Result<DMatrix<f64>> {
        let chol = nalgebra::linalg::Cholesky::new(self.a22.clone())
            .ok_or_else(|| GleError::Validation("A22 is not positive definite".into()))?;
        let top = chol.solve(&self.a21);
        let mut w = DMatrix::<f64>::zeros(2 * self.k, self.m);
        w.view_mut((0, 0), (self.k, self.m)).copy_from(&top);
        w.view_mut((self.k, 0), (self.k, self.m))
            .copy_from(&(-&self.gamma21));
        Ok(w)
    }

    /// `θ(0) = A12 A22⁻¹ A21 − Γ12 Γ21` evaluated without the exponential;
    /// an independent route against `eval_kernel(·, 0)`.
    pub fn theta_zero_direct(&self) -> Result<DMatrix<f64>> {
        let chol = nalgebra::linalg::Cholesky::new(self.a22.clone())
            .ok_or_else(|| GleError::Validation("A22 is not positive definite".into()))?;
        let a22_inv_a21 = chol.solve(&self.a21);
        Ok(&self.a12 * a22_inv_a21 - &self.gamma12 * &self.gamma21)
    }

    /// True when the coarse block is exactly decoupled (`A12 = 0`, `Γ12 = 0`),
    /// which makes the kernel vanish identically.
    pub fn is_decoupled(&self) -> bool {
        let scale = self
            .a22
            .norm()
            .max(self.gamma22.norm())
            .max(self.a11.norm())
            .max(1.0);
        self.a12.norm() + self.gamma12.norm() <= 1e-14 * scale
            && self.a21.norm() + self.gamma21.norm() <= 1e-14 * scale
    }
}

/// Reusable kernel evaluator; precomputes the couplings so each evaluation
/// is one matrix exponential plus two thin products.
pub struct KernelEvaluator {
    gmat: DMatrix<f64>,
    row: DMatrix<f64>,
    col: DMatrix<f64>,
    pub m: usize,
}

impl KernelEvaluator {
    pub fn new(blocks: &ProjectedBlocks) -> Result<Self> {
        Ok(Self {
            gmat: blocks.gmat.clone(),
            row: blocks.coupling_row(),
            col: blocks.coupling_col()?,
            m: blocks.m,
        })
    }

    /// `θ(t)` at a single time, `t ≥ 0`.
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        if t < 0.0 {
            return Err(GleError::Config(format!("kernel time must be >= 0, got {t}")));
        }
        let e = matops::expm(&(-&self.gmat * t))?;
        Ok(&self.row * e * &self.col)
    }

    /// Kernel on a time grid. Uniform grids use one exponential of the step
    /// and a running row product; irregular grids fall back to independent
    /// (data-parallel) evaluations.
    pub fn eval_grid(&self, times: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        if times.iter().any(|&t| t < 0.0) {
            return Err(GleError::Config("kernel times must be >= 0".into()));
        }
        matops::exp_bilinear_grid(&(-&self.gmat), &self.row, &self.col, times)
    }
}

/// One-shot kernel evaluation; prefer [`KernelEvaluator`] for grids.
pub fn eval_kernel(blocks: &ProjectedBlocks, t: f64) -> Result<DMatrix<f64>> {
    KernelEvaluator::new(blocks)?.eval(t)
}

/// Moments `M_ℓ = θ^{(ℓ)}(0) = (−1)^ℓ [A12, Γ12] Gℓ diag(A22⁻¹, −I) [A21; Γ21]`
/// for `ℓ = 0..=max_order`, plus `M∞ = [A12, Γ12] G⁻¹ diag(A22⁻¹, −I) [A21; Γ21]`.
///
/// `M∞` requires `G` nonsingular and `−G` Hurwitz (a decaying kernel); a
/// fully decoupled system short-circuits to all-zero moments.
pub fn compute_moments(blocks: &ProjectedBlocks, max_order: usize) -> Result<KernelMoments> {
    let m = blocks.m;
    if blocks.is_decoupled() {
        return Ok(KernelMoments {
            moments: vec![DMatrix::zeros(m, m); max_order + 1],
            minf: DMatrix::zeros(m, m),
            m,
        });
    }

    let row = blocks.coupling_row();
    let col = blocks.coupling_col()?;

    let mut moments = Vec::with_capacity(max_order + 1);
    let mut v = col.clone();
    for ell in 0..=max_order {
        let sign = if ell % 2 == 0 { 1.0 } else { -1.0 };
        moments.push(&row * &v * sign);
        if ell < max_order {
            v = &blocks.gmat * v;
        }
    }

    let scale = matops::one_norm(&blocks.gmat).max(1e-300);
    let abscissa = matops::spectral_abscissa(&(-&blocks.gmat));
    if abscissa >= -1e-10 * scale {
        return Err(GleError::Stability { abscissa });
    }
    let lu = blocks.gmat.clone().lu();
    let ginv_col = lu
        .solve(&col)
        .ok_or_else(|| GleError::SingularMoment("G is singular; M∞ undefined".into()))?;
    let minf = &row * ginv_col;

    Ok(KernelMoments { moments, minf, m })
}

/// `∫₀^∞ θ(t) dt` by composite-Simpson quadrature with an automatically
/// chosen horizon and an exponential tail bound from the decay rate of `G`.
///
/// This never touches `G⁻¹`, so it serves as an independent check of the
/// closed-form `M∞`.
pub fn integrate_kernel(blocks: &ProjectedBlocks, tol: f64) -> Result<matops::Quadrature> {
    let m = blocks.m;
    if blocks.is_decoupled() {
        return Ok(matops::Quadrature {
            value: DMatrix::zeros(m, m),
            error_estimate: 0.0,
            evaluations: 0,
        });
    }
    let alpha = -matops::spectral_abscissa(&(-&blocks.gmat));
    if alpha <= 0.0 {
        return Err(GleError::Stability { abscissa: -alpha });
    }
    let ev = KernelEvaluator::new(blocks)?;

    // grow the horizon until the estimated tail is well under tolerance
    let mut horizon = 8.0 / alpha;
    let mut tail;
    loop {
        tail = ev.eval(horizon)?.norm() / alpha * 3.0;
        if tail <= 0.2 * tol || horizon > 1e6 / alpha {
            break;
        }
        horizon *= 1.5;
    }

    // composite Simpson with step halving until the Richardson difference
    // settles; grid evaluation reuses one exponential per level
    let mut panels = 128usize;
    let mut prev: Option<DMatrix<f64>> = None;
    let mut evals = 0usize;
    loop {
        let npts = 2 * panels + 1;
        let h = horizon / (2 * panels) as f64;
        let times: Vec<f64> = (0..npts).map(|i| i as f64 * h).collect();
        let vals = ev.eval_grid(&times)?;
        evals += npts;
        let mut sum = vals[0].clone();
        for (i, v) in vals.iter().enumerate().skip(1) {
            if i == npts - 1 {
                sum += v;
            } else if i % 2 == 1 {
                sum += v * 4.0;
            } else {
                sum += v * 2.0;
            }
        }
        let value = sum * (h / 3.0);
        if let Some(p) = &prev {
            let diff = (&value - p).norm() / 15.0;
            if diff + tail <= tol || panels >= 65_536 {
                if diff + tail > tol {
                    return Err(GleError::QuadratureTolerance {
                        tol,
                        estimate: diff + tail,
                    });
                }
                return Ok(matops::Quadrature {
                    value,
                    error_estimate: diff + tail,
                    evaluations: evals,
                });
            }
        }
        prev = Some(value);
        panels *= 2;
    }
}

/// Writes a kernel series as CSV: `t, θ_11, θ_12, …, θ_mm` (row-major).
pub fn write_kernel_csv(
    path: &std::path::Path,
    times: &[f64],
    values: &[DMatrix<f64>],
    meta: &[(String, String)],
) -> Result<()> {
    crate::series::write_matrix_series_csv(path, times, values, meta)
}

/// Reference two-coordinate model used across the test suite:
/// `A = [[2, −1], [−1, 2]]`, `Γ = I`, `Φ = e₁`.
pub fn reference_two_dof(kbt: f64) -> (FullModel, PartitionBasis) {
    let model = FullModel::new(
        DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]),
        DMatrix::identity(2, 2),
        kbt,
    )
    .unwrap();
    let phi = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let basis = PartitionBasis::from_phi(phi).unwrap();
    (model, basis)
}
