//! Rational (Laplace-domain) approximation of the memory kernel and its
//! realization as a memoryless extended system.
//!
//! Order n replaces the kernel by `θ_n(t) = [0 … I] e^{t B̂} Ĉ` where `B̂` is
//! the block companion of the fitted `B_0..B_{n−1}` and `Ĉ` stacks
//! `C_{n−1}..C_0`. The coefficients interpolate the kernel moments at λ=0
//! and the integral at λ=∞; the auxiliary noise covariance is constructed so
//! the combined fluctuation-dissipation relation holds exactly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GleError, Result};
use crate::matops;
use crate::projection::{KernelMoments, ProjectedBlocks};

/// A fitted reduced model: coefficients, companion form, stationary
/// auxiliary covariance, and the FDT-consistent noise covariance.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    /// approximation order; 0 is the Markovian (added-damping) model
    pub order: usize,
    pub m: usize,
    pub a_eff: DMatrix<f64>,
    pub gamma11: DMatrix<f64>,
    /// extra Markovian damping `M∞` (order 0 only, zero otherwise)
    pub gamma_add: DMatrix<f64>,
    pub b_coef: Vec<DMatrix<f64>>,
    pub c_coef: Vec<DMatrix<f64>>,
    /// block companion drift of the auxiliary stack, size (n·m)²
    pub bhat: DMatrix<f64>,
    /// stacked input coupling `[C_{n−1}; …; C_0]`, size (n·m)×m
    pub chat: DMatrix<f64>,
    /// stationary covariance of the auxiliary stack, size (n·m)²
    pub qaux: DMatrix<f64>,
    /// noise covariance of `(f_1, ζ-stack)`, size (m+n·m)²
    pub sigma: DMatrix<f64>,
    pub kbt: f64,
}

impl ReducedModel {
    pub fn naux(&self) -> usize {
        self.order * self.m
    }

    /// Selector of the memory block `z` (the last block of the stack).
    pub fn last_block_row(&self) -> DMatrix<f64> {
        let m = self.m;
        let na = self.naux();
        let mut row = DMatrix::<f64>::zeros(m, na);
        if na > 0 {
            row.view_mut((0, na - m), (m, m))
                .copy_from(&DMatrix::identity(m, m));
        }
        row
    }

    /// Auxiliary noise covariance `Σ_aux` (the ζ-block of `sigma`).
    pub fn sigma_aux(&self) -> DMatrix<f64> {
        let m = self.m;
        let na = self.naux();
        self.sigma.view((m, m), (na, na)).into_owned()
    }

    /// Total damping felt by `p` in the order-0 model.
    pub fn total_damping(&self) -> DMatrix<f64> {
        &self.gamma11 + &self.gamma_add
    }
}

fn psd_min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    nalgebra::linalg::SymmetricEigen::new(matops::symmetrize(m))
        .eigenvalues
        .min()
}

/// Zeroth-order (Markovian) approximation: `θ(t) ≈ M∞ δ(t)`, realized as
/// added damping `Γ_add = M∞` with white noise `2 kBT (Γ11 + Γ_add)`.
pub fn fit_markovian(blocks: &ProjectedBlocks, moments: &KernelMoments) -> Result<ReducedModel> {
    let m = blocks.m;
    if moments.m != m {
        return Err(GleError::DimensionMismatch(
            "moments dimension does not match blocks".into(),
        ));
    }
    let gamma_add = matops::symmetrize(&moments.minf);
    let total = &blocks.gamma11 + &gamma_add;
    let sigma = matops::symmetrize(&(&total * (2.0 * blocks.kbt)));
    Ok(ReducedModel {
        order: 0,
        m,
        a_eff: blocks.a_eff.clone(),
        gamma11: blocks.gamma11.clone(),
        gamma_add,
        b_coef: Vec::new(),
        c_coef: Vec::new(),
        bhat: DMatrix::zeros(0, 0),
        chat: DMatrix::zeros(0, 0),
        qaux: DMatrix::zeros(0, 0),
        sigma,
        kbt: blocks.kbt,
    })
}

/// Block companion `B̂` for coefficients `B_0..B_{n−1}`: last block column
/// holds `B_{n−1−i}` in block row `i`, identities on the block subdiagonal.
fn companion(b_coef: &[DMatrix<f64>], m: usize) -> DMatrix<f64> {
    let n = b_coef.len();
    let mut bhat = DMatrix::<f64>::zeros(n * m, n * m);
    for i in 0..n {
        bhat.view_mut((i * m, (n - 1) * m), (m, m))
            .copy_from(&b_coef[n - 1 - i]);
        if i >= 1 {
            bhat.view_mut((i * m, (i - 1) * m), (m, m))
                .copy_from(&DMatrix::identity(m, m));
        }
    }
    bhat
}

fn stacked_c(c_coef: &[DMatrix<f64>], m: usize) -> DMatrix<f64> {
    let n = c_coef.len();
    let mut chat = DMatrix::<f64>::zeros(n * m, m);
    for i in 0..n {
        chat.view_mut((i * m, 0), (m, m)).copy_from(&c_coef[n - 1 - i]);
    }
    chat
}

/// Solves the moment-matching block system for `B_0..B_{n−1}`:
///
/// ```text
/// Σ_{i=1..n−1} B_{i−1} M_{n−1−i} − B_{n−1} M∞ = M_{n−1}
/// Σ_{i=1..n}   B_{i−1} M_{n−1+k−i}            = M_{n−1+k},  k = 1..n−1
/// ```
fn solve_b_system(
    moments: &[DMatrix<f64>],
    minf: &DMatrix<f64>,
    order: usize,
    m: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let n = order;
    // coefficient of B_j in equation e
    let coef = |e: usize, j: usize| -> DMatrix<f64> {
        if e == 0 {
            if j == n - 1 {
                -minf
            } else {
                moments[n - 2 - j].clone()
            }
        } else {
            moments[n - 2 + e - j].clone()
        }
    };
    let rhs_of = |e: usize| -> &DMatrix<f64> { &moments[n - 1 + e] };

    // transpose to a standard left-multiplied system for the B_jᵀ stack
    let dim = n * m;
    let mut big = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DMatrix::<f64>::zeros(dim, m);
    for e in 0..n {
        for j in 0..n {
            big.view_mut((e * m, j * m), (m, m))
                .copy_from(&coef(e, j).transpose());
        }
        rhs.view_mut((e * m, 0), (m, m))
            .copy_from(&rhs_of(e).transpose());
    }
    let lu = big.clone().lu();
    let sol = lu.solve(&rhs).ok_or(GleError::SingularSystem {
        order,
        residual: f64::INFINITY,
    })?;
    let resid = (&big * &sol - &rhs).norm() / rhs.norm().max(1e-300);
    if resid > 1e-10 {
        return Err(GleError::SingularSystem {
            order,
            residual: resid,
        });
    }
    Ok((0..n)
        .map(|j| sol.view((j * m, 0), (m, m)).transpose().into_owned())
        .collect())
}

/// Auxiliary stationary covariance with the last block column pinned to
/// `kBT·Ĉ` and every off-diagonal block of the implied noise covariance
/// forced to zero, generalizing the order-2 construction to any order.
///
/// The zero conditions form a block-triangular recurrence:
/// `q_{i,j−1} = −(B_{n−1−i} C_{n−1−j}ᵀ + C_{n−1−i} B_{n−1−j}ᵀ) − [i≥1]·q_{i−1,j}`
/// swept with `j` descending.
fn build_qaux(
    b_coef: &[DMatrix<f64>],
    c_coef: &[DMatrix<f64>],
    m: usize,
    kbt: f64,
) -> DMatrix<f64> {
    let n = b_coef.len();
    let mut q = vec![vec![DMatrix::<f64>::zeros(m, m); n]; n];
    // pinned last column (and row, by symmetry): q_{i,n−1} = C_{n−1−i}
    for i in 0..n {
        q[i][n - 1] = c_coef[n - 1 - i].clone();
        q[n - 1][i] = c_coef[n - 1 - i].transpose();
    }
    for j in (1..n).rev() {
        for i in 0..j {
            let mut val = -(&b_coef[n - 1 - i] * c_coef[n - 1 - j].transpose()
                + &c_coef[n - 1 - i] * b_coef[n - 1 - j].transpose());
            if i >= 1 {
                val -= &q[i - 1][j];
            }
            if i == j - 1 {
                val = matops::symmetrize(&val);
            }
            q[i][j - 1] = val.clone();
            q[j - 1][i] = val.transpose();
        }
    }
    let mut qaux = DMatrix::<f64>::zeros(n * m, n * m);
    for i in 0..n {
        for j in 0..n {
            qaux.view_mut((i * m, j * m), (m, m)).copy_from(&q[i][j]);
        }
    }
    matops::symmetrize(&qaux) * kbt
}

/// Order-n rational fit (`n ≥ 1`). Orders 1–3 are the contract; higher
/// orders reuse the same construction behind the same gates.
///
/// A kernel that vanishes identically short-circuits to zero couplings with
/// a trivially stable auxiliary block, so downstream consumers reduce
/// exactly to the projected Langevin model.
pub fn fit_rational(
    blocks: &ProjectedBlocks,
    moments: &KernelMoments,
    order: usize,
) -> Result<ReducedModel> {
    let m = blocks.m;
    if order == 0 {
        return fit_markovian(blocks, moments);
    }
    let needed = if order == 1 { 1 } else { 2 * order - 1 };
    if moments.moments.len() < needed {
        return Err(GleError::SingularMoment(format!(
            "order-{order} fit needs moments M_0..M_{}, got {}",
            needed - 1,
            moments.moments.len()
        )));
    }
    if moments.m != m {
        return Err(GleError::DimensionMismatch(
            "moments dimension does not match blocks".into(),
        ));
    }

    let scale = blocks.a_eff.norm().max(blocks.gamma11.norm()).max(1.0);
    let kernel_magnitude = moments.moments[0].norm() + moments.minf.norm();
    if kernel_magnitude <= 1e-12 * scale {
        // vanishing kernel: zero couplings, any stable auxiliary block
        let binom = |n: usize, k: usize| -> f64 {
            let mut v = 1.0;
            for i in 0..k {
                v = v * (n - i) as f64 / (i + 1) as f64;
            }
            v
        };
        let b_coef: Vec<DMatrix<f64>> = (0..order)
            .map(|k| DMatrix::identity(m, m) * -binom(order, k + 1))
            .collect();
        let c_coef = vec![DMatrix::<f64>::zeros(m, m); order];
        let bhat = companion(&b_coef, m);
        let chat = stacked_c(&c_coef, m);
        let na = order * m;
        return Ok(ReducedModel {
            order,
            m,
            a_eff: blocks.a_eff.clone(),
            gamma11: blocks.gamma11.clone(),
            gamma_add: DMatrix::zeros(m, m),
            b_coef,
            c_coef,
            bhat,
            chat,
            qaux: DMatrix::zeros(na, na),
            sigma: assemble_sigma(&blocks.gamma11, &DMatrix::zeros(na, na), blocks.kbt),
            kbt: blocks.kbt,
        });
    }

    if order == 1 {
        // B = −M0 M∞⁻¹ needs an invertible M∞
        let lu = moments.minf.clone().lu();
        let inv_ok = lu.is_invertible()
            && matops::one_norm(&moments.minf) > 1e-12 * moments.moments[0].norm().max(1e-300);
        if !inv_ok {
            return Err(GleError::SingularMoment(
                "M∞ is singular; the order-1 interpolation has no solution".into(),
            ));
        }
    }

    let b_coef = solve_b_system(&moments.moments, &moments.minf, order, m)?;

    // C_0 = M_0, C_j = M_j − Σ_{i=1..j} B_{i−1} M_{j−i}, and the λ→∞
    // condition pins the top coefficient to C_{n−1} = −B_{n−1} M∞.
    let mut c_coef: Vec<DMatrix<f64>> = Vec::with_capacity(order);
    for j in 0..order {
        if j == order - 1 {
            c_coef.push(-(&b_coef[order - 1] * &moments.minf));
        } else {
            let mut c = moments.moments[j].clone();
            for i in 1..=j {
                c -= &b_coef[i - 1] * &moments.moments[j - i];
            }
            c_coef.push(c);
        }
    }

    let bhat = companion(&b_coef, m);
    let chat = stacked_c(&c_coef, m);

    let abscissa = matops::spectral_abscissa(&bhat);
    if abscissa >= -1e-12 * matops::one_norm(&bhat).max(1.0) {
        return Err(GleError::Stability { abscissa });
    }

    let qaux = build_qaux(&b_coef, &c_coef, m, blocks.kbt);
    let sigma_aux = matops::symmetrize(&(-(&bhat * &qaux + &qaux * bhat.transpose())));

    let sig_min = psd_min_eig(&sigma_aux);
    let sig_scale = sigma_aux.norm().max(1e-300);
    if sig_min < -1e-8 * sig_scale.max(1.0) {
        return Err(GleError::FdtInfeasible { min_eig: sig_min });
    }
    let q_min = psd_min_eig(&qaux);
    if q_min < -1e-8 * qaux.norm().max(1.0) {
        return Err(GleError::FdtInfeasible { min_eig: q_min });
    }

    Ok(ReducedModel {
        order,
        m,
        a_eff: blocks.a_eff.clone(),
        gamma11: blocks.gamma11.clone(),
        gamma_add: DMatrix::zeros(m, m),
        b_coef,
        c_coef,
        bhat,
        chat,
        qaux,
        sigma: assemble_sigma(&blocks.gamma11, &sigma_aux, blocks.kbt),
        kbt: blocks.kbt,
    })
}

fn assemble_sigma(gamma11: &DMatrix<f64>, sigma_aux: &DMatrix<f64>, kbt: f64) -> DMatrix<f64> {
    let m = gamma11.nrows();
    let na = sigma_aux.nrows();
    let mut sigma = DMatrix::<f64>::zeros(m + na, m + na);
    sigma
        .view_mut((0, 0), (m, m))
        .copy_from(&(gamma11 * (2.0 * kbt)));
    sigma.view_mut((m, m), (na, na)).copy_from(sigma_aux);
    matops::symmetrize(&sigma)
}

/// The extended memoryless system for state `(q, p, z-stack)`:
/// drift, noise covariance, and the stationary covariance
/// `diag(kBT A_eff⁻¹, kBT I, Qaux)`.
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    pub drift: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    pub stationary_cov: DMatrix<f64>,
    pub m: usize,
    pub order: usize,
    pub kbt: f64,
}

/// Assembles the full `(2m + n·m)`-dimensional extended system; the order-0
/// model comes out as plain Langevin dynamics with damping `Γ11 + Γ_add`.
pub fn assemble_extended(reduced: &ReducedModel) -> Result<ExtendedSystem> {
    let m = reduced.m;
    let na = reduced.naux();
    let dim = 2 * m + na;
    let mut drift = DMatrix::<f64>::zeros(dim, dim);
    // q̇ = p
    drift
        .view_mut((0, m), (m, m))
        .copy_from(&DMatrix::identity(m, m));
    // ṗ = −A_eff q − (Γ11 + Γ_add) p − z
    drift
        .view_mut((m, 0), (m, m))
        .copy_from(&(-&reduced.a_eff));
    drift
        .view_mut((m, m), (m, m))
        .copy_from(&(-reduced.total_damping()));
    if na > 0 {
        drift
            .view_mut((m, 2 * m + na - m), (m, m))
            .copy_from(&(-DMatrix::<f64>::identity(m, m)));
        // ż-stack = Ĉ p + B̂ z-stack
        drift
            .view_mut((2 * m, m), (na, m))
            .copy_from(&reduced.chat);
        drift
            .view_mut((2 * m, 2 * m), (na, na))
            .copy_from(&reduced.bhat);
    }

    let mut noise = DMatrix::<f64>::zeros(dim, dim);
    noise
        .view_mut((m, m), (m + na, m + na))
        .copy_from(&reduced.sigma);

    let a_eff_chol = nalgebra::linalg::Cholesky::new(reduced.a_eff.clone())
        .ok_or_else(|| GleError::Validation("A_eff is not positive definite".into()))?;
    let mut stationary = DMatrix::<f64>::zeros(dim, dim);
    stationary
        .view_mut((0, 0), (m, m))
        .copy_from(&(a_eff_chol.inverse() * reduced.kbt));
    stationary
        .view_mut((m, m), (m, m))
        .copy_from(&(DMatrix::<f64>::identity(m, m) * reduced.kbt));
    if na > 0 {
        stationary
            .view_mut((2 * m, 2 * m), (na, na))
            .copy_from(&reduced.qaux);
    }

    Ok(ExtendedSystem {
        drift,
        noise_cov: noise,
        stationary_cov: stationary,
        m,
        order: reduced.order,
        kbt: reduced.kbt,
    })
}

/// `θ_n(t) = [0 … I] e^{t B̂} Ĉ` at a single time. Order 0 has a delta
/// kernel and is rejected.
pub fn eval_approx_kernel(reduced: &ReducedModel, t: f64) -> Result<DMatrix<f64>> {
    if reduced.order == 0 {
        return Err(GleError::DeltaKernel);
    }
    if t < 0.0 {
        return Err(GleError::Config(format!("kernel time must be >= 0, got {t}")));
    }
    let e = matops::expm(&(&reduced.bhat * t))?;
    let m = reduced.m;
    let na = reduced.naux();
    Ok(e.view((na - m, 0), (m, na)) * &reduced.chat)
}

/// Approximate kernel over a grid (uniform fast path).
pub fn eval_approx_kernel_grid(reduced: &ReducedModel, times: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    if reduced.order == 0 {
        return Err(GleError::DeltaKernel);
    }
    matops::exp_bilinear_grid(
        &reduced.bhat,
        &reduced.last_block_row(),
        &reduced.chat,
        times,
    )
}

/// FDT diagnostics for an assembled fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdtDiagnostics {
    /// `‖B̂ Qaux + Qaux B̂ᵀ + Σ_aux‖ / ‖Σ_aux‖`
    pub lyapunov_residual: f64,
    /// `‖Qaux E_last − kBT Ĉ‖ / max(kBT ‖Ĉ‖, ε)`
    pub pinning_residual: f64,
    pub sigma_aux_min_eig: f64,
    pub qaux_min_eig: f64,
}

/// Residuals of the stationarity (Lyapunov) relation and of the pinned
/// covariance column that makes the colored noise reproduce `kBT·θ_n`.
/// Both vanish by construction; order 0 reports zeros.
pub fn fdt_residual(reduced: &ReducedModel) -> FdtDiagnostics {
    if reduced.order == 0 || reduced.naux() == 0 {
        return FdtDiagnostics {
            lyapunov_residual: 0.0,
            pinning_residual: 0.0,
            sigma_aux_min_eig: psd_min_eig(&reduced.sigma),
            qaux_min_eig: 0.0,
        };
    }
    let sigma_aux = reduced.sigma_aux();
    let lyap = &reduced.bhat * &reduced.qaux + &reduced.qaux * reduced.bhat.transpose() + &sigma_aux;
    let lyapunov_residual = lyap.norm() / sigma_aux.norm().max(1e-300);

    let m = reduced.m;
    let na = reduced.naux();
    let last_col = reduced.qaux.view((0, na - m), (na, m)).into_owned();
    let target = &reduced.chat * reduced.kbt;
    let pinning_residual = (last_col - &target).norm() / target.norm().max(1e-300);

    FdtDiagnostics {
        lyapunov_residual,
        pinning_residual,
        sigma_aux_min_eig: psd_min_eig(&sigma_aux),
        qaux_min_eig: psd_min_eig(&reduced.qaux),
    }
}

/// Moments of the embedded kernel itself: `θ_n^{(ℓ)}(0) = [0…I] B̂^ℓ Ĉ` and
/// `∫θ_n = −[0…I] B̂⁻¹ Ĉ`. Used in round-trip tests and matching checks.
pub fn embedded_moments(reduced: &ReducedModel, max_order: usize) -> Result<KernelMoments> {
    if reduced.order == 0 {
        return Err(GleError::DeltaKernel);
    }
    let row = reduced.last_block_row();
    let mut v = reduced.chat.clone();
    let mut moments = Vec::with_capacity(max_order + 1);
    for ell in 0..=max_order {
        moments.push(&row * &v);
        if ell < max_order {
            v = &reduced.bhat * v;
        }
    }
    let lu = reduced.bhat.clone().lu();
    let sol = lu
        .solve(&reduced.chat)
        .ok_or_else(|| GleError::SingularMoment("B̂ singular".into()))?;
    let minf = -(&row * sol);
    Ok(KernelMoments {
        moments,
        minf,
        m: reduced.m,
    })
}

// ---------------------------------------------------------------------------
// model file format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedModelFile {
    pub order: usize,
    pub m: usize,
    pub kbt: f64,
    pub a_eff: Vec<f64>,
    pub gamma11: Vec<f64>,
    pub gamma_add: Vec<f64>,
    pub b_coef: Vec<Vec<f64>>,
    pub c_coef: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub qaux: Vec<f64>,
    /// convention marker: moments are plain kernel derivatives at zero
    pub moment_convention: String,
    #[serde(default)]
    pub provenance: std::collections::BTreeMap<String, String>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_rows(rows: &[f64], nr: usize, nc: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nr * nc {
        return Err(GleError::DimensionMismatch(format!(
            "expected {} entries, got {}",
            nr * nc,
            rows.len()
        )));
    }
    Ok(DMatrix::from_row_slice(nr, nc, rows))
}

impl ReducedModel {
    pub fn to_file(&self, provenance: std::collections::BTreeMap<String, String>) -> ReducedModelFile {
        ReducedModelFile {
            order: self.order,
            m: self.m,
            kbt: self.kbt,
            a_eff: to_rows(&self.a_eff),
            gamma11: to_rows(&self.gamma11),
            gamma_add: to_rows(&self.gamma_add),
            b_coef: self.b_coef.iter().map(to_rows).collect(),
            c_coef: self.c_coef.iter().map(to_rows).collect(),
            sigma: to_rows(&self.sigma),
            qaux: to_rows(&self.qaux),
            moment_convention: "theta-derivatives-at-zero".to_string(),
            provenance,
        }
    }

    pub fn from_file(file: &ReducedModelFile) -> Result<Self> {
        let m = file.m;
        let n = file.order;
        let b_coef: Result<Vec<_>> = file.b_coef.iter().map(|b| from_rows(b, m, m)).collect();
        let c_coef: Result<Vec<_>> = file.c_coef.iter().map(|c| from_rows(c, m, m)).collect();
        let b_coef = b_coef?;
        let c_coef = c_coef?;
        if b_coef.len() != n || c_coef.len() != n {
            return Err(GleError::DimensionMismatch(format!(
                "order {n} with {} B and {} C coefficients",
                b_coef.len(),
                c_coef.len()
            )));
        }
        let bhat = companion(&b_coef, m);
        let chat = stacked_c(&c_coef, m);
        Ok(ReducedModel {
            order: n,
            m,
            a_eff: from_rows(&file.a_eff, m, m)?,
            gamma11: from_rows(&file.gamma11, m, m)?,
            gamma_add: from_rows(&file.gamma_add, m, m)?,
            b_coef,
            c_coef,
            bhat,
            chat,
            qaux: from_rows(&file.qaux, n * m, n * m)?,
            sigma: from_rows(&file.sigma, m + n * m, m + n * m)?,
            kbt: file.kbt,
        })
    }
}
