//! Dense matrix kernels used throughout the crate: matrix exponential,
//! Lyapunov solves, positive-semidefinite factorization, and matrix-valued
//! quadrature.
//!
//! Everything here is pure and safe to call from concurrent workers. Sizes
//! are expected to stay in the "few hundred" range, so dense algorithms are
//! used without apology.

use nalgebra::{DMatrix, DVector};

use crate::error::{GleError, Result};

/// Relative eigenvalue floor below which a symmetric matrix is rejected as
/// not positive semidefinite.
pub const PSD_TOL: f64 = 1e-10;

/// Frobenius-relative asymmetry `‖M − Mᵀ‖ / max(‖M‖, 1e-300)`.
pub fn sym_defect(m: &DMatrix<f64>) -> f64 {
    let d = m - m.transpose();
    d.norm() / m.norm().max(1e-300)
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Maximum column sum of absolute values.
pub fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest real part over the eigenvalues of a real square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

fn check_square_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(GleError::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(GleError::NonFinite);
    }
    Ok(())
}

// Diagonal Padé coefficients b_0..b_m for degrees 3..13 (Higham 2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// 1-norm thresholds at which each Padé degree keeps the backward error
// below unit roundoff.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539398330063230e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068;
const THETA13: f64 = 5.371920351148152;

/// Evaluates the degree-`m` diagonal Padé approximant split into the odd
/// part `U = A·(Σ b_{2k+1} A^{2k})` and the even part `V = Σ b_{2k} A^{2k}`.
fn pade_uv(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let a2 = a * a;
    let mut odd = DMatrix::<f64>::identity(n, n) * b[1];
    let mut even = DMatrix::<f64>::identity(n, n) * b[0];
    let mut pow = DMatrix::<f64>::identity(n, n);
    let mut k = 2;
    while k < b.len() {
        pow = &pow * &a2;
        even += &pow * b[k];
        if k + 1 < b.len() {
            odd += &pow * b[k + 1];
        }
        k += 2;
    }
    (a * odd, even)
}

/// Degree-13 evaluation with the factored polynomial scheme.
fn pade13_uv(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    (u, v)
}

/// Matrix exponential by scaling-and-squaring with a diagonal Padé core.
///
/// Handles general (non-symmetric) real matrices; relative accuracy is at
/// the 1e-13 level for well-conditioned inputs.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_finite(m)?;
    let norm = one_norm(m);

    let (u, v, squarings) = if norm <= THETA3 {
        let (u, v) = pade_uv(m, &PADE3);
        (u, v, 0u32)
    } else if norm <= THETA5 {
        let (u, v) = pade_uv(m, &PADE5);
        (u, v, 0)
    } else if norm <= THETA7 {
        let (u, v) = pade_uv(m, &PADE7);
        (u, v, 0)
    } else if norm <= THETA9 {
        let (u, v) = pade_uv(m, &PADE9);
        (u, v, 0)
    } else {
        let s = ((norm / THETA13).log2().ceil()).max(0.0) as u32;
        let scaled = m / 2f64.powi(s as i32);
        let (u, v) = pade13_uv(&scaled);
        (u, v, s)
    };

    let num = &v + &u;
    let den = &v - &u;
    let lu = den.lu();
    let mut r = lu
        .solve(&num)
        .ok_or_else(|| GleError::Validation("singular Padé denominator in expm".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Partition of a real Schur form into 1x1 and 2x2 diagonal blocks.
fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solves the continuous Lyapunov equation `B X + X Bᵀ = C` by
/// Bartels–Stewart back-substitution on the real Schur form of `B`.
///
/// Unique solvability requires `λ_i(B) + λ_j(B) ≠ 0` for every pair; a
/// Hurwitz `B` always qualifies. The result is symmetrized before return
/// when `C` is symmetric.
pub fn solve_lyapunov(b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_finite(b)?;
    check_square_finite(c)?;
    let n = b.nrows();
    if c.nrows() != n {
        return Err(GleError::DimensionMismatch(format!(
            "Lyapunov: B is {n}x{n} but C is {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }

    let eigs = b.complex_eigenvalues();
    let mut min_sum = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            min_sum = min_sum.min((eigs[i] + eigs[j]).norm());
        }
    }
    let scale = one_norm(b).max(1e-300);
    if min_sum <= 1e-12 * scale {
        return Err(GleError::SingularLyapunov { min_sum });
    }

    let schur = nalgebra::linalg::Schur::try_new(b.clone(), 1e-14, 10_000)
        .ok_or(GleError::SchurFailed)?;
    let (q, t) = schur.unpack();
    let c_tilde = q.transpose() * c * &q;

    let blocks = schur_blocks(&t);
    let nb = blocks.len();
    let mut y = DMatrix::<f64>::zeros(n, n);

    // T Y + Y Tᵀ = C̃, solved block (i,j) by block with j outermost,
    // both descending, so every dependency is already available.
    for bj in (0..nb).rev() {
        let (j0, js) = blocks[bj];
        for bi in (0..nb).rev() {
            let (i0, is) = blocks[bi];
            let mut rhs = c_tilde.view((i0, j0), (is, js)).into_owned();
            // subtract Σ_{k>i} T_ik Y_kj
            for bk in (bi + 1)..nb {
                let (k0, ks) = blocks[bk];
                let t_ik = t.view((i0, k0), (is, ks));
                let y_kj = y.view((k0, j0), (ks, js));
                rhs -= t_ik * y_kj;
            }
            // subtract Σ_{k>j} Y_ik (T_jk)ᵀ
            for bk in (bj + 1)..nb {
                let (k0, ks) = blocks[bk];
                let y_ik = y.view((i0, k0), (is, ks));
                let t_jk = t.view((j0, k0), (js, ks));
                rhs -= y_ik * t_jk.transpose();
            }
            // small Sylvester: T_ii Y_ij + Y_ij T_jjᵀ = rhs via Kronecker
            let t_ii = t.view((i0, i0), (is, is));
            let t_jj = t.view((j0, j0), (js, js));
            let dim = is * js;
            let mut k_sys = DMatrix::<f64>::zeros(dim, dim);
            // vec(T_ii Y) = (I ⊗ T_ii) vec(Y); vec(Y T_jjᵀ) = (T_jj ⊗ I) vec(Y)
            for col in 0..js {
                for row in 0..is {
                    let r_idx = col * is + row;
                    for col2 in 0..js {
                        for row2 in 0..is {
                            let c_idx = col2 * is + row2;
                            let mut val = 0.0;
                            if col == col2 {
                                val += t_ii[(row, row2)];
                            }
                            if row == row2 {
                                val += t_jj[(col, col2)];
                            }
                            k_sys[(r_idx, c_idx)] += val;
                        }
                    }
                }
            }
            let mut rhs_vec = DVector::<f64>::zeros(dim);
            for col in 0..js {
                for row in 0..is {
                    rhs_vec[col * is + row] = rhs[(row, col)];
                }
            }
            let sol = k_sys
                .lu()
                .solve(&rhs_vec)
                .ok_or(GleError::SingularLyapunov { min_sum })?;
            for col in 0..js {
                for row in 0..is {
                    y[(i0 + row, j0 + col)] = sol[col * is + row];
                }
            }
        }
    }

    let x = &q * y * q.transpose();
    if sym_defect(c) < 1e-12 {
        Ok(symmetrize(&x))
    } else {
        Ok(x)
    }
}

/// Lower-triangular `L` with `L Lᵀ = S` for symmetric positive semidefinite
/// `S`. Eigenvalues below `-PSD_TOL·‖S‖` are an error; small negative ones
/// are clipped to zero.
pub fn factor_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_finite(s)?;
    let s_sym = symmetrize(s);
    let n = s_sym.nrows();

    // fast path: strictly positive definite
    if let Some(chol) = nalgebra::linalg::Cholesky::new(s_sym.clone()) {
        let l = chol.unpack();
        let resid = (&l * l.transpose() - &s_sym).norm();
        if resid <= PSD_TOL * s_sym.norm().max(1e-300) {
            return Ok(l);
        }
    }

    let eig = nalgebra::linalg::SymmetricEigen::new(s_sym.clone());
    let max_abs = eig
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let tol = PSD_TOL * max_abs;
    let min_eig = eig.eigenvalues.min();
    if min_eig < -tol {
        return Err(GleError::NotPositiveSemidefinite { min_eig, tol });
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut b = eig.eigenvectors;
    for j in 0..n {
        let s = sqrt_vals[j];
        b.column_mut(j).scale_mut(s);
    }
    // triangularize: Bᵀ = QR  =>  S = B Bᵀ = Rᵀ R, take L = Rᵀ
    let qr = b.transpose().qr();
    let r = qr.r();
    let mut l = r.transpose();
    for j in 0..n {
        if l[(j, j)] < 0.0 {
            l.column_mut(j).neg_mut();
        }
    }
    Ok(l)
}

/// Step size of a uniform, strictly increasing grid; `None` if irregular.
pub fn uniform_step(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return Some(0.0);
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return None;
    }
    let span = (times[times.len() - 1] - times[0]).max(dt);
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * span {
            return None;
        }
    }
    Some(dt)
}

/// Evaluates `row · e^{gen·t} · col` over a time grid.
///
/// Uniform grids cost one matrix exponential of the step plus a cheap
/// running row product; irregular grids fall back to one exponential per
/// point, fanned out data-parallel.
pub fn exp_bilinear_grid(
    gen: &DMatrix<f64>,
    row: &DMatrix<f64>,
    col: &DMatrix<f64>,
    times: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    if times.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(dt) = uniform_step(times) {
        let e0 = expm(&(gen * times[0]))?;
        let mut r = row * e0;
        let mut out = Vec::with_capacity(times.len());
        out.push(&r * col);
        if times.len() > 1 {
            let estep = expm(&(gen * dt))?;
            for _ in 1..times.len() {
                r = &r * &estep;
                out.push(&r * col);
            }
        }
        Ok(out)
    } else {
        crate::par::map_range(times.len(), |i| {
            expm(&(gen * times[i])).map(|e| row * e * col)
        })
        .into_iter()
        .collect()
    }
}

/// Result of an adaptive quadrature: the integral and an error estimate.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub value: DMatrix<f64>,
    pub error_estimate: f64,
    pub evaluations: usize,
}

struct SimpsonState<'a, F> {
    f: &'a F,
    evals: usize,
    max_evals: usize,
    err_total: f64,
}

fn simpson_recurse<F>(
    st: &mut SimpsonState<'_, F>,
    a: f64,
    b: f64,
    fa: &DMatrix<f64>,
    fm: &DMatrix<f64>,
    fb: &DMatrix<f64>,
    whole: &DMatrix<f64>,
    tol: f64,
    depth: u32,
) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = (st.f)(lm);
    let frm = (st.f)(rm);
    st.evals += 2;
    let h6 = (b - a) / 12.0;
    let left = (fa + &flm * 4.0 + fm) * h6;
    let right = (fm + &frm * 4.0 + fb) * h6;
    let refined = &left + &right;
    let delta = &refined - whole;
    let err = delta.norm() / 15.0;
    if err <= tol || depth >= 40 || st.evals >= st.max_evals {
        st.err_total += err;
        return Ok(refined + delta / 15.0);
    }
    let l = simpson_recurse(st, a, m, fa, &flm, fm, &left, 0.5 * tol, depth + 1)?;
    let r = simpson_recurse(st, m, b, fm, &frm, fb, &right, 0.5 * tol, depth + 1)?;
    Ok(l + r)
}

/// Adaptive composite Simpson quadrature of a matrix-valued function on
/// `[0, horizon]` with a Richardson error estimate per panel.
///
/// Fails with `QuadratureTolerance` if the subdivision budget runs out
/// before the accumulated error estimate drops below `tol`.
pub fn integrate_matrix_function<F>(f: F, horizon: f64, tol: f64) -> Result<Quadrature>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    if !(horizon > 0.0) {
        return Err(GleError::Config(format!(
            "quadrature horizon must be positive, got {horizon}"
        )));
    }
    let fa = f(0.0);
    let fm = f(0.5 * horizon);
    let fb = f(horizon);
    let whole = (&fa + &fm * 4.0 + &fb) * (horizon / 6.0);
    let mut st = SimpsonState {
        f: &f,
        evals: 3,
        max_evals: 200_000,
        err_total: 0.0,
    };
    let value = simpson_recurse(&mut st, 0.0, horizon, &fa, &fm, &fb, &whole, tol, 0)?;
    if st.err_total > tol.max(1e-15) * 4.0 {
        return Err(GleError::QuadratureTolerance {
            tol,
            estimate: st.err_total,
        });
    }
    Ok(Quadrature {
        value,
        error_estimate: st.err_total,
        evaluations: st.evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn taylor_expm(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = m.nrows();
        let mut sum = DMatrix::<f64>::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        for k in 1..=terms {
            term = &term * m / k as f64;
            sum += &term;
        }
        sum
    }

    fn random_matrix(rng: &mut impl Rng, n: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn expm_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        let e = expm(&z).unwrap();
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn expm_diagonal() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let e = expm(&d).unwrap();
        assert_relative_eq!(e[(0, 0)], 1f64.exp(), epsilon = 1e-13);
        assert_relative_eq!(e[(1, 1)], (-1f64).exp(), epsilon = 1e-14);
        assert!(e[(0, 1)].abs() < 1e-15 && e[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn expm_rotation_matches_taylor_oracle() {
        // quarter-turn generator; oracle is a 60-term Taylor series
        let half_pi = std::f64::consts::FRAC_PI_2;
        let g = DMatrix::from_row_slice(2, 2, &[0.0, half_pi, -half_pi, 0.0]);
        let oracle = taylor_expm(&g, 60);
        let e = expm(&g).unwrap();
        assert_relative_eq!(e, oracle, epsilon = 1e-13);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((e - expected).norm() < 1e-12);
    }

    #[test]
    fn expm_commuting_product_property() {
        // expm(M+N) = expm(M)·expm(N) when MN = NM; polynomials in one
        // random matrix always commute.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 5, 1.0);
            let m = &a * 0.7;
            let n = &a * &a * 0.2 + &a * 0.1;
            let lhs = expm(&(&m + &n)).unwrap();
            let rhs = expm(&m).unwrap() * expm(&n).unwrap();
            assert!(
                (&lhs - &rhs).norm() <= 1e-10 * lhs.norm().max(1.0),
                "commuting property violated: {}",
                (&lhs - &rhs).norm()
            );
        }
    }

    #[test]
    fn expm_large_norm_requires_squaring() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 8, 4.0);
        let e = expm(&a).unwrap();
        // e^A e^{-A} = I
        let inv = expm(&(-&a)).unwrap();
        let prod = &e * &inv;
        assert!((prod - DMatrix::<f64>::identity(8, 8)).norm() < 1e-8 * e.norm());
    }

    #[test]
    fn expm_decay_for_stable_matrix() {
        let g = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 2.0, 1.0]);
        // eigenvalues of G have positive real part, so expm(-G t) decays
        let e1 = expm(&(-&g * 5.0)).unwrap();
        let e2 = expm(&(-&g * 10.0)).unwrap();
        assert!(e2.norm() < e1.norm());
        assert!(e2.norm() < 1e-1);
    }

    #[test]
    fn expm_rejects_bad_input() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(expm(&m), Err(GleError::NonSquare { .. })));
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(expm(&m), Err(GleError::NonFinite)));
    }

    #[test]
    fn lyapunov_scalar() {
        let b = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let c = DMatrix::from_row_slice(1, 1, &[-2.0]);
        let x = solve_lyapunov(&b, &c).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_diagonal_matches_decoupled_formula() {
        // for diagonal B, X_ij = C_ij / (λ_i + λ_j)
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let c = DMatrix::from_row_slice(2, 2, &[-2.0, -3.0, -3.0, -4.0]);
        let x = solve_lyapunov(&b, &c).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_relative_eq!(x, expected, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_random_residual_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [3usize, 7, 15, 30] {
            let a = random_matrix(&mut rng, n, 1.0);
            let b = &a - DMatrix::<f64>::identity(n, n) * (one_norm(&a) + 0.5);
            let w = random_matrix(&mut rng, n, 1.0);
            let c = -(&w * w.transpose());
            let x = solve_lyapunov(&b, &c).unwrap();
            let resid = (&b * &x + &x * b.transpose() - &c).norm();
            assert!(
                resid <= 1e-10 * c.norm(),
                "residual {resid:.3e} too large at n={n}"
            );
            assert!(sym_defect(&x) < 1e-10);
        }
    }

    #[test]
    fn lyapunov_singular_pair_rejected() {
        // eigenvalues +1 and -1 sum to zero
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let c = DMatrix::<f64>::identity(2, 2) * -2.0;
        assert!(matches!(
            solve_lyapunov(&b, &c),
            Err(GleError::SingularLyapunov { .. })
        ));
    }

    #[test]
    fn factor_psd_identity_and_diagonal() {
        let l = factor_psd(&DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(l, DMatrix::identity(2, 2), epsilon = 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let l = factor_psd(&d).unwrap();
        assert_relative_eq!(l[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(l[(1, 1)], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn factor_psd_rank_one_reconstructs() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let s = &v * v.transpose();
        let l = factor_psd(&s).unwrap();
        assert!((&l * l.transpose() - &s).norm() <= 1e-10 * s.norm());
        // lower-triangular with nonnegative diagonal
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!(l[(i, j)].abs() < 1e-12);
            }
            assert!(l[(i, i)] >= 0.0);
        }
    }

    #[test]
    fn factor_psd_clips_small_negatives_and_rejects_large() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-14]));
        let l = factor_psd(&s).unwrap();
        assert!((&l * l.transpose())[(1, 1)].abs() < 1e-13);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.1]));
        assert!(matches!(
            factor_psd(&s),
            Err(GleError::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn factor_psd_random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for n in [2usize, 5, 12] {
            let w = random_matrix(&mut rng, n, 1.0);
            let s = &w * w.transpose();
            let l = factor_psd(&s).unwrap();
            assert!((&l * l.transpose() - &s).norm() <= 1e-10 * s.norm());
        }
    }

    #[test]
    fn quadrature_scalar_exponential() {
        let f = |t: f64| DMatrix::from_element(2, 2, 0.0) + DMatrix::identity(2, 2) * (-t).exp();
        let q = integrate_matrix_function(f, 40.0, 1e-9).unwrap();
        assert!((q.value - DMatrix::identity(2, 2)).norm() <= 1e-8);
    }

    #[test]
    fn quadrature_zero_function() {
        let q = integrate_matrix_function(|_| DMatrix::zeros(3, 3), 10.0, 1e-10).unwrap();
        assert_eq!(q.value, DMatrix::zeros(3, 3));
    }

    #[test]
    fn quadrature_polynomial_is_exact() {
        // Simpson integrates cubics exactly
        let q = integrate_matrix_function(
            |t| DMatrix::from_element(1, 1, t * t * t - 2.0 * t + 1.0),
            2.0,
            1e-12,
        )
        .unwrap();
        assert_relative_eq!(q.value[(0, 0)], 4.0 - 4.0 + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_helpers() {
        let g = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 2.0, 1.0]);
        // eigenvalues (1 ± i√7)/2
        assert_relative_eq!(spectral_abscissa(&g), 0.5, epsilon = 1e-10);
        assert_relative_eq!(spectral_radius(&g), 2f64.sqrt(), epsilon = 1e-10);
    }
}
