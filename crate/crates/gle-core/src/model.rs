//! The full linear Langevin system: stiffness `A`, damping `Γ`, temperature,
//! and optional per-coordinate masses, plus trajectory ingestion and the
//! covariance-based stiffness estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{GleError, Result};
use crate::matops;

/// Linear Langevin model `ẋ = v, M v̇ = −A x − Γ v + f(t)` with
/// `⟨f fᵀ⟩ = 2 k_B T Γ δ` after unit-mass scaling.
#[derive(Debug, Clone)]
pub struct FullModel {
    pub n: usize,
    pub stiffness: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub kbt: f64,
    /// Per-coordinate masses; `None` means the model is already unit-mass.
    pub masses: Option<DVector<f64>>,
}

impl FullModel {
    pub fn new(stiffness: DMatrix<f64>, damping: DMatrix<f64>, kbt: f64) -> Result<Self> {
        let n = stiffness.nrows();
        if stiffness.ncols() != n || damping.nrows() != n || damping.ncols() != n {
            return Err(GleError::DimensionMismatch(format!(
                "stiffness {}x{}, damping {}x{}",
                stiffness.nrows(),
                stiffness.ncols(),
                damping.nrows(),
                damping.ncols()
            )));
        }
        if kbt < 0.0 || !kbt.is_finite() {
            return Err(GleError::Validation(format!("kBT must be >= 0, got {kbt}")));
        }
        Ok(Self {
            n,
            stiffness,
            damping,
            kbt,
            masses: None,
        })
    }

    pub fn with_masses(mut self, masses: DVector<f64>) -> Result<Self> {
        if masses.len() != self.n {
            return Err(GleError::DimensionMismatch(format!(
                "{} masses for dimension {}",
                masses.len(),
                self.n
            )));
        }
        for (i, &m) in masses.iter().enumerate() {
            if !(m > 0.0) {
                return Err(GleError::NonPositiveMass { index: i, value: m });
            }
        }
        self.masses = Some(masses);
        Ok(self)
    }

    pub fn is_unit_mass(&self) -> bool {
        self.masses.is_none()
    }

    /// Full-system drift `D = [[0, I], [−A, −Γ]]` of the unit-mass model.
    pub fn drift(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut d = DMatrix::<f64>::zeros(2 * n, 2 * n);
        d.view_mut((0, n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        d.view_mut((n, 0), (n, n)).copy_from(&(-&self.stiffness));
        d.view_mut((n, n), (n, n)).copy_from(&(-&self.damping));
        d
    }
}

/// Removes the mass matrix by the change of variables
/// `x̃ = M^{1/2} x`, `Ã = M^{-1/2} A M^{-1/2}`, `Γ̃ = M^{-1/2} Γ M^{-1/2}`.
///
/// A model without masses is returned unchanged.
pub fn mass_scale(model: &FullModel) -> Result<FullModel> {
    let Some(masses) = &model.masses else {
        return Ok(model.clone());
    };
    let inv_sqrt = masses.map(|m| 1.0 / m.sqrt());
    let scale = DMatrix::from_diagonal(&inv_sqrt);
    let a = &scale * &model.stiffness * &scale;
    let g = &scale * &model.damping * &scale;
    FullModel::new(matops::symmetrize(&a), matops::symmetrize(&g), model.kbt)
}

/// Coordinate trajectory: `samples[t]` is one n-dimensional snapshot,
/// optionally paired with velocities.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<DVector<f64>>,
    pub velocities: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn new(dt: f64, samples: Vec<DVector<f64>>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(GleError::Validation(format!("dt must be > 0, got {dt}")));
        }
        if samples.len() < 2 {
            return Err(GleError::Validation(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(GleError::DimensionMismatch(
                "inconsistent sample dimensions".into(),
            ));
        }
        Ok(Self {
            dt,
            samples,
            velocities: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Drops the first `count` samples (equilibration burn-in).
    pub fn discard_burn_in(&mut self, count: usize) {
        let keep = count.min(self.samples.len());
        self.samples.drain(..keep);
        if let Some(v) = &mut self.velocities {
            v.drain(..keep.min(v.len()));
        }
    }

    /// Single-pass mean and centered covariance of the coordinate samples.
    pub fn mean_and_covariance(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let t = self.samples.len() as f64;
        let mut mean = DVector::<f64>::zeros(n);
        for s in &self.samples {
            mean += s;
        }
        mean /= t;
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for s in &self.samples {
            let d = s - &mean;
            cov.ger(1.0 / t, &d, &d, 1.0);
        }
        (mean, matops::symmetrize(&cov))
    }
}

/// Stiffness from the equilibrium covariance: `A = kBT (Cov + floor·I)⁻¹`.
///
/// The floor regularizes rank-deficient covariances (rigid-body null modes);
/// pass `None` to use `1e-8 · trace(Cov)/n`.
pub fn estimate_stiffness_from_covariance(
    traj: &Trajectory,
    kbt: f64,
    eig_floor: Option<f64>,
) -> Result<DMatrix<f64>> {
    let n = traj.dim();
    let (_, cov) = traj.mean_and_covariance();
    let floor = match eig_floor {
        Some(f) if f > 0.0 => f,
        Some(f) => {
            return Err(GleError::Validation(format!(
                "eig_floor must be > 0, got {f}"
            )))
        }
        None => 1e-8 * cov.trace() / n as f64,
    };
    let regularized = &cov + DMatrix::<f64>::identity(n, n) * floor;
    let chol = nalgebra::linalg::Cholesky::new(regularized).ok_or_else(|| {
        GleError::Validation("regularized covariance is not positive definite".into())
    })?;
    let a = chol.inverse() * kbt;
    Ok(matops::symmetrize(&a))
}

/// Diagnostics from `validate_full_model`.
#[derive(Debug, Clone, Serialize)]
pub struct ModelDiagnostics {
    pub stiffness_sym_defect: f64,
    pub damping_sym_defect: f64,
    pub min_eig_stiffness: f64,
    pub min_eig_damping: f64,
    /// Largest real part over eigenvalues of the full drift `[[0,I],[−A,−Γ]]`.
    pub drift_spectral_abscissa: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Checks symmetry of `A` and `Γ`, positive definiteness of `A`, positive
/// semidefiniteness of `Γ`, and reports the drift spectral abscissa.
/// Violations beyond `1e-8` relative are recorded as failures.
pub fn validate_full_model(model: &FullModel) -> ModelDiagnostics {
    let tol = 1e-8;
    let mut failures = Vec::new();

    let a_defect = matops::sym_defect(&model.stiffness);
    let g_defect = matops::sym_defect(&model.damping);
    if a_defect > tol {
        failures.push(format!("stiffness asymmetry {a_defect:.3e}"));
    }
    if g_defect > tol {
        failures.push(format!("damping asymmetry {g_defect:.3e}"));
    }

    let a_eigs = nalgebra::linalg::SymmetricEigen::new(matops::symmetrize(&model.stiffness));
    let g_eigs = nalgebra::linalg::SymmetricEigen::new(matops::symmetrize(&model.damping));
    let min_a = a_eigs.eigenvalues.min();
    let min_g = g_eigs.eigenvalues.min();
    let a_scale = a_eigs.eigenvalues.amax().max(1e-300);
    let g_scale = g_eigs.eigenvalues.amax().max(1e-300);
    if min_a <= tol * a_scale {
        failures.push(format!("stiffness not positive definite, min eig {min_a:.3e}"));
    }
    if min_g < -tol * g_scale {
        failures.push(format!(
            "damping not positive semidefinite, min eig {min_g:.3e}"
        ));
    }
    if let Some(m) = &model.masses {
        for (i, &v) in m.iter().enumerate() {
            if !(v > 0.0) {
                failures.push(format!("mass {i} nonpositive: {v}"));
            }
        }
    }

    let abscissa = matops::spectral_abscissa(&model.drift());

    ModelDiagnostics {
        stiffness_sym_defect: a_defect,
        damping_sym_defect: g_defect,
        min_eig_stiffness: min_a,
        min_eig_damping: min_g,
        drift_spectral_abscissa: abscissa,
        passed: failures.is_empty(),
        failures,
    }
}

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

/// Matrix payload in a model file: inline row-major entries or a CSV path
/// (resolved relative to the model file).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixPayload {
    Inline(Vec<f64>),
    Csv { csv: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub kbt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    pub a: MatrixPayload,
    pub gamma: MatrixPayload,
}

/// Reads a whitespace-free numeric CSV matrix (no header).
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| GleError::Config(format!("bad matrix entry: {e}")))?);
    }
    if rows.is_empty() {
        return Err(GleError::Config(format!("empty matrix file {path:?}")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(GleError::Config(format!("ragged matrix file {path:?}")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_path(path)?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

fn resolve_payload(payload: &MatrixPayload, n: usize, base: &Path) -> Result<DMatrix<f64>> {
    match payload {
        MatrixPayload::Inline(entries) => {
            if entries.len() != n * n {
                return Err(GleError::DimensionMismatch(format!(
                    "inline matrix has {} entries, expected {}",
                    entries.len(),
                    n * n
                )));
            }
            Ok(DMatrix::from_row_slice(n, n, entries))
        }
        MatrixPayload::Csv { csv } => {
            let path = base.join(csv);
            let m = read_matrix_csv(&path)?;
            if m.nrows() != n || m.ncols() != n {
                return Err(GleError::DimensionMismatch(format!(
                    "{path:?} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(m)
        }
    }
}

/// Loads a model JSON file. `n`, `kbt`, optional `masses`, and the `a` /
/// `gamma` payloads (inline row-major arrays or CSV paths).
pub fn load_model(path: &Path) -> Result<FullModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let a = resolve_payload(&file.a, file.n, base)?;
    let g = resolve_payload(&file.gamma, file.n, base)?;
    let model = FullModel::new(a, g, file.kbt)?;
    match file.masses {
        Some(m) => model.with_masses(DVector::from_vec(m)),
        None => Ok(model),
    }
}

pub fn save_model(path: &Path, model: &FullModel) -> Result<()> {
    let file = ModelFile {
        n: model.n,
        kbt: model.kbt,
        masses: model.masses.as_ref().map(|m| m.iter().copied().collect()),
        a: MatrixPayload::Inline(model.stiffness.transpose().as_slice().to_vec()),
        gamma: MatrixPayload::Inline(model.damping.transpose().as_slice().to_vec()),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Loads a trajectory CSV (one sample per row, optional header) with `dt`
/// taken from the argument or a `<stem>.meta.json` sidecar.
pub fn load_trajectory(path: &Path, dt: Option<f64>) -> Result<Trajectory> {
    let dt = match dt {
        Some(v) => v,
        None => {
            let sidecar = path.with_extension("meta.json");
            let text = std::fs::read_to_string(&sidecar).map_err(|_| {
                GleError::Config(format!(
                    "dt not given and sidecar {sidecar:?} not readable"
                ))
            })?;
            let meta: serde_json::Value = serde_json::from_str(&text)?;
            meta.get("dt")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| GleError::Config(format!("no dt field in {sidecar:?}")))?
        }
    };

    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => samples.push(DVector::from_vec(row)),
            Err(e) if idx == 0 => {
                // header row
                let _ = e;
                continue;
            }
            Err(e) => {
                return Err(GleError::Config(format!(
                    "bad trajectory row {}: {e}",
                    idx + 1
                )))
            }
        }
    }
    Trajectory::new(dt, samples)
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in &traj.samples {
        let row: Vec<String> = s.iter().map(|x| format!("{x:.17e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}
