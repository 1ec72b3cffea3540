//! Datasets, feature partitions and design-matrix constants.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::losses::LossKind;
use crate::metrics;
use crate::regularizers::RegAssignment;

/// Inflation applied to iterative norm estimates.
pub const NORM_INFLATION: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// `y = Xθ* + e`
    #[default]
    Real,
    /// `y = sign(Xθ*/√d + e)`, for classification losses.
    Sign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub noise: bool,
    pub labels: LabelMode,
    pub theta_star: Option<Vec<f64>>,
    pub source: Option<PathBuf>,
}

/// Full design matrix `X` (n×d) and responses `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    x: Array2<F>,
    y: Array1<F>,
    pub provenance: Provenance,
}

impl<F: Float> Dataset<F> {
    pub fn new(x: Array2<F>, y: Array1<F>) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 || d == 0 {
            return Err(Error::param("dataset needs n >= 1 and d >= 1"));
        }
        if y.len() != n {
            return Err(Error::param(format!("{} responses for {n} samples", y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("dataset contains non-finite entries"));
        }
        Ok(Self {
            x,
            y,
            provenance: Provenance::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, F> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, F> {
        self.y.view()
    }

    pub fn theta_star(&self) -> Option<Array1<F>> {
        self.provenance
            .theta_star
            .as_ref()
            .map(|t| t.iter().map(|&v| F::cast(v)).collect())
    }

    /// Copy with responses replaced.
    pub fn with_responses(&self, y: Array1<F>) -> Result<Self> {
        let mut out = Self::new(self.x.clone(), y)?;
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    /// Writes `x1,…,xd,y` rows with 17 significant digits plus a JSON sidecar.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.d()).map(|k| format!("x{k}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(self.d() + 1);
        for i in 0..self.n() {
            row.clear();
            row.extend(self.x.row(i).iter().map(|v| format!("{:.16e}", v.to_f64_lossy())));
            row.push(format!("{:.16e}", self.y[i].to_f64_lossy()));
            w.write_record(&row)?;
        }
        w.flush()?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.provenance)?)?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::save_csv`] (or any CSV with a header
    /// row and the response in the last column).
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let cols = reader.headers()?.len();
        if cols < 2 {
            return Err(Error::param("dataset CSV needs at least one feature column and y"));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != cols {
                return Err(Error::param(format!("ragged CSV row with {} fields", record.len())));
            }
            for (k, field) in record.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| Error::param(format!("CSV value {field:?}: {e}")))?;
                if k + 1 == cols {
                    ys.push(F::cast(v));
                } else {
                    xs.push(F::cast(v));
                }
            }
        }
        let n = ys.len();
        let x = Array2::from_shape_vec((n, cols - 1), xs).map_err(|e| Error::param(e.to_string()))?;
        let mut ds = Self::new(x, Array1::from(ys))?;
        let sidecar = sidecar_path(path);
        ds.provenance = if sidecar.exists() {
            serde_json::from_str(&fs::read_to_string(sidecar)?)?
        } else {
            Provenance::default()
        };
        ds.provenance.source = Some(path.to_path_buf());
        Ok(ds)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Standard-normal design, ground truth and noise from a seeded ChaCha20 stream
/// (drawn in that order: `θ*`, `X` row-major, `e`), with `y = Xθ* + e`.
pub fn generate_synthetic<F: Float>(n: usize, d: usize, seed: u64, noise: bool) -> Result<Dataset<F>> {
    generate_with_labels(n, d, seed, noise, LabelMode::Real)
}

/// Same stream as [`generate_synthetic`] but with ±1 labels
/// `y = sign(Xθ*/√d + e)`; the scaling keeps the classes overlapping so
/// that the logistic minimizer is finite.
pub fn generate_synthetic_classification<F: Float>(n: usize, d: usize, seed: u64) -> Result<Dataset<F>> {
    generate_with_labels(n, d, seed, true, LabelMode::Sign)
}

fn generate_with_labels<F: Float>(n: usize, d: usize, seed: u64, noise: bool, labels: LabelMode) -> Result<Dataset<F>> {
    if n == 0 || d == 0 {
        return Err(Error::param("synthetic data needs n >= 1 and d >= 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let theta_star: Vec<f64> = (0..d).map(|_| normal()).collect();
    let x64 = Array2::from_shape_simple_fn((n, d), &mut normal);
    let e: Vec<f64> = (0..n).map(|_| if noise { normal() } else { 0.0 }).collect();
    let signal = x64.dot(&Array1::from(theta_star.clone()));
    let y: Array1<F> = match labels {
        LabelMode::Real => (0..n).map(|i| F::cast(signal[i] + e[i])).collect(),
        LabelMode::Sign => {
            let scale = (d as f64).sqrt();
            (0..n)
                .map(|i| if signal[i] / scale + e[i] >= 0.0 { F::one() } else { -F::one() })
                .collect()
        }
    };
    let mut ds = Dataset::new(x64.mapv(F::cast), y)?;
    ds.provenance = Provenance {
        seed: Some(seed),
        noise,
        labels,
        theta_star: Some(theta_star),
        source: None,
    };
    Ok(ds)
}

/// Consecutive feature blocks `A_1 … A_m` covering `0..d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePartition {
    d: usize,
    blocks: Vec<Range<usize>>,
}

/// Splits `d` features over `m` agents; the first `d mod m` blocks get one extra.
pub fn partition_features(d: usize, m: usize) -> Result<FeaturePartition> {
    if m == 0 || d < m {
        return Err(Error::param(format!("cannot split {d} features over {m} agents")));
    }
    let (base, extra) = (d / m, d % m);
    let mut blocks = Vec::with_capacity(m);
    let mut start = 0;
    for j in 0..m {
        let len = base + usize::from(j < extra);
        blocks.push(start..start + len);
        start += len;
    }
    Ok(FeaturePartition { d, blocks })
}

impl FeaturePartition {
    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn is_even(&self) -> bool {
        self.d.is_multiple_of(self.m())
    }

    pub fn split<F: Float>(&self, theta: ArrayView1<F>) -> Vec<Array1<F>> {
        self.blocks.iter().map(|b| theta.slice(s![b.clone()]).to_owned()).collect()
    }

    pub fn concat<F: Float>(&self, parts: &[Array1<F>]) -> Array1<F> {
        let mut out = Array1::zeros(self.d);
        for (b, p) in self.blocks.iter().zip(parts) {
            out.slice_mut(s![b.clone()]).assign(p);
        }
        out
    }

    /// Local design matrices `X_j` (column blocks of `X`).
    pub fn local_designs<F: Float>(&self, x: ArrayView2<F>) -> Vec<Array2<F>> {
        self.blocks.iter().map(|b| x.slice(s![.., b.clone()]).to_owned()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorNorm<F> {
    /// Inflated estimate, `≥ ‖X‖`.
    pub chi: F,
    /// Raw power-iteration estimate.
    pub estimate: F,
    pub iterations: usize,
    pub converged: bool,
    /// Set when `X` is zero; `chi` is then 0.
    pub zero_matrix: bool,
}

/// Spectral norm of `X` by power iteration on `XᵀX`.
pub fn operator_norm<F: Float>(x: ArrayView2<F>) -> OperatorNorm<F> {
    const MAX_ITER: usize = 500;
    let tol = F::tolerance(1e-8);
    let d = x.ncols();
    if x.iter().all(|v| v.is_zero()) {
        return OperatorNorm {
            chi: F::zero(),
            estimate: F::zero(),
            iterations: 0,
            converged: true,
            zero_matrix: true,
        };
    }
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
    let mut v: Array1<F> = (0..d).map(|_| F::cast(rng.random::<f64>() + 0.5)).collect();
    let mut mu = F::zero();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=MAX_ITER {
        iterations = it;
        let norm = v.dot(&v).sqrt();
        v.mapv_inplace(|a| a / norm);
        let xv = x.dot(&v);
        let next_mu = xv.dot(&xv);
        let w = x.t().dot(&xv);
        let done = (next_mu - mu).abs() <= tol * next_mu;
        mu = next_mu;
        if w.iter().all(|a| a.is_zero()) {
            converged = true;
            break;
        }
        v = w;
        if done {
            converged = true;
            break;
        }
    }
    let estimate = mu.sqrt();
    OperatorNorm {
        chi: estimate * F::cast(NORM_INFLATION),
        estimate,
        iterations,
        converged,
        zero_matrix: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate<F> {
    pub r: F,
    /// Norm of the reference minimizer the estimate was derived from.
    pub minimizer_norm: F,
    /// Always true: this is a heuristic, not a certified bound.
    pub heuristic: bool,
}

/// Heuristic minimizer radius: twice the norm of a high-accuracy reference
/// minimizer, or 1 when that minimizer is zero.
pub fn estimate_r<F: Float>(dataset: &Dataset<F>, loss: LossKind, reg: &RegAssignment) -> Result<RadiusEstimate<F>> {
    let reference = metrics::reference_optimum(dataset, loss, reg)?;
    let norm = reference.theta.dot(&reference.theta).sqrt();
    let r = if norm > F::zero() { F::cast(2.0) * norm } else { F::one() };
    Ok(RadiusEstimate {
        r,
        minimizer_norm: norm,
        heuristic: true,
    })
}
