//! Non-negative matrix factorization `V ≈ W H` of a stack of spectra.
//!
//! `V` holds one spectrum per row (m × n), `W` the per-spectrum weights
//! (m × p) and `H` the p end-member components (p × n). The Frobenius
//! objective `‖V − WH‖_F` is minimised with Lee–Seung multiplicative
//! updates, which keep both factors non-negative and never increase the
//! objective.
//!
//! The model keeps its own copy of `V` so that new spectra can be told to it
//! one at a time: each tell appends a row, warm-starts its weights from the
//! current components and refits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Spectrum1D;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, matmul};
use crate::matrix::DenseMatrix;

/// Denominator floor for the multiplicative updates.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_META_KEY: &str = "temperature_C";
/// Objective below this fraction of `‖V‖_F` counts as an exact fit. Further
/// sweeps would only move rounding noise around.
pub const EXACT_FIT_REL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub n_components: usize,
    pub max_iter: usize,
    /// Stop once the relative objective decrease of one sweep falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Column range `[lo, hi)` the factorization is restricted to.
    pub window: Option<(usize, usize)>,
    /// Metadata key used to order weights in reports.
    pub meta_key: String,
}

impl NmfConfig {
    pub fn new(n_components: usize) -> Self {
        NmfConfig {
            n_components,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            seed: 0,
            window: None,
            meta_key: DEFAULT_META_KEY.to_string(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Restricts fitting to columns `[lo, hi)`.
    pub fn windowed(self, lo: usize, hi: usize) -> Result<Self> {
        nmf_window(self, lo, hi)
    }

    fn column_range(&self, n: usize) -> Result<(usize, usize)> {
        match self.window {
            None => Ok((0, n)),
            Some((lo, hi)) if lo < hi && hi <= n => Ok((lo, hi)),
            Some((lo, hi)) => Err(Error::InvalidParameter(format!(
                "window [{lo}, {hi}) does not fit a grid of {n} points"
            ))),
        }
    }
}

/// Restricts a configuration to the column window `[lo, hi)`.
pub fn nmf_window(config: NmfConfig, lo: usize, hi: usize) -> Result<NmfConfig> {
    if lo >= hi {
        return Err(Error::InvalidParameter(format!("empty window [{lo}, {hi})")));
    }
    Ok(NmfConfig {
        window: Some((lo, hi)),
        ..config
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfModel {
    config: NmfConfig,
    /// Grid length before windowing.
    full_len: usize,
    /// Ordinate values of the fitted columns.
    grid: Vec<f64>,
    v: DenseMatrix,
    w: DenseMatrix,
    h: DenseMatrix,
    meta_values: Vec<Option<f64>>,
    objective_trace: Vec<f64>,
}

/// Fits `V ≈ WH` from a random start.
pub fn nmf_fit(v: &DenseMatrix, config: &NmfConfig) -> Result<NmfModel> {
    let grid: Vec<f64> = (0..v.cols()).map(|j| j as f64).collect();
    NmfModel::fit_with(v, grid, vec![None; v.rows()], config)
}

impl NmfModel {
    /// A model with no data yet; spectra arrive through [`NmfModel::tell`].
    pub fn empty(config: NmfConfig) -> Result<Self> {
        if config.n_components == 0 {
            return Err(Error::InvalidParameter("n_components must be at least 1".into()));
        }
        Ok(NmfModel {
            config,
            full_len: 0,
            grid: Vec::new(),
            v: DenseMatrix::zeros(0, 0),
            w: DenseMatrix::zeros(0, 0),
            h: DenseMatrix::zeros(0, 0),
            meta_values: Vec::new(),
            objective_trace: Vec::new(),
        })
    }

    /// Batch fit over spectra sharing one grid.
    pub fn fit_spectra(spectra: &[Spectrum1D], config: &NmfConfig) -> Result<Self> {
        let first = spectra.first().ok_or(Error::InsufficientData { required: 1, actual: 0 })?;
        let n = first.len();
        let mut v = DenseMatrix::zeros(0, n);
        for s in spectra {
            if s.len() != n {
                return Err(Error::GridMismatch { expected: n, actual: s.len() });
            }
            v.push_row(s.intensity())?;
        }
        let meta = spectra.iter().map(|s| s.meta_value(&config.meta_key)).collect();
        Self::fit_with(&v, first.grid().to_vec(), meta, config)
    }

    fn fit_with(
        v: &DenseMatrix,
        full_grid: Vec<f64>,
        meta_values: Vec<Option<f64>>,
        config: &NmfConfig,
    ) -> Result<Self> {
        let (m, n) = v.shape();
        check_non_negative(v.as_slice())?;
        let p = config.n_components;
        if p == 0 || p > m.min(n) {
            return Err(Error::InvalidParameter(format!(
                "n_components = {p} must lie in 1..={} for a {m}x{n} matrix",
                m.min(n)
            )));
        }
        let (lo, hi) = config.column_range(n)?;
        let v_fit = v.slice_cols(lo, hi);
        let (w, h) = random_init(&v_fit, p, config.seed);
        let mut model = NmfModel {
            config: config.clone(),
            full_len: n,
            grid: full_grid[lo..hi].to_vec(),
            v: v_fit,
            w,
            h,
            meta_values,
            objective_trace: Vec::new(),
        };
        model.refit();
        Ok(model)
    }

    /// Runs multiplicative sweeps until the relative objective decrease drops
    /// below `tol`, the fit is exact to [`EXACT_FIT_REL`], or `max_iter`
    /// sweeps have run. Starts a fresh trace.
    fn refit(&mut self) {
        let mut prev = self.objective();
        self.objective_trace = vec![prev];
        let floor = EXACT_FIT_REL * frobenius_norm(&self.v);
        for _ in 0..self.config.max_iter {
            if prev <= floor {
                break;
            }
            let cur = self.update_step();
            let rel = (prev - cur) / prev;
            prev = cur;
            if rel < self.config.tol {
                break;
            }
        }
    }

    /// One multiplicative sweep (H then W); returns and records the new
    /// objective.
    pub fn update_step(&mut self) -> f64 {
        update_h(&self.v, &self.w, &mut self.h);
        update_w(&self.v, &mut self.w, &self.h);
        let obj = self.objective();
        self.objective_trace.push(obj);
        obj
    }

    /// `‖V − WH‖_F` for the current factors.
    pub fn objective(&self) -> f64 {
        if self.v.rows() == 0 {
            return 0.0;
        }
        let (n, p) = (self.v.cols(), self.h.rows());
        let mut row = vec![0.0; n];
        let mut sum = 0.0;
        for i in 0..self.v.rows() {
            row.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..p {
                let w = self.w[(i, j)];
                row.iter_mut().zip(self.h.row(j)).for_each(|(r, h)| *r += w * h);
            }
            sum += self.v.row(i).iter().zip(&row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        sum.sqrt()
    }

    /// Appends one spectrum, warm-starts its weights and refits.
    ///
    /// The new weight row starts from the column means of `W` and is first
    /// solved against the current components alone; the joint refit follows.
    pub fn tell(&mut self, spectrum: &Spectrum1D) -> Result<()> {
        check_non_negative(spectrum.intensity())?;
        let meta = spectrum.meta_value(&self.config.meta_key);
        if self.v.rows() == 0 {
            let n = spectrum.len();
            let (lo, hi) = self.config.column_range(n)?;
            let v = DenseMatrix::from_rows(&[&spectrum.intensity()[lo..hi]])?;
            let p = self.config.n_components;
            let (w, h) = random_init(&v, p, self.config.seed);
            self.full_len = n;
            self.grid = spectrum.grid()[lo..hi].to_vec();
            self.v = v;
            self.w = w;
            self.h = h;
            self.meta_values = vec![meta];
            self.refit();
            return Ok(());
        }
        if spectrum.len() != self.full_len {
            return Err(Error::GridMismatch {
                expected: self.full_len,
                actual: spectrum.len(),
            });
        }
        let (lo, hi) = self.config.column_range(self.full_len)?;
        let row = &spectrum.intensity()[lo..hi];
        let p = self.config.n_components;
        let mut w_new = vec![0.0; p];
        for r in self.w.row_iter() {
            for (a, b) in w_new.iter_mut().zip(r) {
                *a += b;
            }
        }
        let m = self.w.rows() as f64;
        w_new.iter_mut().for_each(|x| *x /= m);
        solve_row(row, &mut w_new, &self.h, self.config.max_iter, self.config.tol);

        self.v.push_row(row)?;
        self.w.push_row(&w_new)?;
        self.meta_values.push(meta);
        self.refit();
        Ok(())
    }

    pub fn config(&self) -> &NmfConfig {
        &self.config
    }

    pub fn n_components(&self) -> usize {
        self.config.n_components
    }

    /// Number of spectra told or fitted so far.
    pub fn n_rows(&self) -> usize {
        self.v.rows()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn components(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn window(&self) -> Option<(usize, usize)> {
        self.config.window
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn reconstruction(&self) -> DenseMatrix {
        matmul(&self.w, &self.h).expect("factor shapes are consistent")
    }

    /// For each row, the component contributing the most intensity
    /// (`W_ij · ‖H_j‖₂`), in storage order.
    pub fn dominant_components(&self) -> Vec<usize> {
        let norms: Vec<f64> = self.h.row_iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        self.w
            .row_iter()
            .map(|r| {
                r.iter()
                    .zip(&norms)
                    .map(|(w, n)| w * n)
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, c)| if c > best.1 { (j, c) } else { best })
                    .0
            })
            .collect()
    }

    /// Fig.-2 style diagnostics from an immutable snapshot of the model.
    pub fn report(&self) -> Result<NmfReport> {
        nmf_report(self)
    }
}

/// Per-pattern diagnostics of a fitted model.
///
/// Rows of `weights`, `meta_values`, `rel_errors`, `residuals` and
/// `dominant` share one order: ascending metadata value when every row
/// carries one, insertion order otherwise. `row_index` maps back to
/// insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfReport {
    pub components: Vec<Vec<f64>>,
    pub grid: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub meta_key: String,
    pub meta_values: Vec<Option<f64>>,
    pub row_index: Vec<usize>,
    pub rel_errors: Vec<f64>,
    pub residuals: Vec<Vec<f64>>,
    pub dominant: Vec<usize>,
    pub window: Option<(usize, usize)>,
    pub objective: f64,
}

pub fn nmf_report(model: &NmfModel) -> Result<NmfReport> {
    if model.n_rows() == 0 {
        return Err(Error::NotFitted);
    }
    let recon = model.reconstruction();
    let mut order: Vec<usize> = (0..model.n_rows()).collect();
    if model.meta_values.iter().all(Option::is_some) {
        order.sort_by(|&a, &b| {
            model.meta_values[a]
                .unwrap()
                .total_cmp(&model.meta_values[b].unwrap())
                .then(a.cmp(&b))
        });
    }
    let dominant = model.dominant_components();
    let mut rel_errors = Vec::with_capacity(order.len());
    let mut residuals = Vec::with_capacity(order.len());
    for &i in &order {
        let res: Vec<f64> = model.v.row(i).iter().zip(recon.row(i)).map(|(a, b)| a - b).collect();
        let res_norm = res.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm = model.v.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        // an all-zero pattern has no relative scale; report the absolute residual
        rel_errors.push(if norm > 0.0 { res_norm / norm } else { res_norm });
        residuals.push(res);
    }
    Ok(NmfReport {
        components: model.h.row_iter().map(<[f64]>::to_vec).collect(),
        grid: model.grid.clone(),
        weights: order.iter().map(|&i| model.w.row(i).to_vec()).collect(),
        meta_key: model.config.meta_key.clone(),
        meta_values: order.iter().map(|&i| model.meta_values[i]).collect(),
        row_index: order.clone(),
        rel_errors,
        residuals,
        dominant: order.iter().map(|&i| dominant[i]).collect(),
        window: model.config.window,
        objective: model.objective(),
    })
}

fn check_non_negative(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| **v < 0.0) {
        return Err(Error::InvalidData(format!("NMF input must be non-negative, found {v}")));
    }
    Ok(())
}

/// Uniform draws in `(0, sqrt(mean(V)/p)]`; W is drawn before H.
fn random_init(v: &DenseMatrix, p: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
    let (m, n) = v.shape();
    let mean = v.as_slice().iter().sum::<f64>() / (m * n).max(1) as f64;
    let scale = (mean / p as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_, _| (1.0 - rng.random::<f64>()) * scale;
    let w = DenseMatrix::from_fn(m, p, &mut draw);
    let h = DenseMatrix::from_fn(p, n, &mut draw);
    (w, h)
}

/// `H ← H ∘ (WᵀV) / (WᵀW H)`
fn update_h(v: &DenseMatrix, w: &DenseMatrix, h: &mut DenseMatrix) {
    let wt = w.transpose();
    // WᵀV accumulated row by row of V
    let mut num = DenseMatrix::zeros(w.cols(), v.cols());
    for i in 0..v.rows() {
        for j in 0..w.cols() {
            let a = w[(i, j)];
            num.row_mut(j).iter_mut().zip(v.row(i)).for_each(|(o, b)| *o += a * b);
        }
    }
    let wtw = matmul(&wt, w).expect("shapes");
    let den = matmul(&wtw, h).expect("shapes");
    for ((hv, n), d) in h.as_mut_slice().iter_mut().zip(num.as_slice()).zip(den.as_slice()) {
        *hv *= n / d.max(DENOMINATOR_FLOOR);
    }
}

/// `W ← W ∘ (V Hᵀ) / (W H Hᵀ)`
fn update_w(v: &DenseMatrix, w: &mut DenseMatrix, h: &DenseMatrix) {
    let ht = h.transpose();
    // V Hᵀ as row dot products; both operands are row-major
    let p = h.rows();
    let mut num = DenseMatrix::zeros(v.rows(), p);
    for i in 0..v.rows() {
        for j in 0..p {
            num[(i, j)] = v.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum();
        }
    }
    let hht = matmul(h, &ht).expect("shapes");
    let den = matmul(w, &hht).expect("shapes");
    for ((wv, n), d) in w.as_mut_slice().iter_mut().zip(num.as_slice()).zip(den.as_slice()) {
        *wv *= n / d.max(DENOMINATOR_FLOOR);
    }
}

/// Multiplicative updates of a single weight row against fixed components.
fn solve_row(v: &[f64], w: &mut [f64], h: &DenseMatrix, max_iter: usize, tol: f64) {
    let p = w.len();
    let num: Vec<f64> = (0..p)
        .map(|j| h.row(j).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect();
    let hht = matmul(h, &h.transpose()).expect("shapes");
    let residual = |w: &[f64]| -> f64 {
        (0..v.len())
            .map(|c| {
                let r: f64 = (0..p).map(|j| w[j] * h[(j, c)]).sum();
                (v[c] - r).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut prev = residual(w);
    for _ in 0..max_iter {
        if prev == 0.0 {
            break;
        }
        let den: Vec<f64> = (0..p).map(|j| (0..p).map(|k| w[k] * hht[(k, j)]).sum()).collect();
        for j in 0..p {
            w[j] *= num[j] / den[j].max(DENOMINATOR_FLOOR);
        }
        let cur = residual(w);
        if (prev - cur) / prev < tol {
            break;
        }
        prev = cur;
    }
}
