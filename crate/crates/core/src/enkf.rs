//! Stochastic (perturbed-observation) ensemble Kalman filter.
//!
//! The filter knows nothing about glaciers: states are plain `f64` vectors and
//! the model enters through [`Propagator`]. Members are the columns of a
//! `d x N` matrix, so each member is a contiguous slice.
//!
//! Covariances are taken about the current ensemble mean with the unbiased
//! `1/(N-1)` normalisation, for the forecast ensemble as well as for the
//! updated one.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, substream, Purpose};

/// Advances one state vector in place from `t0` to `t1`.
pub trait Propagator: Sync {
    fn propagate(&self, state: &mut [f64], t0: f64, t1: f64) -> Result<()>;
}

impl<F> Propagator for F
where
    F: Fn(&mut [f64], f64, f64) -> Result<()> + Sync,
{
    fn propagate(&self, state: &mut [f64], t0: f64, t1: f64) -> Result<()> {
        self(state, t0, t1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// `d x N`, one member per column.
    pub members: DMatrix<f64>,
    pub t: f64,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>, t: f64) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::InvalidParameter("ensemble needs N >= 2".into()));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("ensemble members must be finite".into()));
        }
        Ok(Self { members, t })
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn member(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.members.as_slice()[i * d..(i + 1) * d]
    }

    /// Ensemble mean, accumulated as offsets from the first member so that a
    /// zero-spread ensemble returns that member exactly.
    pub fn mean(&self) -> DVector<f64> {
        let n = self.size() as f64;
        let first = self.members.column(0).clone_owned();
        let mut acc = DVector::zeros(self.dim());
        for col in self.members.column_iter().skip(1) {
            acc += col - &first;
        }
        first + acc / n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub y: DVector<f64>,
    /// Observation error covariance, `m x m`.
    pub r: DMatrix<f64>,
    /// Observation operator, `m x d`.
    pub operator: DMatrix<f64>,
    pub t: f64,
}

impl ObservationSet {
    pub fn identity(y: DVector<f64>, r: DMatrix<f64>, t: f64) -> Self {
        let m = y.len();
        Self {
            y,
            r,
            operator: DMatrix::identity(m, m),
            t,
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        let m = self.y.len();
        if self.r.shape() != (m, m) || self.operator.shape() != (m, d) {
            return Err(Error::Dimension(format!(
                "observation with m = {m} needs R {m}x{m} and H {m}x{d}, got R {:?} and H {:?}",
                self.r.shape(),
                self.operator.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub size: usize,
    pub seed: u64,
    /// Multiplicative factor on the forecast sample covariance, >= 1.
    pub inflation: f64,
    /// Additive model noise covariance `Q`, `d x d`, drawn once per
    /// assimilation interval.
    pub model_noise_cov: DMatrix<f64>,
}

impl FilterConfig {
    pub fn new(size: usize, seed: u64, dim: usize) -> Self {
        Self {
            size,
            seed,
            inflation: 1.0,
            model_noise_cov: DMatrix::zeros(dim, dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::InvalidParameter("ensemble size N >= 2".into()));
        }
        if !(self.inflation >= 1.0) || !self.inflation.is_finite() {
            return Err(Error::InvalidParameter("inflation >= 1".into()));
        }
        let q = &self.model_noise_cov;
        if !q.is_square() || q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("model_noise_cov must be a finite square matrix".into()));
        }
        if (q - q.transpose()).amax() > 1e-12 * q.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidParameter("model_noise_cov must be symmetric".into()));
        }
        if q.amax() > 0.0 {
            let min_eig = q.clone().symmetric_eigen().eigenvalues.min();
            if min_eig < -1e-10 * q.amax() {
                return Err(Error::InvalidParameter("model_noise_cov must be positive semi-definite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub ensemble: Ensemble,
    pub mean: DVector<f64>,
    /// Forecast covariance actually used for the gain (inflated).
    pub forecast_cov: DMatrix<f64>,
    pub analysis_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// A matrix `S` with `S S' = cov`, for drawing correlated noise.
fn sqrt_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || cov[(i, j)] == 0.0));
    if diagonal {
        return DMatrix::from_fn(n, n, |i, j| if i == j { cov[(i, i)].max(0.0).sqrt() } else { 0.0 });
    }
    if let Some(chol) = cov.clone().cholesky() {
        return chol.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

/// Draws `N(0, cov)` for substream `(purpose, cycle, member)`; returns zeros
/// without consuming randomness when `cov` is identically zero.
fn correlated_draw(
    factor: &DMatrix<f64>,
    seed: u64,
    purpose: Purpose,
    cycle: u64,
    member: u64,
) -> DVector<f64> {
    let n = factor.nrows();
    if factor.iter().all(|v| *v == 0.0) {
        return DVector::zeros(n);
    }
    let mut rng = substream(seed, purpose, cycle, member);
    let mut z = DVector::zeros(factor.ncols());
    fill_standard_normal(&mut rng, z.as_mut_slice());
    factor * z
}

/// `N` independent draws from `Normal(mean, diag(spread^2))`.
pub fn init_ensemble(mean: &[f64], spread: &[f64], t: f64, cfg: &FilterConfig) -> Result<Ensemble> {
    cfg.validate()?;
    if mean.len() != spread.len() {
        return Err(Error::Dimension("mean and spread lengths differ".into()));
    }
    if spread.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidParameter("spread >= 0".into()));
    }
    let d = mean.len();
    let mut members = DMatrix::zeros(d, cfg.size);
    members
        .as_mut_slice()
        .par_chunks_exact_mut(d)
        .enumerate()
        .for_each(|(i, col)| {
            let mut rng = substream(cfg.seed, Purpose::InitialEnsemble, 0, i as u64);
            let mut z = vec![0.0; d];
            fill_standard_normal(&mut rng, &mut z);
            for k in 0..d {
                col[k] = mean[k] + spread[k] * z[k];
            }
        });
    Ensemble::new(members, t)
}

/// Moves every member to `t1` with no added noise.
pub fn propagate(ens: &Ensemble, propagator: &dyn Propagator, t1: f64) -> Result<Ensemble> {
    if t1 < ens.t {
        return Err(Error::InvalidParameter("forecast target precedes ensemble time".into()));
    }
    let d = ens.dim();
    let t0 = ens.t;
    let mut members = ens.members.clone();
    if t1 > t0 {
        members
            .as_mut_slice()
            .par_chunks_exact_mut(d)
            .map(|col| propagator.propagate(col, t0, t1))
            .collect::<Result<Vec<()>>>()?;
    }
    Ensemble::new(members, t1)
}

/// Adds one `N(0, Q)` draw per member, substream `cycle`.
pub fn add_model_noise(ens: &mut Ensemble, cfg: &FilterConfig, cycle: u64) -> Result<()> {
    let d = ens.dim();
    if cfg.model_noise_cov.shape() != (d, d) {
        return Err(Error::Dimension("model_noise_cov must be d x d".into()));
    }
    if cfg.model_noise_cov.iter().all(|v| *v == 0.0) {
        return Ok(());
    }
    let factor = sqrt_factor(&cfg.model_noise_cov);
    ens.members
        .as_mut_slice()
        .par_chunks_exact_mut(d)
        .enumerate()
        .for_each(|(i, col)| {
            let w = correlated_draw(&factor, cfg.seed, Purpose::ModelNoise, cycle, i as u64);
            for k in 0..d {
                col[k] += w[k];
            }
        });
    Ok(())
}

/// Propagates to `t1` and applies the model noise once.
pub fn forecast(
    ens: &Ensemble,
    propagator: &dyn Propagator,
    t1: f64,
    cfg: &FilterConfig,
    cycle: u64,
) -> Result<Ensemble> {
    let mut out = propagate(ens, propagator, t1)?;
    if t1 > ens.t {
        add_model_noise(&mut out, cfg, cycle)?;
    }
    Ok(out)
}

/// Unbiased sample covariance about the ensemble mean, symmetrised.
pub fn sample_covariance(ens: &Ensemble) -> DMatrix<f64> {
    let n = ens.size();
    let mean = ens.mean();
    let mut anomalies = ens.members.clone();
    for mut col in anomalies.column_iter_mut() {
        col -= &mean;
    }
    let c = &anomalies * anomalies.transpose() / (n as f64 - 1.0);
    (&c + c.transpose()) * 0.5
}

/// `K = C H' (H C H' + R)^-1`, solved through a Cholesky factorisation of
/// the innovation covariance.
pub fn kalman_gain(c: &DMatrix<f64>, operator: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = c.nrows();
    let m = operator.nrows();
    if c.shape() != (d, d) || operator.ncols() != d || r.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "gain needs C dxd, H mxd, R mxm; got {:?}, {:?}, {:?}",
            c.shape(),
            operator.shape(),
            r.shape()
        )));
    }
    let cross = c * operator.transpose();
    if cross.iter().all(|v| *v == 0.0) {
        // No forecast spread in observed directions: the model is trusted fully.
        return Ok(DMatrix::zeros(d, m));
    }
    let s = operator * &cross + r;
    let s = (&s + s.transpose()) * 0.5;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    let eig = s.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.amax());
    if !(lo > 0.0) || lo < 1e-14 * hi {
        return Err(Error::SingularInnovation);
    }
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    Ok(chol.solve(&cross.transpose()).transpose())
}

/// Perturbed-observation update of every member with a shared gain.
pub fn analysis(ens: &Ensemble, obs: &ObservationSet, cfg: &FilterConfig, cycle: u64) -> Result<AnalysisResult> {
    let d = ens.dim();
    obs.check(d)?;
    if (obs.t - ens.t).abs() > 1e-9 * obs.t.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "observation at t = {} but ensemble at t = {}",
            obs.t, ens.t
        )));
    }
    let forecast_cov = sample_covariance(ens) * cfg.inflation;
    let gain = kalman_gain(&forecast_cov, &obs.operator, &obs.r)?;
    let factor = sqrt_factor(&obs.r);

    let mut members = ens.members.clone();
    members
        .as_mut_slice()
        .par_chunks_exact_mut(d)
        .enumerate()
        .for_each(|(i, col)| {
            let v = correlated_draw(&factor, cfg.seed, Purpose::PerturbedObservation, cycle, i as u64);
            let x = DVector::from_column_slice(col);
            let innovation = &obs.y + v - &obs.operator * &x;
            let updated = x + &gain * innovation;
            col.copy_from_slice(updated.as_slice());
        });
    let ensemble = Ensemble::new(members, ens.t)?;
    let mean = ensemble.mean();
    let analysis_cov = sample_covariance(&ensemble);
    Ok(AnalysisResult {
        ensemble,
        mean,
        forecast_cov,
        analysis_cov,
        gain,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub t: f64,
    /// Ensemble mean before any analysis at this time.
    pub forecast_mean: DVector<f64>,
    /// Ensemble mean after the analysis (equal to `forecast_mean` when no
    /// observation falls on this time).
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub analysed: bool,
    pub members: Option<DMatrix<f64>>,
}

/// Runs the forecast/analysis loop over `output_times`.
///
/// `output_times[0]` must equal the ensemble time. Every observation must
/// fall on an output time. Model noise is added once per assimilation
/// interval, immediately before each analysis that follows a forecast leg.
/// Random substreams are indexed by the output-time position.
pub fn assimilation_cycle(
    ens: Ensemble,
    propagator: &dyn Propagator,
    output_times: &[f64],
    observations: &[ObservationSet],
    cfg: &FilterConfig,
    keep_members: bool,
) -> Result<Vec<CycleRecord>> {
    cfg.validate()?;
    let Some(&first) = output_times.first() else {
        return Ok(Vec::new());
    };
    if (first - ens.t).abs() > 1e-9 * first.abs().max(1.0) {
        return Err(Error::InvalidParameter("first output time must equal ensemble time".into()));
    }
    if output_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("output times must be strictly increasing".into()));
    }
    if observations.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::InvalidParameter("observation times must be strictly increasing".into()));
    }
    let tol = |t: f64| 1e-9 * t.abs().max(1.0);
    for o in observations {
        if !output_times.iter().any(|t| (t - o.t).abs() <= tol(o.t)) {
            return Err(Error::InvalidParameter(format!(
                "observation at t = {} is not on the output grid",
                o.t
            )));
        }
    }

    let mut records = Vec::with_capacity(output_times.len());
    let mut ens = ens;
    let mut next_obs = observations.iter().peekable();
    let mut advanced_since_analysis = false;
    for (k, &t) in output_times.iter().enumerate() {
        if k > 0 {
            ens = propagate(&ens, propagator, t)?;
            advanced_since_analysis = true;
        }
        let forecast_mean = ens.mean();
        let mut analysed = false;
        if let Some(obs) = next_obs.next_if(|o| (o.t - t).abs() <= tol(t)) {
            if advanced_since_analysis {
                add_model_noise(&mut ens, cfg, k as u64)?;
            }
            let mut obs = obs.clone();
            obs.t = t;
            let result = analysis(&ens, &obs, cfg, k as u64)?;
            ens = result.ensemble;
            analysed = true;
            advanced_since_analysis = false;
        }
        records.push(CycleRecord {
            t,
            forecast_mean,
            mean: ens.mean(),
            covariance: sample_covariance(&ens),
            analysed,
            members: keep_members.then(|| ens.members.clone()),
        });
    }
    Ok(records)
}
